"""Triplet loss and the self-supervised training loop."""

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigError, DimensionError, EmptyInputError
from .head import (
    HeadConfig, adam_step, calibrate_init, head_backward, head_forward, init_adam, init_params,
    update_running_stats,
)
from .mining import AugmentConfig, MinerConfig, augment, mine
from .seqdata import FeatureSequence, derive_seed
from .tsm import compute_tsm

logger = logging.getLogger(__name__)

CHUNK = 64
CALIBRATION_CLIPS = 16


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.5
    clip_length: int = 100
    temporal_stride: int = 2
    batch_clips: int = 4
    epochs_max: int = 100
    zero_loss_patience: int = 20
    loss_tol: float = 1e-6
    lr: float = 1e-4
    weight_decay: float = 1e-3
    seed: int = 0
    miner: MinerConfig = field(default_factory=MinerConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    head: HeadConfig = field(default_factory=HeadConfig)

    def validate(self):
        if not self.margin > 0:
            raise ConfigError(f"margin must be > 0, got {self.margin}")
        if self.clip_length < self.head.kernel_size:
            raise ConfigError(
                f"clip_length ({self.clip_length}) must be >= kernel_size ({self.head.kernel_size})"
            )
        if self.batch_clips < 1 or self.temporal_stride < 1 or self.epochs_max < 1:
            raise ConfigError("batch_clips, temporal_stride and epochs_max must be >= 1")
        if self.zero_loss_patience < 1:
            raise ConfigError("zero_loss_patience must be >= 1")
        self.head.validate()
        self.miner.validate()
        self.augment.validate()
        return self


@dataclass
class TrainReport:
    loss_history: list
    triplet_counts: list
    skipped: list
    epochs_run: int
    iterations: int
    iterations_per_epoch: int
    stop_reason: str
    checkpoint: str = None

    @property
    def skipped_count(self):
        return int(sum(self.skipped))

    def write_log(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "epoch", "loss", "triplet_count", "skipped"])
            for i, (loss, count, skip) in enumerate(zip(self.loss_history, self.triplet_counts, self.skipped)):
                w.writerow([i, i // self.iterations_per_epoch, repr(float(loss)), count, int(skip)])


@dataclass(eq=False)
class EmbeddingSequence:
    video_id: str
    embeddings: np.ndarray  # (T, D)
    clip_offset: int = 0
    frame_labels: np.ndarray = None

    def __len__(self):
        return len(self.embeddings)


def triplet_loss(a, p, n, margin=0.5):
    """Hinge on squared distances, ``max(0, |a-p|^2 - |a-n|^2 + margin)``.

    Accepts single vectors or (M, D) batches; for batches the loss and the
    gradients refer to the mean over triplets. Returns ``(loss, ga, gp, gn)``.
    """
    a, p, n = (np.asarray(v, dtype=float) for v in (a, p, n))
    single = a.ndim == 1
    if single:
        a, p, n = a[None], p[None], n[None]
    if not a.shape == p.shape == n.shape:
        raise DimensionError("anchor, positive and negative must share a shape")
    m = len(a)
    if m == 0:
        z = np.zeros_like(a)
        return 0.0, z, z.copy(), z.copy()
    d_ap = ((a - p) ** 2).sum(axis=1)
    d_an = ((a - n) ** 2).sum(axis=1)
    hinge = d_ap - d_an + margin
    active = (hinge > 0)[:, None]
    losses = np.maximum(hinge, 0.0)
    ga = np.where(active, 2.0 * (n - p), 0.0) / m
    gp = np.where(active, 2.0 * (p - a), 0.0) / m
    gn = np.where(active, 2.0 * (a - n), 0.0) / m
    if single:
        return float(losses[0]), ga[0], gp[0], gn[0]
    return float(losses.mean()), ga, gp, gn


def as_feature_arrays(dataset):
    out = []
    for item in dataset:
        arr = item.features if isinstance(item, FeatureSequence) else item
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 3:
            raise DimensionError(f"each sequence must have shape (N, S, C), got {arr.shape}")
        out.append(arr)
    return out


def _scatter_rows(rows, values, n_rows):
    """Sum ``values[i]`` into output row ``rows[i]``."""
    return np.stack(
        [np.bincount(rows, weights=values[:, j], minlength=n_rows) for j in range(values.shape[1])],
        axis=1,
    )


def _role_views(mode):
    """View index used for each role, and the roles that own an augmented view."""
    if mode == "none":
        return {"anchor": 0, "positive": 0, "negative": 0}, [None]
    if mode == "positives_only":
        return {"anchor": 0, "positive": 1, "negative": 0}, [None, "positive"]
    return {"anchor": 0, "positive": 1, "negative": 2}, ["anchor", "positive", "negative"]


def train(dataset, cfg=None, init=None):
    """Train a projection head on unlabeled feature sequences.

    Each iteration samples ``batch_clips`` strided clips, mines triplets on
    the eval-mode TSM of every clip, and takes one Adam step on the mean
    triplet loss of a train-mode pass over the (possibly augmented) clips.
    Training stops once the loss stays below ``loss_tol`` for
    ``zero_loss_patience`` consecutive iterations, or after ``epochs_max``
    epochs. Returns ``(params, report)``.
    """
    cfg = (cfg or TrainConfig()).validate()
    feats = as_feature_arrays(dataset)
    if not feats:
        raise ConfigError("cannot train on an empty dataset")
    head = cfg.head
    for f in feats:
        if f.shape[-1] != head.in_channels:
            raise DimensionError(f"features have {f.shape[-1]} channels, head expects {head.in_channels}")
    L, stride, B = cfg.clip_length, cfg.temporal_stride, cfg.batch_clips
    span = (L - 1) * stride + 1
    short = [i for i, f in enumerate(feats) if len(f) < L * stride]
    if short:
        raise ConfigError(
            f"{len(short)} sequence(s) are shorter than clip_length * temporal_stride = {L * stride}"
        )

    rng = np.random.default_rng(derive_seed(cfg.seed, 1))
    if init is None:
        init_rng = np.random.default_rng(derive_seed(cfg.seed, 4))
        sample = []
        for _ in range(CALIBRATION_CLIPS):
            f = feats[int(init_rng.integers(len(feats)))]
            s = int(init_rng.integers(0, len(f) - span + 1))
            sample.append(f[s:s + span:stride])
        params = calibrate_init(init_params(head, derive_seed(cfg.seed, 2)), np.stack(sample), head)
    else:
        params = init.copy()
    state = init_adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    aug = replace(cfg.augment, rng_seed=derive_seed(cfg.seed, cfg.augment.rng_seed, 3))
    role_view, view_roles = _role_views(aug.mode)

    total_frames = sum(len(f) for f in feats)
    per_epoch = max(1, math.ceil(total_frames / (B * L)))
    max_iters = cfg.epochs_max * per_epoch
    losses, counts, skipped = [], [], []
    streak = 0
    stop_reason = "max_epochs"

    for it in range(max_iters):
        seq_idx = rng.integers(len(feats), size=B)
        starts = [int(rng.integers(0, len(feats[i]) - span + 1)) for i in seq_idx]
        clips = np.stack([feats[i][s:s + span:stride] for i, s in zip(seq_idx, starts)])

        emb_eval, _ = head_forward(clips, params, head, "eval")
        parts = []
        for b in range(B):
            tri = mine(compute_tsm(emb_eval[b]), cfg.miner, rng=[cfg.seed, cfg.miner.rng_seed, it, b])
            if len(tri):
                parts.append(np.column_stack([np.full(len(tri), b), tri]))
        if not parts:
            losses.append(0.0)
            counts.append(0)
            skipped.append(True)
            streak = 0
            continue
        tri = np.concatenate(parts)

        views = []
        for role in view_roles:
            if role is None:
                views.append(clips)
            else:
                views.append(np.stack([augment(clips[b], aug, role, call_index=it * B + b) for b in range(B)]))
        batch = np.concatenate(views)
        emb, cache = head_forward(batch, params, head, "train")
        emb = emb.reshape(len(views), B, L, -1)

        clip, a, p, n = tri.T
        va, vp, vn = role_view["anchor"], role_view["positive"], role_view["negative"]
        loss, ga, gp, gn = triplet_loss(emb[va, clip, a], emb[vp, clip, p], emb[vn, clip, n], cfg.margin)
        rows = np.concatenate([(va * B + clip) * L + a, (vp * B + clip) * L + p, (vn * B + clip) * L + n])
        grad = _scatter_rows(rows, np.concatenate([ga, gp, gn]), len(views) * B * L)
        grads = head_backward(grad.reshape(len(views) * B, L, -1), cache, params, head)
        params = update_running_stats(params, cache, head)
        params, state = adam_step(params, grads, state)

        losses.append(loss)
        counts.append(len(tri))
        skipped.append(False)
        streak = streak + 1 if loss < cfg.loss_tol else 0
        if streak >= cfg.zero_loss_patience:
            stop_reason = "converged"
            break

    n_iter = len(losses)
    if sum(skipped):
        logger.warning("%d of %d iterations mined no triplets and were skipped", sum(skipped), n_iter)
    report = TrainReport(
        loss_history=losses, triplet_counts=counts, skipped=skipped,
        epochs_run=math.ceil(n_iter / per_epoch), iterations=n_iter,
        iterations_per_epoch=per_epoch, stop_reason=stop_reason,
    )
    return params, report


def embed_sequence(features, params, head, chunk=CHUNK):
    """Eval-mode embedding of a full (N, S, C) sequence in non-overlapping chunks."""
    features = np.asarray(features, dtype=float)
    n = len(features)
    if n == 0:
        raise EmptyInputError("cannot embed an empty sequence")
    full = n // chunk
    out = []
    if full:
        blocks = features[:full * chunk].reshape(full, chunk, *features.shape[1:])
        emb, _ = head_forward(blocks, params, head, "eval")
        out.append(emb.reshape(full * chunk, -1))
    if n > full * chunk:
        emb, _ = head_forward(features[full * chunk:], params, head, "eval")
        out.append(emb[0])
    return np.concatenate(out)


def embed_dataset(dataset, params, head, chunk=CHUNK):
    out = []
    for i, item in enumerate(dataset):
        if isinstance(item, FeatureSequence):
            vid, feats, labels = item.video_id, item.features, item.frame_labels
        else:
            vid, feats, labels = f"seq{i}", item, None
        out.append(EmbeddingSequence(vid, embed_sequence(feats, params, head, chunk), 0, labels))
    return out
