"""Synthetic periodic sequences, the frozen feature encoder and benchmark builders.

A sequence is an array of frames with shape (N, S, C_raw): S spatial regions
observed through C_raw raw channels. ``num_periodic_regions`` of the regions
follow a shared cyclic process; the rest are static background. Anomaly
intervals perturb the phase dynamics or the amplitude of the cyclic process
and are labelled non-periodic.
"""

from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, DimensionError, EmptyInputError
from .validation import check_finite

PERIODIC = 0
NON_PERIODIC = 1

ANOMALY_KINDS = ("freeze", "phase_jump", "amplitude_drop", "period_change")

# Raw observations are stored with this many significant digits; generated
# values are quantized to it so that the CSV round trip is exact.
SIGNIFICANT_DIGITS = 9


@dataclass(frozen=True)
class AnomalySpec:
    """One anomaly interval.

    ``magnitude`` is interpreted per kind: ignored for ``freeze``; phase
    offset in radians for ``phase_jump``; amplitude multiplier in [0, 1] for
    ``amplitude_drop``; new period in frames (>= 2) for ``period_change``.
    """

    kind: str
    start: int
    length: int
    magnitude: float = 0.0

    def validate(self, num_frames):
        if self.kind not in ANOMALY_KINDS:
            raise ConfigError(f"anomaly kind must be one of {ANOMALY_KINDS}, got {self.kind!r}")
        if self.start < 0 or self.length < 1 or self.start + self.length > num_frames:
            raise ConfigError(
                f"anomaly interval [{self.start}, {self.start + self.length}) "
                f"is out of bounds for {num_frames} frames"
            )
        if self.kind == "amplitude_drop" and not 0.0 <= self.magnitude <= 1.0:
            raise ConfigError(f"amplitude_drop magnitude must lie in [0, 1], got {self.magnitude}")
        if self.kind == "period_change" and self.magnitude < 2.0:
            raise ConfigError(f"period_change magnitude (new period) must be >= 2, got {self.magnitude}")
        if self.kind == "phase_jump" and not np.isfinite(self.magnitude):
            raise ConfigError("phase_jump magnitude must be finite")


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of one synthetic sequence.

    ``process_seed`` fixes the shape of the cycle (shared by all sequences of
    a benchmark); ``seed`` drives everything specific to one recording:
    starting phase, gain, channel offsets, background levels and noise.
    """

    num_frames: int = 400
    period: float = 20.0
    num_regions: int = 8
    raw_channels: int = 6
    num_periodic_regions: int = 5
    harmonics_per_region: int = 3
    noise_sigma: float = 0.05
    anomalies: tuple = ()
    seed: int = 0
    process_seed: int = 0
    gain_jitter: float = 0.15
    offset_sigma: float = 0.1
    background_sigma: float = 0.5

    def validate(self):
        if self.num_frames < 1:
            raise ConfigError(f"num_frames must be >= 1, got {self.num_frames}")
        if not self.period >= 2:
            raise ConfigError(f"period must be >= 2 frames, got {self.period}")
        if self.num_regions < 1 or self.raw_channels < 1 or self.harmonics_per_region < 1:
            raise ConfigError("num_regions, raw_channels and harmonics_per_region must be >= 1")
        if not 1 <= self.num_periodic_regions <= self.num_regions:
            raise ConfigError(
                f"num_periodic_regions must lie in [1, num_regions={self.num_regions}], "
                f"got {self.num_periodic_regions}"
            )
        for name in ("noise_sigma", "gain_jitter", "offset_sigma", "background_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.gain_jitter >= 1:
            raise ConfigError(f"gain_jitter must be < 1, got {self.gain_jitter}")
        occupied = np.zeros(self.num_frames, dtype=bool)
        for spec in self.anomalies:
            spec.validate(self.num_frames)
            window = occupied[spec.start:spec.start + spec.length]
            if window.any():
                raise ConfigError(f"anomaly at frame {spec.start} overlaps another anomaly")
            window[:] = True
        return self


@dataclass(eq=False)
class FrameSequence:
    video_id: str
    frames: np.ndarray  # (N, S, C_raw)
    frame_labels: np.ndarray  # (N,) 0 = periodic, 1 = non_periodic
    sample_period: float
    seed: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        self.frame_labels = np.asarray(self.frame_labels, dtype=np.int64)
        if self.frames.ndim != 3:
            raise DimensionError(f"frames must have shape (N, S, C), got {self.frames.shape}")
        if len(self.frames) < 1:
            raise EmptyInputError("a sequence needs at least one frame")
        if self.frame_labels.shape != (len(self.frames),):
            raise DimensionError(
                f"{len(self.frame_labels)} labels for {len(self.frames)} frames in {self.video_id}"
            )
        check_finite(self.frames, f"frames of {self.video_id}")

    def __len__(self):
        return len(self.frames)


@dataclass(eq=False)
class FeatureSequence:
    video_id: str
    features: np.ndarray  # (N, S, C)
    frame_labels: np.ndarray
    sample_period: float
    seed: int

    def __len__(self):
        return len(self.features)


@dataclass(frozen=True, eq=False)
class EncoderParams:
    projection: np.ndarray  # (C_raw, C)
    bias: np.ndarray  # (C,)
    seed: int


def _phase_and_amplitude(cfg, theta0):
    # Phase is tracked as an effective clock in frames and reduced modulo the
    # period, so integer periods close exactly in floating point.
    n = cfg.num_frames
    step = np.ones(n)
    step[0] = 0.0
    amplitude = np.ones(n)
    offset = np.zeros(n)
    for spec in cfg.anomalies:
        inner = slice(spec.start + 1, spec.start + spec.length)
        span = slice(spec.start, spec.start + spec.length)
        if spec.kind == "freeze":
            step[inner] = 0.0
        elif spec.kind == "period_change":
            step[inner] = cfg.period / spec.magnitude
        elif spec.kind == "phase_jump":
            offset[span] += spec.magnitude * cfg.period / (2.0 * np.pi)
        elif spec.kind == "amplitude_drop":
            amplitude[span] = spec.magnitude
    clock = np.cumsum(step) + offset
    theta = theta0 + 2.0 * np.pi * np.mod(clock, cfg.period) / cfg.period
    return theta, amplitude


def _process_shape(cfg):
    """Harmonic coefficients and static levels shared by every recording."""
    rng = np.random.default_rng(cfg.process_seed)
    S, C, K, Sp = cfg.num_regions, cfg.raw_channels, cfg.harmonics_per_region, cfg.num_periodic_regions
    order = rng.permutation(S)
    periodic = np.sort(order[:Sp])
    harmonics = np.arange(1, K + 1)
    coef = rng.normal(size=(Sp, C, K)) / harmonics
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(Sp, C, K))
    # unit RMS oscillation per region
    rms = np.sqrt(0.5 * (coef ** 2).sum(axis=2).mean(axis=1))
    coef /= rms[:, None, None]
    levels = rng.normal(scale=0.3, size=(S, C))
    return periodic, coef, phases, levels


def _quantize(x):
    flat = [float(f"{v:.{SIGNIFICANT_DIGITS}g}") for v in x.ravel().tolist()]
    return np.asarray(flat, dtype=float).reshape(x.shape)


def generate_sequence(cfg, video_id=None):
    """Generate one FrameSequence; fully determined by ``cfg``."""
    cfg.validate()
    periodic, coef, phases, levels = _process_shape(cfg)
    rng = np.random.default_rng(cfg.seed)
    n, S, C = cfg.num_frames, cfg.num_regions, cfg.raw_channels
    theta0 = rng.uniform(0.0, 2.0 * np.pi)
    gain = rng.uniform(1.0 - cfg.gain_jitter, 1.0 + cfg.gain_jitter)
    channel_offset = rng.normal(scale=cfg.offset_sigma, size=C)
    background = rng.normal(scale=cfg.background_sigma, size=(S, C))
    noise = rng.normal(scale=cfg.noise_sigma, size=(n, S, C))

    theta, amplitude = _phase_and_amplitude(cfg, theta0)
    harmonics = np.arange(1, cfg.harmonics_per_region + 1)
    # (n, Sp, C): sum_k coef * cos(k * theta + phase)
    angles = theta[:, None, None, None] * harmonics + phases[None]
    cycle = (coef[None] * np.cos(angles)).sum(axis=3)

    frames = np.broadcast_to(levels + channel_offset, (n, S, C)).copy()
    is_background = np.ones(S, dtype=bool)
    is_background[periodic] = False
    frames[:, is_background] += background[is_background]
    frames[:, periodic] += gain * amplitude[:, None, None] * cycle
    frames += noise

    labels = np.zeros(n, dtype=np.int64)
    for spec in cfg.anomalies:
        labels[spec.start:spec.start + spec.length] = NON_PERIODIC
    return FrameSequence(
        video_id=video_id if video_id is not None else f"seq{cfg.seed}",
        frames=_quantize(frames),
        frame_labels=labels,
        sample_period=float(cfg.period),
        seed=int(cfg.seed),
    )


def sample_anomalies(rng, num_frames, period, count, length_range=(30, 50), kinds=ANOMALY_KINDS):
    """Draw ``count`` non-overlapping anomaly intervals of random kinds."""
    lo, hi = length_range
    specs = []
    occupied = np.zeros(num_frames, dtype=bool)
    margin = int(np.ceil(period))
    for _ in range(count):
        for _attempt in range(1000):
            length = int(rng.integers(lo, hi + 1))
            start = int(rng.integers(margin, max(margin + 1, num_frames - length - margin)))
            if start + length <= num_frames and not occupied[max(0, start - margin):start + length + margin].any():
                break
        else:
            raise ConfigError("could not place non-overlapping anomalies; sequence too short")
        kind = str(rng.choice(kinds))
        if kind == "phase_jump":
            magnitude = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.5 * np.pi, 1.5 * np.pi))
        elif kind == "amplitude_drop":
            magnitude = float(rng.uniform(0.2, 0.5))
        elif kind == "period_change":
            factor = rng.uniform(0.5, 0.7) if rng.random() < 0.5 else rng.uniform(1.5, 2.0)
            magnitude = float(max(2.0, period * factor))
        else:
            magnitude = 0.0
        occupied[start:start + length] = True
        specs.append(AnomalySpec(kind, start, length, magnitude))
    return tuple(sorted(specs, key=lambda a: a.start))


def derive_seed(*keys):
    """Stable 32-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def benchmark_configs(base, n_sequences, seed, split=0, anomalous_fraction=0.5,
                      anomalies_per_video=2, anomaly_length=(30, 50), kinds=ANOMALY_KINDS):
    """Per-sequence generator configs of one benchmark split.

    ``round(anomalous_fraction * n_sequences)`` sequences receive
    ``anomalies_per_video`` anomaly intervals; the remaining ones are normal.
    All sequences share ``base``'s process shape (``process_seed = seed``).
    """
    if not 0 <= anomalous_fraction <= 1:
        raise ConfigError(f"anomalous_fraction must lie in [0, 1], got {anomalous_fraction}")
    rng = np.random.default_rng(derive_seed(seed, split, 7919))
    n_anomalous = int(round(anomalous_fraction * n_sequences))
    anomalous = np.zeros(n_sequences, dtype=bool)
    anomalous[rng.permutation(n_sequences)[:n_anomalous]] = True
    out = []
    for i in range(n_sequences):
        specs = ()
        if anomalous[i]:
            specs = sample_anomalies(rng, base.num_frames, base.period, anomalies_per_video,
                                     anomaly_length, kinds)
        out.append(replace(base, seed=derive_seed(seed, split, i), process_seed=seed, anomalies=specs))
    return out


def generate_benchmark(base, n_sequences, seed, split=0, anomalous_fraction=0.5,
                       anomalies_per_video=2, anomaly_length=(30, 50), kinds=ANOMALY_KINDS,
                       prefix="video"):
    """Generate ``n_sequences`` recordings of one process (see ``benchmark_configs``)."""
    cfgs = benchmark_configs(base, n_sequences, seed, split, anomalous_fraction,
                             anomalies_per_video, anomaly_length, kinds)
    return [generate_sequence(cfg, video_id=f"{prefix}{split}_{i:03d}") for i, cfg in enumerate(cfgs)]


def make_encoder(raw_channels=6, out_channels=12, seed=0):
    """Frozen random projection; deterministic in ``seed``."""
    rng = np.random.default_rng(derive_seed(seed, 104729))
    projection = rng.normal(size=(raw_channels, out_channels)) / np.sqrt(raw_channels)
    bias = rng.normal(scale=0.1, size=out_channels)
    projection.setflags(write=False)
    bias.setflags(write=False)
    return EncoderParams(projection=projection, bias=bias, seed=int(seed))


def encode_frames(frames, enc):
    frames = check_finite(frames, "frames")
    if frames.shape[-1] != enc.projection.shape[0]:
        raise DimensionError(
            f"frames have {frames.shape[-1]} channels, encoder expects {enc.projection.shape[0]}"
        )
    return np.tanh(frames @ enc.projection + enc.bias)


def encode(seq, enc):
    """Map a FrameSequence through the frozen encoder, region by region."""
    return FeatureSequence(
        video_id=seq.video_id,
        features=encode_frames(seq.frames, enc),
        frame_labels=seq.frame_labels.copy(),
        sample_period=seq.sample_period,
        seed=seq.seed,
    )


class FrozenEncoder(TransformerMixin, BaseEstimator):
    """Fixed random per-region feature extractor, ``tanh(x @ W + b)``.

    ``fit`` only materializes the seeded weights; nothing is learned.

    Parameters
    ----------
    raw_channels : int
        Channels per region in the raw observations.
    out_channels : int
        Feature channels per region.
    seed : int
        Determines the weights.
    """

    def __init__(self, raw_channels=6, out_channels=12, seed=0):
        self.raw_channels = raw_channels
        self.out_channels = out_channels
        self.seed = seed

    def fit(self, X=None, y=None):
        self.params_ = make_encoder(self.raw_channels, self.out_channels, self.seed)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        if isinstance(X, FrameSequence):
            return encode(X, self.params_)
        if isinstance(X, (list, tuple)) and X and isinstance(X[0], FrameSequence):
            return [encode(seq, self.params_) for seq in X]
        return encode_frames(X, self.params_)
