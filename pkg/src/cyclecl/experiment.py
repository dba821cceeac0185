"""Experiment pipeline: config handling and the steps behind every CLI command.

Layout of an output directory::

    <output_dir>/seed_<s>/data/{train,test}/   generated datasets
    <output_dir>/seed_<s>/checkpoint.json      trained head
    <output_dir>/seed_<s>/train_log.csv
    <output_dir>/seed_<s>/embeddings_test.csv
    <output_dir>/seed_<s>/metrics.json         k-NN periodicity metrics
    <output_dir>/seed_<s>/anomaly/...          anomaly metrics and score traces
    <output_dir>/seed_<s>/diag/*.csv
    <output_dir>/seed_<s>/run_manifest.json
    <output_dir>/metrics.json                  median/min/max over seeds
    <output_dir>/ablation_<axis>/ablation.csv
"""

import copy
import csv
import hashlib
import json
import logging
import math
import os
import platform
from dataclasses import fields, replace

import numpy as np

from .anomaly import AnomalyConfig, run_anomaly_pipeline, score_sequences, write_score_trace
from .datasets import load_dataset, save_dataset
from .evaluation import evaluate_knn, write_pr_curve
from .exceptions import ConfigError, CycleCLError, MissingArtifactError, NumericError
from .head import HeadConfig, load_checkpoint, save_checkpoint
from .mining import AugmentConfig, MinerConfig
from .seqdata import GeneratorConfig, benchmark_configs, derive_seed, encode, generate_sequence, make_encoder
from .training import EmbeddingSequence, TrainConfig, embed_dataset, train
from .tsm import autocorrelation, compute_tsm, dominant_lag, pca_project_1d

logger = logging.getLogger(__name__)

_GEN_SKIP = ("anomalies", "seed", "process_seed")


def _defaults(cls, skip=()):
    out = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        v = getattr(cls(), f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def default_config():
    train = _defaults(TrainConfig, skip=("miner", "augment", "head", "seed"))
    train["miner"] = _defaults(MinerConfig)
    train["augment"] = _defaults(AugmentConfig)
    train["head"] = _defaults(HeadConfig, skip=("in_channels",))
    dataset = _defaults(GeneratorConfig, skip=_GEN_SKIP)
    dataset.update({
        "n_train": 40, "n_test": 20, "anomalous_fraction": 0.5, "anomalies_per_video": 2,
        "anomaly_length": [30, 50], "encoder_channels": 12, "train_fraction": 1.0,
    })
    return {
        "dataset": dataset,
        "train": train,
        "eval": {"k": 10, "eps": 1e-8},
        "anomaly": _defaults(AnomalyConfig),
        "diag": {"videos": []},
        "output_dir": "runs/default",
        "seeds": [0, 1, 2],
        "n_jobs": 1,
    }


def _merge(base, update, path=""):
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            _merge(base[key], value, where + ".")
        else:
            base[key] = value
    return base


def parse_override(text):
    """``"a.b.c=value"`` -> (["a", "b", "c"], value); the value is read as
    JSON when possible and kept as a string otherwise."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def set_path(cfg, keys, value):
    node = cfg
    for i, key in enumerate(keys[:-1]):
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(f"unknown config key {'.'.join(keys[:i + 1])!r}")
        node = node[key]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError(f"unknown config key {'.'.join(keys)!r}")
    node[keys[-1]] = value
    return cfg


def load_config(path=None, overrides=()):
    cfg = default_config()
    if path is not None:
        if not os.path.exists(path):
            raise MissingArtifactError(f"config file {path} does not exist")
        with open(path) as fh:
            try:
                _merge(cfg, json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    for text in overrides:
        set_path(cfg, *parse_override(text))
    validate_config(cfg)
    return cfg


def config_hash(cfg):
    """SHA-256 of the result-relevant part of the config."""
    relevant = {k: v for k, v in cfg.items() if k not in ("output_dir", "n_jobs", "seeds")}
    blob = json.dumps(relevant, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def generator_config(cfg):
    d = cfg["dataset"]
    return GeneratorConfig(**{k: d[k] for k in _defaults(GeneratorConfig, skip=_GEN_SKIP)})


def train_config(cfg, seed):
    t = copy.deepcopy(cfg["train"])
    miner = MinerConfig(**t.pop("miner"))
    aug = t.pop("augment")
    aug["scale_range"] = tuple(aug["scale_range"])
    augment = AugmentConfig(**aug)
    head = HeadConfig(in_channels=cfg["dataset"]["encoder_channels"], **t.pop("head"))
    return TrainConfig(seed=int(seed), miner=miner, augment=augment, head=head, **t)


def anomaly_config(cfg):
    return AnomalyConfig(**cfg["anomaly"])


def validate_config(cfg):
    if not cfg["seeds"]:
        raise ConfigError("seeds must be a non-empty list")
    try:
        generator_config(cfg).validate()
        train_config(cfg, cfg["seeds"][0]).validate()
        anomaly_config(cfg).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    d = cfg["dataset"]
    if d["n_train"] < 1 or d["n_test"] < 2:
        raise ConfigError("dataset.n_train must be >= 1 and dataset.n_test >= 2")
    if not 0 < d["train_fraction"] <= 1:
        raise ConfigError(f"dataset.train_fraction must lie in (0, 1], got {d['train_fraction']}")
    if cfg["eval"]["k"] < 1 or not cfg["eval"]["eps"] > 0:
        raise ConfigError("eval.k must be >= 1 and eval.eps > 0")
    return cfg


def seed_dir(cfg, seed):
    return os.path.join(cfg["output_dir"], f"seed_{seed}")


def versions():
    import scipy
    import sklearn

    from . import __version__

    return {
        "cyclecl": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__, "python": platform.python_version(),
    }


def write_manifest(directory, command, cfg, seed, extra=None):
    """Record ``command`` in ``directory/run_manifest.json`` (no timestamps)."""
    path = os.path.join(directory, "run_manifest.json")
    manifest = {}
    if os.path.exists(path):
        with open(path) as fh:
            manifest = json.load(fh)
    entry = {"config_hash": config_hash(cfg), "seed": seed, "versions": versions()}
    if extra:
        entry.update(extra)
    manifest.setdefault("commands", {})[command] = entry
    manifest["config"] = cfg
    _write_json(path, manifest)


def _write_json(path, obj):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(path, hint):
    if not os.path.exists(path):
        raise MissingArtifactError(f"{path} not found; run `cyclecl {hint}` first")


# ---------------------------------------------------------------- data


def make_splits(cfg, seed):
    """Train and test FrameSequences for one seed."""
    d = cfg["dataset"]
    base = generator_config(cfg).validate()
    out = {}
    for split, name, count in ((0, "train", d["n_train"]), (1, "test", d["n_test"])):
        cfgs = benchmark_configs(
            base, count, seed, split=split, anomalous_fraction=d["anomalous_fraction"],
            anomalies_per_video=d["anomalies_per_video"], anomaly_length=tuple(d["anomaly_length"]),
        )
        out[name] = [generate_sequence(c, video_id=f"{name}_{i:03d}") for i, c in enumerate(cfgs)]
    return out


def encoder_for(cfg, seed):
    return make_encoder(cfg["dataset"]["raw_channels"], cfg["dataset"]["encoder_channels"], seed)


def train_subset(sequences, fraction):
    """First ``ceil(fraction * n)`` sequences (at least one)."""
    return sequences[:max(1, math.ceil(fraction * len(sequences)))]


def cmd_gen(cfg, seed):
    directory = os.path.join(seed_dir(cfg, seed), "data")
    for name, seqs in make_splits(cfg, seed).items():
        save_dataset(seqs, os.path.join(directory, name))
    write_manifest(seed_dir(cfg, seed), "gen", cfg, seed)
    return directory


def _load_split(cfg, seed, name):
    path = os.path.join(seed_dir(cfg, seed), "data", name)
    _require(os.path.join(path, "manifest.json"), "gen")
    seqs = load_dataset(path)
    enc = encoder_for(cfg, seed)
    return [encode(s, enc) for s in seqs]


# ---------------------------------------------------------------- train / embed


def _check_finite_params(params):
    for name, arr in params.arrays().items():
        if not np.isfinite(arr).all():
            raise NumericError(f"training produced non-finite values in {name}")


def fit_head(train_feats, cfg, seed):
    tcfg = train_config(cfg, seed)
    feats = train_subset(train_feats, cfg["dataset"]["train_fraction"])
    params, report = train(feats, tcfg)
    _check_finite_params(params)
    return params, report, tcfg


def cmd_train(cfg, seed):
    out = seed_dir(cfg, seed)
    params, report, tcfg = fit_head(_load_split(cfg, seed, "train"), cfg, seed)
    ckpt = os.path.join(out, "checkpoint.json")
    save_checkpoint(ckpt, params, tcfg.head, seed=seed, extra={
        "stop_reason": report.stop_reason, "iterations": report.iterations, "epochs_run": report.epochs_run,
    })
    report.checkpoint = ckpt
    report.write_log(os.path.join(out, "train_log.csv"))
    write_manifest(out, "train", cfg, seed, {
        "stop_reason": report.stop_reason, "iterations": report.iterations,
        "skipped_iterations": report.skipped_count,
    })
    return report


def write_embeddings(path, sequences):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        dim = sequences[0].embeddings.shape[1]
        w.writerow(["video_id", "frame", "label"] + [f"e{j}" for j in range(dim)])
        for s in sequences:
            for i, (row, lab) in enumerate(zip(s.embeddings, s.frame_labels)):
                w.writerow([s.video_id, i, int(lab)] + [repr(float(v)) for v in row])


def read_embeddings(path):
    _require(path, "embed")
    groups = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            groups.setdefault(row[0], ([], []))
            groups[row[0]][0].append(int(row[2]))
            groups[row[0]][1].append([float(v) for v in row[3:]])
    return [
        EmbeddingSequence(vid, np.array(vals), 0, np.array(labels, dtype=np.int64))
        for vid, (labels, vals) in groups.items()
    ]


def embed_test(test_feats, params, head):
    return embed_dataset(test_feats, params, head)


def cmd_embed(cfg, seed):
    out = seed_dir(cfg, seed)
    ckpt = os.path.join(out, "checkpoint.json")
    _require(ckpt, "train")
    params, head, _, _, _ = load_checkpoint(ckpt)
    emb = embed_test(_load_split(cfg, seed, "test"), params, head)
    write_embeddings(os.path.join(out, "embeddings_test.csv"), emb)
    write_manifest(out, "embed", cfg, seed)
    return emb


# ---------------------------------------------------------------- evaluation


def baseline_embeddings(test_feats, kind, seed, dim=16):
    """Frozen-encoder features pooled over regions, or random unit vectors."""
    if kind == "frozen":
        return [EmbeddingSequence(f.video_id, f.features.mean(axis=1), 0, f.frame_labels) for f in test_feats]
    if kind == "random":
        rng = np.random.default_rng(derive_seed(seed, 5))
        out = []
        for f in test_feats:
            v = rng.normal(size=(len(f), dim))
            out.append(EmbeddingSequence(f.video_id, v / np.linalg.norm(v, axis=1, keepdims=True), 0, f.frame_labels))
        return out
    raise ConfigError(f"unknown baseline {kind!r}; expected 'frozen' or 'random'")


def evaluate(emb, cfg):
    return evaluate_knn(emb, k=cfg["eval"]["k"], eps=cfg["eval"]["eps"], return_scores=True)


def cmd_eval(cfg, seed, baseline=None):
    out = seed_dir(cfg, seed)
    if baseline is None:
        emb = read_embeddings(os.path.join(out, "embeddings_test.csv"))
        target = out
    else:
        emb = baseline_embeddings(_load_split(cfg, seed, "test"), baseline, seed, cfg["train"]["head"]["out_dim"])
        target = os.path.join(out, f"baseline_{baseline}")
    report, scores, labels, _, _ = evaluate(emb, cfg)
    os.makedirs(target, exist_ok=True)
    report.to_json(os.path.join(target, "metrics.json"))
    write_pr_curve(os.path.join(target, "pr_curve.csv"), scores, labels)
    write_manifest(out, "eval" if baseline is None else f"eval_{baseline}", cfg, seed)
    return report


def normal_reference_ids(sequences):
    """Videos whose frames are all labelled periodic."""
    return [s.video_id for s in sequences if not np.any(s.frame_labels)]


ANOMALY_COMBOS = [("raw", "nn_distance"), ("raw", "lof"), ("cycle", "nn_distance"), ("cycle", "lof")]


def anomaly_table(emb, cfg):
    """Metrics of every (feature_kind, scorer) pair; returns rows and the
    scored sequences of the configured pair."""
    base = anomaly_config(cfg)
    ref = normal_reference_ids(emb)
    rows, chosen = [], None
    for kind, scorer in ANOMALY_COMBOS:
        acfg = replace(base, feature_kind=kind, scorer=scorer)
        report, scored = run_anomaly_pipeline(emb, acfg, reference_ids=ref)
        rows.append({"feature_kind": kind, "scorer": scorer, "ap": report.ap, "oracle_f1": report.oracle_f1})
        if (kind, scorer) == (base.feature_kind, base.scorer):
            chosen = (report, scored)
    return rows, chosen


def cmd_anomaly(cfg, seed):
    out = seed_dir(cfg, seed)
    emb = read_embeddings(os.path.join(out, "embeddings_test.csv"))
    rows, (report, scored) = anomaly_table(emb, cfg)
    target = os.path.join(out, "anomaly")
    os.makedirs(target, exist_ok=True)
    report.to_json(os.path.join(target, "metrics.json"))
    write_score_trace(os.path.join(target, "score_trace.csv"), scored)
    _write_rows(os.path.join(target, "anomaly.csv"), rows, ["feature_kind", "scorer", "ap", "oracle_f1"])
    write_manifest(out, "anomaly", cfg, seed)
    return rows


def _write_rows(path, rows, columns):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "") for c in columns])


# ---------------------------------------------------------------- diagnostics


def diag_videos(cfg, emb):
    chosen = cfg["diag"]["videos"]
    if chosen:
        known = {s.video_id for s in emb}
        missing = [v for v in chosen if v not in known]
        if missing:
            raise ConfigError(f"diag.videos not in the test split: {missing}")
        return [s for s in emb if s.video_id in chosen]
    normal = [s for s in emb if not s.frame_labels.any()]
    anomalous = [s for s in emb if s.frame_labels.any()]
    return normal[:1] + anomalous[:1]


def cmd_diag(cfg, seed):
    out = seed_dir(cfg, seed)
    _require(os.path.join(out, "checkpoint.json"), "train")
    emb = read_embeddings(os.path.join(out, "embeddings_test.csv"))
    period = cfg["dataset"]["period"]
    target = os.path.join(out, "diag")
    os.makedirs(target, exist_ok=True)
    ref = normal_reference_ids(emb)
    nn = {s.video_id: s for s in score_sequences(emb, replace(anomaly_config(cfg), feature_kind="raw",
                                                              scorer="nn_distance", k_score=1), ref)}
    summary = []
    for s in diag_videos(cfg, emb):
        vid = s.video_id
        S = compute_tsm(s.embeddings).values
        np.savetxt(os.path.join(target, f"tsm_{vid}.csv"), S, delimiter=",", fmt="%.9g")
        max_lag = min(len(s) - 1, int(2 * period))
        r = autocorrelation(s.embeddings, max_lag)
        _write_rows(os.path.join(target, f"autocorr_{vid}.csv"),
                    [{"lag": i, "r": float(v)} for i, v in enumerate(r)], ["lag", "r"])
        trace, _ = pca_project_1d(s.embeddings)
        _write_rows(os.path.join(target, f"pca_{vid}.csv"),
                    [{"frame": i, "value": float(v), "label": int(lab)} for i, (v, lab) in enumerate(zip(trace, s.frame_labels))],
                    ["frame", "value", "label"])
        _write_rows(os.path.join(target, f"nn_distance_{vid}.csv"),
                    [{"frame": i, "score": float(v), "label": int(lab)} for i, (v, lab) in enumerate(zip(nn[vid].scores, s.frame_labels))],
                    ["frame", "score", "label"])
        summary.append({"video_id": vid, "anomalous": int(s.frame_labels.any()),
                        "autocorr_lag": int(dominant_lag(r, period))})
    _write_rows(os.path.join(target, "summary.csv"), summary, ["video_id", "anomalous", "autocorr_lag"])
    write_manifest(out, "diag", cfg, seed)
    return summary


# ---------------------------------------------------------------- full runs


def run_seed(cfg, seed, with_diag=True):
    """gen -> train -> embed -> eval (+ baselines) -> anomaly [-> diag] for one seed."""
    cmd_gen(cfg, seed)
    report = cmd_train(cfg, seed)
    cmd_embed(cfg, seed)
    metrics = cmd_eval(cfg, seed)
    baselines = {b: cmd_eval(cfg, seed, baseline=b) for b in ("frozen", "random")}
    anomaly = cmd_anomaly(cfg, seed)
    if with_diag:
        cmd_diag(cfg, seed)
    return {
        "seed": seed, "ap": metrics.ap, "f1": metrics.f1, "oracle_f1": metrics.oracle_f1,
        "stop_reason": report.stop_reason, "iterations": report.iterations,
        "baselines": {b: {"ap": r.ap, "f1": r.f1, "oracle_f1": r.oracle_f1} for b, r in baselines.items()},
        "anomaly": anomaly,
    }


def summarize(values):
    v = np.asarray(values, dtype=float)
    return {"median": float(np.median(v)), "min": float(v.min()), "max": float(v.max())}


def _parallel(fn, items, n_jobs):
    if n_jobs == 1 or len(items) <= 1:
        return [fn(*item) for item in items]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(fn)(*item) for item in items)


def cmd_run(cfg):
    results = _parallel(run_seed, [(cfg, s) for s in cfg["seeds"]], cfg["n_jobs"])
    agg = {"seeds": list(cfg["seeds"]), "config_hash": config_hash(cfg)}
    for key in ("ap", "f1", "oracle_f1"):
        agg[key] = summarize([r[key] for r in results])
    for b in ("frozen", "random"):
        agg[f"baseline_{b}"] = {k: summarize([r["baselines"][b][k] for r in results]) for k in ("ap", "f1", "oracle_f1")}
    agg["anomaly"] = {}
    for i, (kind, scorer) in enumerate(ANOMALY_COMBOS):
        agg["anomaly"][f"{kind}_{scorer}"] = {
            k: summarize([r["anomaly"][i][k] for r in results]) for k in ("ap", "oracle_f1")
        }
    agg["stop_reasons"] = [r["stop_reason"] for r in results]
    _write_json(os.path.join(cfg["output_dir"], "metrics.json"), agg)
    return agg


# ---------------------------------------------------------------- ablations


AXES = {
    "sampling_strategy": ("train", "miner", "strategy"),
    "augment_mode": ("train", "augment", "mode"),
    "sequence_length": ("train", "clip_length"),
    "output_dim": ("train", "head", "out_dim"),
    "l2norm": ("train", "head", "use_l2norm"),
    "data_fraction": ("dataset", "train_fraction"),
    "head_variant": None,
}
HEAD_VARIANTS = {
    "k3_max": {"kernel_size": 3, "pooling": "max"},
    "k3_mean": {"kernel_size": 3, "pooling": "mean"},
    "k1_max": {"kernel_size": 1, "pooling": "max"},
    "k1_mean": {"kernel_size": 1, "pooling": "mean"},
}


def apply_axis(cfg, axis, value):
    """Copy of ``cfg`` with one ablation axis set to ``value``."""
    if axis not in AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {sorted(AXES)}")
    cell = copy.deepcopy(cfg)
    if axis == "head_variant":
        if value not in HEAD_VARIANTS:
            raise ConfigError(f"unknown head_variant {value!r}; expected one of {sorted(HEAD_VARIANTS)}")
        cell["train"]["head"].update(HEAD_VARIANTS[value])
    else:
        set_path(cell, list(AXES[axis]), value)
    cell["output_dir"] = os.path.join(cfg["output_dir"], f"ablation_{axis}", _slug(value))
    return validate_config(cell)


def _slug(value):
    return json.dumps(value) if not isinstance(value, str) else value


def evaluate_cell(cfg, seed):
    """Train on the seed's data and return the k-NN metrics; no files
    outside the cell's own directory are touched."""
    splits = make_splits(cfg, seed)
    enc = encoder_for(cfg, seed)
    train_feats = [encode(s, enc) for s in splits["train"]]
    test_feats = [encode(s, enc) for s in splits["test"]]
    params, report, tcfg = fit_head(train_feats, cfg, seed)
    emb = embed_test(test_feats, params, tcfg.head)
    metrics, _, _, _, _ = evaluate(emb, cfg)
    out = seed_dir(cfg, seed)
    os.makedirs(out, exist_ok=True)
    metrics.to_json(os.path.join(out, "metrics.json"))
    report.write_log(os.path.join(out, "train_log.csv"))
    return metrics, report, emb


def _cell(cfg, axis, value, seed):
    row = {"axis": axis, "value": _slug(value), "seed": seed}
    try:
        cell = apply_axis(cfg, axis, value)
        metrics, report, _ = evaluate_cell(cell, seed)
        row.update(ap=metrics.ap, f1=metrics.f1, oracle_f1=metrics.oracle_f1,
                   stop_reason=report.stop_reason, iterations=report.iterations, status="ok")
    except CycleCLError as exc:
        logger.error("ablation cell %s=%r seed %d failed: %s", axis, value, seed, exc)
        row.update(status=f"error: {exc}")
    return row


ABLATION_COLUMNS = ["axis", "value", "seed", "ap", "f1", "oracle_f1", "stop_reason", "iterations", "status"]


def cmd_ablate(cfg, axis, values):
    if not values:
        raise ConfigError("ablation needs at least one value")
    for v in values:
        apply_axis(cfg, axis, v)  # fail fast on invalid grids
    cells = [(cfg, axis, v, s) for v in values for s in cfg["seeds"]]
    rows = _parallel(_cell, cells, cfg["n_jobs"])
    base = os.path.join(cfg["output_dir"], f"ablation_{axis}")
    _write_rows(os.path.join(base, "ablation.csv"), rows, ABLATION_COLUMNS)
    summary = []
    for v in values:
        ok = [r for r in rows if r["value"] == _slug(v) and r["status"] == "ok"]
        entry = {"value": _slug(v), "n_ok": len(ok)}
        for key in ("ap", "f1"):
            if ok:
                s = summarize([r[key] for r in ok])
                entry.update({f"{key}_{stat}": s[stat] for stat in ("median", "min", "max")})
        summary.append(entry)
    cols = ["value", "n_ok"] + [f"{k}_{s}" for k in ("ap", "f1") for s in ("median", "min", "max")]
    _write_rows(os.path.join(base, "ablation_summary.csv"), summary, cols)
    return rows
