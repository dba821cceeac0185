"""Projection head: temporal conv -> batch norm -> leaky ReLU -> region pooling
-> linear -> L2 normalization, with hand-written backward pass and Adam.

Clips are arrays of shape (B, T, S, C): B clips of T frames, S regions and C
feature channels. The temporal convolution is shared across regions.
"""

import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .exceptions import ConfigError, ContractError, DimensionError
from .validation import check_choice, check_clip

BN_EPS = 1e-5
NORM_FLOOR = 1e-12
TRAINABLE = ("conv_w", "conv_b", "bn_gamma", "bn_beta", "fc_w", "fc_b")
CHECKPOINT_FORMAT = "cyclecl-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class HeadConfig:
    in_channels: int = 12
    hidden_channels: int = 32
    out_dim: int = 16
    kernel_size: int = 3
    pooling: str = "max"
    leaky_slope: float = 0.1
    use_batchnorm: bool = True
    use_l2norm: bool = True
    bn_momentum: float = 0.9

    @property
    def padding(self):
        return (self.kernel_size - 1) // 2

    def validate(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.out_dim < 2:
            raise ConfigError(f"out_dim must be >= 2, got {self.out_dim}")
        if self.in_channels < 1 or self.hidden_channels < 1:
            raise ConfigError("in_channels and hidden_channels must be >= 1")
        check_choice(self.pooling, {"max", "mean"}, "pooling")
        if not 0.0 <= self.bn_momentum < 1.0:
            raise ConfigError(f"bn_momentum must lie in [0, 1), got {self.bn_momentum}")
        return self


@dataclass(eq=False)
class HeadParams:
    conv_w: np.ndarray  # (K, C, H)
    conv_b: np.ndarray  # (H,)
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_running_mean: np.ndarray
    bn_running_var: np.ndarray
    fc_w: np.ndarray  # (H, D)
    fc_b: np.ndarray  # (D,)

    def copy(self):
        return HeadParams(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def arrays(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    lr: float = 1e-4
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8


@dataclass
class ForwardCache:
    mode: str
    cols: np.ndarray  # (B, T, S, K*C) im2col of the padded input
    z: np.ndarray
    xhat: np.ndarray
    inv_std: np.ndarray
    y: np.ndarray
    pool_index: np.ndarray  # (B, T, H) argmax region, max pooling only
    pooled: np.ndarray  # (B, T, H)
    out: np.ndarray  # (B, T, D) before normalization
    norms: np.ndarray  # (B, T)
    embeddings: np.ndarray
    degenerate: np.ndarray  # (B, T) bool, zero vectors under L2
    batch_mean: np.ndarray = None
    batch_var: np.ndarray = None
    shape: tuple = field(default=())


def init_params(cfg, seed=0):
    cfg.validate()
    rng = np.random.default_rng(seed)
    K, C, H, D = cfg.kernel_size, cfg.in_channels, cfg.hidden_channels, cfg.out_dim
    return HeadParams(
        conv_w=rng.normal(scale=np.sqrt(2.0 / (K * C)), size=(K, C, H)),
        conv_b=np.zeros(H),
        bn_gamma=np.ones(H),
        bn_beta=np.zeros(H),
        bn_running_mean=np.zeros(H),
        bn_running_var=np.ones(H),
        fc_w=rng.normal(scale=1.0 / np.sqrt(H), size=(H, D)),
        fc_b=np.zeros(D),
    )


def calibrate_init(params, clips, cfg):
    """Data-dependent initialization from a sample of clips.

    Batch-norm running statistics are set to the statistics of ``clips`` and
    the final bias is chosen so that the pre-normalization outputs have zero
    mean over the sample. Without this, pooled leaky-ReLU activations share a
    large positive component and all initial embeddings point the same way.
    """
    new = params.copy()
    _, cache = head_forward(clips, new, cfg, "train")
    if cfg.use_batchnorm:
        new.bn_running_mean = cache.batch_mean.copy()
        new.bn_running_var = cache.batch_var.copy()
    _, cache = head_forward(clips, new, cfg, "eval")
    new.fc_b = new.fc_b - cache.out.reshape(-1, cfg.out_dim).mean(axis=0)
    return new


def l2_normalize(x, axis=-1):
    """Return ``(x / ||x||, degenerate)``; vectors with norm <= 1e-12 map to zero."""
    x = np.asarray(x, dtype=float)
    norms = np.linalg.norm(x, axis=axis, keepdims=True)
    degenerate = norms <= NORM_FLOOR
    safe = np.where(degenerate, 1.0, norms)
    out = np.where(degenerate, 0.0, x / safe)
    return out, np.squeeze(degenerate, axis=axis)


def _check_params(params, cfg):
    K, C, H, D = cfg.kernel_size, cfg.in_channels, cfg.hidden_channels, cfg.out_dim
    expected = {
        "conv_w": (K, C, H), "conv_b": (H,), "bn_gamma": (H,), "bn_beta": (H,),
        "bn_running_mean": (H,), "bn_running_var": (H,), "fc_w": (H, D), "fc_b": (D,),
    }
    for name, shape in expected.items():
        if getattr(params, name).shape != shape:
            raise DimensionError(f"{name} has shape {getattr(params, name).shape}, expected {shape}")


def head_forward(features, params, cfg, mode="eval"):
    """Embed one clip (T, S, C) or a batch (B, T, S, C).

    Returns ``(embeddings, cache)`` with embeddings of shape (B, T, D). In
    train mode batch norm uses statistics over every (clip, frame, region)
    position; the batch statistics are returned in the cache and the caller
    decides whether to fold them into the running averages.
    """
    check_choice(mode, {"train", "eval"}, "mode")
    x = check_clip(features, cfg.in_channels)
    _check_params(params, cfg)
    B, T, S, C = x.shape
    K, pad, H = cfg.kernel_size, cfg.padding, cfg.hidden_channels

    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0), (0, 0)))
    cols = np.concatenate([xp[:, k:k + T] for k in range(K)], axis=3)
    z = cols @ params.conv_w.reshape(K * C, H) + params.conv_b

    batch_mean = batch_var = None
    if cfg.use_batchnorm:
        if mode == "train":
            batch_mean = z.mean(axis=(0, 1, 2))
            batch_var = z.var(axis=(0, 1, 2))
            mean, var = batch_mean, batch_var
        else:
            mean, var = params.bn_running_mean, params.bn_running_var
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z - mean) * inv_std
        y = params.bn_gamma * xhat + params.bn_beta
    else:
        inv_std = None
        xhat = z
        y = z

    a = np.where(y > 0, y, cfg.leaky_slope * y)
    if cfg.pooling == "max":
        pool_index = a.argmax(axis=2)
        pooled = np.take_along_axis(a, pool_index[:, :, None, :], axis=2)[:, :, 0, :]
    else:
        pool_index = None
        pooled = a.mean(axis=2)

    out = pooled @ params.fc_w + params.fc_b
    norms = np.linalg.norm(out, axis=-1)
    if cfg.use_l2norm:
        emb, degenerate = l2_normalize(out)
    else:
        emb, degenerate = out, np.zeros(norms.shape, dtype=bool)

    cache = ForwardCache(
        mode=mode, cols=cols, z=z, xhat=xhat, inv_std=inv_std, y=y, pool_index=pool_index,
        pooled=pooled, out=out, norms=norms, embeddings=emb, degenerate=degenerate,
        batch_mean=batch_mean, batch_var=batch_var, shape=x.shape,
    )
    return emb, cache


def head_backward(grad_embeddings, cache, params, cfg):
    """Gradients of a scalar loss w.r.t. every trainable parameter.

    ``grad_embeddings`` is dLoss/d(embeddings) with the shape returned by the
    matching train-mode ``head_forward``.
    """
    if cache.mode != "train":
        raise ContractError("head_backward needs the cache of a train-mode forward pass")
    _check_params(params, cfg)
    B, T, S, C = cache.shape
    K, H, D = cfg.kernel_size, cfg.hidden_channels, cfg.out_dim
    g = np.asarray(grad_embeddings, dtype=float).reshape(B, T, D)
    if cache.embeddings.shape != (B, T, D):
        raise ContractError("cache does not match the head configuration")

    if cfg.use_l2norm:
        e = cache.embeddings
        safe = np.where(cache.degenerate, 1.0, cache.norms)[..., None]
        d_out = (g - e * (e * g).sum(axis=-1, keepdims=True)) / safe
        d_out[cache.degenerate] = 0.0
    else:
        d_out = g

    grads = {
        "fc_w": cache.pooled.reshape(-1, H).T @ d_out.reshape(-1, D),
        "fc_b": d_out.sum(axis=(0, 1)),
    }
    d_pooled = d_out @ params.fc_w.T

    if cfg.pooling == "max":
        d_a = np.zeros((B, T, S, H))
        np.put_along_axis(d_a, cache.pool_index[:, :, None, :], d_pooled[:, :, None, :], axis=2)
    else:
        d_a = np.broadcast_to(d_pooled[:, :, None, :] / S, (B, T, S, H))

    d_y = d_a * np.where(cache.y > 0, 1.0, cfg.leaky_slope)

    axes = (0, 1, 2)
    if cfg.use_batchnorm:
        grads["bn_gamma"] = (d_y * cache.xhat).sum(axis=axes)
        grads["bn_beta"] = d_y.sum(axis=axes)
        d_xhat = d_y * params.bn_gamma
        n = B * T * S
        d_z = (cache.inv_std / n) * (
            n * d_xhat - d_xhat.sum(axis=axes) - cache.xhat * (d_xhat * cache.xhat).sum(axis=axes)
        )
    else:
        grads["bn_gamma"] = np.zeros(H)
        grads["bn_beta"] = np.zeros(H)
        d_z = d_y

    grads["conv_b"] = d_z.sum(axis=axes)
    grads["conv_w"] = (cache.cols.reshape(-1, K * C).T @ d_z.reshape(-1, H)).reshape(K, C, H)
    return grads


def update_running_stats(params, cache, cfg):
    """Fold the batch statistics of a train-mode pass into the running averages."""
    if not cfg.use_batchnorm or cache.batch_mean is None:
        return params
    mom = cfg.bn_momentum
    new = params.copy()
    new.bn_running_mean = mom * params.bn_running_mean + (1.0 - mom) * cache.batch_mean
    new.bn_running_var = mom * params.bn_running_var + (1.0 - mom) * cache.batch_var
    return new


def init_adam(params, lr=1e-4, weight_decay=1e-3, beta1=0.9, beta2=0.999, eps_adam=1e-8):
    zeros = {name: np.zeros_like(getattr(params, name)) for name in TRAINABLE}
    return AdamState(
        m=zeros, v={k: v.copy() for k, v in zeros.items()}, t=0, lr=lr,
        weight_decay=weight_decay, beta1=beta1, beta2=beta2, eps_adam=eps_adam,
    )


def adam_step(params, grads, state):
    """One Adam update with L2 weight decay added to the gradient.

    Returns new ``(params, state)``; the inputs are left untouched.
    """
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_params = params.copy()
    m, v = {}, {}
    for name in TRAINABLE:
        p = getattr(params, name)
        grad = np.asarray(grads[name], dtype=float)
        if grad.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {grad.shape}, expected {p.shape}")
        grad = grad + state.weight_decay * p
        m[name] = b1 * state.m[name] + (1.0 - b1) * grad
        v[name] = b2 * state.v[name] + (1.0 - b2) * grad * grad
        m_hat = m[name] / (1.0 - b1 ** t)
        v_hat = v[name] / (1.0 - b2 ** t)
        setattr(new_params, name, p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps_adam))
    return new_params, replace(state, m=m, v=v, t=t)


def _encode_array(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _decode_array(d):
    return np.asarray(d["data"], dtype=float).reshape(d["shape"])


def save_checkpoint(path, params, cfg, state=None, seed=0, extra=None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": int(seed),
        "head": asdict(cfg),
        "params": {name: _encode_array(a) for name, a in params.arrays().items()},
        "adam": None,
    }
    if state is not None:
        doc["adam"] = {
            "t": state.t, "lr": state.lr, "weight_decay": state.weight_decay,
            "beta1": state.beta1, "beta2": state.beta2, "eps_adam": state.eps_adam,
            "m": {k: _encode_array(a) for k, a in state.m.items()},
            "v": {k: _encode_array(a) for k, a in state.v.items()},
        }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Return ``(params, head_config, adam_state_or_None, seed, extra)``."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT or "version" not in doc:
        raise ContractError(f"{path} is not a head checkpoint")
    if doc["version"] != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {doc['version']}")
    cfg = HeadConfig(**doc["head"]).validate()
    params = HeadParams(**{k: _decode_array(v) for k, v in doc["params"].items()})
    _check_params(params, cfg)
    state = None
    if doc.get("adam"):
        a = doc["adam"]
        state = AdamState(
            m={k: _decode_array(v) for k, v in a["m"].items()},
            v={k: _decode_array(v) for k, v in a["v"].items()},
            t=a["t"], lr=a["lr"], weight_decay=a["weight_decay"],
            beta1=a["beta1"], beta2=a["beta2"], eps_adam=a["eps_adam"],
        )
    return params, cfg, state, doc["seed"], doc.get("extra", {})
