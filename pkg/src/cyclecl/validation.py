"""Input validation helpers used by the estimators and the functional API."""

import numpy as np

from .exceptions import ConfigError, DimensionError, EmptyInputError, NumericError


def check_finite(x, name="input"):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{name} contains non-finite values")
    return x


def check_clip(x, channels=None, name="features"):
    """Coerce a clip to a float array of shape (B, T, S, C).

    A single clip of shape (T, S, C) is promoted to a batch of one.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise DimensionError(f"{name} must have shape (T, S, C) or (B, T, S, C), got {x.shape}")
    if x.shape[0] == 0 or x.shape[1] == 0:
        raise EmptyInputError(f"{name} has no frames")
    if channels is not None and x.shape[-1] != channels:
        raise DimensionError(f"{name} has {x.shape[-1]} channels, expected {channels}")
    return check_finite(x, name)


def check_embeddings(x, name="embeddings", min_rows=1):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DimensionError(f"{name} must be 2-D (n, dim), got shape {x.shape}")
    if x.shape[0] < min_rows:
        raise EmptyInputError(f"{name} needs at least {min_rows} rows, got {x.shape[0]}")
    return check_finite(x, name)


def check_square(S, name="similarity matrix"):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {S.shape}")
    if S.shape[0] == 0:
        raise EmptyInputError(f"{name} is empty")
    return check_finite(S, name)


def check_choice(value, choices, name):
    if value not in choices:
        raise ConfigError(f"{name} must be one of {sorted(choices)}, got {value!r}")
    return value


def check_positive_int(value, name, minimum=1):
    if int(value) != value or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
