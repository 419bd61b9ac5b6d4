"""Seeding and validation helpers shared across the package."""
from __future__ import annotations

import secrets
from numbers import Integral, Real

import numpy as np


def substream(seed, *keys):
    """Return a Generator for the sub-stream ``keys`` of ``seed``.

    Sub-streams are addressed by position (firm index, bootstrap iteration,
    replication, ...), so draws do not depend on the order in which work is
    scheduled.
    """
    seed = check_seed(seed)
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def fresh_seed():
    return secrets.randbits(63)


def check_seed(seed):
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, Integral):
        raise TypeError(f"seed must be a non-negative integer, got {seed!r}")
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must lie in [0, 2**64), got {seed}")
    return int(seed)


def check_int(value, name, minimum=None):
    if isinstance(value, (bool, np.bool_)) or not isinstance(value, Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_real(value, name, low=None, high=None, low_open=False, high_open=False, allow_inf=False):
    if isinstance(value, (bool, np.bool_)) or not isinstance(value, Real):
        raise TypeError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if np.isnan(value) or (np.isinf(value) and not (allow_inf and value > 0)):
        raise ValueError(f"{name} must be finite, got {value}")
    if low is not None and (value < low or (low_open and value == low)):
        raise ValueError(f"{name} out of range: {value}")
    if high is not None and (value > high or (high_open and value == high)):
        raise ValueError(f"{name} out of range: {value}")
    return value


def check_triples(cell, min_size=1):
    """Coerce a cell of firm estimates to an ``(n, 3)`` float array.

    Accepts a DataFrame with ``theta_full``, ``theta_h1`` and ``theta_h2``
    columns or any array-like with three columns in that order.
    """
    if hasattr(cell, "columns"):
        arr = cell[["theta_full", "theta_h1", "theta_h2"]].to_numpy(dtype=float)
    else:
        arr = np.asarray(cell, dtype=float)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array of estimates, got shape {arr.shape}")
    if arr.shape[0] < min_size:
        raise ValueError(f"cell needs at least {min_size} firm(s), got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("cell contains non-finite estimates")
    return arr
