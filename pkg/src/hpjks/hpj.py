"""Half-panel jackknife debiasing of the mean, variance and CDF.

Every functional ``phi`` is estimated three times, from the full-series
estimates and from each half, and combined as

    phi_debiased = 2 * phi_full - (phi_half1 + phi_half2) / 2,

which removes the leading 1/T term of the bias caused by averaging noise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ._utils import check_triples


def hpj_combine(plugin, half1, half2):
    """Jackknife combination ``2 * plugin - (half1 + half2) / 2``.

    Works elementwise on arrays; returns a :class:`DebiasedScalar` for
    scalar input.
    """
    value = 2.0 * np.asarray(plugin, dtype=float) - 0.5 * (
        np.asarray(half1, dtype=float) + np.asarray(half2, dtype=float)
    )
    if value.ndim:
        return value
    return DebiasedScalar(float(value), float(plugin), float(half1), float(half2))


@dataclass(frozen=True)
class DebiasedScalar:
    value: float
    plugin: float
    half1: float
    half2: float
    degenerate: bool = False


def debiased_mean(cell):
    arr = check_triples(cell, min_size=1)
    full, h1, h2 = arr.mean(axis=0)
    return hpj_combine(full, h1, h2)


def debiased_variance(cell, ddof=1):
    """Debiased variance of the latent productivities.

    ``ddof=1`` uses the unbiased sample variance for the full and half
    estimates, ``ddof=0`` divides by n. A combined value that is not
    strictly positive is returned with ``degenerate=True`` rather than
    being clipped.
    """
    arr = check_triples(cell, min_size=2)
    full, h1, h2 = arr.var(axis=0, ddof=ddof)
    out = hpj_combine(full, h1, h2)
    if not out.value > 0.0:
        out = DebiasedScalar(out.value, out.plugin, out.half1, out.half2, degenerate=True)
    return out


def _ecdf(sorted_sample, x):
    return np.searchsorted(sorted_sample, x, side="right") / sorted_sample.size


@dataclass(frozen=True)
class DebiasedCdf:
    """Jackknife-debiased empirical CDF.

    ``values[k]`` is the debiased CDF at ``jump_points[k]``; between jump
    points the function is constant and right-continuous, 0 below the first
    point and 1 from the last one on. Values can fall outside [0, 1] and
    need not be monotone.
    """

    jump_points: np.ndarray
    values: np.ndarray
    n_firms: int

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k = np.searchsorted(self.jump_points, x, side="right")
        padded = np.r_[0.0, self.values]
        out = padded[k]
        return out if out.ndim else float(out)

    def left_limit(self, x):
        x = np.asarray(x, dtype=float)
        k = np.searchsorted(self.jump_points, x, side="left")
        out = np.r_[0.0, self.values][k]
        return out if out.ndim else float(out)

    def standardized(self, mean, sd):
        """Same function on the axis ``z = (x - mean) / sd``."""
        return DebiasedCdf((self.jump_points - mean) / sd, self.values.copy(), self.n_firms)

    def monotone(self):
        """Isotonic fit clipped to [0, 1]; for plotting only, never for testing."""
        from sklearn.isotonic import IsotonicRegression

        fit = IsotonicRegression(y_min=0.0, y_max=1.0, increasing=True)
        vals = fit.fit_transform(self.jump_points, self.values)
        vals[-1] = 1.0
        return DebiasedCdf(self.jump_points.copy(), vals, self.n_firms)

    def to_frame(self):
        return pd.DataFrame({"jump_point": self.jump_points, "value": self.values})

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def debiased_cdf(cell):
    arr = check_triples(cell, min_size=1)
    samples = [np.sort(arr[:, j]) for j in range(3)]
    jumps = np.unique(arr)
    full, h1, h2 = (_ecdf(s, jumps) for s in samples)
    return DebiasedCdf(jumps, hpj_combine(full, h1, h2), arr.shape[0])
