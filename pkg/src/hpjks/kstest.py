"""Standardized two-sample KS test on debiased CDFs with firm-level resampling.

For area ``a`` let ``G_a(z) = F_a(m_a + s_a z)`` where ``F_a``, ``m_a`` and
``s_a**2`` are the jackknife-debiased CDF, mean and variance. The statistic
is ``sup_z |G_AMD(z) - G_BMD(z)|``. Both functions are finite combinations
of step functions, so the supremum is attained on the union of their
standardized jump points; it is computed exactly there.

Two resampling schemes are available. ``permutation`` (default)
standardizes each area's firms by their own debiased mean and scale, pools
them, and splits the pool at random into groups of the original sizes,
which imposes the null; each split is re-standardized and scored like the
data. ``recentered`` resamples firms with replacement within each area and
scores ``sup_z |D*(z) - D(z)|`` with ``D = G_AMD - G_BMD`` from the original
sample. Recentering misses the effect of estimating location and scale on
a step-function CDF and is markedly conservative in moderate samples.
"""
from __future__ import annotations

import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._utils import check_int, check_real, check_seed, check_triples, fresh_seed, substream
from .hpj import debiased_cdf, debiased_mean, debiased_variance

logger = logging.getLogger(__name__)


class DegenerateVarianceError(ValueError):
    """The debiased variance of a cell is not strictly positive."""


@dataclass(frozen=True)
class CellSummary:
    """Debiased mean, scale and CDF of one (sector, area) cell."""

    sector: str | None
    area: str | None
    n_firms: int
    min_tenure: int | None
    mean: float
    sd: float
    variance: object
    cdf: object
    triples: np.ndarray = field(repr=False)

    @classmethod
    def from_triples(cls, cell, sector=None, area=None, ddof=1):
        arr = check_triples(cell, min_size=2)
        t_min = None
        if hasattr(cell, "columns") and "tenure" in cell.columns:
            t_min = int(cell["tenure"].min())
        var = debiased_variance(arr, ddof=ddof)
        if var.degenerate:
            raise DegenerateVarianceError(
                f"debiased variance {var.value:.6g} <= 0 in cell ({sector}, {area})"
            )
        return cls(
            sector=sector,
            area=area,
            n_firms=arr.shape[0],
            min_tenure=t_min,
            mean=debiased_mean(arr).value,
            sd=float(np.sqrt(var.value)),
            variance=var,
            cdf=debiased_cdf(arr),
            triples=arr,
        )

    def standardized_cdf(self):
        return self.cdf.standardized(self.mean, self.sd)


def _weights(n_self, n_other, sign):
    # integer weights of the (full, half1, half2) points of one area in
    # 2 * n_amd * n_bmd * D(z)
    return sign * np.array([4 * n_other, -n_other, -n_other], dtype=np.int64)


def _standardized_points(arr, mean, sd, weights):
    z = ((arr - mean) / sd).ravel(order="F")
    w = np.repeat(weights, arr.shape[0])
    return z, w


def _sup_abs(z, w):
    """max over z of |sum of weights at points <= z| (exact, integer)."""
    order = np.argsort(z, kind="stable")
    zs = z[order]
    cs = np.cumsum(w[order])
    ends = np.r_[zs[1:] != zs[:-1], True]
    vals = np.abs(cs[ends])
    return int(vals.max()) if vals.size else 0


def _points(summary_or_arr, mean, sd, n_self, n_other, sign):
    return _standardized_points(summary_or_arr, mean, sd, _weights(n_self, n_other, sign))


def ks_statistic(amd, bmd):
    """Supremum distance between the standardized debiased CDFs of two cells.

    Parameters
    ----------
    amd, bmd : CellSummary

    Returns
    -------
    float
    """
    num, den = _statistic_parts(amd, bmd)
    return num / den


def _statistic_parts(amd, bmd):
    for s in (amd, bmd):
        if not s.sd > 0:
            raise DegenerateVarianceError(f"cell ({s.sector}, {s.area}) has non-positive scale")
    na, nb = amd.n_firms, bmd.n_firms
    za, wa = _points(amd.triples, amd.mean, amd.sd, na, nb, +1)
    zb, wb = _points(bmd.triples, bmd.mean, bmd.sd, nb, na, -1)
    return _sup_abs(np.r_[za, zb], np.r_[wa, wb]), 2 * na * nb


def standardized_difference(amd, bmd, z):
    """``G_AMD(z) - G_BMD(z)`` at arbitrary standardized points."""
    z = np.asarray(z, dtype=float)
    return amd.cdf(amd.mean + amd.sd * z) - bmd.cdf(bmd.mean + bmd.sd * z)


def validity_ratio(n_amd, n_bmd, t_min):
    """``max(n_amd, n_bmd) / t_min**4``; small values support the debiased test."""
    t_min = check_int(t_min, "t_min", minimum=2)
    n_amd = check_int(n_amd, "n_amd", minimum=0)
    n_bmd = check_int(n_bmd, "n_bmd", minimum=0)
    return max(n_amd, n_bmd) / float(t_min) ** 4


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # keep pytest from collecting this class

    sector: str | None
    statistic: float
    p_value: float
    n_bootstrap: int
    n_amd: int
    n_bmd: int
    validity_ratio: float | None
    warnings: tuple = ()
    discarded_draws: int = 0
    seed: int | None = None
    scheme: str = "permutation"
    bootstrap_statistics: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        return {
            "sector": self.sector,
            "statistic": float(self.statistic),
            "p_value": float(self.p_value),
            "n_bootstrap": int(self.n_bootstrap),
            "n_amd": int(self.n_amd),
            "n_bmd": int(self.n_bmd),
            "validity_ratio": None if self.validity_ratio is None else float(self.validity_ratio),
            "discarded_draws": int(self.discarded_draws),
            "seed": self.seed,
            "scheme": self.scheme,
            "warnings": list(self.warnings),
        }


def sector_stream(sector):
    """Stable sub-stream key for a sector label."""
    return zlib.crc32(str(sector).encode("utf-8"))


SCHEMES = ("permutation", "recentered")


def _bootstrap_draws(amd_arr, bmd_arr, obs_z, obs_w, seed, stream, ddof, indices, pool=None):
    """Integer bootstrap numerators; -1 marks a discarded (degenerate) draw.

    With ``pool`` each draw is a random split of it and is scored as is;
    otherwise each area is resampled from itself and the observed
    difference subtracted.
    """
    na, nb = amd_arr.shape[0], bmd_arr.shape[0]
    wa = _weights(na, nb, +1)
    wb = _weights(nb, na, -1)
    out = np.empty(len(indices), dtype=np.int64)
    for k, b in enumerate(indices):
        rng = substream(seed, *stream, b)
        if pool is None:
            ra = amd_arr[rng.integers(0, na, na)]
            rb = bmd_arr[rng.integers(0, nb, nb)]
        else:
            idx = rng.permutation(pool.shape[0])
            ra, rb = pool[idx[:na]], pool[idx[na:]]
        va = debiased_variance(ra, ddof=ddof)
        vb = debiased_variance(rb, ddof=ddof)
        if va.degenerate or vb.degenerate:
            out[k] = -1
            continue
        za, w_a = _standardized_points(ra, debiased_mean(ra).value, np.sqrt(va.value), wa)
        zb, w_b = _standardized_points(rb, debiased_mean(rb).value, np.sqrt(vb.value), wb)
        if pool is None:
            # draw minus observed: observed points enter with flipped weights
            out[k] = _sup_abs(np.r_[za, zb, obs_z], np.r_[w_a, w_b, -obs_w])
        else:
            out[k] = _sup_abs(np.r_[za, zb], np.r_[w_a, w_b])
    return out


def bootstrap_test(
    amd_cell,
    bmd_cell,
    n_bootstrap=999,
    seed=None,
    sector=None,
    ddof=1,
    validity_threshold=1.0,
    n_jobs=1,
    stream=(),
    scheme="permutation",
):
    """Debiased standardized KS test with a firm-level resampling p-value.

    Parameters
    ----------
    amd_cell, bmd_cell : DataFrame or array-like of shape (n, 3)
        Per-firm ``(theta_full, theta_h1, theta_h2)``. A ``tenure`` column,
        when present, feeds the validity diagnostic.
    n_bootstrap : int
        Number of bootstrap draws B.
    seed : int, optional
        Draw ``b`` uses sub-stream ``(seed, *stream, b)``, so results do not
        depend on ``n_jobs``. A fresh seed is drawn (and reported) if omitted.
    scheme : {"permutation", "recentered"}
        Resampling scheme, see the module docstring.
    validity_threshold : float
        A warning is attached when ``max(N) / T_min**4`` exceeds it; ``inf``
        disables the check.

    Returns
    -------
    TestResult
        ``p_value = (1 + #{T*_b >= T}) / (B' + 1)`` with ``B'`` the number of
        draws whose debiased variances were positive in both areas.
    """
    n_bootstrap = check_int(n_bootstrap, "n_bootstrap", minimum=1)
    n_jobs = check_int(n_jobs, "n_jobs", minimum=1)
    seed = fresh_seed() if seed is None else check_seed(seed)
    validity_threshold = check_real(validity_threshold, "validity_threshold", low=0.0, allow_inf=True)
    stream = tuple(int(s) for s in stream)
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")

    amd = CellSummary.from_triples(amd_cell, sector, "AMD", ddof=ddof)
    bmd = CellSummary.from_triples(bmd_cell, sector, "BMD", ddof=ddof)
    na, nb = amd.n_firms, bmd.n_firms
    obs_num, den = _statistic_parts(amd, bmd)

    za, wa = _points(amd.triples, amd.mean, amd.sd, na, nb, +1)
    zb, wb = _points(bmd.triples, bmd.mean, bmd.sd, nb, na, -1)
    obs_z, obs_w = np.r_[za, zb], np.r_[wa, wb]
    pool = None
    if scheme == "permutation":
        pool = np.r_[(amd.triples - amd.mean) / amd.sd, (bmd.triples - bmd.mean) / bmd.sd]

    def run(idx):
        return _bootstrap_draws(amd.triples, bmd.triples, obs_z, obs_w, seed, stream, ddof, idx, pool)

    draws = np.arange(n_bootstrap)
    if n_jobs == 1:
        nums = run(draws)
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as executor:
            nums = np.concatenate(list(executor.map(run, np.array_split(draws, n_jobs))))

    ok = nums >= 0
    discarded = int((~ok).sum())
    completed = int(ok.sum())
    exceed = int((nums[ok] >= obs_num).sum())
    p_value = (1 + exceed) / (completed + 1)

    warnings = []
    if discarded:
        warnings.append(f"{discarded} bootstrap draw(s) discarded: non-positive debiased variance")
    ratio = None
    tenures = [t for t in (amd.min_tenure, bmd.min_tenure) if t is not None]
    t_min = min(tenures) if tenures else None
    if t_min is not None and t_min >= 2:
        ratio = validity_ratio(na, nb, t_min)
        if ratio > validity_threshold:
            warnings.append(
                f"validity ratio max(N)/T^4 = {ratio:.4g} exceeds {validity_threshold:g}"
            )
    for w in warnings:
        logger.warning("sector %s: %s", sector, w)

    return TestResult(
        sector=sector,
        statistic=obs_num / den,
        p_value=p_value,
        n_bootstrap=completed,
        n_amd=na,
        n_bmd=nb,
        validity_ratio=ratio,
        warnings=tuple(warnings),
        discarded_draws=discarded,
        seed=seed,
        scheme=scheme,
        bootstrap_statistics=nums[ok] / den,
    )


class DebiasedKSTest(BaseEstimator):
    """Estimator wrapper around :func:`bootstrap_test`.

    ``fit(amd, bmd)`` runs the test; results are exposed as ``statistic_``,
    ``pvalue_`` and ``result_``.
    """

    def __init__(self, n_bootstrap=999, seed=None, ddof=1, validity_threshold=1.0, n_jobs=1, scheme="permutation"):
        self.n_bootstrap = n_bootstrap
        self.seed = seed
        self.ddof = ddof
        self.validity_threshold = validity_threshold
        self.n_jobs = n_jobs
        self.scheme = scheme

    def fit(self, amd, bmd, sector=None):
        self.result_ = bootstrap_test(
            amd,
            bmd,
            n_bootstrap=self.n_bootstrap,
            seed=self.seed,
            sector=sector,
            ddof=self.ddof,
            validity_threshold=self.validity_threshold,
            n_jobs=self.n_jobs,
            scheme=self.scheme,
        )
        self.amd_summary_ = CellSummary.from_triples(amd, sector, "AMD", ddof=self.ddof)
        self.bmd_summary_ = CellSummary.from_triples(bmd, sector, "BMD", ddof=self.ddof)
        self.statistic_ = self.result_.statistic
        self.pvalue_ = self.result_.p_value
        return self

    def decision(self, alpha=0.05):
        """True when the null of equal standardized laws is rejected at ``alpha``."""
        if not hasattr(self, "result_"):
            raise NotFittedError("DebiasedKSTest is not fitted yet; call fit first")
        return self.pvalue_ <= alpha
