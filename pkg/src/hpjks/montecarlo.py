"""Monte Carlo experiments: size, power and bias order of the debiased test.

Replication ``r`` draws from sub-streams keyed by ``(seed, r)`` at every grid
point, so grid points are compared on common random numbers and results do
not depend on how replications are scheduled.
"""
from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ._utils import check_int, check_real, check_seed, substream
from .dgp import DgpConfig, LatentDistSpec, NoiseSpec, generate_panel, latent_moments
from .hpj import debiased_variance
from .kstest import SCHEMES, DegenerateVarianceError, bootstrap_test
from .prodfn import estimate_tfp

logger = logging.getLogger(__name__)

GRID_KEYS = ("xi", "n", "n_amd", "n_bmd", "tenure", "noise_sd", "mu", "sigma")


def derive_seed(seed, *keys):
    """64-bit seed for the sub-stream ``keys`` of ``seed``."""
    state = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return int(state.generate_state(1, dtype=np.uint64)[0])


@dataclass
class ExperimentConfig:
    """Grid of generator settings run through the full pipeline.

    ``grid`` maps a setting name (one of ``GRID_KEYS``; ``n`` sets both
    areas' firm counts) to the list of values to try. Grid points are the
    Cartesian product in the given key order.
    """

    base: DgpConfig = field(default_factory=DgpConfig)
    grid: dict = field(default_factory=dict)
    replications: int = 100
    n_bootstrap: int = 199
    alpha: float = 0.05
    seed: int = 0
    n_jobs: int = 1
    ddof: int = 1
    min_tenure: int | None = None
    scheme: str = "permutation"

    def __post_init__(self):
        check_int(self.replications, "replications", minimum=1)
        check_int(self.n_bootstrap, "n_bootstrap", minimum=1)
        check_real(self.alpha, "alpha", low=0.0, high=1.0, low_open=True, high_open=True)
        check_seed(self.seed)
        check_int(self.n_jobs, "n_jobs", minimum=1)
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        unknown = set(self.grid) - set(GRID_KEYS)
        if unknown:
            raise ValueError(f"unknown grid settings {sorted(unknown)}; allowed: {GRID_KEYS}")
        self.grid = {k: list(v) for k, v in self.grid.items()}
        if any(len(v) == 0 for v in self.grid.values()):
            raise ValueError("grid settings need at least one value")

    def points(self):
        """List of (settings dict, DgpConfig) per grid point."""
        keys = list(self.grid)
        out = []
        for values in itertools.product(*(self.grid[k] for k in keys)):
            settings = dict(zip(keys, values))
            out.append((settings, _apply(self.base, settings)))
        if not keys:
            out.append(({}, self.base))
        return out

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        base = DgpConfig.from_dict(doc.pop("base", {}))
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown experiment options: {sorted(unknown)}")
        return cls(base=base, **doc)

    def to_dict(self):
        return {
            "base": self.base.to_dict(),
            "grid": {k: list(v) for k, v in self.grid.items()},
            "replications": self.replications,
            "n_bootstrap": self.n_bootstrap,
            "alpha": self.alpha,
            "seed": self.seed,
            "n_jobs": self.n_jobs,
            "ddof": self.ddof,
            "min_tenure": self.min_tenure,
            "scheme": self.scheme,
        }


def _apply(base, settings):
    changes = {}
    for key, value in settings.items():
        if key == "n":
            changes["n_amd"] = changes["n_bmd"] = int(value)
        elif key in ("n_amd", "n_bmd", "tenure"):
            changes[key] = int(value)
        elif key == "noise_sd":
            n = base.noise
            changes["noise"] = NoiseSpec(family=n.family, sd=float(value), df=n.df, ar1=n.ar1)
        else:
            changes[key] = float(value)
    return base.with_(**changes)


@dataclass
class MonteCarloSummary:
    """Per-grid-point results.

    ``rows`` holds one row per grid point; ``elapsed`` is wall-clock seconds
    and is kept out of written files so they stay reproducible.
    """

    kind: str
    rows: pd.DataFrame
    config: dict
    elapsed: float = 0.0
    notes: list = field(default_factory=list)
    ratios: pd.DataFrame | None = None

    def to_csv(self, path):
        self.rows.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")

    def to_text(self):
        lines = [f"Monte Carlo {self.kind} experiment", ""]
        lines.append(self.rows.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
        if self.ratios is not None:
            lines += ["", "Bias ratios bias(T) / bias(2T)", ""]
            lines.append(self.ratios.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
        if self.notes:
            lines += [""] + list(self.notes)
        return "\n".join(lines) + "\n"


def _one_replication(point, rep, config):
    settings, dgp = point
    dgp = dgp.with_(seed=derive_seed(config.seed, rep, 0))
    panel, _ = generate_panel(dgp)
    min_tenure = config.min_tenure or dgp.tenure
    _, triples = estimate_tfp(panel, min_tenure=min_tenure)
    amd = triples[triples["area"] == "AMD"]
    bmd = triples[triples["area"] == "BMD"]
    try:
        res = bootstrap_test(
            amd,
            bmd,
            n_bootstrap=config.n_bootstrap,
            seed=derive_seed(config.seed, rep, 1),
            ddof=config.ddof,
            validity_threshold=np.inf,
            scheme=config.scheme,
        )
    except DegenerateVarianceError:
        return None
    va = debiased_variance(amd, ddof=config.ddof)
    vb = debiased_variance(bmd, ddof=config.ddof)
    return {
        "reject": res.p_value <= config.alpha,
        "statistic": res.statistic,
        "p_value": res.p_value,
        "discarded_draws": res.discarded_draws,
        "var_amd": va.value,
        "var_amd_plugin": va.plugin,
        "var_bmd": vb.value,
        "var_bmd_plugin": vb.plugin,
    }


def _run_grid(config, kind):
    start = time.perf_counter()
    points = config.points()
    rows = []
    for settings, dgp in points:
        reps = range(config.replications)
        if config.n_jobs == 1:
            results = [_one_replication((settings, dgp), r, config) for r in reps]
        else:
            with ThreadPoolExecutor(max_workers=config.n_jobs) as pool:
                results = list(pool.map(lambda r: _one_replication((settings, dgp), r, config), reps))
        done = [r for r in results if r is not None]
        R = len(done)
        rejections = sum(r["reject"] for r in done)
        rate = rejections / R if R else float("nan")
        amd_spec = dgp.amd_latent or dgp.latent
        _, true_var_amd = latent_moments(amd_spec, dgp.mu, dgp.sigma, dgp.xi)
        _, true_var_bmd = latent_moments(dgp.latent)

        def avg(key):
            return float(np.mean([r[key] for r in done])) if R else float("nan")

        row = dict(settings)
        row.update(
            {
                "n_amd": dgp.n_amd,
                "n_bmd": dgp.n_bmd,
                "tenure": dgp.tenure,
                "replications": R,
                "failed_replications": len(results) - R,
                "rejections": int(rejections),
                "rejection_rate": rate,
                "mc_se": float(np.sqrt(rate * (1.0 - rate) / R)) if R else float("nan"),
                "mean_statistic": avg("statistic"),
                "mean_p_value": avg("p_value"),
                "discarded_draws": int(sum(r["discarded_draws"] for r in done)),
                "var_bias_amd": avg("var_amd") - true_var_amd,
                "var_bias_amd_plugin": avg("var_amd_plugin") - true_var_amd,
                "var_bias_bmd": avg("var_bmd") - true_var_bmd,
                "var_bias_bmd_plugin": avg("var_bmd_plugin") - true_var_bmd,
            }
        )
        rows.append(row)
        logger.info("%s %s: rejection rate %.4f over %d replications", kind, settings, rate, R)
    frame = pd.DataFrame(rows)
    # n_amd/n_bmd/tenure may duplicate grid keys; keep the first occurrence
    frame = frame.loc[:, ~frame.columns.duplicated()]
    return MonteCarloSummary(kind, frame, config.to_dict(), time.perf_counter() - start)


def run_size_experiment(config):
    """Rejection rates under the null (no truncation, same base law in both areas)."""
    for settings, dgp in config.points():
        if dgp.xi != 0.0:
            raise ValueError(f"size experiment needs xi = 0, grid point {settings} has xi = {dgp.xi}")
        if dgp.amd_latent is not None and dgp.amd_latent != dgp.latent:
            raise ValueError("size experiment needs the same base law in both areas")
    return _run_grid(config, "size")


def _monotone_report(rows, setting):
    others = [c for c in rows.columns if c in GRID_KEYS and c != setting]
    notes = []
    groups = rows.groupby(others, sort=False) if others else [((), rows)]
    for key, g in groups:
        g = g.sort_values(setting)
        rates = g["rejection_rate"].to_numpy()
        ok = bool(np.all(np.diff(rates) >= 0))
        label = ", ".join(f"{c}={v}" for c, v in zip(others, np.atleast_1d(key)))
        notes.append(
            f"rejection rate {'nondecreasing' if ok else 'NOT monotone'} in {setting}"
            + (f" at {label}" if label else "")
            + ": " + ", ".join(f"{v:.3f}" for v in rates)
        )
    return notes


def run_power_experiment(config):
    """Rejection rates under truncation or shape-change alternatives."""
    points = config.points()
    shape_change = config.base.amd_latent is not None and config.base.amd_latent != config.base.latent
    if not shape_change and not any(dgp.xi > 0 for _, dgp in points):
        raise ValueError("power experiment needs xi > 0 at some grid point or a different AMD base law")
    summary = _run_grid(config, "power")
    summary.kind = "power"
    for setting in ("xi", "n"):
        if setting in summary.rows.columns and summary.rows[setting].nunique() > 1:
            summary.notes += _monotone_report(summary.rows, setting)
    return summary


@dataclass
class BiasOrderConfig:
    """Settings for :func:`bias_order_check`.

    Each replication simulates a cell of ``n_firms`` firms with productivity
    drawn from ``latent`` and per-period noise from ``noise``; the shorter
    panels reuse the first periods of the longest one.
    """

    latent: LatentDistSpec = field(default_factory=LatentDistSpec.normal)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    tenures: tuple = (8, 16)
    n_firms: int = 1000
    replications: int = 1000
    quantiles: tuple = (0.25, 0.75)
    seed: int = 0

    def __post_init__(self):
        self.tenures = tuple(sorted(int(t) for t in self.tenures))
        for t in self.tenures:
            check_int(t, "tenure", minimum=2)
        if not any(2 * t in self.tenures for t in self.tenures):
            raise ValueError(f"tenures {self.tenures} contain no (T, 2T) pair")
        check_int(self.n_firms, "n_firms", minimum=1)
        check_int(self.replications, "replications", minimum=2)
        self.quantiles = tuple(float(q) for q in self.quantiles)
        for q in self.quantiles:
            check_real(q, "quantile", low=0.0, high=1.0, low_open=True, high_open=True)
        check_seed(self.seed)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if "latent" in doc:
            doc["latent"] = LatentDistSpec.from_dict(doc["latent"])
        if "noise" in doc:
            doc["noise"] = NoiseSpec(**doc["noise"])
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown bias-check options: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self):
        return {
            "latent": self.latent.to_dict(),
            "noise": {"family": self.noise.family, "sd": self.noise.sd, "df": self.noise.df, "ar1": self.noise.ar1},
            "tenures": list(self.tenures),
            "n_firms": self.n_firms,
            "replications": self.replications,
            "quantiles": list(self.quantiles),
            "seed": self.seed,
        }


def bias_order_check(config):
    """Monte Carlo bias of the plugin and debiased CDF at fixed points.

    Bias is measured against the empirical CDF of the true productivities in
    the same simulated cell, whose expectation is the true CDF; this removes
    most of the sampling noise common to both. Rows report the mean and
    Monte Carlo standard error over replications; ``ratios`` gives
    bias(T) / bias(2T) for each available pair.
    """
    start = time.perf_counter()
    T_max = max(config.tenures)
    xs = np.asarray(config.latent.ppf(np.asarray(config.quantiles)), dtype=float)
    R, n = config.replications, config.n_firms
    chunk = max(1, 250_000 // n)
    # per replication, per (tenure, point): plugin and debiased bias
    plug = np.empty((R, len(config.tenures), xs.size))
    deb = np.empty_like(plug)
    for c, lo in enumerate(range(0, R, chunk)):
        hi = min(R, lo + chunk)
        rng = substream(config.seed, c)
        m = hi - lo
        theta = config.latent.ppf(rng.random((m, n)))
        noise = config.noise.draw(rng, (m, n, T_max))
        csum = np.cumsum(noise, axis=2)
        truth = theta[..., None] <= xs
        for j, T in enumerate(config.tenures):
            h = T // 2
            s1 = csum[..., h - 1]
            s_all = csum[..., T - 1]
            full = theta + s_all / T
            h1 = theta + s1 / h
            h2 = theta + (s_all - s1) / (T - h)
            f = (full[..., None] <= xs).astype(float)
            g1 = (h1[..., None] <= xs).astype(float)
            g2 = (h2[..., None] <= xs).astype(float)
            plug[lo:hi, j] = (f - truth).mean(axis=1)
            deb[lo:hi, j] = (2.0 * f - 0.5 * (g1 + g2) - truth).mean(axis=1)

    rows = []
    for j, T in enumerate(config.tenures):
        for k, (q, x) in enumerate(zip(config.quantiles, xs)):
            for name, arr in (("plugin", plug), ("debiased", deb)):
                vals = arr[:, j, k]
                rows.append(
                    {
                        "quantile": q,
                        "point": x,
                        "tenure": T,
                        "estimator": name,
                        "bias": float(vals.mean()),
                        "mc_se": float(vals.std(ddof=1) / np.sqrt(R)),
                    }
                )
    frame = pd.DataFrame(rows)
    ratio_rows = []
    for T in config.tenures:
        if 2 * T not in config.tenures:
            continue
        for q in config.quantiles:
            for name in ("plugin", "debiased"):
                sel = (frame["quantile"] == q) & (frame["estimator"] == name)
                b1 = frame.loc[sel & (frame["tenure"] == T), "bias"].item()
                b2 = frame.loc[sel & (frame["tenure"] == 2 * T), "bias"].item()
                ratio_rows.append(
                    {"quantile": q, "tenure": T, "estimator": name, "ratio": b1 / b2 if b2 != 0 else float("nan")}
                )
    return MonteCarloSummary(
        "bias", frame, config.to_dict(), time.perf_counter() - start, ratios=pd.DataFrame(ratio_rows)
    )
