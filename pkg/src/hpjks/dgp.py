"""Synthetic Cobb-Douglas panels with a known latent productivity law.

Output in firm ``i``, period ``t`` is

    log V_it = theta_i + beta1 log K_it + beta2 log L_it + beta0_t + U_it,

BMD firms draw ``theta`` from a base law ``F`` and AMD firms from the
shifted, rescaled and left-truncated law

    F_AMD(x) = max{0, (F((x - mu) / sigma) - xi) / (1 - xi)}.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from ._utils import check_int, check_real, check_seed, substream
from .panel import PanelDataset

FAMILIES = ("normal", "uniform", "lognormal", "student_t")


@dataclass(frozen=True)
class LatentDistSpec:
    """Base productivity law.

    ``normal`` and ``student_t`` use ``loc``/``scale`` (``student_t`` also
    ``df`` > 2), ``uniform`` uses ``low``/``high`` and ``lognormal`` uses
    the ``mean``/``sigma`` of the underlying normal.
    """

    family: str = "normal"
    params: tuple = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown latent family {self.family!r}; expected one of {FAMILIES}")
        p = dict(self.params)
        if self.family in ("normal", "student_t"):
            check_real(p.get("scale", 1.0), "scale", low=0.0, low_open=True)
        if self.family == "student_t":
            check_real(p.get("df", 5.0), "df", low=2.0, low_open=True)
        if self.family == "uniform" and not p.get("low", 0.0) < p.get("high", 1.0):
            raise ValueError("uniform law needs low < high")
        if self.family == "lognormal":
            check_real(p.get("sigma", 1.0), "sigma", low=0.0, low_open=True)

    @classmethod
    def normal(cls, loc=0.0, scale=1.0):
        return cls("normal", (("loc", float(loc)), ("scale", float(scale))))

    @classmethod
    def uniform(cls, low=0.0, high=1.0):
        return cls("uniform", (("low", float(low)), ("high", float(high))))

    @classmethod
    def lognormal(cls, mean=0.0, sigma=1.0):
        return cls("lognormal", (("mean", float(mean)), ("sigma", float(sigma))))

    @classmethod
    def student_t(cls, df=5.0, loc=0.0, scale=1.0):
        return cls("student_t", (("df", float(df)), ("loc", float(loc)), ("scale", float(scale))))

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        family = doc.pop("family", "normal")
        builders = {
            "normal": cls.normal,
            "uniform": cls.uniform,
            "lognormal": cls.lognormal,
            "student_t": cls.student_t,
        }
        if family not in builders:
            raise ValueError(f"unknown latent family {family!r}")
        return builders[family](**doc)

    def to_dict(self):
        return {"family": self.family, **dict(self.params)}

    @property
    def dist(self):
        p = dict(self.params)
        if self.family == "normal":
            return stats.norm(loc=p.get("loc", 0.0), scale=p.get("scale", 1.0))
        if self.family == "uniform":
            low, high = p.get("low", 0.0), p.get("high", 1.0)
            return stats.uniform(loc=low, scale=high - low)
        if self.family == "lognormal":
            return stats.lognorm(s=p.get("sigma", 1.0), scale=np.exp(p.get("mean", 0.0)))
        return stats.t(df=p.get("df", 5.0), loc=p.get("loc", 0.0), scale=p.get("scale", 1.0))

    def cdf(self, x):
        return self.dist.cdf(x)

    def ppf(self, q):
        return self.dist.ppf(q)


def _check_shape_params(sigma, xi):
    sigma = check_real(sigma, "sigma", low=0.0, low_open=True)
    xi = check_real(xi, "xi", low=0.0, high=1.0, high_open=True)
    return sigma, xi


def shifted_truncated_cdf(base_cdf, theta, mu=0.0, sigma=1.0, xi=0.0):
    """CDF of the shifted, rescaled, left-truncated law at ``theta``.

    ``base_cdf`` is any vectorised CDF; returns
    ``max(0, (base_cdf((theta - mu) / sigma) - xi) / (1 - xi))``.
    """
    mu = check_real(mu, "mu")
    sigma, xi = _check_shape_params(sigma, xi)
    base = np.asarray(base_cdf((np.asarray(theta, dtype=float) - mu) / sigma), dtype=float)
    out = np.maximum(0.0, (base - xi) / (1.0 - xi))
    return out if out.ndim else float(out)


def latent_quantile(spec, q, mu=0.0, sigma=1.0, xi=0.0):
    """Quantile function matching :func:`shifted_truncated_cdf`."""
    mu = check_real(mu, "mu")
    sigma, xi = _check_shape_params(sigma, xi)
    return mu + sigma * spec.ppf(xi + (1.0 - xi) * np.asarray(q, dtype=float))


def sample_latent_tfp(spec, mu=0.0, sigma=1.0, xi=0.0, n=1, rng=None):
    """Draw ``n`` productivities by inverse CDF on a uniform rescaled to [xi, 1)."""
    n = check_int(n, "n", minimum=0)
    rng = np.random.default_rng(rng)
    return latent_quantile(spec, rng.random(n), mu, sigma, xi)


def latent_moments(spec, mu=0.0, sigma=1.0, xi=0.0):
    """Mean and variance of the shifted, truncated law (numerical quadrature)."""
    from scipy.integrate import quad

    sigma, xi = _check_shape_params(sigma, xi)
    if xi == 0.0:
        return mu + sigma * float(spec.dist.mean()), sigma**2 * float(spec.dist.var())
    q = lambda u: latent_quantile(spec, u, mu, sigma, xi)  # noqa: E731
    m = quad(q, 0.0, 1.0, limit=200)[0]
    v = quad(lambda u: (q(u) - m) ** 2, 0.0, 1.0, limit=200)[0]
    return m, v


@dataclass(frozen=True)
class NoiseSpec:
    """Law of the per-period output noise, scaled to standard deviation ``sd``.

    ``ar1`` adds stationary AR(1) dependence within a firm.
    """

    family: str = "normal"
    sd: float = 1.0
    df: float = 5.0
    ar1: float = 0.0

    def __post_init__(self):
        if self.family not in ("normal", "uniform", "student_t"):
            raise ValueError(f"unknown noise family {self.family!r}")
        check_real(self.sd, "noise sd", low=0.0)
        check_real(self.df, "noise df", low=2.0, low_open=True)
        check_real(self.ar1, "ar1", low=-1.0, high=1.0, low_open=True, high_open=True)

    def draw(self, rng, size):
        if self.family == "normal":
            e = rng.standard_normal(size)
        elif self.family == "uniform":
            e = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size)
        else:
            e = rng.standard_t(self.df, size) / np.sqrt(self.df / (self.df - 2.0))
        if self.ar1:
            rho = self.ar1
            e = e.copy()
            # first innovation already has the stationary unit variance
            for t in range(1, e.shape[-1]):
                e[..., t] = rho * e[..., t - 1] + np.sqrt(1.0 - rho**2) * e[..., t]
        return self.sd * e


@dataclass(frozen=True)
class InputProcess:
    """log K and log L: i.i.d. normal over periods, optionally tied to productivity.

    ``corr_theta`` is the correlation of each log input with the normal
    score of the firm's productivity rank.
    """

    mean_log_k: float = 1.0
    sd_log_k: float = 0.5
    mean_log_l: float = 1.0
    sd_log_l: float = 0.5
    corr_kl: float = 0.0
    corr_theta: float = 0.0

    def __post_init__(self):
        check_real(self.sd_log_k, "sd_log_k", low=0.0, low_open=True)
        check_real(self.sd_log_l, "sd_log_l", low=0.0, low_open=True)
        check_real(self.corr_kl, "corr_kl", low=-1.0, high=1.0, low_open=True, high_open=True)
        check_real(self.corr_theta, "corr_theta", low=-1.0, high=1.0, low_open=True, high_open=True)


@dataclass(frozen=True)
class DgpConfig:
    beta1: float = 0.3
    beta2: float = 0.6
    beta0_by_year: dict | None = None
    latent: LatentDistSpec = field(default_factory=LatentDistSpec.normal)
    amd_latent: LatentDistSpec | None = None
    mu: float = 0.0
    sigma: float = 1.0
    xi: float = 0.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    inputs: InputProcess = field(default_factory=InputProcess)
    n_amd: int = 100
    n_bmd: int = 100
    tenure: int = 15
    start_year: int = 2000
    sector: str = "S"
    seed: int = 0

    def __post_init__(self):
        check_real(self.beta1, "beta1", low=0.0, high=1.0, high_open=True)
        check_real(self.beta2, "beta2", low=0.0, high=1.0, high_open=True)
        _check_shape_params(self.sigma, self.xi)
        check_real(self.mu, "mu")
        check_int(self.n_amd, "n_amd", minimum=0)
        check_int(self.n_bmd, "n_bmd", minimum=0)
        check_int(self.tenure, "tenure", minimum=2)
        check_int(self.start_year, "start_year")
        check_seed(self.seed)
        if self.beta0_by_year is not None:
            missing = set(self.years) - set(int(y) for y in self.beta0_by_year)
            if missing:
                raise ValueError(f"beta0_by_year lacks years {sorted(missing)}")

    @property
    def years(self):
        return list(range(self.start_year, self.start_year + self.tenure))

    def beta0(self, year):
        if self.beta0_by_year is None:
            return 0.01 * (year - self.start_year + 1)
        return float(self.beta0_by_year[year])

    def with_(self, **changes):
        doc = {f: getattr(self, f) for f in self.__dataclass_fields__}
        doc.update(changes)
        return DgpConfig(**doc)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown generator options: {sorted(unknown)}")
        if "latent" in doc:
            doc["latent"] = LatentDistSpec.from_dict(doc["latent"])
        if doc.get("amd_latent") is not None:
            doc["amd_latent"] = LatentDistSpec.from_dict(doc["amd_latent"])
        if "noise" in doc:
            doc["noise"] = NoiseSpec(**doc["noise"])
        if "inputs" in doc:
            doc["inputs"] = InputProcess(**doc["inputs"])
        if doc.get("beta0_by_year") is not None:
            doc["beta0_by_year"] = {int(k): float(v) for k, v in doc["beta0_by_year"].items()}
        return cls(**doc)

    def to_dict(self):
        doc = {f: getattr(self, f) for f in self.__dataclass_fields__}
        doc["latent"] = self.latent.to_dict()
        doc["amd_latent"] = None if self.amd_latent is None else self.amd_latent.to_dict()
        doc["noise"] = asdict(self.noise)
        doc["inputs"] = asdict(self.inputs)
        if self.beta0_by_year is not None:
            doc["beta0_by_year"] = {int(k): float(v) for k, v in sorted(self.beta0_by_year.items())}
        return doc


@dataclass(frozen=True)
class GroundTruth:
    """True productivities (``firms``: firm_id, area, theta) and per-period noise."""

    firms: pd.DataFrame
    noise: pd.DataFrame
    config: DgpConfig

    def to_csv(self, path):
        self.firms[["firm_id", "theta", "area"]].to_csv(
            path, index=False, float_format="%.17g", lineterminator="\n"
        )


def _firm_draw(config, index):
    """Uniform rank level, input shocks and noise for one firm's sub-stream."""
    rng = substream(config.seed, index)
    u = rng.random()
    z = rng.standard_normal((2, config.tenure))
    noise = config.noise.draw(rng, config.tenure)
    return u, z, noise


def generate_panel(config):
    """Simulate a panel and its ground truth.

    Each firm draws from its own sub-stream keyed by firm index (AMD firms
    first), so the output is a pure function of the config.

    Returns
    -------
    (PanelDataset, GroundTruth)
    """
    n = config.n_amd + config.n_bmd
    T = config.tenure
    years = np.array(config.years, dtype=np.int64)
    beta0 = np.array([config.beta0(y) for y in years])
    width = max(5, len(str(max(n, 1))))

    is_amd = np.arange(n) < config.n_amd
    areas = np.where(is_amd, "AMD", "BMD")
    firm_ids = [f"{a[0]}{i:0{width}d}" for i, a in enumerate(areas)]
    u = np.empty(n)
    z = np.empty((n, 2, T))
    noise = np.empty((n, T))
    for i in range(n):
        u[i], z[i], noise[i] = _firm_draw(config, i)

    level = np.where(is_amd, config.xi + (1.0 - config.xi) * u, u)
    thetas = np.empty(n)
    amd_spec = config.amd_latent or config.latent
    thetas[is_amd] = config.mu + config.sigma * amd_spec.ppf(level[is_amd])
    thetas[~is_amd] = config.latent.ppf(level[~is_amd])

    inp = config.inputs
    zk = z[:, 0]
    zl = inp.corr_kl * z[:, 0] + np.sqrt(1.0 - inp.corr_kl**2) * z[:, 1]
    if inp.corr_theta:
        c = inp.corr_theta
        score = stats.norm.ppf(level)[:, None]
        zk = c * score + np.sqrt(1.0 - c**2) * zk
        zl = c * score + np.sqrt(1.0 - c**2) * zl
    log_k = inp.mean_log_k + inp.sd_log_k * zk
    log_l = inp.mean_log_l + inp.sd_log_l * zl

    log_v = thetas[:, None] + config.beta1 * log_k + config.beta2 * log_l + beta0[None, :] + noise
    frame = pd.DataFrame(
        {
            "firm_id": np.repeat(firm_ids, T),
            "year": np.tile(years, n),
            "sector": config.sector,
            "area": np.repeat(areas, T),
            "value_added": np.exp(log_v).ravel(),
            "capital": np.exp(log_k).ravel(),
            "labor": np.exp(log_l).ravel(),
        }
    )
    truth = GroundTruth(
        firms=pd.DataFrame({"firm_id": firm_ids, "area": areas, "theta": thetas}),
        noise=pd.DataFrame(
            {"firm_id": np.repeat(firm_ids, T), "year": np.tile(years, n), "noise": noise.ravel()}
        ),
        config=config,
    )
    return PanelDataset.from_frame(frame), truth
