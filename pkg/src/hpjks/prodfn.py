"""Log-linear production function fits and residual-based TFP estimates.

For each (sector, area) cell, log value added is regressed on log capital,
log labor and a full set of year intercepts by least squares. A firm's TFP
estimate is the mean of its residuals over the full series and over each
contiguous half; the halves reuse the same fitted coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .panel import PanelDataset, filter_min_periods


class RankDeficientError(ValueError):
    pass


@dataclass(frozen=True)
class ProductionEstimate:
    sector: str
    area: str | None
    beta0_by_year: dict
    beta1: float
    beta2: float
    n_obs: int
    residual_variance: float

    def to_dict(self):
        return {
            "sector": self.sector,
            "area": self.area,
            "beta0_by_year": {int(y): float(b) for y, b in sorted(self.beta0_by_year.items())},
            "beta1": float(self.beta1),
            "beta2": float(self.beta2),
            "n_obs": int(self.n_obs),
            "residual_variance": float(self.residual_variance),
        }


def _frame(data):
    return data.frame if isinstance(data, PanelDataset) else data


def _design(frame, years):
    year_index = {y: j for j, y in enumerate(years)}
    cols = frame["year"].map(year_index)
    if cols.isna().any():
        unseen = sorted(frame.loc[cols.isna(), "year"].unique().tolist())
        raise ValueError(f"years without a fitted intercept: {unseen}")
    n = len(frame)
    X = np.zeros((n, 2 + len(years)))
    X[:, 0] = np.log(frame["capital"].to_numpy(dtype=float))
    X[:, 1] = np.log(frame["labor"].to_numpy(dtype=float))
    X[np.arange(n), 2 + cols.to_numpy(dtype=np.int64)] = 1.0
    return X


def estimate_production_function(dataset, sector, area=None):
    """Least-squares fit of log V on log K, log L and year intercepts.

    Uses every observation of the cell (``area=None`` pools both areas).
    Raises ``ValueError`` for an empty cell and :class:`RankDeficientError`
    when the design is collinear.
    """
    frame = _frame(dataset)
    mask = frame["sector"] == sector
    if area is not None:
        mask &= frame["area"] == area
    cell = frame.loc[mask]
    if cell.empty:
        raise ValueError(f"no observations in cell ({sector}, {area})")
    years = sorted(int(y) for y in cell["year"].unique())
    X = _design(cell, years)
    y = np.log(cell["value_added"].to_numpy(dtype=float))
    n, p = X.shape
    if n < p or np.linalg.matrix_rank(X) < p:
        raise RankDeficientError(
            f"design for cell ({sector}, {area}) is rank deficient: {n} observations, {p} parameters"
        )
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = n - p
    return ProductionEstimate(
        sector=sector,
        area=area,
        beta0_by_year=dict(zip(years, coef[2:].tolist())),
        beta1=float(coef[0]),
        beta2=float(coef[1]),
        n_obs=n,
        residual_variance=float(resid @ resid / dof) if dof > 0 else 0.0,
    )


def compute_residuals(dataset, estimate):
    """Residual ``log V - b0_t - b1 log K - b2 log L`` for every observation given."""
    frame = _frame(dataset)
    years = sorted(estimate.beta0_by_year)
    X = _design(frame, years)
    coef = np.r_[estimate.beta1, estimate.beta2, [estimate.beta0_by_year[y] for y in years]]
    resid = np.log(frame["value_added"].to_numpy(dtype=float)) - X @ coef
    out = frame[["firm_id", "year", "sector", "area"]].copy()
    out["residual"] = resid
    return out.reset_index(drop=True)


def tfp_estimates(residuals):
    """Per-firm average residuals over the full series and its two halves.

    Halves follow :func:`hpjks.panel.split_halves`: the first ``T // 2``
    observations in year order, then the rest.

    Returns
    -------
    DataFrame
        One row per firm: firm_id, sector, area, tenure, theta_full,
        theta_h1, theta_h2.
    """
    if residuals["residual"].isna().any():
        raise ValueError("missing residuals for some firm-years")
    r = residuals.sort_values(["firm_id", "year"], kind="mergesort").reset_index(drop=True)
    g = r.groupby("firm_id", sort=True)
    tenure = g["residual"].transform("size").to_numpy()
    if np.any(tenure < 2):
        short = r.loc[tenure < 2, "firm_id"].unique().tolist()
        raise ValueError(f"firms with fewer than 2 residuals: {short[:5]}")
    first = g.cumcount().to_numpy() < tenure // 2
    r["_h1"] = np.where(first, r["residual"], 0.0)
    r["_h2"] = np.where(first, 0.0, r["residual"])
    sums = g.agg(
        sector=("sector", "first"),
        area=("area", "first"),
        tenure=("residual", "size"),
        total=("residual", "sum"),
        s1=("_h1", "sum"),
        s2=("_h2", "sum"),
    )
    n1 = sums["tenure"] // 2
    out = pd.DataFrame(
        {
            "firm_id": sums.index.to_numpy(),
            "sector": sums["sector"].to_numpy(),
            "area": sums["area"].to_numpy(),
            "tenure": sums["tenure"].to_numpy(),
            "theta_full": (sums["total"] / sums["tenure"]).to_numpy(),
            "theta_h1": (sums["s1"] / n1).to_numpy(),
            "theta_h2": (sums["s2"] / (sums["tenure"] - n1)).to_numpy(),
        }
    )
    return out


class ProductionFunction(BaseEstimator, TransformerMixin):
    """Per-cell log-linear production function.

    Parameters
    ----------
    by_area : bool, default=True
        Fit separate coefficients for each (sector, area) cell. With
        ``False`` both areas of a sector share one fit.

    Attributes
    ----------
    estimates_ : dict
        ``(sector, area) -> ProductionEstimate``; the area key is ``None``
        when ``by_area=False``.
    """

    def __init__(self, by_area=True):
        self.by_area = by_area

    def _key(self, sector, area):
        return (sector, area if self.by_area else None)

    def fit(self, X, y=None):
        frame = _frame(X)
        keys = frame[["sector", "area"]].drop_duplicates()
        estimates = {}
        for sector, area in sorted(set(self._key(s, a) for s, a in keys.itertuples(index=False)), key=str):
            estimates[(sector, area)] = estimate_production_function(frame, sector, area)
        self.estimates_ = estimates
        return self

    def _check_fitted(self):
        if not hasattr(self, "estimates_"):
            raise NotFittedError("ProductionFunction is not fitted yet; call fit first")

    def transform(self, X):
        """Residual panel (firm_id, year, sector, area, residual)."""
        self._check_fitted()
        frame = _frame(X)
        parts = []
        for (sector, area), cell in frame.groupby(["sector", "area"], sort=True):
            key = self._key(sector, area)
            if key not in self.estimates_:
                raise ValueError(f"no fitted production function for cell {key}")
            parts.append(compute_residuals(cell, self.estimates_[key]))
        if not parts:
            return pd.DataFrame(columns=["firm_id", "year", "sector", "area", "residual"])
        return pd.concat(parts, ignore_index=True)

    def predict(self, X):
        """Fitted log value added for each observation, in input order."""
        frame = _frame(X)
        resid = self.transform(frame).set_index(["firm_id", "year"])["residual"]
        idx = pd.MultiIndex.from_frame(frame[["firm_id", "year"]])
        return np.log(frame["value_added"].to_numpy(dtype=float)) - resid.reindex(idx).to_numpy()

    def tfp_triples(self, X, min_tenure=15, require_consecutive_years=False):
        """TFP triples for firms meeting the tenure rule.

        Coefficients come from ``fit`` on the full sample; only the averaging
        step is restricted to long-lived firms.
        """
        data = X if isinstance(X, PanelDataset) else PanelDataset(X)
        kept = filter_min_periods(data, min_tenure, require_consecutive_years)
        return tfp_estimates(self.transform(kept))


def estimate_tfp(dataset, min_tenure=15, require_consecutive_years=False, by_area=True):
    """Fit on the full panel, then build triples for firms with enough periods.

    Returns
    -------
    (ProductionFunction, DataFrame)
    """
    model = ProductionFunction(by_area=by_area).fit(dataset)
    return model, model.tfp_triples(dataset, min_tenure, require_consecutive_years)
