import numpy as np
import pandas as pd
import pytest

from hpjks.panel import PanelDataset


def make_panel(rows):
    """PanelDataset from (firm_id, year, sector, area, V, K, L) tuples."""
    frame = pd.DataFrame(
        rows, columns=["firm_id", "year", "sector", "area", "value_added", "capital", "labor"]
    )
    return PanelDataset.from_frame(frame)


def noiseless_panel(beta1, beta2, beta0, thetas, n_years, rng, sector="S", area="AMD"):
    """Exact Cobb-Douglas panel with productivity orthogonal to the regressors.

    ``thetas`` are recentered and projected off each firm's average log
    inputs, so pooled least squares recovers the coefficients exactly and
    the average residual equals the (returned) productivity.
    """
    n = len(thetas)
    log_k = rng.normal(1.0, 0.5, (n, n_years))
    log_l = rng.normal(1.0, 0.5, (n, n_years))
    Z = np.c_[np.ones(n), log_k.mean(axis=1), log_l.mean(axis=1)]
    theta = np.asarray(thetas, dtype=float)
    theta = theta - Z @ np.linalg.lstsq(Z, theta, rcond=None)[0]
    years = np.arange(2000, 2000 + n_years)
    b0 = np.array([beta0(y) for y in years])
    log_v = theta[:, None] + beta1 * log_k + beta2 * log_l + b0[None, :]
    frame = pd.DataFrame(
        {
            "firm_id": np.repeat([f"F{i:04d}" for i in range(n)], n_years),
            "year": np.tile(years, n),
            "sector": sector,
            "area": area,
            "value_added": np.exp(log_v).ravel(),
            "capital": np.exp(log_k).ravel(),
            "labor": np.exp(log_l).ravel(),
        }
    )
    return PanelDataset.from_frame(frame), theta


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
