import math
from fractions import Fraction

import numpy as np
import pandas as pd
import pytest
from sklearn.exceptions import NotFittedError

from hpjks.kstest import (
    CellSummary,
    DebiasedKSTest,
    DegenerateVarianceError,
    bootstrap_test,
    ks_statistic,
    sector_stream,
    standardized_difference,
    validity_ratio,
)


def noise_free(values):
    x = np.asarray(values, dtype=float)
    return np.c_[x, x, x]


def noisy(theta, rng, sd=0.2):
    """Triples whose halves are noisier than the full estimate, as in a panel."""
    theta = np.asarray(theta, dtype=float)[:, None]
    return theta + rng.normal(scale=[sd, sd * np.sqrt(2), sd * np.sqrt(2)], size=(theta.size, 3))


def summary(cell, ddof=1):
    return CellSummary.from_triples(cell, ddof=ddof)


def oracle_ks(a, b, ddof):
    """Classical two-sample KS on standardized samples by brute force."""

    def standardize(x):
        m = sum(x) / len(x)
        s = math.sqrt(sum((v - m) ** 2 for v in x) / (len(x) - ddof))
        return [(v - m) / s for v in x]

    za, zb = standardize(list(a)), standardize(list(b))
    best = Fraction(0)
    for z in za + zb:
        fa = Fraction(sum(v <= z for v in za), len(za))
        fb = Fraction(sum(v <= z for v in zb), len(zb))
        best = max(best, abs(fa - fb))
    return float(best)


def test_identical_cells_zero(rng):
    s = summary(rng.normal(size=(20, 3)))
    assert ks_statistic(s, s) == 0.0


@pytest.mark.parametrize("ddof", [0, 1])
def test_two_firm_cells_zero(ddof):
    assert ks_statistic(summary(noise_free([0, 1]), ddof), summary(noise_free([5, 9]), ddof)) == 0.0


@pytest.mark.parametrize("ddof", [0, 1])
def test_hand_fixture_one_third(ddof):
    stat = ks_statistic(summary(noise_free([0, 1, 2]), ddof), summary(noise_free([0, 0, 3]), ddof))
    assert stat == pytest.approx(1 / 3, abs=1e-15)


@pytest.mark.parametrize("ddof", [0, 1])
def test_matches_oracle_on_random_fixtures(ddof):
    rng = np.random.default_rng(ddof)
    for _ in range(150):
        a = np.round(rng.normal(size=rng.integers(2, 30)), rng.integers(0, 3))
        b = np.round(rng.standard_t(3, size=rng.integers(2, 30)), rng.integers(0, 3))
        if a.std() == 0 or b.std() == 0:
            continue
        got = ks_statistic(summary(noise_free(a), ddof), summary(noise_free(b), ddof))
        assert got == oracle_ks(a, b, ddof)


def test_candidate_grid_is_sufficient(rng):
    for _ in range(30):
        A = summary(noisy(rng.normal(size=rng.integers(5, 15)), rng, sd=0.1))
        B = summary(noisy(rng.exponential(size=rng.integers(5, 15)), rng, sd=0.1))
        stat = ks_statistic(A, B)
        pts = np.r_[A.standardized_cdf().jump_points, B.standardized_cdf().jump_points]
        fine = np.linspace(pts.min() - 0.5, pts.max() + 0.5, 10 * pts.size * 10)
        assert np.abs(standardized_difference(A, B, fine)).max() <= stat + 1e-12
        # both one-sided limits at every candidate point stay below the sup too
        left = A.cdf.left_limit(A.mean + A.sd * pts) - B.cdf.left_limit(B.mean + B.sd * pts)
        assert np.abs(left).max() <= stat + 1e-12
        # mapping z back to the raw axis rounds, so probe just right of each jump
        right = standardized_difference(A, B, pts + 1e-9)
        assert np.abs(right).max() == pytest.approx(stat, abs=1e-12)


def test_location_scale_invariance(rng):
    for _ in range(25):
        a, b = noisy(rng.normal(size=12), rng), noisy(rng.gamma(2.0, size=9), rng)
        base = ks_statistic(summary(a), summary(b))
        moved = ks_statistic(summary(rng.normal() + rng.uniform(0.1, 10) * a), summary(b))
        assert abs(base - moved) <= 1e-9


def test_degenerate_scale_rejected():
    with pytest.raises(DegenerateVarianceError):
        summary(noise_free([1, 1, 1]))
    with pytest.raises(DegenerateVarianceError):
        summary([[0.0, -1.0, 1.0], [0.0, 1.0, -1.0]])
    with pytest.raises(ValueError):
        summary(noise_free([1.0]))


def test_validity_ratio_examples():
    assert validity_ratio(16649, 3, 15) == pytest.approx(16649 / 50625)
    assert validity_ratio(16649, 3, 15) == pytest.approx(0.3289, abs=5e-5)
    assert validity_ratio(101, 50, 15) == pytest.approx(0.001995, abs=5e-7)
    assert validity_ratio(0, 0, 15) == 0.0
    with pytest.raises(ValueError):
        validity_ratio(10, 10, 1)


@pytest.mark.parametrize("scheme", ["permutation", "recentered"])
def test_identical_noise_free_cells_give_p_one(scheme):
    cell = noise_free([0.1, 0.5, 0.9, 2.0, 3.5])
    res = bootstrap_test(cell, cell.copy(), n_bootstrap=99, seed=1, scheme=scheme)
    assert res.statistic == 0.0 and res.p_value == 1.0


def test_p_value_bounds_and_formula(rng):
    a, b = rng.normal(size=(30, 3)), rng.normal(size=(25, 3)) ** 2
    res = bootstrap_test(a, b, n_bootstrap=49, seed=3)
    B = res.n_bootstrap
    assert 1 / (B + 1) <= res.p_value <= 1
    exceed = int((res.bootstrap_statistics >= res.statistic).sum())
    assert res.p_value == (1 + exceed) / (B + 1)
    assert np.all(res.bootstrap_statistics >= 0)


def test_deterministic_across_threads(rng):
    a, b = rng.normal(size=(40, 3)), rng.normal(size=(35, 3))
    one = bootstrap_test(a, b, n_bootstrap=101, seed=77, n_jobs=1)
    many = bootstrap_test(a, b, n_bootstrap=101, seed=77, n_jobs=4)
    assert one.p_value == many.p_value
    np.testing.assert_array_equal(one.bootstrap_statistics, many.bootstrap_statistics)
    other = bootstrap_test(a, b, n_bootstrap=101, seed=78)
    assert not np.array_equal(one.bootstrap_statistics, other.bootstrap_statistics)


def test_stream_separates_sectors(rng):
    a, b = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
    x = bootstrap_test(a, b, n_bootstrap=20, seed=5, stream=(sector_stream("C"),))
    y = bootstrap_test(a, b, n_bootstrap=20, seed=5, stream=(sector_stream("G"),))
    assert not np.array_equal(x.bootstrap_statistics, y.bootstrap_statistics)
    assert sector_stream("C") == sector_stream("C")


@pytest.mark.parametrize("scheme", ["permutation", "recentered"])
def test_degenerate_draws_discarded(caplog, scheme):
    # repeated values let a two-firm draw collapse to a single point
    a = noise_free([0.0, 1.0])
    b = noise_free([0.0, 0.0, 1.0, 1.0])
    res = bootstrap_test(a, b, n_bootstrap=200, seed=2, scheme=scheme)
    assert res.discarded_draws > 0
    assert res.n_bootstrap + res.discarded_draws == 200
    assert any("discarded" in w for w in res.warnings)
    assert "discarded" in caplog.text


def test_validity_warning_uses_tenure():
    frame = pd.DataFrame(
        {"theta_full": [0.0, 1.0, 2.0], "theta_h1": [0.1, 1.0, 2.0], "theta_h2": [0.0, 1.2, 2.0], "tenure": [2, 3, 4]}
    )
    res = bootstrap_test(frame, frame, n_bootstrap=5, seed=0, validity_threshold=0.1)
    assert res.validity_ratio == pytest.approx(3 / 16)
    assert any("validity ratio" in w for w in res.warnings)
    assert bootstrap_test(frame.drop(columns="tenure"), frame.drop(columns="tenure"), n_bootstrap=5, seed=0).validity_ratio is None


def test_fresh_seed_reported(rng):
    a = rng.normal(size=(10, 3))
    res = bootstrap_test(a, a + 1, n_bootstrap=3)
    assert isinstance(res.seed, int)
    again = bootstrap_test(a, a + 1, n_bootstrap=3, seed=res.seed)
    np.testing.assert_array_equal(res.bootstrap_statistics, again.bootstrap_statistics)


def test_result_serialization(rng):
    res = bootstrap_test(rng.normal(size=(10, 3)), rng.normal(size=(10, 3)), n_bootstrap=5, seed=1, sector="C")
    doc = res.to_dict()
    assert doc["sector"] == "C" and doc["n_amd"] == 10 and isinstance(doc["warnings"], list)


def test_estimator_wrapper(rng):
    a, b = rng.normal(size=(30, 3)), rng.uniform(size=(30, 3))
    est = DebiasedKSTest(n_bootstrap=19, seed=4)
    with pytest.raises(NotFittedError):
        est.decision()
    est.fit(a, b, sector="X")
    assert est.get_params()["n_bootstrap"] == 19
    assert est.statistic_ == ks_statistic(est.amd_summary_, est.bmd_summary_)
    assert est.decision(alpha=1.0) is True or est.pvalue_ > 1.0


def test_schemes_agree_on_statistic(rng):
    a, b = noisy(rng.normal(size=40), rng), noisy(rng.exponential(size=30), rng)
    perm = bootstrap_test(a, b, n_bootstrap=30, seed=1)
    recentered = bootstrap_test(a, b, n_bootstrap=30, seed=1, scheme="recentered")
    assert perm.statistic == recentered.statistic
    assert perm.scheme == "permutation" and recentered.to_dict()["scheme"] == "recentered"
    assert not np.array_equal(perm.bootstrap_statistics, recentered.bootstrap_statistics)
    with pytest.raises(ValueError):
        bootstrap_test(a, b, n_bootstrap=3, seed=1, scheme="wild")


def test_permutation_draws_ignore_affine_changes(rng):
    # an affine change of one area leaves the permutation draws untouched
    a, b = noisy(rng.normal(size=25), rng), noisy(rng.normal(size=25), rng)
    x = bootstrap_test(a, b, n_bootstrap=40, seed=3)
    y = bootstrap_test(5.0 + 3.0 * a, b, n_bootstrap=40, seed=3)
    np.testing.assert_allclose(x.bootstrap_statistics, y.bootstrap_statistics, atol=1e-12)
    assert x.p_value == y.p_value


def test_null_size_is_controlled():
    # null p-values should not pile up near zero or one
    rng = np.random.default_rng(12)
    p = []
    for r in range(120):
        a = noisy(1.0 + 2.0 * rng.normal(size=80), rng, sd=0.4)
        b = noisy(rng.normal(size=80), rng, sd=0.4)
        p.append(bootstrap_test(a, b, n_bootstrap=49, seed=r).p_value)
    p = np.array(p)
    assert 0.3 < p.mean() < 0.7
    assert (p <= 0.1).mean() < 0.2
