import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hpjks.hpj import DebiasedCdf, debiased_cdf, debiased_mean, debiased_variance, hpj_combine


@pytest.mark.parametrize(
    "args, expected", [((1.0, 0.8, 1.0), 1.1), ((0.5, 0.6, 0.2), 0.6), ((-3.25,) * 3, -3.25)]
)
def test_combine_examples(args, expected):
    out = hpj_combine(*args)
    assert out.value == pytest.approx(expected, abs=1e-12)
    assert (out.plugin, out.half1, out.half2) == args


def test_combine_elementwise():
    np.testing.assert_allclose(hpj_combine([1.0, 0.5], [0.8, 0.6], [1.0, 0.2]), [1.1, 0.6])


def test_mean_examples():
    assert debiased_mean([[2.5, 1.5, 3.5]]).value == 2.5
    assert debiased_mean(np.full((7, 3), 4.2)).value == pytest.approx(4.2)


def test_mean_accepts_frames():
    frame = pd.DataFrame({"theta_full": [1.0, 3.0], "theta_h1": [0.0, 2.0], "theta_h2": [1.0, 1.0]})
    # 2*2 - (1 + 1)/2
    assert debiased_mean(frame).value == pytest.approx(3.0)


def test_empty_cells_rejected():
    with pytest.raises(ValueError):
        debiased_mean(np.empty((0, 3)))
    with pytest.raises(ValueError):
        debiased_cdf(np.empty((0, 3)))
    with pytest.raises(ValueError):
        debiased_variance([[1.0, 1.0, 1.0]])


def test_variance_two_firm_example():
    out = debiased_variance([[0.0, 0.0, 0.0], [2.0, 2.0, 2.0]], ddof=0)
    assert (out.plugin, out.half1, out.half2, out.value) == (1.0, 1.0, 1.0, 1.0)
    assert not out.degenerate


def test_variance_noise_free_equals_plugin(rng):
    theta = rng.normal(size=50)
    out = debiased_variance(np.c_[theta, theta, theta])
    assert out.value == pytest.approx(out.plugin, abs=1e-12)
    assert out.plugin == pytest.approx(theta.var(ddof=1), abs=1e-12)


def test_variance_flags_non_positive():
    # halves spread out while the full estimates coincide
    out = debiased_variance([[0.0, -1.0, 1.0], [0.0, 1.0, -1.0]])
    assert out.degenerate and out.value < 0


def test_variance_removes_first_order_bias():
    rng = np.random.default_rng(5)
    reps, n, T = 2000, 200, 16
    plug, deb = np.empty(reps), np.empty(reps)
    for r in range(reps):
        theta = rng.normal(size=n)
        u = rng.normal(size=(n, T))
        cell = np.c_[theta + u.mean(1), theta + u[:, :8].mean(1), theta + u[:, 8:].mean(1)]
        v = debiased_variance(cell)
        plug[r], deb[r] = v.plugin, v.value
    se = deb.std(ddof=1) / np.sqrt(reps)
    assert abs(deb.mean() - 1.0) < 3 * se
    assert abs(plug.mean() - 1.0625) < 3 * plug.std(ddof=1) / np.sqrt(reps)


def test_cdf_single_firm_exceeds_one():
    F = debiased_cdf([[0.0, -1.0, 1.0]])
    assert F(0.0) == pytest.approx(1.5)
    assert F(-1.0) == pytest.approx(-0.5)
    assert F(-2.0) == 0.0 and F(1.0) == 1.0


def test_cdf_noise_free_is_ecdf(rng):
    x = rng.normal(size=40)
    F = debiased_cdf(np.c_[x, x, x])
    grid = np.linspace(-3, 3, 301)
    np.testing.assert_allclose(F(np.r_[grid, x]), (np.r_[grid, x][:, None] >= x).mean(axis=1), atol=1e-12)


def test_cdf_pointwise_identity(rng):
    cell = rng.normal(size=(25, 3))
    F = debiased_cdf(cell)
    for x in np.r_[F.jump_points, rng.normal(size=20)]:
        parts = [(cell[:, j] <= x).mean() for j in range(3)]
        assert F(x) == pytest.approx(2 * parts[0] - (parts[1] + parts[2]) / 2, abs=1e-12)


def test_cdf_right_continuity_and_left_limit():
    F = debiased_cdf([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    assert F(1.0) == 1.0 and F.left_limit(1.0) == 0.5
    assert F(0.0) == 0.5 and F.left_limit(0.0) == 0.0


def test_cdf_standardized_and_export(tmp_path, rng):
    F = debiased_cdf(rng.normal(size=(10, 3)))
    G = F.standardized(1.0, 2.0)
    np.testing.assert_allclose(G(np.array([0.3, -0.2])), F(1.0 + 2.0 * np.array([0.3, -0.2])))
    F.to_csv(tmp_path / "cdf.csv")
    back = pd.read_csv(tmp_path / "cdf.csv", float_precision="round_trip")
    assert list(back.columns) == ["jump_point", "value"]
    np.testing.assert_array_equal(back["value"].to_numpy(), F.values)


def test_monotone_is_for_display(rng):
    F = debiased_cdf(rng.normal(size=(30, 3)))
    M = F.monotone()
    assert np.all(np.diff(M.values) >= 0)
    assert M.values.min() >= 0 and M.values[-1] == 1.0
    assert isinstance(M, DebiasedCdf) and M is not F


# dyadic values keep shifted jump points exactly representable
dyadic = st.integers(-40, 40).map(lambda k: k / 8)
cells = arrays(float, st.tuples(st.integers(2, 12), st.just(3)), elements=dyadic)


@settings(max_examples=60, deadline=None)
@given(cells, dyadic, st.floats(0.1, 10))
def test_affine_equivariance(cell, c, s):
    shifted = cell + c
    assert debiased_mean(shifted).value == pytest.approx(debiased_mean(cell).value + c, abs=1e-9)
    F, G = debiased_cdf(cell), debiased_cdf(shifted)
    np.testing.assert_array_equal(F.values, G.values)
    np.testing.assert_allclose(G.jump_points, F.jump_points + c, atol=1e-9)
    v, w = debiased_variance(cell).value, debiased_variance(cell * s).value
    assert w == pytest.approx(s**2 * v, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(cells)
def test_cdf_limits_and_identity(cell):
    F = debiased_cdf(cell)
    assert F(cell.min() - 1.0) == 0.0
    assert F(cell.max()) == pytest.approx(1.0, abs=1e-12)
    assert F.values[-1] == pytest.approx(1.0, abs=1e-12)
