import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from muskat.errors import RangeError, ResolutionError
from muskat.grid import (
    CkGamma,
    CkGammaGamma,
    CkGammaHolder,
    DdotC,
    GridFunction,
    TildeHk,
    TildeHkGamma,
    TildeL2,
    TildeL2Mu,
    TildeL2X0,
    _central_weights,
    build_mollifier,
    cutoff_h0,
    derivative,
    local_norm,
    maximal_function,
    mollify,
    sample_profile,
)
from muskat.kernels import HalfPlane, Strip


def grid_x(L, n):
    return -L + (2.0 * L / n) * np.arange(n)


def trig(L, n, seed, modes=4):
    rng = np.random.default_rng(seed)
    x = grid_x(L, n)
    ks = (math.pi / L) * rng.integers(1, 12, size=modes)
    vals = sum(a * np.sin(k * x) + b * np.cos(k * x) for k, (a, b) in zip(ks, rng.normal(size=(modes, 2))))
    return GridFunction(L, vals)


# -- GridFunction ---------------------------------------------------------------


def test_gridfunction_rejects_small_or_nonfinite():
    with pytest.raises(ValueError):
        GridFunction(1.0, np.zeros(8))
    bad = np.zeros(32)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        GridFunction(1.0, bad)
    with pytest.raises(ValueError):
        GridFunction(-1.0, np.zeros(32))


def test_gridfunction_geometry_of_samples():
    g = GridFunction(2.0, np.arange(64.0))
    assert g.n == 64 and g.period == 4.0 and g.dx == 4.0 / 64
    assert g.x[0] == -2.0
    np.testing.assert_allclose(np.diff(g.x), g.dx)


def test_periodic_evaluation_agrees_across_periods():
    g = trig(3.0, 128, seed=1)
    xs = np.arange(-41, 42) / 8.0  # dyadic, so x + 2L is exact in floating point
    np.testing.assert_array_equal(g(xs), g(xs + g.period))
    np.testing.assert_allclose(g(g.x), g.samples, rtol=0, atol=1e-14)


def test_csv_round_trip_is_exact(tmp_path):
    g = trig(4.0, 64, seed=2)
    path = tmp_path / "g.csv"
    g.to_csv(path)
    assert path.read_text().splitlines()[0] == "x,f"
    back = GridFunction.from_csv(path)
    assert back.L == g.L
    np.testing.assert_array_equal(back.samples, g.samples)


# -- profiles -------------------------------------------------------------------


def test_constant_profile():
    g = sample_profile({"constant": {"c": 1.0}}, 16.0, 256)
    np.testing.assert_array_equal(g.samples, 1.0)


def test_sine_profile():
    g = sample_profile({"sine": {"A": 1e-4, "k": 1}}, 16.0, 256)
    np.testing.assert_array_equal(g.samples, 1e-4 * np.sin(grid_x(16.0, 256)))


def test_invasion_profile_vanishes_on_gap_and_is_c2():
    L, n = 8.0, 2048
    spec = {"invasion": {"heights": 1.0, "gap": [-1, 1], "smoothing": 0.5}}
    g = sample_profile(spec, L, n)
    x = g.x
    assert g.samples.min() == 0.0
    assert np.all(g.samples >= 0)
    np.testing.assert_array_equal(g.samples[np.abs(x) <= 1.0], 0.0)
    # a jump in f'' would leave an O(1) step between neighbouring second
    # differences; for a C^2 profile the steps shrink linearly with dx
    def worst_step(n):
        h = sample_profile(spec, L, n)
        return np.max(np.abs(np.diff(np.diff(h.samples, 2) / h.dx**2)))

    assert worst_step(n // 2) / worst_step(n) > 1.5  # a jump would give ratio 1
    assert worst_step(n) < 4.0


def test_profile_range_is_checked():
    with pytest.raises(RangeError, match="strip"):
        sample_profile({"bump": {"A": 3.0}}, 4.0, 64, geometry=Strip(2.0))
    with pytest.raises(RangeError):
        sample_profile({"sine": {"A": 1.0, "k": 1}}, 4.0, 64, geometry=HalfPlane())


def test_unknown_profile_rejected():
    with pytest.raises(ValueError):
        sample_profile({"square": {}}, 4.0, 64)


# -- derivatives ----------------------------------------------------------------


def test_derivative_of_sine_first_order():
    g = GridFunction(math.pi, np.sin(grid_x(math.pi, 512)))
    err = np.max(np.abs(derivative(g, 1).samples - np.cos(g.x)))
    assert err < 1e-6


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_derivative_of_constant_is_zero(k):
    g = GridFunction(2.0, np.full(64, 3.7))
    np.testing.assert_array_equal(derivative(g, k).samples, 0.0)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_stencils_exact_on_quartics(k):
    offsets, w = _central_weights(k)
    rng = np.random.default_rng(k)
    coeffs = rng.normal(size=5)
    x0 = 0.3
    vals = np.polyval(coeffs, x0 + offsets)
    exact = np.polyval(np.polyder(coeffs, k), x0)
    assert w @ vals == pytest.approx(exact, abs=1e-10)


@pytest.mark.parametrize("k, exact", [(1, np.cos), (2, lambda x: -np.sin(x))])
def test_derivative_self_convergence_order(k, exact):
    errs = []
    for n in (128, 256, 512):
        g = GridFunction(math.pi, np.sin(grid_x(math.pi, n)))
        errs.append(np.max(np.abs(derivative(g, k).samples - exact(g.x))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 3.8), orders


def test_derivative_order_limits():
    g = GridFunction(1.0, np.zeros(32))
    with pytest.raises(ValueError):
        derivative(g, 5)


# -- mollifier ------------------------------------------------------------------


@pytest.mark.parametrize("eps", [0.05, 0.2, 0.45])
def test_mollifier_unit_mass(eps):
    m = build_mollifier(eps)
    assert m.mass == pytest.approx(1.0, abs=1e-12)
    value, _ = integrate.quad(m, -eps, eps, epsabs=1e-13, epsrel=1e-13, limit=200)
    assert value == pytest.approx(1.0, abs=1e-12)


def test_mollifier_shape():
    m = build_mollifier(0.1)
    assert m.beta > 0
    assert m.unit(0.0) == 1.0
    xs = np.linspace(0.0, 0.999, 500)
    assert np.all(np.diff(m.unit(xs)) <= 0)
    assert m.unit(1.0) == 0.0 and m.unit(-1.5) == 0.0
    zs = np.linspace(-0.1, 0.1, 101)
    np.testing.assert_array_equal(m(zs), m(-zs))
    assert np.all(m(np.array([-0.1001, 0.1001])) == 0)


def test_mass_in_beta_has_single_positive_root():
    from muskat.grid import _unit_mass

    betas = np.linspace(0.01, 20.0, 60)
    masses = np.array([_unit_mass(b) for b in betas])
    assert np.all(np.diff(masses) < 0)
    assert masses[0] > 1.0 > masses[-1]
    assert _unit_mass(build_mollifier(0.1).beta) == pytest.approx(1.0, abs=1e-12)


def test_mollifier_derivative_bound_is_recorded():
    m = build_mollifier(0.1)
    assert m.dphi_sup == pytest.approx(1.913, abs=2e-3)
    assert not m.dphi_exceeds_two


@pytest.mark.parametrize("eps", [0.0, -0.1, 0.5, 0.7])
def test_mollifier_scale_range(eps):
    with pytest.raises(ValueError):
        build_mollifier(eps)


def test_mollify_preserves_constants():
    g = GridFunction(math.pi, np.ones(256))
    np.testing.assert_allclose(mollify(g, build_mollifier(0.1)).samples, 1.0, atol=1e-12)


def test_mollify_sine_attenuation_matches_direct_quadrature():
    L, n, k, eps = math.pi, 1024, 3, 0.2
    m = build_mollifier(eps)
    g = GridFunction(L, np.sin(k * grid_x(L, n)))
    out = mollify(g, m).samples
    factor, _ = integrate.quad(lambda z: m(z) * math.cos(k * z), -eps, eps, epsabs=1e-14, limit=200)
    assert 0 < factor <= 1
    np.testing.assert_allclose(out, factor * g.samples, atol=1e-6)


def test_mollify_rejects_underresolved_scale():
    g = GridFunction(math.pi, np.zeros(64))  # dx ~ 0.098
    with pytest.raises(ResolutionError):
        mollify(g, build_mollifier(0.15))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_mollify_mean_and_minimum(seed):
    g = trig(math.pi, 256, seed)
    out = mollify(g, build_mollifier(0.1)).samples
    assert out.mean() == pytest.approx(g.samples.mean(), abs=1e-10)
    assert out.min() >= g.samples.min() - 1e-14


# -- norms ----------------------------------------------------------------------


def test_tilde_l2_of_constant():
    g = GridFunction(8.0, np.full(512, 3.0))
    assert local_norm(g, TildeL2()) == pytest.approx(3.0 * math.sqrt(2.0), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_tilde_l2_mu_zero_is_tilde_l2(seed):
    g = trig(8.0, 256, seed)
    assert local_norm(g, TildeL2Mu(0.0)) == local_norm(g, TildeL2())


def test_ddot_c_matches_brute_force():
    L, n = 8.0, 128
    g = GridFunction(L, np.sin(grid_x(L, n)))
    x, s = g.x, g.samples
    best = 0.0
    for i in range(n):
        for j in range(n):
            # the periodic extension also pairs x with all images of y
            for m in range(-3, 4):
                dist = abs(x[j] + m * g.period - x[i])
                if dist >= 1.0:
                    best = max(best, abs(s[i] - s[j]) / dist**0.5)
    assert local_norm(g, DdotC(0.5)) == pytest.approx(best, rel=0.02)


@pytest.mark.parametrize(
    "kind", [DdotC(0.5), TildeHkGamma(3, 0.5), CkGammaGamma(2, 0.3), CkGamma(1, 0.5), TildeHk(3)]
)
def test_seminorms_vanish_on_constants(kind):
    g = GridFunction(8.0, np.full(256, -2.5))
    value = local_norm(g, kind)
    if isinstance(kind, TildeHk):
        assert value == pytest.approx(2.5 * math.sqrt(2.0))  # the j = 0 term survives
    else:
        assert value == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_ddot_c_bounded_by_twice_sup(seed):
    g = trig(8.0, 256, seed)
    for alpha in (0.1, 0.5, 1.0):
        assert local_norm(g, DdotC(alpha)) <= 2.0 * np.max(np.abs(g.samples))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2, 3]), st.floats(0.05, 1.0), st.floats(0.0, 1.0))
def test_norm_monotonicity_in_gamma(seed, k, gamma, frac):
    g = trig(8.0, 256, seed)
    gamma_p = max(1e-3, frac * gamma)
    lower = local_norm(g, TildeHkGamma(k, gamma_p))
    upper = local_norm(g, TildeHkGamma(k, gamma))
    sup_d1 = float(np.max(np.abs(derivative(g, 1).samples)))
    assert lower <= upper + sup_d1
    if k >= 2:
        assert upper + sup_d1 <= 2.0 * upper


def test_sup_derivative_not_controlled_by_h1_gamma():
    # a narrow bump has sup|g'| above its windowed L^2 size, so the upper
    # half of the monotonicity chain needs k >= 2
    g = sample_profile({"bump": {"A": 1.0, "w": 0.3}}, 8.0, 512)
    sup_d1 = float(np.max(np.abs(derivative(g, 1).samples)))
    assert sup_d1 > local_norm(g, TildeHkGamma(1, 0.5))


def test_holder_norm_of_sine():
    g = GridFunction(8.0 * math.pi, np.sin(grid_x(8.0 * math.pi, 2048)))
    # C^{0,1}: sup|g| + Lipschitz constant = 1 + 1
    assert local_norm(g, CkGammaHolder(0, 1.0)) == pytest.approx(2.0, rel=1e-3)


def test_norm_kind_validation():
    g = GridFunction(8.0, np.zeros(256))
    with pytest.raises(ValueError):
        local_norm(g, TildeHk(4))
    with pytest.raises(ValueError):
        local_norm(g, DdotC(1.5))
    with pytest.raises(ValueError):
        local_norm(g, TildeL2Mu(-1.0))
    with pytest.raises(ResolutionError):
        local_norm(GridFunction(8.0, np.zeros(32)), TildeL2())


def test_tilde_l2_mu_weights_the_middle():
    g = GridFunction(8.0, np.ones(512))
    # window centred at 0 with weight 1 + (mu - |x|)_+ integrates to 2 + 2 mu - 1
    mu = 3.0
    assert local_norm(g, TildeL2Mu(mu)) == pytest.approx(math.sqrt(2.0 + 2.0 * mu - 1.0), rel=1e-3)


def test_tilde_l2_x0_of_localized_function():
    L, n = 8.0, 1024
    x = grid_x(L, n)
    g = GridFunction(L, np.where(np.abs(x) < 0.5, 1.0, 0.0))
    # weight is 1 on the support when x0 = 0
    assert local_norm(g, TildeL2X0(0.0)) == pytest.approx(1.0, rel=1e-2)


# -- maximal function -----------------------------------------------------------


def test_maximal_function_of_indicator():
    L, n = 8.0, 1024
    g = GridFunction(L, (np.abs(grid_x(L, n)) <= 1.0).astype(float))
    M = maximal_function(g)
    i0 = np.argmin(np.abs(g.x))
    assert M.samples[i0] == pytest.approx(1.0)
    i2 = np.argmin(np.abs(g.x - 2.0))
    cum = np.concatenate([[0.0], np.cumsum(np.tile(g.samples, 3))]) * g.dx
    centre = n + i2
    brute = max((cum[centre + m + 1] - cum[centre - m]) / ((2 * m + 1) * g.dx) for m in range(1, n // 2))
    assert brute == pytest.approx(1.0 / 3.0, abs=0.01)
    assert brute / 2.0 <= M.samples[i2] <= brute + 0.01


def test_maximal_function_of_constant():
    g = GridFunction(4.0, np.full(128, -1.5))
    np.testing.assert_allclose(maximal_function(g).samples, 1.5)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_maximal_function_dominates_and_is_sublinear(seed):
    g, h = trig(4.0, 256, seed), trig(4.0, 256, seed + 1)
    Mg, Mh = maximal_function(g).samples, maximal_function(h).samples
    a = np.abs(g.samples)
    smeared = np.minimum.reduce([np.roll(a, 1), a, np.roll(a, -1)])
    assert np.all(Mg >= smeared - 1e-12)
    Mgh = maximal_function(g.with_samples(g.samples + h.samples)).samples
    assert np.all(Mgh <= Mg + Mh + 1e-12)


def test_cutoff_h0_properties():
    x = np.linspace(-6, 6, 4801)
    h = cutoff_h0(x)
    assert np.all(h[np.abs(x) <= 1] == 1.0)
    assert np.all(h[np.abs(x) >= 4] == 0.0)
    assert np.all((h >= 0) & (h <= 1))
    dx = x[1] - x[0]
    assert np.max(np.abs(np.gradient(h, dx))) <= 1.0
    assert np.max(np.abs(np.diff(h, 2))) / dx**2 <= 1.0 + 1e-3
