import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from muskat.evolution import SolverConfig, config_to_json, run
from muskat.grid import GridFunction, TildeHkGamma, local_norm, sample_profile
from muskat.kernels import HalfPlane, Plane, Strip
from muskat.monitors import (
    SERIES_COLUMNS,
    RunReport,
    apriori_rate_check,
    blowup_integral,
    blowup_integral_series,
    default_tau,
    existence_time_scale,
    extrema_check,
    stability_compare,
    t_psi_bound,
)

P = 2 * math.pi


def synthetic(times, geometry="half_plane", eps=0.0, n=64, L=math.pi, **cols):
    """A report with zero series except for the columns given."""
    times = np.asarray(times, dtype=float)
    snaps = cols.pop("snapshots", None) or [GridFunction(L, np.ones(n)) for _ in times]
    rows = []
    for i, t in enumerate(times):
        row = {c: 0.0 for c in SERIES_COLUMNS}
        row["t"] = t
        for name, values in cols.items():
            row[name] = values[i]
        row["snapshot"] = snaps[i]
        rows.append(row)
    config = {"geometry": geometry, "L": L, "n": n, "gamma": 0.5}
    return RunReport.from_rows(rows, config=config, eps=eps, stats={"dx": 2 * L / n, "dt_max": 0.01})


@pytest.fixture(scope="module")
def flat_report():
    cfg = SolverConfig(HalfPlane(), math.pi, 128, 0.2, {"constant": {"c": 0.7}}, epsilons=(0.1,))
    return run(cfg)


@pytest.fixture(scope="module")
def sine_reports():
    out = []
    for n in (256, 512):
        cfg = SolverConfig(Plane(), 8 * math.pi, n, 1.0, {"sine": {"A": 0.1, "k": 1}}, cadence=0.1)
        out.append(run(cfg))
    return out


# -- RunReport ------------------------------------------------------------------


def test_report_requires_increasing_times():
    with pytest.raises(ValueError):
        synthetic([0.0, 0.1, 0.1])


def test_report_requires_finite_series():
    with pytest.raises(ValueError):
        synthetic([0.0, 0.1], sup_f=[1.0, math.inf])


def test_report_round_trip(tmp_path, flat_report):
    path = flat_report.to_dir(tmp_path / "run")
    assert {"series.csv", "manifest.json"} <= {p.name for p in path.iterdir()}
    back = RunReport.from_dir(path)
    for c in SERIES_COLUMNS:
        np.testing.assert_array_equal(back[c], flat_report[c])
    for a, b in zip(back.snapshots, flat_report.snapshots):
        np.testing.assert_array_equal(a.samples, b.samples)
    assert back.eps == flat_report.eps and back.abort is None
    manifest = json.loads((path / "manifest.json").read_text())
    assert manifest["config"] == flat_report.config
    assert len(manifest["config_hash"]) == 64


# -- extrema --------------------------------------------------------------------


def test_flat_run_is_monotone(flat_report):
    v = extrema_check(flat_report)
    assert v.passed and v.violations == [] and v.worst_violation == 0.0


def test_reversed_series_lists_every_violation():
    t = np.linspace(0, 1, 6)
    sup = np.linspace(1.0, 2.0, 6)
    inf = np.linspace(0.9, 0.4, 6)
    v = extrema_check(synthetic(t, sup_f=sup, inf_f=inf), tau=1e-5)
    assert not v.passed
    kinds = {(x["kind"], x["index"]) for x in v.violations}
    assert kinds == {("sup increased", i) for i in range(1, 6)} | {("inf decreased", i) for i in range(1, 6)}
    assert v.worst_violation == pytest.approx(1.0)


def test_tolerance_absorbs_small_excursions():
    t = [0.0, 0.1, 0.2]
    sup = [1.0, 1.0 + 5e-6, 0.9]
    assert extrema_check(synthetic(t, sup_f=sup, inf_f=[0.5] * 3), tau=1e-5).passed
    assert not extrema_check(synthetic(t, sup_f=sup, inf_f=[0.5] * 3), tau=1e-6).passed


def test_default_tau_scales_with_grid():
    rep = synthetic([0.0, 0.1])
    dx = rep.stats["dx"]
    assert default_tau(rep) == pytest.approx(1e-6 * 0.01 + 1e-2 * dx**3)


def test_bottom_band_is_enforced_for_touching_lift():
    eps = 0.05
    t = [0.0, 0.1, 0.2]
    inside = synthetic(t, eps=eps, sup_f=[1.0] * 3, inf_f=[2 * eps, 2.5 * eps, 2.9 * eps])
    assert extrema_check(inside).passed
    outside = synthetic(t, eps=eps, sup_f=[1.0] * 3, inf_f=[2 * eps, 2.5 * eps, 3.5 * eps])
    v = extrema_check(outside)
    assert not v.passed
    assert [x["kind"] for x in v.violations] == ["inf outside contact band"]


def test_strip_top_band():
    eps, l = 0.05, 2.0
    t = [0.0, 0.1]
    ok = synthetic(t, geometry={"strip": l}, eps=eps, sup_f=[l - 2 * eps, l - 2.5 * eps], inf_f=[0.5, 0.5])
    assert extrema_check(ok).passed
    low = synthetic(t, geometry={"strip": l}, eps=eps, sup_f=[l - 2 * eps, l - 3.5 * eps], inf_f=[0.5, 0.5])
    assert not extrema_check(low).passed


def test_aborted_run_never_passes():
    rep = synthetic([0.0, 0.1])
    rep.abort = {"reason": "NaN"}
    v = extrema_check(rep)
    assert not v.passed and "NaN" in v.notes[0]


# -- blow-up integral -----------------------------------------------------------


def test_blowup_integral_of_flat_run_is_zero(flat_report):
    assert blowup_integral(flat_report) == 0.0
    assert blowup_integral(flat_report, 0.25) == 0.0


def test_blowup_trapezoid_matches_hand_computation():
    t = [0.0, 0.5, 1.5]
    vals = [1.0, 3.0, 2.0]
    rep = synthetic(t, blowup_integrand=vals)
    np.testing.assert_allclose(blowup_integral_series(rep), [0.0, 1.0, 3.5])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1e3), min_size=2, max_size=12))
def test_blowup_prefix_property(values):
    t = np.cumsum(np.r_[0.0, np.full(len(values) - 1, 0.1)])
    rep = synthetic(t, blowup_integrand=values)
    series = blowup_integral_series(rep)
    assert series[0] == 0.0 and np.all(np.diff(series) >= 0)
    for k in range(2, len(values) + 1):
        assert blowup_integral(synthetic(t[:k], blowup_integrand=values[:k])) == pytest.approx(series[k - 1])


def test_blowup_rejects_bad_exponent(flat_report):
    with pytest.raises(ValueError):
        blowup_integral(flat_report, 1.5)


def test_blowup_on_decaying_sine(sine_reports):
    coarse, fine = sine_reports
    samples = coarse["blowup_integrand"]
    assert np.all(np.diff(samples) < 0)
    a, b = blowup_integral(coarse), blowup_integral(fine)
    assert 0 < a < math.inf
    assert a == pytest.approx(b, rel=0.05)
    assert blowup_integral(coarse, 0.25) == pytest.approx(blowup_integral(fine, 0.25), rel=0.05)


# -- existence time -------------------------------------------------------------


@pytest.mark.parametrize("norm, expected", [(1.0, 1.0), (10.0, 1e-4), (math.exp(-1), 2.0)])
def test_existence_time_examples(norm, expected):
    assert existence_time_scale(norm) == pytest.approx(expected, rel=1e-14)


def test_existence_time_scale_monotone_above_one():
    norms = np.geomspace(1.0, 1e4, 400)
    scale = [existence_time_scale(v) for v in norms]
    assert np.all(np.diff(scale) <= 0)


def test_t_psi_bound_constant_and_bump():
    flat = GridFunction(math.pi, np.full(64, 2.0))
    out = t_psi_bound(flat, 0.5)
    assert out.bound == math.inf and out.norm == 0.0 and out.note
    bump = sample_profile({"bump": {"A": 1.0}}, math.pi, 256)
    out = t_psi_bound(bump, 0.5)
    assert out.norm == pytest.approx(local_norm(bump, TildeHkGamma(3, 0.5)))
    assert out.bound == pytest.approx(existence_time_scale(out.norm))
    assert t_psi_bound(bump.with_samples(3 * bump.samples), 0.5).bound <= out.bound


def test_existence_time_rejects_negative():
    with pytest.raises(ValueError):
        existence_time_scale(-1.0)


# -- a priori rate --------------------------------------------------------------


def test_apriori_flat_run_admits_zero(flat_report):
    v = apriori_rate_check(flat_report)
    assert v.passed
    assert v.fitted_constants == {"C_hat": 0.0, "residual": 0.0}


def test_apriori_spiked_series_is_reported_not_fatal():
    t = [0.0, 0.1, 0.2, 0.3]
    rep = synthetic(t, l2_d3=[0.0, 0.0, 5.0, 0.0])
    v = apriori_rate_check(rep)
    # spike interval: lhs = 25 / 0.1, rhs = (0 + 25) / 2
    assert v.fitted_constants["C_hat"] == pytest.approx(20.0)
    assert v.fitted_constants["residual"] == 0.0


def test_apriori_growth_where_rhs_vanishes_is_residual():
    t = [0.0, 0.1, 0.2, 0.3]
    rep = synthetic(t, l2_d3=[0.0, 0.0, 5.0, 0.0])
    v = apriori_rate_check(rep, rhs_floor=100.0)
    assert not v.passed
    assert v.fitted_constants["residual"] == pytest.approx(250.0)
    assert v.violations == [1]


def test_apriori_signed_constant_from_hand_series():
    t = [0.0, 1.0]
    rep = synthetic(t, l2_d3=[1.0, 2.0], c2_gamma_gamma=[1.0, 1.0])
    v = apriori_rate_check(rep)
    # lhs = 3, rhs = (1 + 1) * mean(1, 4) = 5
    assert v.fitted_constants["C_hat"] == pytest.approx(0.6)
    assert v.passed


def test_apriori_constant_stable_under_refinement():
    c = []
    for n in (256, 512):
        cfg = SolverConfig(HalfPlane(), P, n, 0.2, {"bump": {"A": 0.5, "w": 2.0, "x_c": 1.0}}, epsilons=(0.1,))
        v = apriori_rate_check(run(cfg))
        assert v.passed
        c.append(v.fitted_constants["C_hat"])
    assert math.isfinite(c[0])
    assert c[0] == pytest.approx(c[1], rel=0.2)


# -- stability ------------------------------------------------------------------


def snapshot_series(base, growth, times, L=math.pi, n=64):
    x = -L + (2 * L / n) * np.arange(n)
    return [GridFunction(L, 1.0 + base * math.exp(growth * t) * np.sin(x)) for t in times]


def test_stability_identical_runs(flat_report):
    v = stability_compare(flat_report, flat_report, 0.0)
    assert v.passed and v.fitted_constants["K"] == 0.0
    assert v.fitted_constants["D"] == [0.0] * len(flat_report.times)


def test_stability_recovers_exponential_rate():
    t = np.linspace(0, 1, 11)
    a = synthetic(t, snapshots=snapshot_series(0.0, 0.0, t))
    b = synthetic(t, snapshots=snapshot_series(1e-6, 0.7, t))
    # zero C^{2,gamma}_gamma columns make Lambda(t) = t
    v = stability_compare(a, b, 0.0)
    assert v.passed
    assert v.fitted_constants["K"] == pytest.approx(0.7, rel=1e-9)
    assert v.fitted_constants["prefactor"] == pytest.approx(1.0)


def test_stability_is_symmetric():
    t = np.linspace(0, 1, 6)
    a = synthetic(t, snapshots=snapshot_series(0.3, -0.2, t), c2_gamma_gamma=np.linspace(1, 2, 6))
    b = synthetic(t, snapshots=snapshot_series(0.1, 0.4, t), c2_gamma_gamma=np.linspace(2, 1, 6))
    for mu in (0.0, 5.0):
        ab, ba = stability_compare(a, b, mu), stability_compare(b, a, mu)
        assert ab.fitted_constants == ba.fitted_constants


def test_stability_mu_zero_is_plain_tilde_l2():
    from muskat.grid import tilde_l2

    t = np.linspace(0, 1, 3)
    a = synthetic(t, snapshots=snapshot_series(0.0, 0.0, t))
    b = synthetic(t, snapshots=snapshot_series(0.2, -1.0, t))
    v = stability_compare(a, b, 0.0)
    expected = [tilde_l2(sb.with_samples(np.abs(sb.samples - sa.samples)))
                for sa, sb in zip(a.snapshots, b.snapshots)]
    np.testing.assert_allclose(v.fitted_constants["D"], expected, rtol=1e-12)


def test_stability_flags_super_exponential_separation():
    t = np.linspace(0, 1, 11)
    a = synthetic(t, snapshots=snapshot_series(0.0, 0.0, t))
    x = -math.pi + (2 * math.pi / 64) * np.arange(64)
    snaps = [GridFunction(math.pi, 1.0 + 1e-6 * math.exp(12 * s * s) * np.sin(x)) for s in t]
    v = stability_compare(a, synthetic(t, snapshots=snaps), 0.0)
    assert not v.passed and v.worst_violation > 10


def test_stability_mismatched_grids_rejected():
    a = synthetic([0.0, 0.1], n=64)
    b = synthetic([0.0, 0.1], n=128)
    with pytest.raises(ValueError):
        stability_compare(a, b, 0.0)
    c = synthetic([0.0, 0.1], geometry={"strip": 3.0})
    with pytest.raises(ValueError):
        stability_compare(a, c, 0.0)


def test_verdict_serialization(flat_report):
    d = extrema_check(flat_report).to_json()
    assert d["pass"] is True and "passed" not in d
    assert set(d) >= {"check", "pass", "tolerance", "worst_violation", "fitted_constants"}
    json.dumps(d)


def test_config_echo_is_json(flat_report):
    assert flat_report.config == config_to_json(
        SolverConfig(HalfPlane(), math.pi, 128, 0.2, {"constant": {"c": 0.7}}, epsilons=(0.1,)))
    assert Strip(2.0).l == 2.0
