import csv
import json
import math

import numpy as np
import pytest

from imcfcone import capgeom, diagnostics, flowcore, graphsurf, warpfn

from conftest import cosine_state

PI3 = math.pi / 3


@pytest.fixture(scope="module")
def radial_traj():
    mesh = capgeom.build_mesh(2, PI3, capgeom.AXISYM, 64, 1)
    st = graphsurf.GraphState.from_u(mesh, warpfn.euclidean(), np.ones(64))
    return flowcore.evolve(st, flowcore.FlowConfig(t_end=2.0, snapshot_stride=0.25))


@pytest.fixture(scope="module")
def hyp_radial_traj():
    mesh = capgeom.build_mesh(2, PI3, capgeom.AXISYM, 64, 1)
    st = graphsurf.GraphState.from_u(mesh, warpfn.hyperboloidal(a=1.0), np.full(64, 2.0))
    return flowcore.evolve(st, flowcore.FlowConfig(t_end=2.0, snapshot_stride=0.25))


@pytest.fixture(scope="module")
def perturbed_traj():
    st = cosine_state(warpfn.euclidean(), n_theta=96, amp=0.05)
    return flowcore.evolve(st, flowcore.FlowConfig(t_end=4.0, snapshot_stride=0.25))


def test_scaled_lambda_radial(radial_traj):
    (lo, hi), mons = diagnostics.lemma31_check(radial_traj)
    np.testing.assert_allclose(lo, 1.0, rtol=1e-12)
    np.testing.assert_allclose(hi, 1.0, rtol=1e-12)
    assert all(m.passed for m in mons)


def test_scaled_lambda_hyperboloidal_radial(hyp_radial_traj):
    (lo, hi), mons = diagnostics.lemma31_check(hyp_radial_traj)
    np.testing.assert_allclose(hi, math.sqrt(5), rtol=1e-9)
    assert all(m.passed for m in mons)


def test_scaled_lambda_perturbed(perturbed_traj):
    (lo, hi), mons = diagnostics.lemma31_check(perturbed_traj)
    tol = diagnostics.slack(perturbed_traj.mesh)
    assert np.all(lo >= 0.95 - tol) and np.all(hi <= 1.05 + tol)
    assert all(m.passed for m in mons)


def test_speed_bounds_radial(radial_traj):
    f, mons = diagnostics.lemma32_check(radial_traj, 1.0, 1.0)
    s = diagnostics.collect_series(radial_traj)
    np.testing.assert_allclose(s["sup_phidot"], 0.5, rtol=1e-14)
    np.testing.assert_allclose(s["inf_phidot"], 0.5, rtol=1e-14)
    # lambda'' = 0 is not assumed by the envelope: it decays with C = 1
    assert f[0] == 0.5 and np.all(np.diff(f) < 0)
    assert all(m.passed for m in mons)


def test_speed_hyperboloidal_radial(hyp_radial_traj):
    s = diagnostics.collect_series(hyp_radial_traj)
    w = hyp_radial_traj.warp
    u = np.sqrt(5 * np.exp(s["t"]) - 1)
    np.testing.assert_allclose(s["sup_phidot"], 1 / (2 * w.dlam(u)), rtol=1e-6)
    _, mons = diagnostics.lemma32_check(hyp_radial_traj, 1.0, 1.0)
    assert all(m.passed for m in mons)


def test_speed_upper_nonincreasing(perturbed_traj):
    s = diagnostics.collect_series(perturbed_traj)
    tol = diagnostics.slack(perturbed_traj.mesh)
    assert np.all(np.diff(s["sup_phidot"]) <= tol)


def test_envelope_exact_integral():
    t = np.linspace(0, 5, 11)
    f = diagnostics.envelope(t, 0.7, 0.5, 2.0, 3)
    # derivative against the ODE f' = -C exp(-alpha t / n) f
    h = 1e-6
    fd = (diagnostics.envelope(t + h, 0.7, 0.5, 2.0, 3) - diagnostics.envelope(t - h, 0.7, 0.5, 2.0, 3)) / (2 * h)
    np.testing.assert_allclose(fd, -2.0 * np.exp(-0.5 * t / 3) * f, rtol=1e-7)
    assert f[0] == 0.7


def test_gradient_radial_zero(radial_traj):
    g, mon = diagnostics.lemma41_check(radial_traj)
    assert np.all(g == 0.0) and mon.passed


def test_gradient_nonincreasing(perturbed_traj):
    g, mon = diagnostics.lemma41_check(perturbed_traj)
    assert mon.passed
    assert np.all(np.diff(g) <= diagnostics.slack(perturbed_traj.mesh))


def test_gradient_bound_scales_with_amplitude():
    cfg = flowcore.FlowConfig(t_end=1.0, snapshot_stride=0.25)
    bounds = []
    for amp in (0.02, 0.05):
        traj = flowcore.evolve(cosine_state(warpfn.euclidean(), n_theta=64, amp=amp), cfg)
        g, mon = diagnostics.lemma41_check(traj)
        assert mon.passed
        bounds.append(g[0])
    assert bounds[1] / bounds[0] == pytest.approx(2.5, rel=0.02)


def test_area_radial_exact(radial_traj):
    s = diagnostics.collect_series(radial_traj)
    exact = np.exp(s["t"]) * 2 * math.pi * (1 - math.cos(PI3))
    np.testing.assert_allclose(s["area"], exact, rtol=1e-6)
    ratio, mon = diagnostics.area_law_check(radial_traj)
    assert ratio[0] == 1.0
    np.testing.assert_allclose(ratio, 1.0, atol=1e-6)
    assert mon.passed


def test_area_perturbed(perturbed_traj):
    ratio, mon = diagnostics.area_law_check(perturbed_traj)
    assert mon.passed and np.all(np.abs(ratio - 1) < 1e-3)


def test_decay_fit_exact():
    t = np.linspace(0, 10, 50)
    fit = diagnostics.decay_fit(t, 3 * np.exp(-0.5 * t), window=(0, 10))
    assert fit.rate == pytest.approx(0.5, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-10)
    assert fit.log_prefactor == pytest.approx(math.log(3), abs=1e-10)


def test_decay_fit_constant():
    fit = diagnostics.decay_fit(np.arange(5.0), np.full(5, 2.0), window=(0, 4))
    assert fit.rate == pytest.approx(0.0, abs=1e-14)


def test_decay_fit_insufficient():
    with pytest.raises(diagnostics.InsufficientDataError):
        diagnostics.decay_fit([0.0, 1.0, 2.0], [1.0, 0.5, 0.25], window=(0.5, 1.5))


def test_decay_fit_skips_nonpositive():
    fit = diagnostics.decay_fit(np.arange(5.0), np.array([1.0, 0.5, 0.0, 0.1, 0.1]), window=(0, 4))
    assert fit.skipped


def test_decay_rate_positive(perturbed_traj):
    s = diagnostics.collect_series(perturbed_traj)
    fit = diagnostics.decay_fit(s["t"], s["sup_Du"], window=(1.0, 4.0))
    assert fit.rate > 0 and fit.r_squared > 0.99


def test_roundness_radial(radial_traj):
    dev, osc = diagnostics.roundness(radial_traj)
    assert np.all(dev < 1e-14) and np.all(osc == 0.0)


def test_roundness_perturbed(perturbed_traj):
    dev, osc = diagnostics.roundness(perturbed_traj)
    assert np.all(dev > 0) and np.all(osc > 0)
    fit = diagnostics.decay_fit(perturbed_traj.times, dev, window=(1.0, 4.0))
    assert fit.rate > 0


def test_oscillation_definition(perturbed_traj):
    _, osc = diagnostics.roundness(perturbed_traj)
    for k in (0, 4, 8):
        snap = perturbed_traj.snapshots[k]
        uhat = snap.state.u * math.exp(-snap.t / 2)
        assert osc[k] == pytest.approx(np.max(uhat) - np.min(uhat), rel=1e-9)


def test_oscillation_tiny_deviation():
    mesh = capgeom.build_mesh(2, PI3, capgeom.AXISYM, 32, 1)
    w = warpfn.euclidean()
    shape = np.cos(np.pi * mesh.theta / PI3)
    st = graphsurf.GraphState(t=0.0, offset=40.0, dev=1e-12 * (shape - shape[-1]), warp=w, mesh=mesh)
    # u = e^40 e^dev: a spread of ~2e-12 e^40 is only ~1e4 ulps of u itself
    assert diagnostics.oscillation(st) == pytest.approx(np.ptp(st.dev) * math.exp(40), rel=1e-10)


def test_elliptic_residual_radial(radial_traj):
    snap = radial_traj.snapshots[3]
    assert diagnostics.elliptic_residual(snap.state, snap.phidot) < 1e-13


def test_elliptic_residual_second_order():
    res = []
    for n in (32, 64, 128):
        st = cosine_state(warpfn.hyperboloidal(), n_theta=n, amp=0.1)
        st = flowcore.apply_neumann(st)
        res.append(diagnostics.elliptic_residual(st, flowcore.rhs(st)))
    assert res[0] / res[1] == pytest.approx(4.0, rel=0.15)
    assert res[1] / res[2] == pytest.approx(4.0, rel=0.15)


def test_report_and_outputs(tmp_path, perturbed_traj):
    rep = diagnostics.build_report(perturbed_traj, window=(1.0, 4.0))
    assert rep.passed and rep.status == "completed"
    assert set(rep.fits) == {"sup_Du", "roundness_dev", "osc_uhat"}
    diagnostics.write_series_csv(rep, tmp_path / "s.csv")
    raw = (tmp_path / "s.csv").read_bytes()
    assert b"\r" not in raw
    rows = list(csv.reader(raw.decode().splitlines()))
    assert tuple(rows[0]) == diagnostics.CSV_COLUMNS
    assert len(rows) == len(perturbed_traj.snapshots) + 1
    diagnostics.write_summary_json(rep, tmp_path / "s.json", {"x": 1})
    summary = json.loads((tmp_path / "s.json").read_text())
    assert summary["passed"] and summary["x"] == 1
    assert set(summary["monitors"]) >= {"lemma31_upper", "lemma31_lower", "lemma32_upper",
                                        "lemma32_lower", "lemma41", "area_law", "neumann"}
    diagnostics.write_fields_csv(perturbed_traj.snapshots[-1], tmp_path / "f.csv")
    assert len((tmp_path / "f.csv").read_text().splitlines()) == 97


def test_monitor_flags_violation(perturbed_traj):
    s = dict(diagnostics.collect_series(perturbed_traj))
    s["sup_gradphi"] = s["sup_gradphi"].copy()
    s["sup_gradphi"][5] += 1.0
    _, mon = diagnostics.lemma41_check(perturbed_traj, s)
    assert not mon.passed and mon.margin < 0 and mon.worst_t == perturbed_traj.times[5]
