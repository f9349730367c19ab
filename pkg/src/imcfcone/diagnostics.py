"""Runtime monitors for the a-priori estimates, the area law and convergence.

Every monitor compares a per-snapshot series against a bound fixed by the
initial data, with additive slack ``SLACK_FACTOR * h_theta^2`` to absorb the
discretisation error.
"""
import csv
import json
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from . import capgeom, graphsurf
from .errors import ImcfError

SLACK_FACTOR = 10.0
AREA_TOL = 1e-3
NEUMANN_FACTOR = 5.0
DEFAULT_WINDOW = (2.0, 8.0)

CSV_COLUMNS = ("t", "sup_u", "inf_u", "sup_phidot", "inf_phidot", "sup_gradphi", "sup_Du",
               "area", "area_ratio", "osc_uhat", "roundness_dev", "neumann_res", "envelope_f")


class InsufficientDataError(ImcfError, ValueError):
    pass


@dataclass(frozen=True)
class MonitorResult:
    name: str
    passed: bool
    margin: float           # smallest (bound + tol - value); negative means violated
    worst_t: float
    tol: float

    def as_dict(self):
        return {"passed": self.passed, "margin": self.margin, "worst_t": self.worst_t, "tol": self.tol}


@dataclass(frozen=True)
class DecayFit:
    rate: float
    log_prefactor: float
    r_squared: float
    window: Tuple[float, float]
    points: int
    skipped: bool = False

    def as_dict(self):
        return {"rate": _num(self.rate), "log_prefactor": _num(self.log_prefactor),
                "r_squared": _num(self.r_squared), "window": list(self.window),
                "points": self.points, "skipped": self.skipped}


@dataclass(eq=False)
class BoundsReport:
    series: Dict[str, np.ndarray]
    monitors: Dict[str, MonitorResult]
    fits: Dict[str, DecayFit]
    status: str
    failure: Optional[dict] = None
    extra: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def monitors_passed(self):
        return all(m.passed for m in self.monitors.values())

    @property
    def passed(self):
        return self.monitors_passed and self.status == "completed"

    def summary(self):
        return {
            "status": self.status,
            "passed": self.passed,
            "monitors": {k: m.as_dict() for k, m in self.monitors.items()},
            "fits": {k: f.as_dict() for k, f in self.fits.items()},
            "failure": self.failure,
            "snapshots": int(len(self.series["t"])),
        }


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def slack(mesh):
    return SLACK_FACTOR * mesh.h_theta ** 2


def _upper(name, t, values, bound, tol):
    margins = bound + tol - np.asarray(values)
    k = int(np.argmin(margins))
    ok = bool(np.all(np.isfinite(margins)) and margins[k] >= 0)
    return MonitorResult(name, ok, float(margins[k]), float(t[k]), tol)


def _lower(name, t, values, bound, tol):
    margins = np.asarray(values) - (bound - tol)
    k = int(np.argmin(margins))
    ok = bool(np.all(np.isfinite(margins)) and margins[k] >= 0)
    return MonitorResult(name, ok, float(margins[k]), float(t[k]), tol)


# -- per-snapshot quantities -------------------------------------------------

def _snapshot_row(snap, n):
    st, f = snap.state, snap.fields
    mesh, warp = st.mesh, st.warp
    lam = warp.lam(st.u)
    _, g = capgeom.grad(mesh, st.dev)
    grad = np.sqrt(g)
    scale = math.exp(-st.t / n)
    return {
        "t": st.t,
        "sup_u": float(np.max(st.u)),
        "inf_u": float(np.min(st.u)),
        "sup_lam_scaled": float(np.max(lam)) * scale,
        "inf_lam_scaled": float(np.min(lam)) * scale,
        "sup_phidot": float(np.max(snap.phidot)),
        "inf_phidot": float(np.min(snap.phidot)),
        "sup_gradphi": float(np.max(grad)),
        "sup_Du": float(np.max(lam * grad)),
        "sup_psi": float(np.max(g)) / 2.0,
        "area": area(st, f.v),
        "osc_uhat": oscillation(st) * scale,
        "roundness_dev": graphsurf.roundness_deviation(f),
        "neumann_res": float(np.max(np.abs(capgeom.boundary_normal_derivative(mesh, st.dev)))),
        "H_min": float(np.min(f.H)),
        "kappa_min": f.kappa_min,
    }


def area(state, v=None):
    """``|M_t| = int lambda(u)^n v dsigma``."""
    v = graphsurf.tilt(state) if v is None else v
    return capgeom.integrate(state.mesh, state.warp.lam(state.u) ** state.mesh.dim_n * v)


def oscillation(state):
    """``sup u - inf u``, resolved below the roundoff of ``u`` itself.

    Once ``dev`` is tiny, ``u_i - u_ref`` is taken as the trapezoid value
    ``dev_i (lambda(u_i) + lambda(u_ref)) / 2`` of ``int lambda du/lambda``,
    whose error is cubic in ``dev``.
    """
    u = state.u
    spread = float(np.max(u) - np.min(u))
    if spread > 1e-8 * float(np.max(np.abs(u))):
        return spread
    lam = state.warp.lam(u)
    ref = graphsurf.reference_value(state.mesh, lam)
    du = state.dev * 0.5 * (lam + ref)
    return float(np.max(du) - np.min(du))


def envelope(t, f0, alpha, c_bound, n):
    """Exact solution of ``f' = -C e^{-alpha t/n} f`` with ``f(0) = f0``."""
    t = np.asarray(t, dtype=float)
    return f0 * np.exp((n * c_bound / alpha) * np.expm1(-alpha * t / n))


def collect_series(traj):
    n = traj.mesh.dim_n
    rows = [_snapshot_row(s, n) for s in traj.snapshots]
    series = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    series["area_ratio"] = series["area"] * np.exp(-series["t"]) / series["area"][0]
    return series


# -- monitors ----------------------------------------------------------------

def lemma31_check(traj, series=None, tol=None):
    """``lambda(inf u0) <= lambda(u) e^{-t/n} <= lambda(sup u0)``."""
    s = collect_series(traj) if series is None else series
    tol = slack(traj.mesh) if tol is None else tol
    warp = traj.warp
    lo = float(warp.lam(s["inf_u"][0]))
    hi = float(warp.lam(s["sup_u"][0]))
    upper = _upper("lemma31_upper", s["t"], s["sup_lam_scaled"], hi, tol)
    lower = _lower("lemma31_lower", s["t"], s["inf_lam_scaled"], lo, tol)
    return (s["inf_lam_scaled"], s["sup_lam_scaled"]), (lower, upper)


def lemma32_check(traj, alpha, c_bound, series=None, tol=None):
    """``f(t) <= inf phidot`` and ``sup phidot(t) <= sup phidot(0)``."""
    s = collect_series(traj) if series is None else series
    tol = slack(traj.mesh) if tol is None else tol
    f = envelope(s["t"], s["inf_phidot"][0], alpha, c_bound, traj.mesh.dim_n)
    upper = _upper("lemma32_upper", s["t"], s["sup_phidot"], s["sup_phidot"][0], tol)
    lower = _lower("lemma32_lower", s["t"], s["inf_phidot"] - f, 0.0, tol)
    return f, (lower, upper)


def lemma41_check(traj, series=None, tol=None):
    """``sup |grad phi|(t) <= sup |grad phi|(0)``."""
    s = collect_series(traj) if series is None else series
    tol = slack(traj.mesh) if tol is None else tol
    return s["sup_gradphi"], _upper("lemma41", s["t"], s["sup_gradphi"], s["sup_gradphi"][0], tol)


def area_law_check(traj, series=None, tol=AREA_TOL):
    """``|M_t| e^{-t} = |M_0|`` to relative ``tol``."""
    s = collect_series(traj) if series is None else series
    dev = np.abs(s["area_ratio"] - 1.0)
    return s["area_ratio"], _upper("area_law", s["t"], dev, 0.0, tol)


def neumann_check(traj, series=None):
    s = collect_series(traj) if series is None else series
    tol = NEUMANN_FACTOR * traj.mesh.h_theta ** 2
    return _upper("neumann", s["t"], s["neumann_res"], 0.0, tol)


def positivity_check(traj, series=None):
    s = collect_series(traj) if series is None else series
    return _lower("mean_curvature_positive", s["t"], s["H_min"], 0.0, 0.0)


# -- fits and residuals ------------------------------------------------------

def decay_fit(times, values, window=DEFAULT_WINDOW):
    """Least-squares line through ``(t, log value)`` on ``window``; rate = -slope."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    lo, hi = window
    mask = (times >= lo - 1e-12) & (times <= hi + 1e-12)
    t, y = times[mask], values[mask]
    if t.size < 3:
        raise InsufficientDataError(f"decay fit needs >= 3 points in {window}, got {t.size}")
    span = (float(t[0]), float(t[-1]))
    if not np.all(y > 0) or not np.all(np.isfinite(y)):
        return DecayFit(math.nan, math.nan, math.nan, span, int(t.size), skipped=True)
    ly = np.log(y)
    slope, icpt = np.polyfit(t, ly, 1)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum((ly - (slope * t + icpt)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return DecayFit(float(-slope), float(icpt), r2, span, int(t.size))


def roundness(traj, series=None):
    """``(dev(t), osc(u_hat)(t))`` series."""
    s = collect_series(traj) if series is None else series
    return s["roundness_dev"], s["osc_uhat"]


def elliptic_residual(state, phidot):
    """Sup of ``div_sigma(grad phi / v) - n lambda'/v + v/phidot`` (flux form)."""
    mesh = state.mesh
    div = capgeom.divergence_normalized_gradient(mesh, state.dev)
    v = graphsurf.tilt(state)
    dlam = state.warp.dlam(state.u)
    return float(np.max(np.abs(div - mesh.dim_n * dlam / v + v / phidot)))


# -- report ------------------------------------------------------------------

def _fit_or_skip(times, values, window):
    try:
        return decay_fit(times, values, window)
    except InsufficientDataError:
        return DecayFit(math.nan, math.nan, math.nan, window, 0, skipped=True)


def build_report(traj, alpha=None, c_bound=None, window=DEFAULT_WINDOW):
    warp = traj.warp
    alpha = warp.alpha if alpha is None else alpha
    c_bound = warp.c_bound if c_bound is None else c_bound
    s = collect_series(traj)
    _, (l31_lo, l31_hi) = lemma31_check(traj, s)
    f, (l32_lo, l32_hi) = lemma32_check(traj, alpha, c_bound, s)
    s["envelope_f"] = f
    _, l41 = lemma41_check(traj, s)
    _, area_m = area_law_check(traj, s)
    monitors = {m.name: m for m in (l31_lo, l31_hi, l32_lo, l32_hi, l41, area_m,
                                    neumann_check(traj, s), positivity_check(traj, s))}
    fits = {
        "sup_Du": _fit_or_skip(s["t"], s["sup_Du"], window),
        "roundness_dev": _fit_or_skip(s["t"], s["roundness_dev"], window),
        "osc_uhat": _fit_or_skip(s["t"], s["osc_uhat"], window),
    }
    return BoundsReport(series=s, monitors=monitors, fits=fits, status=traj.status,
                        failure=traj.failure)


def write_series_csv(report, path):
    s = report.series
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i in range(len(s["t"])):
            w.writerow([repr(float(s[c][i])) for c in CSV_COLUMNS])


def write_summary_json(report, path, extra=None):
    payload = report.summary()
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_fields_csv(snapshot, path):
    st = snapshot.state
    theta, psi = st.mesh.coords()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("theta", "psi", "phi", "u", "v", "H", "phidot"))
        cols = (theta, psi, st.phi, st.u, snapshot.fields.v, snapshot.fields.H, snapshot.phidot)
        for row in zip(*(np.ravel(c) for c in cols)):
            w.writerow([repr(float(x)) for x in row])
