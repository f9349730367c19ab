"""Time integration of the graph flow ``phidot = v^2 / (n lambda' - sigma~^{ij} phi_{i,j})``.

The Neumann condition is carried by the even ghost row ``phi_N = phi_{N-2}``
at every stage; the explicit Runge-Kutta loop itself lives in
:mod:`imcfcone.kernels`.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from . import capgeom, graphsurf, kernels
from .errors import ConfigurationError, NumericError, SingularityError
from .warpfn import KIND_TABLE

log = logging.getLogger("imcfcone")

COMPLETED = "completed"
SINGULARITY = "singularity"
DOMAIN_EXIT = "domain-exit"
STEP_FAILURE = "step-failure"
_STATUS = {kernels.SINGULAR: SINGULARITY, kernels.DOMAIN_EXIT: DOMAIN_EXIT,
           kernels.NONFINITE: STEP_FAILURE, kernels.BUDGET: STEP_FAILURE}
SCHEMES = {"rk4": kernels.RK4, "heun": kernels.HEUN}

# raw boundary slope accepted before the one-shot fix, in units of h_theta^2
COMPAT_FACTOR = 5.0
COMPAT_TOL = 1e-8


@dataclass(frozen=True)
class FlowConfig:
    t_end: float
    dt_initial: float = 1e-2
    cfl_safety: float = 0.8
    snapshot_stride: float = 0.1
    max_steps: int = 50_000_000
    scheme: str = "rk4"

    def __post_init__(self):
        if not self.t_end > 0:
            raise ConfigurationError("t_end must be positive")
        if not self.dt_initial > 0:
            raise ConfigurationError("dt_initial must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ConfigurationError("cfl_safety must lie in (0, 1]")
        if not self.snapshot_stride > 0:
            raise ConfigurationError("snapshot_stride must be positive")
        if self.max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {sorted(SCHEMES)}")

    def snapshot_times(self):
        count = int(math.floor(self.t_end / self.snapshot_stride + 1e-9))
        times = [k * self.snapshot_stride for k in range(count + 1)]
        if self.t_end - times[-1] > 1e-9 * self.snapshot_stride:
            times.append(self.t_end)
        else:
            times[-1] = self.t_end
        return times


@dataclass(frozen=True, eq=False)
class Snapshot:
    state: graphsurf.GraphState
    fields: graphsurf.CurvatureFields
    phidot: np.ndarray

    @property
    def t(self):
        return self.state.t


@dataclass(eq=False)
class Trajectory:
    snapshots: List[Snapshot]
    status: str = COMPLETED
    dt_log: np.ndarray = field(default_factory=lambda: np.zeros(0))
    halvings: int = 0
    failure: Optional[dict] = None
    kappa_warning: bool = False

    @property
    def times(self):
        return np.array([s.t for s in self.snapshots])

    @property
    def completed(self):
        return self.status == COMPLETED

    @property
    def mesh(self):
        return self.snapshots[0].state.mesh

    @property
    def warp(self):
        return self.snapshots[0].state.warp


class RadialMap:
    """``phi -> u`` for a warp: closed form, or a spline over the kernel table."""

    def __init__(self, warp, params):
        self.warp = warp
        self.params = params
        self._spline = None
        if warp.kind == KIND_TABLE:
            tab_phi, tab_u = params[5], params[6]
            self._spline = CubicSpline(tab_phi, tab_u)

    def __call__(self, phi):
        if self._spline is None:
            return self.warp.u_of_phi(phi)
        return self._spline(phi)


def kernel_params_for(warp, u0, t_end, dim_n):
    """Kernel warp tuple; table warps get a range from the radial pinching bound."""
    if warp.kind != KIND_TABLE:
        return warp.kernel_params()
    lo, hi = float(np.min(u0)), float(np.max(u0))
    u_lo = warp.r_min + 0.5 * (lo - warp.r_min)
    u_hi = warp.lambda_inverse(2.0 * float(warp.lam(hi)) * math.exp(t_end / dim_n))
    return warp.kernel_params(u_lo, u_hi)


def _fail_info(mesh, node, value):
    theta, psi = mesh.node_location(node) if node >= 0 else (None, None)
    return {"node": int(node), "value": float(value), "theta": theta, "psi": psi}


def rhs_split(state, params=None, backend=None, filtered=False):
    """``(offset_rate, dev_rate)``; their sum is the flow speed.

    ``filtered=True`` returns the rate the full2d stepper actually applies,
    with the polar rows smoothed in ``psi``.
    """
    params = state.warp.kernel_params(*_range(state)) if params is None else params
    p, rate, st, node, value, _ = kernels.speed(state.offset, state.dev, state.mesh, params,
                                                backend, filtered)
    if st == kernels.OK:
        return p, rate
    info = _fail_info(state.mesh, node, value)
    if st == kernels.SINGULAR:
        raise SingularityError(node, value, info["theta"], info["psi"])
    raise NumericError(f"flow speed undefined (status {_STATUS[st]}) at {info}")


def _range(state):
    if state.warp.kind != KIND_TABLE:
        return ()
    return (float(np.min(state.u)) * 0.5 + 0.5 * state.warp.r_min, float(np.max(state.u)) * 2.0)


def rhs(state, params=None, backend=None):
    """``phidot = v^2 / (n lambda' - sigma~^{ij} phi_{i,j})`` per node."""
    p, rate = rhs_split(state, params, backend)
    return p + rate


def apply_neumann(state):
    """Reset the boundary row so the one-sided theta-derivative vanishes.

    ``f_b = (4 f_{b-1} - f_{b-2}) / 3``; interior rows are untouched and a
    second application changes nothing.
    """
    mesh = state.mesh
    phi = state.phi.copy()
    phi[-1] = (4.0 * phi[-2] - phi[-3]) / 3.0
    return graphsurf.GraphState.from_phi(mesh, state.warp, phi, t=state.t)


def neumann_residual(state):
    return float(np.max(np.abs(capgeom.boundary_normal_derivative(state.mesh, state.dev))))


def step(state, dt, scheme="rk4", params=None, backend=None):
    """One explicit step of exactly ``dt`` (no step-size control, no retries)."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if dt == 0:
        return state
    params = state.warp.kernel_params(*_range(state)) if params is None else params
    dev = state.dev.copy()
    log_buf = np.zeros(4)
    offset, t, st, node, value, _, _ = kernels.advance(
        state.offset, dev, state.t, state.t + dt, state.mesh, params, SCHEMES[scheme],
        math.inf, dt, 1, log_buf, 0, backend=backend, max_halvings=0)
    if st != kernels.OK:
        info = _fail_info(state.mesh, node, value)
        if st == kernels.SINGULAR:
            raise SingularityError(node, value, info["theta"], info["psi"])
        raise NumericError(f"step failed ({_STATUS[st]}) at {info}")
    return graphsurf.GraphState(t=t, offset=offset, dev=dev, warp=state.warp, mesh=state.mesh)


def prepare_initial(state):
    """Compatibility and convexity checks; returns the Neumann-corrected state.

    Raises :class:`ConfigurationError` when the boundary slope is too far from
    zero to be a discretisation artefact, or when ``H <= 0`` somewhere.
    """
    mesh = state.mesh
    raw = neumann_residual(state)
    if raw > COMPAT_FACTOR * mesh.h_theta ** 2:
        raise ConfigurationError(
            f"initial data not perpendicular to the cone: |d phi/d theta| = {raw:.3e} at theta0")
    fixed = apply_neumann(state) if raw > 0 else state
    if neumann_residual(fixed) > COMPAT_TOL:
        raise ConfigurationError("boundary fix failed to reach the compatibility tolerance")
    fields = graphsurf.shape_operator(fixed)
    if not np.all(fields.H > 0):
        k = int(np.argmin(fields.H))
        theta, psi = mesh.node_location(k)
        raise ConfigurationError(
            f"initial mean curvature not positive: H = {float(np.min(fields.H)):.4g} at theta={theta:.4f}")
    return fixed, fields


def evolve(initial, config, backend=None):
    """Integrate from ``initial`` to ``config.t_end`` with snapshots every stride."""
    mesh, warp = initial.mesh, initial.warp
    state, fields = prepare_initial(initial)
    kappa_warning = fields.kappa_min <= 0
    if kappa_warning:
        msg = f"initial data not strictly convex: min principal curvature {fields.kappa_min:.3g}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        log.warning(msg)
    params = kernel_params_for(warp, state.u, config.t_end, mesh.dim_n)
    umap = RadialMap(warp, params)
    scheme = SCHEMES[config.scheme]

    def snapshot(t, offset, dev):
        phi = offset + dev
        st_ = graphsurf.GraphState(t=t, offset=offset, dev=dev.copy(), warp=warp, mesh=mesh,
                                   u=umap(phi))
        p, rate = rhs_split(st_, params, backend)
        return Snapshot(state=st_, fields=graphsurf.shape_operator(st_), phidot=p + rate)

    snaps = [snapshot(0.0, state.offset, state.dev)]
    traj = Trajectory(snapshots=snaps, kappa_warning=kappa_warning)
    dev = state.dev.copy()
    offset, t = state.offset, 0.0
    dt_log = np.zeros(1 << 16)
    pos = 0
    for t_next in config.snapshot_times()[1:]:
        while True:
            offset, t, st, node, value, pos, halv = kernels.advance(
                offset, dev, t, t_next, mesh, params, scheme, config.cfl_safety,
                config.dt_initial, config.max_steps - pos, dt_log, pos, backend=backend)
            traj.halvings += halv
            if st == kernels.BUDGET and pos >= dt_log.shape[0] and pos < config.max_steps:
                dt_log = np.concatenate([dt_log, np.zeros(dt_log.shape[0])])
                continue
            break
        if st != kernels.OK:
            traj.status = _STATUS[st]
            traj.failure = _fail_info(mesh, node, value)
            traj.failure["t"] = t
            log.warning("flow stopped at t=%.6g: %s %s", t, traj.status, traj.failure)
            break
        try:
            snaps.append(snapshot(t, offset, dev))
        except SingularityError as exc:
            traj.status = SINGULARITY
            traj.failure = {"node": exc.node, "value": exc.value, "theta": exc.theta,
                            "psi": exc.psi, "t": t}
            break
        log.debug("t=%.4f steps=%d", t, pos)
    traj.dt_log = dt_log[:pos].copy()
    return traj
