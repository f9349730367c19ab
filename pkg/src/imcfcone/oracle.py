"""Exact radial solutions: level sets ``{r = u(t)}`` moving under the flow.

With ``grad phi = 0`` the graph equation reduces to ``phidot = 1/(n lambda')``;
since ``u' = lambda(u) phidot`` this is the scalar ODE

    du/dt = lambda(u) / (n lambda'(u)).

Euclidean and hyperboloidal warps integrate in closed form; any other warp
goes through an adaptive Dormand-Prince integrator.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConfigurationError, DomainError, NumericError
from .warpfn import KIND_EUCLIDEAN, KIND_HYPERBOLOIDAL

ODE_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class RadialSolution:
    warp: object
    r0: float
    dim_n: int
    closed_form: bool

    def __call__(self, t):
        return self.evaluate(t)

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        n, r0 = self.dim_n, self.r0
        if self.closed_form and self.warp.kind == KIND_EUCLIDEAN:
            return r0 * np.exp(t / n)
        if self.closed_form and self.warp.kind == KIND_HYPERBOLOIDAL:
            a2 = self.warp.scale ** 2
            return np.sqrt((r0 * r0 + a2) * np.exp(2.0 * t / n) - a2)
        return self._integrate(t)

    def _integrate(self, t):
        flat = np.atleast_1d(t).ravel()
        if np.any(flat < 0):
            raise DomainError("radial solution is defined for t >= 0")
        t_max = float(flat.max()) if flat.size else 0.0
        if t_max == 0.0:
            return np.full(np.shape(t), self.r0)
        warp, n = self.warp, self.dim_n

        def f(_, y):
            return warp.lam(y) / (n * warp.dlam(y))

        sol = solve_ivp(f, (0.0, t_max), [self.r0], method="DOP853", rtol=ODE_RTOL,
                        atol=1e-14 * max(1.0, abs(self.r0)), dense_output=True)
        if not sol.success:
            raise NumericError(f"radial ODE integration failed: {sol.message}")
        out = sol.sol(flat)[0]
        out[flat == 0.0] = self.r0
        return out.reshape(np.shape(t))


def radial_solution(warp, r0, dim_n, closed_form=True):
    r0 = float(r0)
    if not r0 > warp.r_min:
        raise DomainError(f"r0 = {r0} must lie in the interior of I")
    if not warp.dlam(r0) > 0:
        raise DomainError("lambda'(r0) must be positive")
    has_closed = warp.kind in (KIND_EUCLIDEAN, KIND_HYPERBOLOIDAL)
    return RadialSolution(warp=warp, r0=r0, dim_n=int(dim_n), closed_form=closed_form and has_closed)


@dataclass(frozen=True)
class ErrorReport:
    times: np.ndarray
    abs_error: np.ndarray
    rel_error: np.ndarray

    @property
    def max_abs(self):
        return float(np.max(self.abs_error))

    @property
    def max_rel(self):
        return float(np.max(self.rel_error))


def compare(traj, oracle):
    """Sup-node error of ``u`` against the radial solution at every snapshot."""
    first = traj.snapshots[0].state
    if first.warp is not oracle.warp and first.warp.name != oracle.warp.name:
        raise ConfigurationError("trajectory and oracle use different warps")
    if first.mesh.dim_n != oracle.dim_n:
        raise ConfigurationError("trajectory and oracle differ in dimension")
    u0 = first.u
    if not math.isclose(float(np.min(u0)), oracle.r0, rel_tol=1e-12) or \
            not math.isclose(float(np.max(u0)), oracle.r0, rel_tol=1e-12):
        raise ConfigurationError("trajectory does not start from the oracle's radial data")
    times = traj.times
    exact = oracle.evaluate(times)
    abs_err = np.array([float(np.max(np.abs(s.state.u - e))) for s, e in zip(traj.snapshots, exact)])
    return ErrorReport(times=times, abs_error=abs_err, rel_error=abs_err / np.abs(exact))
