"""Warping functions ``lambda(r)`` of the ambient metric ``dr^2 + lambda(r)^2 g_N``.

A :class:`WarpSpec` bundles ``lambda`` with its first two derivatives, the
interval ``I = [r_min, inf)``, the structural constants ``(alpha, C)`` and the
base point ``c`` of the radial substitution

    phi(u) = int_c^u ds / lambda(s).

Two closed-form warps ship with the package (``euclidean`` and
``hyperboloidal``); anything else is accepted either as callables
(:func:`from_functions`) or as tabulated samples (:func:`tabulated`).
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import DomainError, NumericError

# kernel warp kinds, see kernels._warp_point
KIND_EUCLIDEAN = 0
KIND_HYPERBOLOIDAL = 1
KIND_TABLE = 2

DEFAULT_HORIZON = 1e4
DEFAULT_SAMPLES = 4096
QUAD_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class WarpSpec:
    name: str
    lam: Callable
    dlam: Callable
    ddlam: Callable
    r_min: float
    alpha: float
    c_bound: float
    base_point: float
    kind: int = KIND_TABLE
    # closed-form parameters: lambda = scale*cosh(phi + shift) for hyperboloidal
    scale: float = 1.0
    shift: float = 0.0
    # vectorised closed forms of phi(u) and its inverse, when known
    phi_closed: Optional[Callable] = field(default=None, repr=False)
    u_closed: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.alpha > 0 or not self.c_bound > 0:
            raise DomainError("alpha and c_bound must be positive")
        if not self.in_interval(self.base_point) or not self.lam(self.base_point) > 0:
            raise DomainError(f"base point {self.base_point} must lie in I with lambda(c) > 0")

    def in_interval(self, r):
        return bool(np.all(np.asarray(r) >= self.r_min)) and bool(np.all(np.isfinite(r)))

    def evaluate(self, r):
        return evaluate(self, r)

    def phi_of_u(self, u):
        """Vectorised ``phi(u)``; closed form when available, quadrature otherwise."""
        u = np.asarray(u, dtype=float)
        _check_u(self, u)
        if self.phi_closed is not None:
            return self.phi_closed(u)
        return np.vectorize(lambda x: phi_from_u(self, x), otypes=[float])(u)

    def u_of_phi(self, phi):
        """Vectorised inverse of :meth:`phi_of_u`."""
        phi = np.asarray(phi, dtype=float)
        if self.u_closed is not None:
            u = self.u_closed(phi)
            if not np.all(np.isfinite(u)) or np.any(u < self.r_min):
                raise DomainError("phi outside the image of the radial substitution")
            return u
        return np.vectorize(lambda x: u_from_phi(self, x), otypes=[float])(phi)

    def recip_dlambda_diff(self, phi_ref, dphi):
        """``1/lambda'(u(phi_ref + dphi)) - 1/lambda'(u(phi_ref))``.

        Closed warps evaluate this without cancellation, which keeps the
        spatially varying part of the flow speed accurate long after the
        perturbation has decayed below ``eps * |phi|``.
        """
        dphi = np.asarray(dphi, dtype=float)
        if self.kind == KIND_EUCLIDEAN:
            return np.zeros_like(dphi)
        if self.kind == KIND_HYPERBOLOIDAL:
            x = phi_ref + self.shift
            # coth(x + d) - coth(x) = -sinh(d) / (sinh(x + d) sinh(x))
            return -np.sinh(dphi) / (np.sinh(x + dphi) * np.sinh(x))
        u1 = self.u_of_phi(phi_ref + dphi)
        u0 = self.u_of_phi(phi_ref)
        return 1.0 / self.dlam(u1) - 1.0 / self.dlam(u0)

    def lambda_inverse(self, value):
        """The radius ``r`` with ``lambda(r) = value`` (lambda is increasing)."""
        lo = self.r_min
        if self.lam(lo) >= value:
            return lo
        hi = max(abs(lo), 1.0) + lo
        for _ in range(200):
            if self.lam(hi) >= value:
                break
            hi = lo + 2.0 * (hi - lo)
        else:
            raise NumericError(f"cannot bracket lambda^-1({value})")
        return brentq(lambda r: float(self.lam(r)) - value, lo, hi, xtol=1e-14, rtol=1e-14)

    def kernel_params(self, u_lo=None, u_hi=None, size=20001):
        """Flat parameters for the compiled kernels.

        Returns ``(kind, a, shift, c, r_min, tab_phi, tab_u, tab_dl)``; the
        tables are only populated for warps without a closed form and cover
        ``[u_lo, u_hi]``.
        """
        if self.kind == KIND_EUCLIDEAN:
            empty = np.zeros(1)
            return (KIND_EUCLIDEAN, 1.0, 0.0, self.base_point, self.r_min, empty, empty, empty)
        if self.kind == KIND_HYPERBOLOIDAL:
            empty = np.zeros(1)
            return (KIND_HYPERBOLOIDAL, self.scale, self.shift, self.base_point, self.r_min,
                    empty, empty, empty)
        if u_lo is None or u_hi is None:
            raise DomainError("tabulated kernel parameters need a radius range")
        u_lo = max(u_lo, self.r_min + 1e-12 * max(1.0, abs(self.r_min)))
        grid = self.r_min + np.geomspace(u_lo - self.r_min, u_hi - self.r_min, size)
        phi = _cumulative_phi(self, grid)
        return (KIND_TABLE, 1.0, 0.0, self.base_point, self.r_min, phi, grid, self.dlam(grid))


def _check_u(spec, u):
    if not np.all(np.isfinite(u)) or np.any(u < spec.r_min):
        raise DomainError(f"u outside I = [{spec.r_min}, inf)")
    if np.any(u == spec.r_min) and not spec.lam(spec.r_min) > 0:
        raise DomainError("phi(u) diverges at an endpoint where lambda vanishes")


def _cumulative_phi(spec, grid):
    nodes, weights = np.polynomial.legendre.leggauss(8)
    a, b = grid[:-1], grid[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    pts = mid[:, None] + half[:, None] * nodes[None, :]
    seg = half * np.sum(weights[None, :] / spec.lam(pts), axis=1)
    phi = np.concatenate([[0.0], np.cumsum(seg)])
    return phi + phi_from_u(spec, float(grid[0]))


# -- catalog -----------------------------------------------------------------

def euclidean(alpha=1.0, c_bound=1.0, base_point=1.0):
    """``lambda(r) = r`` on ``[0, inf)``: the ambient space is flat."""
    c = float(base_point)
    return WarpSpec(
        name="euclidean",
        lam=lambda r: np.asarray(r, dtype=float) * 1.0,
        dlam=lambda r: np.ones_like(np.asarray(r, dtype=float)),
        ddlam=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        r_min=0.0, alpha=float(alpha), c_bound=float(c_bound), base_point=c,
        kind=KIND_EUCLIDEAN,
        phi_closed=lambda u: np.log(u / c),
        u_closed=lambda phi: c * np.exp(phi),
    )


def hyperboloidal(a=1.0, alpha=1.0, c_bound=None, base_point=0.0):
    """``lambda(r) = sqrt(r^2 + a^2)`` on ``[0, inf)``.

    ``lambda^{1+alpha} lambda'' = a^2 (r^2 + a^2)^{(alpha-2)/2}`` peaks at
    ``r = 0`` for ``alpha <= 2``, so the default constant is
    ``max(1, a^alpha)``.
    """
    a = float(a)
    if not a > 0:
        raise DomainError("hyperboloidal warp needs a > 0")
    if c_bound is None:
        c_bound = max(1.0, a ** alpha)
    c = float(base_point)
    shift = float(np.arcsinh(c / a))

    def lam(r):
        r = np.asarray(r, dtype=float)
        return np.sqrt(r * r + a * a)

    def dlam(r):
        r = np.asarray(r, dtype=float)
        return r / np.sqrt(r * r + a * a)

    def ddlam(r):
        r = np.asarray(r, dtype=float)
        return a * a / (r * r + a * a) ** 1.5

    return WarpSpec(
        name="hyperboloidal", lam=lam, dlam=dlam, ddlam=ddlam,
        r_min=0.0, alpha=float(alpha), c_bound=float(c_bound), base_point=c,
        kind=KIND_HYPERBOLOIDAL, scale=a, shift=shift,
        phi_closed=lambda u: np.arcsinh(u / a) - shift,
        u_closed=lambda phi: a * np.sinh(phi + shift),
    )


def from_functions(name, lam, dlam, ddlam, r_min, alpha, c_bound, base_point):
    """Wrap user callables; ``phi`` and its inverse fall back to quadrature."""
    return WarpSpec(name=name, lam=lam, dlam=dlam, ddlam=ddlam, r_min=float(r_min),
                    alpha=float(alpha), c_bound=float(c_bound),
                    base_point=float(base_point), kind=KIND_TABLE)


def tabulated(r, values, alpha, c_bound, base_point=None, name="tabulated"):
    """Warp from samples ``lambda(r_k)``.

    A not-a-knot cubic spline interpolates the samples (a natural end
    condition forces ``lambda'' = 0`` at ``r_0`` and rings there) and is
    continued linearly past the last sample (``lambda'' = 0`` there, which keeps the structural
    hypotheses intact on the unbounded part of ``I``).  Run :func:`validate`
    before simulating with it.
    """
    r = np.asarray(r, dtype=float)
    values = np.asarray(values, dtype=float)
    if r.ndim != 1 or r.shape != values.shape or r.size < 4 or np.any(np.diff(r) <= 0):
        raise DomainError("tabulated warp needs >= 4 strictly increasing samples")
    spline = CubicSpline(r, values)
    d1, d2 = spline.derivative(1), spline.derivative(2)
    r_end = r[-1]
    lam_end, slope_end = float(spline(r_end)), float(d1(r_end))

    def lam(x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= r_end, spline(np.minimum(x, r_end)), lam_end + slope_end * (x - r_end))

    def dlam(x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= r_end, d1(np.minimum(x, r_end)), slope_end)

    def ddlam(x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= r_end, d2(np.minimum(x, r_end)), 0.0)

    if base_point is None:
        base_point = float(r[len(r) // 2])
    return WarpSpec(name=name, lam=lam, dlam=dlam, ddlam=ddlam, r_min=float(r[0]),
                    alpha=float(alpha), c_bound=float(c_bound),
                    base_point=float(base_point), kind=KIND_TABLE)


CATALOG = {"euclidean": euclidean, "hyperboloidal": hyperboloidal}


def from_name(name, **params):
    try:
        factory = CATALOG[name]
    except KeyError:
        raise DomainError(f"unknown warp {name!r}; choose from {sorted(CATALOG)}") from None
    return factory(**params)


# -- operations ----------------------------------------------------------------

def evaluate(spec, r):
    """Return ``(lambda, lambda', lambda'')`` at ``r``."""
    r_arr = np.asarray(r, dtype=float)
    if not spec.in_interval(r_arr):
        raise DomainError(f"r={r!r} outside I = [{spec.r_min}, inf)")
    out = spec.lam(r_arr), spec.dlam(r_arr), spec.ddlam(r_arr)
    if r_arr.ndim == 0:
        return tuple(float(x) for x in out)
    return out


@dataclass(frozen=True)
class HypothesisCheck:
    name: str
    passed: bool
    worst_r: float
    worst_value: float
    bound: float


@dataclass(frozen=True)
class ConditionReport:
    warp: str
    alpha: float
    c_bound: float
    horizon: float
    sample_count: int
    sup_dlambda: float
    sup_curvature: float  # sup of lambda^{1+alpha} lambda''
    checks: tuple

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def as_dict(self):
        return {
            "warp": self.warp, "alpha": self.alpha, "c_bound": self.c_bound,
            "horizon": self.horizon, "sample_count": self.sample_count,
            "passed": self.passed, "sup_dlambda": self.sup_dlambda,
            "sup_curvature": self.sup_curvature,
            "checks": [c.__dict__ for c in self.checks],
        }


def sample_grid(spec, sample_count=DEFAULT_SAMPLES, horizon=DEFAULT_HORIZON):
    lo = 1e-6
    if horizon - spec.r_min <= lo:
        raise DomainError("sampling horizon must exceed r_min")
    return spec.r_min + np.geomspace(lo, horizon - spec.r_min, sample_count)


def validate(spec, sample_count=DEFAULT_SAMPLES, horizon=DEFAULT_HORIZON):
    """Check the structural hypotheses on a geometric sample of ``I``.

    Hypotheses: ``lambda > 0``, ``0 < lambda' <= C``,
    ``0 <= lambda^{1+alpha} lambda'' <= C`` and agreement of the supplied
    derivatives with centred differences of ``lambda``.
    """
    if sample_count < 2:
        raise DomainError("sample_count must be >= 2")
    r = sample_grid(spec, sample_count, horizon)
    C = spec.c_bound
    with np.errstate(over="ignore", invalid="ignore"):
        lam = np.asarray(spec.lam(r), dtype=float)
        dl = np.asarray(spec.dlam(r), dtype=float)
        ddl = np.asarray(spec.ddlam(r), dtype=float)
        curv = lam ** (1.0 + spec.alpha) * ddl
        step = 1e-5 * np.maximum(1.0, np.abs(r))
        # keep the stencil inside I near the left endpoint
        step = np.minimum(step, 0.5 * (r - spec.r_min))
        fd1 = (spec.lam(r + step) - spec.lam(r - step)) / (2 * step)
        fd2 = (spec.dlam(r + step) - spec.dlam(r - step)) / (2 * step)
        err1 = np.abs(fd1 - dl) / (1.0 + np.abs(dl))
        err2 = np.abs(fd2 - ddl) / (1.0 + np.abs(ddl))

    def nan_as(x, value):
        return np.where(np.isnan(x), value, x)

    checks = []

    def add(name, values, ok, worst_idx, bound):
        checks.append(HypothesisCheck(name, bool(ok), float(r[worst_idx]),
                                      float(values[worst_idx]), float(bound)))

    i = int(np.argmin(nan_as(lam, -np.inf)))
    add("lambda_positive", lam, np.all(nan_as(lam, -1.0) > 0), i, 0.0)
    i = int(np.argmin(nan_as(dl, -np.inf)))
    add("dlambda_positive", dl, np.all(nan_as(dl, -1.0) > 0), i, 0.0)
    i = int(np.argmax(nan_as(dl, np.inf)))
    add("dlambda_bounded", dl, np.all(nan_as(dl, np.inf) <= C * (1 + 1e-12)), i, C)
    i = int(np.argmin(nan_as(curv, -np.inf)))
    add("curvature_nonnegative", curv, np.all(nan_as(curv, -1.0) >= -1e-14), i, 0.0)
    i = int(np.argmax(nan_as(curv, np.inf)))
    add("curvature_bounded", curv, np.all(nan_as(curv, np.inf) <= C * (1 + 1e-12)), i, C)
    # overflowed samples cannot be differenced; they fail the bound checks instead
    finite = np.isfinite(lam) & np.isfinite(dl) & np.isfinite(ddl) & np.isfinite(fd1) & np.isfinite(fd2)
    err = np.where(finite, np.maximum(nan_as(err1, np.inf), nan_as(err2, np.inf)), 0.0)
    i = int(np.argmax(err))
    add("derivative_consistency", err, np.all(err <= 1e-5), i, 1e-5)

    return ConditionReport(
        warp=spec.name, alpha=spec.alpha, c_bound=C, horizon=float(horizon),
        sample_count=int(sample_count),
        sup_dlambda=float(np.max(nan_as(dl, np.inf))),
        sup_curvature=float(np.max(nan_as(curv, np.inf))),
        checks=tuple(checks),
    )


def adaptive_simpson(f, a, b, tol=QUAD_TOL, max_depth=60):
    """Adaptive Simpson quadrature with Richardson correction (iterative)."""
    if a == b:
        return 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) * (fa + 4 * fm + fb) / 6
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        a, b, fa, fm, fb, whole, eps, depth = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) * (fa + 4 * flm + fm) / 6
        right = (b - m) * (fm + 4 * frm + fb) / 6
        delta = left + right - whole
        if depth >= max_depth:
            raise NumericError("adaptive Simpson exceeded its depth limit")
        if abs(delta) <= 15 * eps:
            total += left + right + delta / 15
        else:
            stack.append((a, m, fa, flm, fm, left, 0.5 * eps, depth + 1))
            stack.append((m, b, fm, frm, fb, right, 0.5 * eps, depth + 1))
    return sign * total


def phi_from_u(spec, u):
    """``int_c^u ds / lambda(s)`` by adaptive Simpson."""
    u = float(u)
    _check_u(spec, np.asarray(u))
    c = spec.base_point
    lam = spec.lam
    # split at c's scale so wide ranges start with sensible panels
    edges = _panel_edges(c, u)
    return sum(adaptive_simpson(lambda s: 1.0 / float(lam(s)), lo, hi)
               for lo, hi in zip(edges[:-1], edges[1:]))


def _panel_edges(c, u):
    if u == c:
        return [c, c]
    lo, hi = min(c, u), max(c, u)
    if lo > 0 and hi / lo > 4:
        edges = list(np.geomspace(lo, hi, int(np.ceil(np.log2(hi / lo))) + 1))
    else:
        edges = [lo, hi]
    edges[0], edges[-1] = lo, hi
    return edges if u > c else edges[::-1]


def u_from_phi(spec, phi):
    """Inverse of :func:`phi_from_u` by bracketed root finding."""
    phi = float(phi)
    if not np.isfinite(phi):
        raise DomainError("phi must be finite")
    c = spec.base_point

    def residual(x):
        return phi_from_u(spec, x) - phi

    if phi == 0.0:
        return c
    if phi > 0:
        lo, hi = c, c + max(1.0, abs(c))
        for _ in range(200):
            if residual(hi) >= 0:
                break
            lo, hi = hi, c + 2.0 * (hi - c)
        else:
            raise NumericError(f"cannot bracket u for phi={phi}")
    else:
        hi, lo = c, c
        gap = c - spec.r_min
        if spec.lam(spec.r_min) > 0:
            if residual(spec.r_min) > 0:
                raise DomainError(f"phi={phi} below the image phi(I)")
            lo = spec.r_min
        else:
            for _ in range(1100):
                gap *= 0.5
                lo = spec.r_min + gap
                if gap == 0.0:
                    raise DomainError(f"phi={phi} below the representable image")
                if residual(lo) <= 0:
                    break
                hi = lo
            else:
                raise NumericError(f"cannot bracket u for phi={phi}")
    scale = max(abs(lo), abs(hi))
    try:
        return brentq(residual, lo, hi, xtol=1e-300 + 1e-17 * scale, rtol=1e-15, maxiter=400)
    except (RuntimeError, ValueError) as exc:
        raise NumericError(f"root finding failed for phi={phi}: {exc}") from exc
