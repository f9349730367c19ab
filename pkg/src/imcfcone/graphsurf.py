"""Extrinsic geometry of the graph ``{(u(x), x) : x in M}`` over the cap.

Everything is computed from ``phi`` with ``u = u(phi)``.  In the
``sigma``-orthonormal frame, with ``p = grad phi``, ``G = I + p p^T`` and
``Hs`` the covariant Hessian of ``phi``,

    g = lambda^2 G,    h^i_j = (lambda' I - G^{-1} Hs) / (lambda v),

and ``T = G^{-1/2} = I - p p^T / (v (v + 1))`` turns the shape operator into
the symmetric matrix ``(lambda' I - T Hs T) / (lambda v)`` with the same
eigenvalues.
"""
from dataclasses import dataclass, field

import numpy as np

from . import capgeom
from .errors import DomainError, NumericError


@dataclass(frozen=True, eq=False)
class GraphState:
    """``phi = offset + dev`` at time ``t``.

    The split keeps the shape information in ``dev`` at full relative
    precision however far the surface has expanded.  ``dev`` vanishes at the
    reference node (first boundary node).
    """
    t: float
    offset: float
    dev: np.ndarray
    warp: object
    mesh: capgeom.CapMesh
    u: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        dev = np.ascontiguousarray(self.dev, dtype=float)
        if dev.shape != self.mesh.shape:
            raise ValueError(f"field shape {dev.shape} does not match mesh {self.mesh.shape}")
        object.__setattr__(self, "dev", dev)
        object.__setattr__(self, "offset", float(self.offset))
        if self.u is None:
            object.__setattr__(self, "u", self.warp.u_of_phi(self.phi))
        u = np.asarray(self.u, dtype=float)
        if not np.all(np.isfinite(u)) or np.any(u <= self.warp.r_min):
            raise DomainError("graph leaves the interior of the warp interval")
        object.__setattr__(self, "u", u)

    @property
    def phi(self):
        return self.offset + self.dev

    @classmethod
    def from_phi(cls, mesh, warp, phi, t=0.0, u=None):
        phi = np.asarray(phi, dtype=float)
        ref = reference_value(mesh, phi)
        return cls(t=t, offset=ref, dev=phi - ref, warp=warp, mesh=mesh, u=u)

    @classmethod
    def from_u(cls, mesh, warp, u, t=0.0):
        u = np.asarray(u, dtype=float)
        if u.shape != mesh.shape:
            raise ValueError(f"field shape {u.shape} does not match mesh {mesh.shape}")
        return cls.from_phi(mesh, warp, warp.phi_of_u(u), t=t, u=u)

    def replace(self, **changes):
        fields = dict(t=self.t, offset=self.offset, dev=self.dev, warp=self.warp,
                      mesh=self.mesh, u=None)
        fields.update(changes)
        return GraphState(**fields)

    def warp_values(self):
        """``(lambda, lambda', lambda'')`` at ``u`` per node."""
        return self.warp.lam(self.u), self.warp.dlam(self.u), self.warp.ddlam(self.u)


def reference_value(mesh, f):
    return float(np.asarray(f)[(mesh.n_theta - 1,) + (0,) * (len(mesh.shape) - 1)])


@dataclass(frozen=True, eq=False)
class CurvatureFields:
    v: np.ndarray
    g_lower: np.ndarray     # (..., n, n) coordinate components
    g_upper: np.ndarray
    shape: np.ndarray       # (..., n, n) h^i_j, coordinate components
    principal: np.ndarray   # (..., n) ascending
    H: np.ndarray
    dev_matrix: np.ndarray = field(repr=False, default=None)  # (lambda/lambda') h - I, orthonormal frame

    @property
    def kappa_min(self):
        return float(np.min(self.principal))


def tilt(state, d=None):
    _, g = capgeom.grad(state.mesh, state.dev, d)
    return np.sqrt(1.0 + g)


def tilt_u_form(mesh, lam, du):
    """``sqrt(1 + |grad u|^2_sigma / lambda^2)`` from coordinate components ``du``."""
    inv = capgeom.inverse_sigma(mesh)
    return np.sqrt(1.0 + np.sum(du * du * inv, axis=-1) / lam ** 2)


def induced_metric(state, d=None):
    """Coordinate ``g_ij = lambda^2 (sigma_ij + phi_i phi_j)`` and its inverse."""
    mesh = state.mesh
    comps, g = capgeom.grad(mesh, state.dev, d)
    lam2 = state.warp.lam(state.u)[..., None, None] ** 2
    n = mesh.dim_n
    idx = np.arange(n)
    sig = mesh.sigma_diag if mesh.mode == capgeom.AXISYM else \
        np.broadcast_to(mesh.sigma_diag[:, None, :], mesh.shape + (n,))
    lower = np.zeros(mesh.shape + (n, n))
    lower[..., idx, idx] = sig
    lower += comps[..., :, None] * comps[..., None, :]
    upper = capgeom.sigma_tilde(mesh, state.dev, d)
    return lam2 * lower, upper / lam2


def _orthonormal(mesh, f, d):
    """Gradient and covariant Hessian of ``f`` in the sigma-orthonormal frame."""
    comps, g = capgeom.grad(mesh, f, d)
    hess = capgeom.covariant_hessian(mesh, f, d)
    scale = 1.0 / np.sqrt(mesh.sigma_diag)
    if mesh.mode == capgeom.FULL2D:
        scale = np.broadcast_to(scale[:, None, :], mesh.shape + (mesh.dim_n,))
    return comps * scale, hess * scale[..., :, None] * scale[..., None, :], g, scale


def shape_operator(state, d=None):
    mesh = state.mesh
    d = capgeom.derivatives(mesh, state.dev) if d is None else d
    n = mesh.dim_n
    lam, dlam, _ = state.warp_values()
    p, hs, g, scale = _orthonormal(mesh, state.dev, d)
    v = np.sqrt(1.0 + g)
    eye = np.eye(n)
    ginv = eye - p[..., :, None] * p[..., None, :] / (v * v)[..., None, None]
    lv = (lam * v)[..., None, None]
    mixed_on = (dlam[..., None, None] * eye - ginv @ hs) / lv
    # back to coordinates; scale_i = 1/sqrt(sigma_ii)
    shape = mixed_on * scale[..., :, None] / scale[..., None, :]
    if mesh.mode == capgeom.AXISYM:
        principal = np.sort(np.diagonal(mixed_on, axis1=-2, axis2=-1), axis=-1)
    else:
        t = eye - p[..., :, None] * p[..., None, :] / (v * (v + 1.0))[..., None, None]
        sym = (dlam[..., None, None] * eye - t @ hs @ t) / lv
        if not np.all(np.isfinite(sym)):
            raise NumericError("non-finite shape operator")
        principal = np.linalg.eigvalsh(sym)
    H = mean_curvature(state, d)
    # (lambda/lambda') h - I without cancellation: 1/v - 1 = -g / (v (v + 1))
    dev_matrix = (-(g / (v * (v + 1.0))))[..., None, None] * eye \
        - (ginv @ hs) / (dlam * v)[..., None, None]
    g_lower, g_upper = induced_metric(state, d)
    return CurvatureFields(v=v, g_lower=g_lower, g_upper=g_upper, shape=shape,
                           principal=principal, H=H, dev_matrix=dev_matrix)


def mean_curvature(state, d=None):
    """``H = (n lambda' - sigma~^{ij} phi_{i,j}) / (lambda v)``."""
    mesh = state.mesh
    d = capgeom.derivatives(mesh, state.dev) if d is None else d
    lam, dlam, _ = state.warp_values()
    s = capgeom.sigma_tilde_contraction(mesh, state.dev, d)
    return (mesh.dim_n * dlam - s) / (lam * tilt(state, d))


def second_fundamental_form(state, d=None):
    """Covariant ``h_ij = (lambda / v)(lambda' (sigma_ij + phi_i phi_j) - phi_{i,j})``."""
    mesh = state.mesh
    d = capgeom.derivatives(mesh, state.dev) if d is None else d
    lam, dlam, _ = state.warp_values()
    g_lower, _ = induced_metric(state, d)
    hess = capgeom.covariant_hessian(mesh, state.dev, d)
    v = tilt(state, d)
    base = g_lower / (lam ** 2)[..., None, None]
    return (lam / v)[..., None, None] * (dlam[..., None, None] * base - hess)


def roundness_deviation(fields):
    """``sup |(lambda/lambda') h^i_j - delta^i_j|`` over nodes and entries."""
    return float(np.max(np.abs(fields.dev_matrix)))
