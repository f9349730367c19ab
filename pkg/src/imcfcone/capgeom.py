"""Geodesic caps ``{theta <= theta0}`` of the round sphere and calculus on them.

Nodes are staggered off the pole: ``theta_k = (k + 1/2) h`` for
``k = 0..N-1`` with ``h = theta0 / (N - 1/2)``, so the last row sits exactly on
the boundary ``theta = theta0`` and no node touches the coordinate singularity.
Stencils read two ghost rows:

* across the pole, ``f(-h/2, psi) = f(h/2, psi + pi)`` (the same point of the
  sphere; in axisymmetric mode simply ``f_0``);
* across the boundary, the even reflection ``f_N = f_{N-2}``, which makes the
  centred normal derivative vanish and encodes the Neumann condition.

Fields are plain arrays of shape ``mesh.shape``: ``(N,)`` in ``axisym`` mode
and ``(N, M)`` in ``full2d`` mode (``n = 2`` only, periodic in ``psi``).
Coordinates are ``(theta, psi_1, ..., psi_{n-1})`` with the fibre sphere
coordinates orthonormal at the node, so ``sigma = diag(1, s^2, ..., s^2)``,
``s = sin(theta)``.
"""
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import gamma

from .errors import ConfigurationError

AXISYM = "axisym"
FULL2D = "full2d"


@dataclass(frozen=True, eq=False)
class CapMesh:
    dim_n: int
    theta0: float
    mode: str
    n_theta: int
    n_psi: int
    h_theta: float
    h_psi: float
    theta: np.ndarray
    psi: np.ndarray
    sin: np.ndarray
    cos: np.ndarray
    cot: np.ndarray
    sigma_diag: np.ndarray      # (N, n): diagonal of sigma_ij per row
    christoffel_t_aa: np.ndarray  # Gamma^theta_{aa} = -sin cos, per row
    christoffel_a_ta: np.ndarray  # Gamma^a_{theta a} = cot, per row
    weights: np.ndarray
    boundary: np.ndarray
    pole_ring: np.ndarray
    stencil_bound: float
    filter_rows: np.ndarray     # (nf, M, M) polar filter projections (full2d)

    @property
    def shape(self):
        return (self.n_theta,) if self.mode == AXISYM else (self.n_theta, self.n_psi)

    @property
    def node_count(self):
        return self.n_theta * (1 if self.mode == AXISYM else self.n_psi)

    @property
    def periodic(self):
        return self.mode == FULL2D

    def row_values(self, per_row):
        """Broadcast a per-row array to a field."""
        per_row = np.asarray(per_row)
        if self.mode == AXISYM:
            return per_row
        return np.broadcast_to(per_row[:, None], self.shape)

    def coords(self):
        """``(theta, psi)`` per node (``psi`` is zero in axisymmetric mode)."""
        if self.mode == AXISYM:
            return self.theta, np.zeros_like(self.theta)
        return np.meshgrid(self.theta, self.psi, indexing="ij")

    def node_location(self, flat_index):
        k, j = np.unravel_index(int(flat_index), self.shape) if self.mode == FULL2D else (int(flat_index), 0)
        return float(self.theta[k]), (float(self.psi[j]) if self.mode == FULL2D else None)

    def kernel_geometry(self):
        """Flat tuple consumed by the compiled kernels."""
        if self.mode == AXISYM:
            return (self.h_theta, self.cot)
        return (self.h_theta, self.h_psi, self.sin, self.cos, self.cot, self.filter_rows)


def sphere_area(dim):
    """Area of the unit ``S^dim``."""
    return 2.0 * np.pi ** ((dim + 1) / 2) / gamma((dim + 1) / 2)


def cap_volume(dim_n, theta0):
    """Volume of the cap ``{theta <= theta0}`` in ``S^n`` by Gauss-Legendre."""
    x, w = np.polynomial.legendre.leggauss(64)
    th = 0.5 * theta0 * (x + 1)
    return sphere_area(dim_n - 1) * 0.5 * theta0 * np.sum(w * np.sin(th) ** (dim_n - 1))


def _cell_integrals(dim_n, edges):
    # exact (to roundoff) integral of sin^{n-1} over each cell
    x, w = np.polynomial.legendre.leggauss(12)
    a, b = edges[:-1], edges[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    pts = mid[:, None] + half[:, None] * x[None, :]
    return half * np.sum(w[None, :] * np.sin(pts) ** (dim_n - 1), axis=1)


def _polar_filter(theta, h_theta, n_psi):
    """Projections removing azimuthal modes finer than the theta spacing.

    Mode ``m`` on row ``k`` is kept when its discrete wavenumber
    ``2 sin(m h_psi / 2) / (h_psi sin theta_k)`` does not exceed ``2 / h_theta``;
    rows near the pole would otherwise force ``dt ~ (h_theta h_psi)^2``.
    """
    h_psi = 2 * np.pi / n_psi
    m = np.arange(n_psi // 2 + 1)
    kappa = 2 * np.sin(m * h_psi / 2) / h_psi
    rows = []
    eye = np.eye(n_psi)
    for th in theta:
        keep = kappa <= 2 * np.sin(th) / h_theta
        if keep.all():
            break
        spec = np.fft.rfft(eye, axis=1) * keep[None, :]
        rows.append(np.fft.irfft(spec, n=n_psi, axis=1).T)
    if not rows:
        return np.zeros((0, n_psi, n_psi))
    return np.ascontiguousarray(np.array(rows))


def _stencil_bound(dim_n, h, cot, mode):
    """Gershgorin bound of the linear part ``f_tt + (n-1) cot f_t (+ f_pp/s^2)``."""
    lo = 1.0 / h ** 2 - (dim_n - 1) * cot / (2 * h)
    hi = 1.0 / h ** 2 + (dim_n - 1) * cot / (2 * h)
    diag = np.full_like(cot, -2.0 / h ** 2)
    diag[0] += lo[0]          # pole ghost folds onto the node itself
    lo = lo.copy()
    lo[0] = 0.0
    lo[-1] += hi[-1]          # boundary ghost folds onto row N-2
    hi = hi.copy()
    hi[-1] = 0.0
    bound = float(np.max(np.abs(diag) + np.abs(lo) + np.abs(hi)))
    if mode == FULL2D:
        bound += 4.0 / h ** 2   # filtered azimuthal part, see _polar_filter
    return bound


def build_mesh(dim_n, theta0, mode=AXISYM, n_theta=256, n_psi=1):
    """Build the staggered cap mesh; deterministic for equal inputs."""
    dim_n, n_theta, n_psi = int(dim_n), int(n_theta), int(n_psi)
    theta0 = float(theta0)
    if dim_n < 2:
        raise ConfigurationError("dim_n must be >= 2")
    if not 0.0 < theta0 <= np.pi / 2 + 1e-15:
        raise ConfigurationError("theta0 must lie in (0, pi/2]: the cone has to be convex")
    if n_theta < 4:
        raise ConfigurationError("n_theta must be >= 4")
    if mode == AXISYM:
        if n_psi != 1:
            raise ConfigurationError("axisym mode needs n_psi = 1")
    elif mode == FULL2D:
        if dim_n != 2:
            raise ConfigurationError("full2d mode requires n = 2")
        if n_psi < 8 or n_psi % 2:
            raise ConfigurationError("full2d mode needs an even n_psi >= 8")
    else:
        raise ConfigurationError(f"unknown mode {mode!r}")

    h = theta0 / (n_theta - 0.5)
    theta = (np.arange(n_theta) + 0.5) * h
    theta[-1] = theta0
    s, c = np.sin(theta), np.cos(theta)
    cot = c / s
    sigma_diag = np.ones((n_theta, dim_n))
    sigma_diag[:, 1:] = (s * s)[:, None]

    edges = np.concatenate([[0.0], (np.arange(1, n_theta) * h), [theta0]])
    cell = _cell_integrals(dim_n, edges)
    if mode == AXISYM:
        psi = np.zeros(1)
        h_psi = 2 * np.pi
        weights = sphere_area(dim_n - 1) * cell
        filt = np.zeros((0, 1, 1))
    else:
        h_psi = 2 * np.pi / n_psi
        psi = np.arange(n_psi) * h_psi
        weights = np.repeat((cell * h_psi)[:, None], n_psi, axis=1)
        filt = _polar_filter(theta, h, n_psi)

    shape = (n_theta,) if mode == AXISYM else (n_theta, n_psi)
    boundary = np.zeros(shape, dtype=bool)
    boundary[-1, ...] = True
    pole = np.zeros(shape, dtype=bool)
    pole[0, ...] = True
    for arr in (theta, psi, s, c, cot, sigma_diag, weights, boundary, pole, filt):
        arr.setflags(write=False)
    return CapMesh(
        dim_n=dim_n, theta0=theta0, mode=mode, n_theta=n_theta, n_psi=n_psi,
        h_theta=h, h_psi=h_psi, theta=theta, psi=psi, sin=s, cos=c, cot=cot,
        sigma_diag=sigma_diag, christoffel_t_aa=-s * c, christoffel_a_ta=cot,
        weights=weights, boundary=boundary, pole_ring=pole,
        stencil_bound=_stencil_bound(dim_n, h, cot, mode), filter_rows=filt,
    )


class Derivatives(NamedTuple):
    t: np.ndarray
    tt: np.ndarray
    p: Optional[np.ndarray] = None
    pp: Optional[np.ndarray] = None
    tp: Optional[np.ndarray] = None


def pad(mesh, f):
    """Field with one ghost row on each side in ``theta``."""
    f = np.asarray(f, dtype=float)
    if f.shape != mesh.shape:
        raise ValueError(f"field shape {f.shape} does not match mesh {mesh.shape}")
    if mesh.mode == AXISYM:
        pole = f[:1]
    else:
        pole = np.roll(f[:1], mesh.n_psi // 2, axis=1)
    return np.concatenate([pole, f, f[-2:-1]], axis=0)


def derivatives(mesh, f):
    """Centred second-order partial derivatives of ``f`` at every node."""
    fp = pad(mesh, f)
    h = mesh.h_theta
    up, mid, dn = fp[2:], fp[1:-1], fp[:-2]
    d_t = (up - dn) / (2 * h)
    d_tt = (up - 2 * mid + dn) / (h * h)
    if mesh.mode == AXISYM:
        return Derivatives(d_t, d_tt)
    hp = mesh.h_psi
    east, west = np.roll(f, -1, axis=1), np.roll(f, 1, axis=1)
    d_p = (east - west) / (2 * hp)
    d_pp = (east - 2 * f + west) / (hp * hp)
    d_tp = ((np.roll(up, -1, axis=1) - np.roll(up, 1, axis=1))
            - (np.roll(dn, -1, axis=1) - np.roll(dn, 1, axis=1))) / (4 * h * hp)
    return Derivatives(d_t, d_tt, d_p, d_pp, d_tp)


def _per_node(mesh, row_array):
    return row_array if mesh.mode == AXISYM else row_array[:, None]


def grad(mesh, f, d=None):
    """Coordinate gradient components ``(..., n)`` and ``|grad f|^2_sigma``."""
    d = derivatives(mesh, f) if d is None else d
    n = mesh.dim_n
    comps = np.zeros(mesh.shape + (n,))
    comps[..., 0] = d.t
    if mesh.mode == FULL2D:
        comps[..., 1] = d.p
        norm_sq = d.t ** 2 + d.p ** 2 / _per_node(mesh, mesh.sin) ** 2
    else:
        norm_sq = d.t ** 2
    return comps, norm_sq


def covariant_hessian(mesh, f, d=None):
    """Coordinate components ``f_{i,j} = d_i d_j f - Gamma^k_ij d_k f``, shape ``(..., n, n)``.

    Uses the tabulated Christoffel symbols of the round metric:
    ``Gamma^theta_{aa} = -sin cos`` and ``Gamma^a_{theta a} = cot``.
    """
    d = derivatives(mesh, f) if d is None else d
    n = mesh.dim_n
    gt = _per_node(mesh, mesh.christoffel_t_aa)
    ga = _per_node(mesh, mesh.christoffel_a_ta)
    hess = np.zeros(mesh.shape + (n, n))
    hess[..., 0, 0] = d.tt
    if mesh.mode == AXISYM:
        for a in range(1, n):
            hess[..., a, a] = -gt * d.t
    else:
        hess[..., 1, 1] = d.pp - gt * d.t
        hess[..., 0, 1] = hess[..., 1, 0] = d.tp - ga * d.p
    return hess


def inverse_sigma(mesh):
    """``sigma^{ij}`` diagonal per node, shape ``(..., n)``."""
    inv = 1.0 / mesh.sigma_diag
    return inv if mesh.mode == AXISYM else np.broadcast_to(inv[:, None, :], mesh.shape + (mesh.dim_n,))


def sigma_tilde(mesh, f, d=None):
    """``sigma~^{ij} = sigma^{ij} - f^i f^j / v^2`` with ``v^2 = 1 + |grad f|^2``."""
    comps, norm_sq = grad(mesh, f, d)
    inv = inverse_sigma(mesh)
    up = comps * inv
    st = np.zeros(mesh.shape + (mesh.dim_n, mesh.dim_n))
    idx = np.arange(mesh.dim_n)
    st[..., idx, idx] = inv
    st -= up[..., :, None] * up[..., None, :] / (1.0 + norm_sq)[..., None, None]
    return st


def sigma_tilde_contraction(mesh, f, d=None):
    """``sigma~^{ij} f_{i,j}``.

    Axisymmetric mode uses the reduced form ``f_tt / v^2 + (n-1) cot f_t``;
    full2d contracts the Christoffel-based covariant Hessian.
    """
    d = derivatives(mesh, f) if d is None else d
    if mesh.mode == AXISYM:
        return d.tt / (1.0 + d.t ** 2) + (mesh.dim_n - 1) * mesh.cot * d.t
    s = mesh.sin[:, None]
    cot = mesh.cot[:, None]
    p1, p2 = d.t, d.p / s
    h11 = d.tt
    h12 = (d.tp - cot * d.p) / s
    h22 = (d.pp + s * mesh.cos[:, None] * d.t) / (s * s)
    v2 = 1.0 + p1 * p1 + p2 * p2
    return h11 + h22 - (p1 * p1 * h11 + 2 * p1 * p2 * h12 + p2 * p2 * h22) / v2


def boundary_normal_derivative(mesh, f):
    """One-sided second-order ``df/dtheta`` on the boundary row."""
    f = np.asarray(f, dtype=float)
    return (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * mesh.h_theta)


def integrate(mesh, f):
    """``int_M f dsigma`` with exact cell volumes as weights."""
    return float(np.sum(mesh.weights * np.asarray(f, dtype=float)))


def divergence_normalized_gradient(mesh, f):
    """Flux-form ``div_sigma(grad f / sqrt(1 + |grad f|^2))``.

    Independent of :func:`sigma_tilde_contraction` (staggered fluxes instead
    of a covariant Hessian); both discretise ``sigma~^{ij} f_{i,j} / v``.
    """
    n = mesh.dim_n
    h = mesh.h_theta
    fp = pad(mesh, f)
    half = np.arange(mesh.n_theta + 1) * h  # theta_{k-1/2}, k = 0..N
    half[-1] = mesh.theta0 + 0.5 * h
    s_half = np.sin(half)
    jac_half = s_half ** (n - 1)
    jac = mesh.sin ** (n - 1)
    ft = (fp[1:] - fp[:-1]) / h          # at theta_{k-1/2}, shape (N+1, ...)
    if mesh.mode == AXISYM:
        vh = np.sqrt(1.0 + ft * ft)
        flux = jac_half * ft / vh
        flux[0] = 0.0
        return (flux[1:] - flux[:-1]) / (h * jac)
    hp = mesh.h_psi
    dp = (np.roll(fp, -1, axis=1) - np.roll(fp, 1, axis=1)) / (2 * hp)
    fp_half = 0.5 * (dp[1:] + dp[:-1])
    with np.errstate(divide="ignore", invalid="ignore"):
        vh = np.sqrt(1.0 + ft * ft + (fp_half / s_half[:, None]) ** 2)
        flux_t = jac_half[:, None] * ft / vh
    flux_t[0] = 0.0
    # azimuthal fluxes at psi_{j+1/2}
    f = np.asarray(f, dtype=float)
    dpsi = (np.roll(f, -1, axis=1) - f) / hp
    dt = 0.5 * ((fp[2:] - fp[:-2]) / (2 * h) + np.roll((fp[2:] - fp[:-2]) / (2 * h), -1, axis=1))
    s = mesh.sin[:, None]
    vp = np.sqrt(1.0 + dt * dt + (dpsi / s) ** 2)
    flux_p = dpsi / (s * vp)
    div_t = (flux_t[1:] - flux_t[:-1]) / (h * s)
    div_p = (flux_p - np.roll(flux_p, 1, axis=1)) / (hp * s)
    return div_t + div_p
