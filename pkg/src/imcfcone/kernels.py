"""Hot loops of the flow: the speed field and the explicit Runge-Kutta driver.

The unknown is stored split as ``phi = offset + dev``: a scalar offset that
carries the radial motion and a deviation field that carries the shape.  The
right-hand side is assembled in the same split form,

    phidot = 1/(n l'_ref) + E_ref  +  [ (1/(n l'_i) - 1/(n l'_ref)) + (E_i - E_ref) ],
    E = (n l' g + s) / (n l' (n l' - s)),   g = |grad phi|^2,  s = sigma~^{ij} phi_{i,j},

which equals ``v^2 / (n l' - s)`` exactly but keeps every term of the
deviation proportional to the deviation itself.  Without the split the
deviation bottoms out at ``eps * |phi|`` and exponential decay rates cannot be
measured past ``t ~ 2`` on small caps.

Each kernel exists twice: a numba loop (``*_loop``) and a numpy vectorised
form (``*_vec``).  ``_advance_loop`` is the Runge-Kutta driver for either: it calls
module-level helpers, and the numpy copy rebinds those names to the ``*_vec``
kernels.  Passing the helpers as arguments would defeat numba's disk cache.

Status codes returned by the kernels:
0 ok, 1 singular (denominator <= 0), 2 left the warp interval,
3 non-finite values, 4 step budget or dt-log buffer exhausted.
"""
import math
import types

import numpy as np

from . import capgeom
from ._accel import njit, requested_backend

OK, SINGULAR, DOMAIN_EXIT, NONFINITE, BUDGET = 0, 1, 2, 3, 4
RK4, HEUN = 0, 1
# stability interval of the schemes on the negative real axis
STABILITY = {RK4: 2.785, HEUN: 2.0}


# -- warp evaluation ---------------------------------------------------------

@njit
def _warp_row(warp, x_ref, d, dl, rd):
    """Fill ``lambda'`` and ``1/lambda'(x_ref + d) - 1/lambda'(x_ref)`` along a row.

    Returns ``(status, index)`` of the first node leaving the interval.
    """
    kind, a, shift, c, rmin, tab_phi, tab_u, tab_dl = warp
    m = d.shape[0]
    if kind == 0:
        for i in range(m):
            dl[i] = 1.0
            rd[i] = 0.0
        return OK, -1
    if kind == 1:
        y0 = x_ref + shift
        if y0 <= 0.0:
            return DOMAIN_EXIT, 0
        s0 = math.sinh(y0)
        e0 = math.exp(y0)
        for i in range(m):
            y = y0 + d[i]
            if y <= 0.0:
                return DOMAIN_EXIT, i
            # one expm1 per node: e^y = e^y0 (1 + expm1(d)), sinh(d) exact for small d
            ed = math.expm1(d[i])
            ey = e0 * (1.0 + ed)
            iy = 1.0 / ey
            sh = 0.5 * (ey - iy)
            dl[i] = sh / (sh + iy)
            rd[i] = -(0.5 * ed * (1.0 + 1.0 / (ed + 1.0))) / (sh * s0)
        return OK, -1
    lo, hi = tab_phi[0], tab_phi[-1]
    if x_ref < lo or x_ref > hi:
        return DOMAIN_EXIT, 0
    inv0 = 1.0 / np.interp(x_ref, tab_phi, tab_dl)
    for i in range(m):
        x = x_ref + d[i]
        if x < lo or x > hi:
            return DOMAIN_EXIT, i
        dl[i] = np.interp(x, tab_phi, tab_dl)
        rd[i] = 1.0 / dl[i] - inv0
    return OK, -1


def warp_vec(warp, x_ref, d):
    """Vectorised :func:`_warp_row` over a whole field."""
    kind, a, shift, c, rmin, tab_phi, tab_u, tab_dl = warp
    d = np.asarray(d, dtype=float)
    x = x_ref + d
    if kind == 0:
        return np.ones_like(d), np.zeros_like(d), OK
    if kind == 1:
        y = x + shift
        y0 = x_ref + shift
        if np.any(y <= 0.0) or y0 <= 0.0:
            return None, None, DOMAIN_EXIT
        return np.tanh(y), -np.sinh(d) / (np.sinh(y) * np.sinh(y0)), OK
    if np.any(x < tab_phi[0]) or np.any(x > tab_phi[-1]) or not tab_phi[0] <= x_ref <= tab_phi[-1]:
        return None, None, DOMAIN_EXIT
    dl = np.interp(x, tab_phi, tab_dl)
    dl0 = np.interp(x_ref, tab_phi, tab_dl)
    return dl, 1.0 / dl - 1.0 / dl0, OK


# -- speed field: numba loops ------------------------------------------------

def _speed_terms(g, s, ndl):
    den = ndl - s
    return den, (ndl * g + s) / (ndl * den)


@njit
def _guard(den, dcoef):
    # kept out of the stencil loops so those stay branch-free
    dmax = 0.0
    for i in range(den.shape[0]):
        if not den[i] > 0.0:
            if math.isfinite(den[i]):
                return SINGULAR, i, den[i], 0.0
            return NONFINITE, i, den[i], 0.0
        if dcoef[i] > dmax:
            dmax = dcoef[i]
    if not math.isfinite(dmax):
        return NONFINITE, -1, dmax, 0.0
    return OK, -1, 0.0, dmax


@njit
def _rhs_axisym_loop(offset, dev, ref, geom, warp, nd, out):
    h, cot = geom
    N = dev.shape[0]
    kr = ref[0]
    x_ref = offset + dev[kr]
    inv_h2 = 1.0 / (h * h)
    inv_2h = 0.5 / h
    dls = np.empty(N)
    rds = np.empty(N)
    wpad = np.empty(N + 2)
    for k in range(N):
        wpad[k + 1] = dev[k]
    wpad[0] = dev[0]
    wpad[N + 1] = dev[N - 2]
    st, bad = _warp_row(warp, x_ref, wpad[1:N + 1] - dev[kr], dls, rds)
    if st != OK:
        return 0.0, st, bad, 0.0, 0.0
    den = np.empty(N)
    dcoef = np.empty(N)
    flat = np.empty(N)
    for k in range(N):
        wm = wpad[k]
        w0 = wpad[k + 1]
        wp = wpad[k + 2]
        d1 = (wp - wm) * inv_2h
        d2 = (wp - 2.0 * w0 + wm) * inv_h2
        g = d1 * d1
        v2 = 1.0 + g
        s = d2 / v2 + (nd - 1) * cot[k] * d1
        ndl = nd * dls[k]
        dk = ndl - s
        e = (ndl * g + s) / (ndl * dk)
        den[k] = dk
        dcoef[k] = v2 / (dk * dk)
        flat[k] = rds[k] / nd + e
    st, bi, bv, dmax = _guard(den, dcoef)
    if st != OK:
        return 0.0, st, bi, bv, 0.0
    e_ref = flat[kr] - rds[kr] / nd
    for k in range(N):
        out[k] = flat[k] - e_ref
    return 1.0 / (nd * dls[kr]) + e_ref, OK, -1, 0.0, dmax


@njit
def _rhs_full2d_loop(offset, dev, ref, geom, warp, nd, out):
    h, hp, sn, cs, cot, filt = geom
    N, M = dev.shape
    kr, jr = ref[0], ref[1]
    x_ref = offset + dev[kr, jr]
    half = M // 2
    inv_h2 = 1.0 / (h * h)
    inv_hp2 = 1.0 / (hp * hp)
    dmax = 0.0
    e_ref = 0.0
    dl_ref = 1.0
    dls = np.empty(M)
    rds = np.empty(M)
    rel = np.empty(M)
    den = np.empty(N * M)
    dcoef = np.empty(N * M)
    for k in range(N):
        for j in range(M):
            rel[j] = dev[k, j] - dev[kr, jr]
        st, bad = _warp_row(warp, x_ref, rel, dls, rds)
        if st != OK:
            return 0.0, st, k * M + bad, 0.0, 0.0
        s_k = sn[k]
        c_k = cs[k]
        cot_k = cot[k]
        for j in range(M):
            je = j + 1 if j < M - 1 else 0
            jw = j - 1 if j > 0 else M - 1
            w0 = dev[k, j]
            if k > 0:
                wm = dev[k - 1, j]
                wme = dev[k - 1, je]
                wmw = dev[k - 1, jw]
            else:
                wm = dev[0, (j + half) % M]
                wme = dev[0, (je + half) % M]
                wmw = dev[0, (jw + half) % M]
            if k < N - 1:
                wp = dev[k + 1, j]
                wpe = dev[k + 1, je]
                wpw = dev[k + 1, jw]
            else:
                wp = dev[N - 2, j]
                wpe = dev[N - 2, je]
                wpw = dev[N - 2, jw]
            f_t = (wp - wm) / (2.0 * h)
            f_tt = (wp - 2.0 * w0 + wm) * inv_h2
            f_p = (dev[k, je] - dev[k, jw]) / (2.0 * hp)
            f_pp = (dev[k, je] - 2.0 * w0 + dev[k, jw]) * inv_hp2
            f_tp = ((wpe - wpw) - (wme - wmw)) / (4.0 * h * hp)
            p1 = f_t
            p2 = f_p / s_k
            h11 = f_tt
            h12 = (f_tp - cot_k * f_p) / s_k
            h22 = (f_pp + s_k * c_k * f_t) / (s_k * s_k)
            g = p1 * p1 + p2 * p2
            v2 = 1.0 + g
            s = h11 + h22 - (p1 * p1 * h11 + 2.0 * p1 * p2 * h12 + p2 * p2 * h22) / v2
            dl = dls[j]
            rdiff = rds[j]
            ndl = nd * dl
            dk = ndl - s
            e = (ndl * g + s) / (ndl * dk)
            den[k * M + j] = dk
            dcoef[k * M + j] = v2 / (dk * dk)
            out[k, j] = rdiff / nd + e
            if k == kr and j == jr:
                e_ref = e
                dl_ref = dl
    st, bi, bv, dmax = _guard(den, dcoef)
    if st != OK:
        return 0.0, st, bi, bv, 0.0
    for k in range(N):
        for j in range(M):
            out[k, j] -= e_ref
    row = np.empty(M)
    for r in range(filt.shape[0]):
        for j in range(M):
            acc = 0.0
            for i in range(M):
                acc += filt[r, j, i] * out[r, i]
            row[j] = acc
        for j in range(M):
            out[r, j] = row[j]
    return 1.0 / (nd * dl_ref) + e_ref, OK, -1, 0.0, dmax


@njit
def _rhs_loop(offset, dev, ref, geom, warp, nd, out):
    # compiled entry shared by both modes: axisym fields arrive as (N, 1)
    axisym, h, hp, sn, cs, cot, filt = geom
    if axisym:
        return _rhs_axisym_loop(offset, dev[:, 0], ref, (h, cot), warp, nd, out[:, 0])
    return _rhs_full2d_loop(offset, dev, ref, (h, hp, sn, cs, cot, filt), warp, nd, out)


def _loop_geometry(mesh, filtered=True):
    filt = mesh.filter_rows if filtered else mesh.filter_rows[:0]
    return (mesh.mode == capgeom.AXISYM, mesh.h_theta, mesh.h_psi, mesh.sin, mesh.cos,
            mesh.cot, filt)


# -- speed field: numpy ------------------------------------------------------

def _rhs_vec(offset, dev, ref, mesh, warp, nd, out, filtered=True):
    d = capgeom.derivatives(mesh, dev)
    _, g = capgeom.grad(mesh, dev, d)
    s = capgeom.sigma_tilde_contraction(mesh, dev, d)
    ref_idx = tuple(ref[: dev.ndim])
    x_ref = offset + dev[ref_idx]
    dl, rdiff, st = warp_vec(warp, x_ref, dev - dev[ref_idx])
    if st != OK:
        return 0.0, st, -1, 0.0, 0.0
    ndl = nd * dl
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        den, e = _speed_terms(g, s, ndl)
        bad = ~(den > 0.0)
        if bad.any():
            i = int(np.flatnonzero(bad.ravel())[0])
            val = float(den.ravel()[i])
            return 0.0, (SINGULAR if math.isfinite(val) else NONFINITE), i, val, 0.0
        dcoef = (1.0 + g) / (den * den)
    rel = rdiff / nd + e
    out[...] = rel - e[ref_idx]
    filt = mesh.filter_rows
    if filtered and filt.shape[0]:
        out[: filt.shape[0]] = np.einsum("rji,ri->rj", filt, out[: filt.shape[0]])
    dmax = float(np.max(dcoef))
    if not math.isfinite(dmax):
        return 0.0, NONFINITE, -1, dmax, 0.0
    return 1.0 / (nd * dl[ref_idx]) + e[ref_idx], OK, -1, 0.0, dmax


# -- stage arithmetic (loops for numba, ufuncs for numpy) ----------------------

@njit
def _axpy(out, x, a, k):
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            out[i, j] = x[i, j] + a * k[i, j]


@njit
def _rk4_combine(out, x, b, k1, k2, k3, k4):
    ok = True
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            v = x[i, j] + b * (k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j])
            out[i, j] = v
            ok = ok and math.isfinite(v)
    return ok


@njit
def _heun_combine(out, x, b, k1, k2):
    ok = True
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            v = x[i, j] + b * (k1[i, j] + k2[i, j])
            out[i, j] = v
            ok = ok and math.isfinite(v)
    return ok


def _axpy_vec(out, x, a, k):
    np.multiply(k, a, out=out)
    out += x


def _rk4_combine_vec(out, x, b, k1, k2, k3, k4):
    np.add(k2, k3, out=out)
    out *= 2.0
    out += k1
    out += k4
    out *= b
    out += x
    return bool(np.all(np.isfinite(out)))


def _heun_combine_vec(out, x, b, k1, k2):
    np.add(k1, k2, out=out)
    out *= b
    out += x
    return bool(np.all(np.isfinite(out)))


# -- Runge-Kutta driver ------------------------------------------------------

def _advance_loop(offset, dev, t, t_stop, ref, geom, warp, nd, scheme, cfl, bound,
                  dt_cap, max_steps, dt_log, log_pos, max_halvings=20):
    """Step from ``t`` to exactly ``t_stop`` (or until a failure/budget stop).

    Returns ``(offset, t, status, bad_node, bad_value, log_pos, halvings)``;
    ``dev`` is updated in place and always holds the last accepted state.
    """
    k1 = np.empty_like(dev)
    k2 = np.empty_like(dev)
    k3 = np.empty_like(dev)
    k4 = np.empty_like(dev)
    stage = np.empty_like(dev)
    new_dev = np.empty_like(dev)
    new_offset = offset
    p2 = p3 = p4 = 0.0
    bi, bv = -1, 0.0
    halvings_total = 0
    stab = 2.785 if scheme == 0 else 2.0
    steps = 0
    while t < t_stop:
        if steps >= max_steps or log_pos >= dt_log.shape[0]:
            return offset, t, 4, -1, 0.0, log_pos, halvings_total
        p1, st, bi, bv, dmax = _rhs_loop(offset, dev, ref, geom, warp, nd, k1)
        if st != 0:
            return offset, t, st, bi, bv, log_pos, halvings_total
        dt = cfl * stab / (dmax * bound) if dmax > 0.0 else dt_cap
        if dt > dt_cap:
            dt = dt_cap
        last = False
        if t + dt >= t_stop:
            dt = t_stop - t
            last = True
        tries = 0
        while True:
            if scheme == 0:
                _axpy(stage, dev, 0.5 * dt, k1)
                p2, st, bi, bv, dm = _rhs_loop(offset + 0.5 * dt * p1, stage, ref, geom, warp, nd, k2)
                if st == 0:
                    _axpy(stage, dev, 0.5 * dt, k2)
                    p3, st, bi, bv, dm = _rhs_loop(offset + 0.5 * dt * p2, stage, ref, geom, warp, nd, k3)
                if st == 0:
                    _axpy(stage, dev, dt, k3)
                    p4, st, bi, bv, dm = _rhs_loop(offset + dt * p3, stage, ref, geom, warp, nd, k4)
                if st == 0:
                    new_offset = offset + dt / 6.0 * (p1 + 2.0 * p2 + 2.0 * p3 + p4)
                    if not _rk4_combine(new_dev, dev, dt / 6.0, k1, k2, k3, k4):
                        st = 3
            else:
                _axpy(stage, dev, dt, k1)
                p2, st, bi, bv, dm = _rhs_loop(offset + dt * p1, stage, ref, geom, warp, nd, k2)
                if st == 0:
                    new_offset = offset + 0.5 * dt * (p1 + p2)
                    if not _heun_combine(new_dev, dev, 0.5 * dt, k1, k2):
                        st = 3
            if st == 0 and not math.isfinite(new_offset):
                st = 3
            if st == 0:
                break
            tries += 1
            halvings_total += 1
            if tries > max_halvings:
                return offset, t, st, bi, bv, log_pos, halvings_total
            dt *= 0.5
            last = False
        offset = new_offset
        dev[:] = new_dev
        t = t_stop if last else t + dt
        dt_log[log_pos] = dt
        log_pos += 1
        steps += 1
    return offset, t, 0, -1, 0.0, log_pos, halvings_total


_advance_numba = njit(_advance_loop)
# same driver source over the numpy kernels: only the helper globals differ
_advance_numpy = types.FunctionType(_advance_loop.__code__,
                                    dict(globals(), _rhs_loop=_rhs_vec, _axpy=_axpy_vec,
                                         _rk4_combine=_rk4_combine_vec,
                                         _heun_combine=_heun_combine_vec), "_advance_numpy",
                                    _advance_loop.__defaults__)


def speed(offset, dev, mesh, warp_params, backend=None, filtered=True):
    """Evaluate the split right-hand side once.

    ``filtered=False`` skips the polar smoothing of the full2d stepper and
    returns the pointwise quotient.  Returns ``(offset_rate, dev_rate, status, bad_node, bad_value, dmax)``.
    """
    backend = backend or requested_backend()
    dev = np.ascontiguousarray(dev, dtype=float)
    out = np.empty_like(dev)
    ref = reference_node(mesh)
    if backend == "numba":
        res = _rhs_loop(float(offset), _as2d(dev), ref, _loop_geometry(mesh, filtered),
                        warp_params, mesh.dim_n, _as2d(out))
    else:
        res = _rhs_vec(float(offset), dev, ref, mesh, warp_params, mesh.dim_n, out, filtered)
    p, st, bi, bv, dmax = res
    return p, out, st, bi, bv, dmax


def reference_node(mesh):
    """Node whose value carries the offset: first node of the boundary row.

    The boundary row is never touched by the polar filter, so the deviation
    stays exactly zero there.
    """
    return (mesh.n_theta - 1, 0)


def advance(offset, dev, t, t_stop, mesh, warp_params, scheme, cfl, dt_cap,
            max_steps, dt_log, log_pos, backend=None, max_halvings=20):
    backend = backend or requested_backend()
    ref = reference_node(mesh)
    args = (float(offset), dev, float(t), float(t_stop), ref)
    tail = (warp_params, mesh.dim_n, int(scheme), float(cfl), float(mesh.stencil_bound),
            float(dt_cap), int(max_steps), dt_log, int(log_pos), int(max_halvings))
    if backend == "numba":
        args = (float(offset), _as2d(dev), float(t), float(t_stop), ref)
        return _advance_numba(*args, _loop_geometry(mesh), *tail)
    return _advance_numpy(*args, mesh, *tail)


def _as2d(a):
    # view, so in-place updates reach the caller's array
    return a.reshape(a.shape[0], -1)
