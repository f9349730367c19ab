import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from imcfcone import capgeom
from imcfcone.errors import ConfigurationError

PI3 = math.pi / 3


def _sym_field():
    """Analytic ``f = sin^2 cos psi`` and its sigma~-contraction from sympy tensor algebra."""
    th, ps = sp.symbols("theta psi")
    x = (th, ps)
    g = sp.diag(1, sp.sin(th) ** 2)
    ginv = g.inv()
    gamma = [[[sum(ginv[k, l] * (sp.diff(g[l, i], x[j]) + sp.diff(g[l, j], x[i])
                                 - sp.diff(g[i, j], x[l])) for l in range(2)) / 2
               for j in range(2)] for i in range(2)] for k in range(2)]
    f = sp.sin(th) ** 2 * sp.cos(ps)
    df = [sp.diff(f, xi) for xi in x]
    hess = [[sp.diff(f, x[i], x[j]) - sum(gamma[k][i][j] * df[k] for k in range(2))
             for j in range(2)] for i in range(2)]
    up = [sum(ginv[i, k] * df[k] for k in range(2)) for i in range(2)]
    v2 = 1 + sum(up[i] * df[i] for i in range(2))
    contr = sum((ginv[i, j] - up[i] * up[j] / v2) * hess[i][j] for i in range(2) for j in range(2))
    lam = lambda e: sp.lambdify(x, e, "numpy")
    return lam(f), lam(df[0]), lam(df[1]), lam(contr)


F, F_T, F_P, F_CONTR = _sym_field()


def test_build_axisym_area():
    m = capgeom.build_mesh(2, PI3, capgeom.AXISYM, 256, 1)
    assert m.node_count == 256
    assert capgeom.integrate(m, np.ones(m.shape)) == pytest.approx(math.pi, rel=1e-4)


def test_build_s3_cap_volume():
    m = capgeom.build_mesh(3, math.pi / 4, capgeom.AXISYM, 128, 1)
    assert capgeom.integrate(m, np.ones(m.shape)) == pytest.approx(1.793209546954886, rel=1e-4)
    np.testing.assert_allclose(m.sigma_diag[:, 1:], np.sin(m.theta)[:, None] ** 2 * np.ones((1, 2)))


def test_build_full2d_bookkeeping():
    m = capgeom.build_mesh(2, PI3, capgeom.FULL2D, 128, 64)
    assert m.node_count == 8192
    assert m.shape == (128, 64)
    assert m.periodic
    assert m.h_psi == pytest.approx(2 * math.pi / 64)


def test_staggered_nodes():
    m = capgeom.build_mesh(2, PI3, capgeom.AXISYM, 64, 1)
    assert m.h_theta == pytest.approx(PI3 / 63.5)
    assert m.theta[0] == pytest.approx(m.h_theta / 2)
    assert m.theta[-1] == PI3
    assert np.all(m.theta > 0)


@pytest.mark.parametrize("kw", [
    dict(dim_n=1, theta0=1.0), dict(dim_n=2, theta0=2.0), dict(dim_n=2, theta0=0.0),
    dict(dim_n=3, theta0=1.0, mode=capgeom.FULL2D, n_psi=16),
    dict(dim_n=2, theta0=1.0, mode=capgeom.FULL2D, n_psi=7),
    dict(dim_n=2, theta0=1.0, mode="polar"), dict(dim_n=2, theta0=1.0, n_theta=2),
])
def test_build_rejects(kw):
    with pytest.raises(ConfigurationError):
        capgeom.build_mesh(**kw)


def test_build_deterministic():
    a = capgeom.build_mesh(2, 1.0, capgeom.FULL2D, 32, 16)
    b = capgeom.build_mesh(2, 1.0, capgeom.FULL2D, 32, 16)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.filter_rows, b.filter_rows)


@pytest.mark.parametrize("mode,n_psi", [(capgeom.AXISYM, 1), (capgeom.FULL2D, 16)])
def test_constant_field_calculus_vanishes(mode, n_psi):
    m = capgeom.build_mesh(2, PI3, mode, 32, n_psi)
    f = np.full(m.shape, 3.25)
    comps, g = capgeom.grad(m, f)
    assert not np.any(comps) and not np.any(g)
    assert not np.any(capgeom.sigma_tilde_contraction(m, f))
    assert not np.any(capgeom.covariant_hessian(m, f))


def test_grad_theta_squared():
    errs = []
    for n in (128, 256):
        m = capgeom.build_mesh(2, PI3, capgeom.AXISYM, n, 1)
        k = int(np.argmin(abs(m.theta - 0.5)))
        comps, _ = capgeom.grad(m, m.theta ** 2)
        errs.append(abs(comps[k, 0] - 2 * m.theta[k]))
        assert comps[k, 0] == pytest.approx(2 * m.theta[k], abs=1e-3)
    # the centred difference is exact on quadratics
    assert max(errs) < 1e-12


def _interior(m, lo=0.25, margin=0.1):
    return (m.theta >= lo) & (m.theta <= m.theta0 - margin)


def test_grad_full2d_order():
    errs, hs = [], []
    for n in (32, 64, 128):
        m = capgeom.build_mesh(2, PI3, capgeom.FULL2D, n, 2 * n)
        th, ps = m.coords()
        comps, _ = capgeom.grad(m, F(th, ps))
        sel = _interior(m)
        err = max(np.max(abs(comps[sel, :, 0] - F_T(th, ps)[sel])),
                  np.max(abs(comps[sel, :, 1] - F_P(th, ps)[sel])))
        errs.append(err)
        hs.append(m.h_theta)
    orders = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(np.array(hs[:-1]) / hs[1:])
    assert np.all(orders >= 1.9)


def test_contraction_axisym_cosine():
    m = capgeom.build_mesh(2, math.pi / 2, capgeom.AXISYM, 512, 1)
    got = np.interp(math.pi / 4, m.theta, capgeom.sigma_tilde_contraction(m, np.cos(m.theta)))
    assert got == pytest.approx(-1.178511301977579, abs=1e-4)


def test_contraction_axisym_reduced_form_matches_tensor_form():
    m = capgeom.build_mesh(3, 1.0, capgeom.AXISYM, 64, 1)
    f = np.cos(2 * m.theta) + 0.3 * m.theta ** 2
    reduced = capgeom.sigma_tilde_contraction(m, f)
    tensor = np.einsum("...ij,...ij->...", capgeom.sigma_tilde(m, f), capgeom.covariant_hessian(m, f))
    np.testing.assert_allclose(reduced, tensor, rtol=1e-13, atol=1e-13)


def test_contraction_full2d_against_tensor_oracle():
    errs = []
    for n in (64, 128):
        m = capgeom.build_mesh(2, PI3, capgeom.FULL2D, n, 2 * n)
        th, ps = m.coords()
        got = capgeom.sigma_tilde_contraction(m, F(th, ps))
        sel = _interior(m)
        errs.append(np.max(abs(got[sel] - F_CONTR(th, ps)[sel])))
    assert errs[0] < 2e-3
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_contraction_full2d_matches_einsum():
    m = capgeom.build_mesh(2, PI3, capgeom.FULL2D, 32, 16)
    th, ps = m.coords()
    f = F(th, ps) + 0.2 * np.cos(th) ** 3
    tensor = np.einsum("...ij,...ij->...", capgeom.sigma_tilde(m, f), capgeom.covariant_hessian(m, f))
    np.testing.assert_allclose(capgeom.sigma_tilde_contraction(m, f), tensor, rtol=1e-12, atol=1e-12)


def test_boundary_derivative_cosine():
    for n in (64, 128):
        m = capgeom.build_mesh(2, PI3, capgeom.AXISYM, n, 1)
        d = capgeom.boundary_normal_derivative(m, np.cos(np.pi * m.theta / PI3))
        assert abs(d) < 5 * m.h_theta ** 2 * (np.pi / PI3) ** 3


def test_boundary_derivative_linear():
    m = capgeom.build_mesh(2, PI3, capgeom.AXISYM, 64, 1)
    assert capgeom.boundary_normal_derivative(m, m.theta) == pytest.approx(1.0, abs=1e-12)


def test_boundary_derivative_full2d():
    m = capgeom.build_mesh(2, PI3, capgeom.FULL2D, 256, 32)
    th, ps = m.coords()
    d = capgeom.boundary_normal_derivative(m, F(th, ps))
    np.testing.assert_allclose(d, 0.866025403784439 * np.cos(m.psi), atol=5 * m.h_theta ** 2)


def test_integrate_zero_and_cosine():
    m = capgeom.build_mesh(2, math.pi / 2, capgeom.AXISYM, 256, 1)
    assert capgeom.integrate(m, np.zeros(m.shape)) == 0.0
    assert capgeom.integrate(m, np.cos(m.theta)) == pytest.approx(math.pi, rel=1e-4)


def test_integrate_order():
    vals, hs = [], []
    for n in (32, 64, 128):
        m = capgeom.build_mesh(2, PI3, capgeom.AXISYM, n, 1)
        vals.append(capgeom.integrate(m, np.cos(3 * m.theta)))
        hs.append(m.h_theta)
    t = sp.Symbol("t")
    exact = 2 * math.pi * float(sp.integrate(sp.cos(3 * t) * sp.sin(t), (t, 0, sp.pi / 3)))
    errs = np.abs(np.array(vals) - exact)
    orders = np.log(errs[:-1] / errs[1:]) / np.log(np.array(hs[:-1]) / hs[1:])
    assert np.all(orders >= 1.9)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_raw_hessian_additive(coef):
    m = capgeom.build_mesh(2, PI3, capgeom.FULL2D, 16, 8)
    th, ps = m.coords()
    f = coef[0] * np.cos(th) + coef[1] * np.sin(th) ** 2 * np.cos(ps) + coef[2] * th ** 2
    g = coef[3] * np.cos(2 * th) + coef[4] * np.sin(th) ** 2 * np.sin(2 * ps) + coef[5]
    hf, hg = capgeom.covariant_hessian(m, f), capgeom.covariant_hessian(m, g)
    np.testing.assert_allclose(capgeom.covariant_hessian(m, f + g), hf + hg, atol=1e-9)


def test_axisym_and_full2d_agree_on_axisym_field():
    a = capgeom.build_mesh(2, PI3, capgeom.AXISYM, 64, 1)
    b = capgeom.build_mesh(2, PI3, capgeom.FULL2D, 64, 16)
    fa = np.cos(np.pi * a.theta / PI3)
    fb = np.repeat(fa[:, None], 16, axis=1)
    np.testing.assert_allclose(capgeom.sigma_tilde_contraction(b, fb),
                               np.repeat(capgeom.sigma_tilde_contraction(a, fa)[:, None], 16, axis=1),
                               atol=1e-10)
    assert capgeom.integrate(b, fb) == pytest.approx(capgeom.integrate(a, fa), rel=1e-12)


def test_flux_divergence_consistent():
    errs = []
    for n in (64, 128):
        m = capgeom.build_mesh(2, PI3, capgeom.AXISYM, n, 1)
        f = 0.1 * np.cos(np.pi * m.theta / PI3)
        _, g = capgeom.grad(m, f)
        div = capgeom.divergence_normalized_gradient(m, f)
        errs.append(np.max(abs(div - capgeom.sigma_tilde_contraction(m, f) / np.sqrt(1 + g))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)


def test_pad_rejects_wrong_shape():
    m = capgeom.build_mesh(2, PI3, capgeom.AXISYM, 16, 1)
    with pytest.raises(ValueError):
        capgeom.pad(m, np.zeros(15))
