import math

import numpy as np
import pytest

from imcfcone import _accel, capgeom, kernels, warpfn

from conftest import cosine_state, random_smooth_state


def test_backend_env(monkeypatch):
    monkeypatch.setenv("IMCF_BACKEND", "numpy")
    assert _accel.requested_backend() == "numpy"
    monkeypatch.setenv("IMCF_BACKEND", " NUMBA ")
    assert _accel.requested_backend() == ("numba" if _accel.HAVE_NUMBA else "numpy")
    monkeypatch.setenv("IMCF_BACKEND", "cuda")
    with pytest.raises(ValueError):
        _accel.requested_backend()


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("filtered", [True, False])
def test_speed_parity(seed, filtered):
    st = random_smooth_state(seed)
    params = st.warp.kernel_params()
    a = kernels.speed(st.offset, st.dev, st.mesh, params, "numba", filtered)
    b = kernels.speed(st.offset, st.dev, st.mesh, params, "numpy", filtered)
    assert a[2] == b[2] == kernels.OK
    assert a[0] == pytest.approx(b[0], rel=1e-15)
    np.testing.assert_allclose(a[1], b[1], rtol=0, atol=1e-14)
    assert a[5] == pytest.approx(b[5], rel=1e-12)


def test_warp_row_matches_vectorised():
    w = warpfn.hyperboloidal(a=0.8)
    params = w.kernel_params()
    d = np.linspace(-0.3, 0.4, 11)
    dl, rd = np.empty(11), np.empty(11)
    st, _ = kernels._warp_row(params, 0.9, d, dl, rd)
    dl2, rd2, st2 = kernels.warp_vec(params, 0.9, d)
    assert st == st2 == kernels.OK
    np.testing.assert_allclose(dl, dl2, rtol=1e-14)
    np.testing.assert_allclose(rd, rd2, rtol=1e-12, atol=1e-16)
    np.testing.assert_allclose(rd, w.recip_dlambda_diff(0.9, d), rtol=1e-12, atol=1e-16)


def test_domain_exit_status():
    w = warpfn.hyperboloidal(a=1.0, base_point=1.0)
    # phi far below -shift puts u below r_min
    params = w.kernel_params()
    dl, rd = np.empty(3), np.empty(3)
    st, idx = kernels._warp_row(params, -5.0, np.zeros(3), dl, rd)
    assert st == kernels.DOMAIN_EXIT


@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_singular_status(backend):
    mesh = capgeom.build_mesh(2, math.pi / 3, capgeom.AXISYM, 64, 1)
    w = warpfn.euclidean()
    u = 1.0 + 0.45 * np.cos(6 * np.pi * mesh.theta / mesh.theta0)
    phi = w.phi_of_u(u)
    res = kernels.speed(phi[-1], phi - phi[-1], mesh, w.kernel_params(), backend)
    assert res[2] == kernels.SINGULAR and res[4] <= 0


@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_advance_budget(backend):
    st = cosine_state(warpfn.euclidean(), n_theta=32)
    dev = st.dev.copy()
    log = np.zeros(4)
    out = kernels.advance(st.offset, dev, 0.0, 1.0, st.mesh, st.warp.kernel_params(), kernels.RK4,
                          0.8, 1e-2, 100, log, 0, backend=backend)
    assert out[2] == kernels.BUDGET and out[5] == 4


def test_advance_parity_full2d():
    mesh = capgeom.build_mesh(2, math.pi / 3, capgeom.FULL2D, 24, 16)
    theta, psi = mesh.coords()
    w = warpfn.hyperboloidal()
    u = 1 + 0.03 * np.sin(theta) ** 2 * np.cos(psi) * 0.5 * (1 + np.cos(np.pi * theta / mesh.theta0))
    phi = w.phi_of_u(u)
    res = {}
    for backend in ("numba", "numpy"):
        dev = phi - phi[-1, 0]
        log = np.zeros(10000)
        out = kernels.advance(phi[-1, 0], dev, 0.0, 0.2, mesh, w.kernel_params(), kernels.RK4, 0.8,
                              1e-2, 10000, log, 0, backend=backend)
        assert out[2] == kernels.OK and out[1] == 0.2
        res[backend] = (out[0], dev, log[:out[5]])
    assert res["numba"][0] == pytest.approx(res["numpy"][0], rel=1e-14)
    np.testing.assert_allclose(res["numba"][1], res["numpy"][1], atol=1e-14)
    np.testing.assert_allclose(res["numba"][2], res["numpy"][2], rtol=1e-12)
