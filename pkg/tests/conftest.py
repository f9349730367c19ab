import math

import numpy as np
import pytest

from imcfcone import capgeom, graphsurf, warpfn


@pytest.fixture
def euclid():
    return warpfn.euclidean()


@pytest.fixture
def hyper():
    return warpfn.hyperboloidal(a=1.0)


def cosine_state(warp, theta0=math.pi / 3, n_theta=128, amp=0.05, r0=1.0, mode=capgeom.AXISYM,
                 n_psi=1, dim_n=2):
    mesh = capgeom.build_mesh(dim_n, theta0, mode, n_theta, n_psi)
    theta, _ = mesh.coords()
    return graphsurf.GraphState.from_u(mesh, warp, r0 + amp * np.cos(np.pi * theta / theta0))


def random_smooth_state(seed):
    """Radial data plus a few random smooth modes, axisym or full2d, over a random warp.

    Draws are repeated until the mean curvature is positive everywhere.
    """
    rng = np.random.default_rng(seed)
    while True:
        st = _draw_state(rng)
        if np.all(graphsurf.mean_curvature(st) > 0):
            return st


def _draw_state(rng):
    full = bool(rng.integers(2))
    theta0 = float(rng.uniform(0.4, math.pi / 2))
    warp = warpfn.euclidean() if rng.integers(2) else warpfn.hyperboloidal(a=float(rng.uniform(0.5, 2)))
    if full:
        mesh = capgeom.build_mesh(2, theta0, capgeom.FULL2D, 24, 16)
    else:
        mesh = capgeom.build_mesh(int(rng.integers(2, 5)), theta0, capgeom.AXISYM, 48, 1)
    theta, psi = mesh.coords()
    x = np.pi * theta / theta0
    r0 = float(rng.uniform(0.5, 3.0))
    u = r0 * np.ones(mesh.shape)
    for k in range(1, 4):
        u = u + r0 * float(rng.uniform(-0.04, 0.04)) * np.cos(k * x)
    if full:
        for k in (1, 2):
            u = u + r0 * float(rng.uniform(-0.03, 0.03)) * np.sin(theta) ** 2 * np.cos(k * psi + rng.uniform(0, 6))
    return graphsurf.GraphState.from_u(mesh, warp, u)
