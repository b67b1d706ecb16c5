"""Shared builders for the test suite."""

import numpy as np

from greytrt.angular import gram_schmidt, orthonormalize
from greytrt.driver import assemble_mass
from greytrt.lowrank import DlrState, mass_inner
from greytrt.physics import PhysicsConstants, linearize


def cell_step(grid, sigma_a, dt=0.1, T0=0.1, rho_cv=1.0, constants=None):
    """Uniform-material linearized step with per-cell coefficient arrays."""
    n = grid.n_cells
    constants = constants if constants is not None else PhysicsConstants()
    return linearize(
        np.full(n, float(T0)),
        np.full(n, float(sigma_a)),
        np.full(n, float(rho_cv)),
        float(dt),
        constants,
    )


def random_spatial_basis(grid, mass, r, rng):
    cols = rng.standard_normal((grid.n_dofs, r))
    q, _, deficient = gram_schmidt(cols, mass_inner(mass))
    assert not deficient
    return q


def random_angular_basis(quad, r, rng, pinned=False):
    k = r - 1 if pinned else r
    cols = rng.standard_normal((quad.n_angles, k))
    basis, _, deficient = orthonormalize(cols, quad, pin_constant=pinned)
    assert not deficient
    return basis


def random_state(grid, quad, r, rng, mass=None, pinned=False, scale=1.0):
    """Random factored intensity satisfying both orthonormality invariants."""
    mass = assemble_mass(grid) if mass is None else mass
    x = random_spatial_basis(grid, mass, r, rng)
    w = random_angular_basis(quad, r, rng, pinned=pinned)
    s = scale * rng.standard_normal((r, r))
    return DlrState(X=x, S=s, W=w)


def rel_l2(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    return float(np.linalg.norm(a - b)) / max(float(np.linalg.norm(b)), 1e-300)
