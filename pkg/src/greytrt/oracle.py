"""Desk-scale reference solves.

Everything here trades speed for directness: assemble the full coupled
system and hand it to a generic solver.  Tests use these to check the
sweep/iteration/low-rank fast paths on problems small enough that the
coupled solve is exact and cheap.  Hard size caps keep accidental use on
production grids from hanging the process.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ContractViolation

FOUR_PI = 4.0 * np.pi

MAX_COUPLED_UNKNOWNS = 20_000
MAX_DENSE_SIDE = 2_000


@dataclass(eq=False)
class DenseSystem:
    matrix: object  # sparse or dense square operator
    rhs: np.ndarray
    solution: np.ndarray

    def residual(self):
        r = self.matrix @ self.solution - self.rhs
        return float(np.linalg.norm(r)) / max(float(np.linalg.norm(self.rhs)), 1e-300)


def dense_transport_step(ops, omegas, closure, psi_time=None, extra_source=None):
    """Solve the scattering-coupled transport step over all given angles at once.

    The unknown stacks the per-angle dof vectors; scattering couples the
    blocks through the scalar-flux closure ``phi = psi @ closure``.  Returns
    (psi, phi, DenseSystem).
    """
    omegas = np.asarray(omegas, dtype=float)
    closure = np.asarray(closure, dtype=float)
    n_ang = omegas.shape[0]
    n = ops.grid.n_dofs
    if n * n_ang > MAX_COUPLED_UNKNOWNS:
        raise ContractViolation(
            f"coupled dense solve capped at {MAX_COUPLED_UNKNOWNS} unknowns, got {n * n_ang}"
        )

    removal = ops.removal_matrix()
    scatter = ops.mass_matrix(ops.step.sigma_s) / FOUR_PI
    blocks = [[None] * n_ang for _ in range(n_ang)]
    for d in range(n_ang):
        blocks[d][d] = ops.streaming_matrix(omegas[d]) + removal
        for dp in range(n_ang):
            add = -closure[dp] * scatter
            blocks[d][dp] = add if blocks[d][dp] is None else blocks[d][dp] + add
    a = sp.bmat(blocks, format="csc")

    rhs = np.tile(ops.source_vector(ops.step.q), (n_ang, 1)).T
    if psi_time is not None:
        rhs = rhs + ops.step.inv_cdt * ops.mass_apply(psi_time)
    if extra_source is not None:
        rhs = rhs + extra_source
    rhs_flat = rhs.T.ravel()

    sol = spla.spsolve(a, rhs_flat)
    psi = sol.reshape(n_ang, n).T
    return psi, psi @ closure, DenseSystem(matrix=a.tocsr(), rhs=rhs_flat, solution=sol)


def dense_row_system(b_all, ms_hat, q_all, weights):
    """Directly solve the closure-coupled row systems as one dense matrix.

    Reference route for the eliminated solve: unknown L stacks the per-angle
    coefficient rows, coupling enters as -(w_d'/4pi) * Ms_hat on every block
    column.  Returns (L, DenseSystem) with L of shape (n_angles, rank).
    """
    b_all = np.asarray(b_all, dtype=float)
    ms_hat = np.asarray(ms_hat, dtype=float)
    q_all = np.asarray(q_all, dtype=float)
    weights = np.asarray(weights, dtype=float)
    n_ang, r, _ = b_all.shape
    size = n_ang * r
    if size > MAX_DENSE_SIDE:
        raise ContractViolation(f"dense row system capped at side {MAX_DENSE_SIDE}, got {size}")
    a = np.zeros((size, size))
    for d in range(n_ang):
        a[d * r : (d + 1) * r, d * r : (d + 1) * r] = b_all[d]
        for dp in range(n_ang):
            a[d * r : (d + 1) * r, dp * r : (dp + 1) * r] -= (weights[dp] / FOUR_PI) * ms_hat
    rhs = q_all.ravel()
    sol = np.linalg.solve(a, rhs)
    return sol.reshape(n_ang, r), DenseSystem(matrix=a, rhs=rhs, solution=sol)


def dense_svd(matrix):
    """Plain dense SVD with the oracle's finiteness and size checks.

    Returns (u, s, vt) with singular values nonincreasing and nonnegative;
    raises if the reconstruction drifts beyond 1e-11 relative.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise ContractViolation("dense_svd expects a matrix")
    if max(m.shape) > MAX_DENSE_SIDE:
        raise ContractViolation(f"dense svd capped at side {MAX_DENSE_SIDE}")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    err = np.abs((u * s) @ vt - m).max()
    if not np.isfinite(err) or err > 1e-11 * max(1.0, float(np.abs(m).max())):
        raise ContractViolation(f"svd reconstruction drifted by {err:.3e}")
    return u, s, vt


def dense_weighted_svd(snapshot, rank, mass, quad):
    """Best rank-r factorization in the mass x quadrature inner products.

    ``snapshot`` is the full (n_dofs, n_angles) matrix.  Returns
    (x, s, w, discarded) with orthonormal factors in the respective inner
    products and ``discarded`` the l2 norm of the dropped singular values.
    """
    snapshot = np.asarray(snapshot, dtype=float)
    if max(snapshot.shape) > MAX_DENSE_SIDE:
        raise ContractViolation(f"dense svd capped at side {MAX_DENSE_SIDE}")
    mass = sp.csr_matrix(mass)
    lm = sla.cholesky(mass.toarray(), lower=True)
    sqw = np.sqrt(quad.weights)
    core = lm.T @ snapshot * sqw[None, :]
    u, s, vt = np.linalg.svd(core, full_matrices=False)
    x = sla.solve_triangular(lm.T, u[:, :rank], lower=False)
    w = (vt[:rank] / sqw[None, :]).T
    discarded = float(np.linalg.norm(s[rank:]))
    return x, s[:rank].copy(), w, discarded
