"""Low-rank state representation and the rank-manipulation kernels shared by
both low-rank transport solvers.

A factored intensity is ``psi(x, omega) = sum_ij X_i(x) S_ij W_j(omega)`` with
the spatial columns X orthonormal in the finite-element mass inner product and
the angular columns W orthonormal in the quadrature-weighted inner product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import angular
from .angular import AngularBasis, gram_schmidt
from .errors import ContractViolation, InterpolationError, SolverError

FOUR_PI = 4.0 * np.pi


def mass_inner(mass):
    """Inner product <u, v> = u^T M v for a scipy sparse (or dense) mass matrix."""
    return lambda u, v: float(u @ (mass @ v))


def spatial_monomials(coords, extent, count):
    """Deterministic spatial padding candidates: scaled monomials in (x, y)."""
    x0, y0, lx, ly = extent
    xh = 2.0 * (coords[:, 0] - x0) / lx - 1.0
    yh = 2.0 * (coords[:, 1] - y0) / ly - 1.0
    cands = []
    degree = 0
    while len(cands) < count:
        for kx in range(degree, -1, -1):
            ky = degree - kx
            cands.append(xh**kx * yh**ky)
        degree += 1
    return cands[:count]


@dataclass(eq=False)
class DlrState:
    """Rank-r factored intensity: X (n_dofs, r), S (r, r), W an AngularBasis."""

    X: np.ndarray
    S: np.ndarray
    W: AngularBasis

    @property
    def rank(self):
        return self.S.shape[0]

    def reconstruct(self, angle_indices=None):
        """Dense intensity (n_dofs, n_angles); optionally only some angles."""
        w = self.W.values if angle_indices is None else self.W.values[angle_indices]
        return self.X @ (self.S @ w.T)

    def scalar_flux(self):
        """Quadrature scalar flux per dof, integral of psi over angle."""
        return self.X @ (self.S @ self.W.beta)

    def angular_coefficients(self):
        """L factor sampled at the quadrature nodes: L[d, i] = L_i(omega_d)."""
        return self.W.values @ self.S.T

    def check(self, mass, quad, tol=1e-10):
        """Raise unless both factors are orthonormal in their inner products."""
        gx = self.X.T @ (mass @ self.X)
        rx = float(np.abs(gx - np.eye(self.rank)).max())
        rw = self.W.orthonormality_residual(quad)
        if rx > tol or rw > tol:
            raise ContractViolation(
                f"factor orthonormality violated: spatial {rx:.2e}, angular {rw:.2e}"
            )
        if self.W.pinned:
            pin = np.abs(self.W.values[:, 0] - 1.0 / np.sqrt(FOUR_PI)).max()
            if pin > tol:
                raise ContractViolation(f"constant column drifted by {pin:.2e}")
        return rx, rw


def svd_truncate(Y, Z, rank, mass, quad):
    """Compress a two-factor sum ``psi = Y @ Z.T`` to a rank-``rank`` DlrState.

    Y columns live on the spatial dofs, Z columns at the quadrature nodes.
    Returns ``(state, discarded)`` where ``discarded`` is the l2 norm of the
    dropped singular values of the weighted-norm core matrix; by the
    Eckart-Young theorem it equals the weighted reconstruction error.

    The blocks may hold dependent columns, or more columns than one of the
    spaces has dimensions (a doubled rank can exceed the angle count); the
    requested rank itself must fit both spaces.
    """
    Y = np.asarray(Y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if Y.shape[1] != Z.shape[1]:
        raise ContractViolation(f"factor column counts differ: {Y.shape} vs {Z.shape}")
    if rank > Y.shape[1]:
        raise ContractViolation(f"cannot truncate {Y.shape[1]} columns up to rank {rank}")
    if rank > min(Y.shape[0], Z.shape[0]):
        raise ContractViolation(
            f"rank {rank} does not fit the {Y.shape[0]}-dof by {Z.shape[0]}-angle spaces"
        )
    dot_x = mass_inner(mass)
    dot_w = lambda a, b: float(np.sum(quad.weights * a * b))
    # the doubled-rank blocks may be dependent or wider than a space dimension;
    # surplus columns stay zero here and carry zero rows through the core
    qy, ry, _ = gram_schmidt(Y, dot_x, completion=(), strict=False)
    qz, rz, _ = gram_schmidt(Z, dot_w, completion=(), strict=False)
    core = ry @ rz.T
    u, s, vt = np.linalg.svd(core)
    # directions with zero singular value may land on unfilled frame columns;
    # re-orthonormalizing at the target width pads them with fresh directions
    gx, rx, _ = gram_schmidt(qy @ u[:, :rank], dot_x)
    gw, rw, _ = gram_schmidt(
        qz @ vt[:rank].T, dot_w, angular.angular_monomials(quad, rank + 8)
    )
    S = rx @ (s[:rank, None] * rw.T)
    discarded = float(np.linalg.norm(s[rank:]))
    basis = AngularBasis(values=gw).bind(quad)
    return DlrState(X=gx, S=S, W=basis), discarded


def state_from_dense(psi, rank, mass, quad):
    """Best rank-``rank`` factored state of a dense intensity in weighted norms.

    Desk-scale helper (dense Cholesky of the mass matrix); used by tests and
    the dense cross-checks, not by the time steppers.
    """
    psi = np.asarray(psi, dtype=float)
    m = mass.toarray() if hasattr(mass, "toarray") else np.asarray(mass)
    if max(psi.shape) > 20000 or m.shape[0] > 2000:
        raise ContractViolation("state_from_dense is capped at desk scale")
    lf = np.linalg.cholesky(m)
    a = lf.T @ psi * np.sqrt(quad.weights)[None, :]
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    X = scipy.linalg.solve_triangular(lf.T, u[:, :rank], lower=False)
    W = (vt[:rank] / np.sqrt(quad.weights)[None, :]).T
    basis = AngularBasis(values=W).bind(quad)
    return DlrState(X=X, S=np.diag(s[:rank]), W=basis)


@dataclass(eq=False)
class DeimSelection:
    """Greedy angular interpolation points for a rank-r basis."""

    indices: np.ndarray  # (r,) quadrature node ids, in selection order
    w_hat: np.ndarray  # (r, r) basis sampled at the points, W_hat[i, j] = W_j(omega_i)
    lu: tuple
    cond: float

    @property
    def rank(self):
        return self.indices.size

    def interpolation_coefficients(self, values):
        """Solve W_hat a = values (values given at the selected nodes)."""
        return scipy.linalg.lu_solve(self.lu, values)

    def closure_weights(self, beta):
        """c with c^T values = beta^T W_hat^{-1} values: reconstructs the
        angular integral of the interpolant from point samples."""
        return scipy.linalg.lu_solve(self.lu, beta, trans=1)


def deim_select(basis_values):
    """Greedy interpolation-point selection over quadrature nodes.

    The first point maximizes |column 0|; each later point maximizes the
    absolute residual of the next column after interpolating it through the
    points already chosen (a square solve, not least squares).  Ties take the
    lowest node index; weights are not involved.
    """
    w = np.asarray(basis_values, dtype=float)
    if w.ndim != 2:
        raise ContractViolation("deim_select expects an (n_angles, rank) array")
    n, r = w.shape
    if r > n:
        raise ContractViolation(f"rank {r} exceeds the {n} available nodes")
    floor = 1e-14 * max(1.0, float(np.abs(w).max()))
    indices = []
    for j in range(r):
        if j == 0:
            res = w[:, 0]
        else:
            sub = w[np.ix_(indices, range(j))]
            coeff = np.linalg.solve(sub, w[indices, j])
            res = w[:, j] - w[:, :j] @ coeff
        p = int(np.argmax(np.abs(res)))
        if np.abs(res[p]) <= floor:
            raise InterpolationError(
                "interpolation residual vanished; basis is rank deficient", column=j
            )
        if p in indices:
            raise InterpolationError(
                "duplicate interpolation point; basis is rank deficient", column=j
            )
        indices.append(p)
    idx = np.asarray(indices, dtype=int)
    w_hat = w[idx, :]
    lu = scipy.linalg.lu_factor(w_hat)
    cond = float(np.linalg.cond(w_hat))
    return DeimSelection(indices=idx, w_hat=w_hat, lu=lu, cond=cond)


@dataclass(eq=False)
class CollocationFlux:
    """Intensity columns at the selected angles plus the closure data."""

    values: np.ndarray  # (n_dofs, r)
    selection: DeimSelection
    beta: np.ndarray  # angular integrals of the basis columns

    def scalar_flux(self):
        return self.values @ self.selection.closure_weights(self.beta)


def evaluate_rows(state, selection):
    """Sample the factored intensity at the selected angles, column per angle."""
    w_sel = state.W.values[selection.indices]
    return CollocationFlux(
        values=state.X @ (state.S @ w_sel.T),
        selection=selection,
        beta=state.W.beta.copy(),
    )


def reconstruct_scalar_flux(flux):
    """Scalar flux of the angular interpolant through the selected angles."""
    return flux.scalar_flux()


def solve_row_system(B_all, Ms_hat, Q_all, weights):
    """Direct solve of the angle-coupled reduced row system.

    Per quadrature node d the system is ``B_d L_d = Ms_hat @ Lbar / (4 pi) +
    Q_d`` with ``Lbar = sum_d w_d L_d``.  Eliminating Lbar first gives one
    dense r-by-r solve plus an independent back-substitution per node.
    Returns ``(L, Lbar)`` with L of shape (n_angles, r).
    """
    B_all = np.asarray(B_all, dtype=float)
    Q_all = np.asarray(Q_all, dtype=float)
    n, r, _ = B_all.shape
    try:
        Binv = np.linalg.inv(B_all)
    except np.linalg.LinAlgError:
        for d in range(n):
            if not np.isfinite(np.linalg.cond(B_all[d])) or np.linalg.cond(B_all[d]) > 1e15:
                raise SolverError(f"singular reduced transport operator at node {d}")
        raise
    cbar = np.einsum("d,dij->ij", weights, Binv)
    zeta = np.einsum("d,dij,dj->i", weights, Binv, Q_all)
    lhs = np.eye(r) - cbar @ Ms_hat / FOUR_PI
    lbar = np.linalg.solve(lhs, zeta)
    rhs = Q_all + (Ms_hat @ lbar)[None, :] / FOUR_PI
    L = np.einsum("dij,dj->di", Binv, rhs)
    return L, lbar
