"""Angular quadrature and orthonormal angular bases.

The quadrature is a product set: Gauss-Legendre in the polar cosine times a
uniform, half-offset azimuthal grid.  The half offset keeps nodes away from
the coordinate axes where possible and, with an even azimuthal count, makes
the set exactly closed under ``omega -> -omega``.  Weights sum to 4*pi.

Basis vectors are stored as columns sampled at the quadrature nodes and are
orthonormal in the quadrature-weighted inner product
``<u, v> = sum_d w_d u_d v_d``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractViolation

FOUR_PI = 4.0 * np.pi

# Relative norm drop below which a Gram-Schmidt column counts as linearly
# dependent and is replaced by a completion vector.
DEFICIENCY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class QuadratureSet:
    omegas: np.ndarray  # (n, 3) unit directions
    weights: np.ndarray  # (n,)
    antipode: np.ndarray  # (n,) index of the node at -omega
    n_polar: int
    n_azimuthal: int

    @property
    def n_angles(self):
        return self.omegas.shape[0]

    def integrate(self, values):
        """Quadrature integral over the sphere along the last node axis."""
        return np.asarray(values) @ self.weights


def build_quadrature(n_polar, n_azimuthal):
    """Product quadrature with ``n_polar * n_azimuthal`` nodes.

    ``n_azimuthal`` must be even so every node has its antipode in the set.
    For exact integration of all degree-2 polynomials in omega use
    ``n_polar >= 2`` and ``n_azimuthal >= 4``.
    """
    if n_polar < 1 or n_azimuthal < 1:
        raise ConfigurationError("quadrature orders must be positive")
    if n_azimuthal % 2 != 0:
        raise ConfigurationError(
            f"n_azimuthal must be even for antipodal closure, got {n_azimuthal}"
        )
    mu, wmu = np.polynomial.legendre.leggauss(n_polar)
    phi = 2.0 * np.pi * (np.arange(n_azimuthal) + 0.5) / n_azimuthal
    wphi = 2.0 * np.pi / n_azimuthal

    omegas = np.empty((n_polar * n_azimuthal, 3))
    weights = np.empty(n_polar * n_azimuthal)
    for p in range(n_polar):
        s = np.sqrt(1.0 - mu[p] ** 2)
        for a in range(n_azimuthal):
            d = p * n_azimuthal + a
            omegas[d] = (s * np.cos(phi[a]), s * np.sin(phi[a]), mu[p])
            weights[d] = wmu[p] * wphi

    # -omega maps (mu, phi) to (-mu, phi + pi); both stay on the node lattice.
    antipode = np.empty(n_polar * n_azimuthal, dtype=int)
    for p in range(n_polar):
        for a in range(n_azimuthal):
            antipode[p * n_azimuthal + a] = (n_polar - 1 - p) * n_azimuthal + (
                (a + n_azimuthal // 2) % n_azimuthal
            )

    for arr in (omegas, weights, antipode):
        arr.setflags(write=False)
    return QuadratureSet(
        omegas=omegas,
        weights=weights,
        antipode=antipode,
        n_polar=n_polar,
        n_azimuthal=n_azimuthal,
    )


def inner_product(u, v, quad):
    """Weighted angular inner product; columns pair with columns."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape[0] != quad.n_angles or v.shape[0] != quad.n_angles:
        raise ContractViolation(
            f"node-vector lengths {u.shape[0]}/{v.shape[0]} do not match the "
            f"{quad.n_angles}-angle quadrature"
        )
    if u.ndim == 1 and v.ndim == 1:
        return float(np.sum(quad.weights * u * v))
    return (u * quad.weights[:, None]).T @ v if u.ndim > 1 else (u * quad.weights) @ v


def gram_schmidt(columns, dot, completion=None, strict=True):
    """Stabilized (twice-projected) Gram-Schmidt in an arbitrary inner product.

    Returns ``(Q, R, deficient)`` with ``columns = Q @ R`` (R upper triangular)
    and ``deficient`` the list of input columns that were linearly dependent.
    Dependent columns keep a zero diagonal in R; the corresponding Q column is
    filled from ``completion`` (default: coordinate directions in index order)
    so Q always has a full orthonormal column set.  With ``strict=False`` a
    column that cannot be completed (candidates exhausted, e.g. more columns
    than the space has dimensions) is left zero instead of raising.
    """
    cols = np.array(columns, dtype=float)
    n, m = cols.shape
    q = np.zeros((n, m))
    r = np.zeros((m, m))
    deficient = []

    def orthogonalize(vec, k):
        for _ in range(2):  # second pass mops up cancellation
            coeff = np.array([dot(q[:, i], vec) for i in range(k)])
            vec = vec - q[:, :k] @ coeff
            yield coeff, vec

    completion_iter = iter(completion) if completion is not None else iter(np.eye(n).T)

    for k in range(m):
        vec = cols[:, k]
        orig = np.sqrt(max(dot(vec, vec), 0.0))
        total = np.zeros(k)
        for coeff, vec in orthogonalize(vec, k):
            total += coeff
        nrm = np.sqrt(max(dot(vec, vec), 0.0))
        r[:k, k] = total
        if nrm <= DEFICIENCY_TOL * max(orig, 1.0):
            deficient.append(k)
            r[k, k] = 0.0
            # deterministic completion: first candidate with substance left
            while True:
                try:
                    cand = np.asarray(next(completion_iter), dtype=float)
                except StopIteration:
                    if not strict:
                        break
                    raise ContractViolation(
                        "ran out of completion vectors during orthonormalization"
                    ) from None
                cnrm0 = np.sqrt(max(dot(cand, cand), 0.0))
                for _, cand in orthogonalize(cand, k):
                    pass
                cnrm = np.sqrt(max(dot(cand, cand), 0.0))
                if cnrm > np.sqrt(DEFICIENCY_TOL) * max(cnrm0, 1.0):
                    q[:, k] = cand / cnrm
                    break
        else:
            r[k, k] = nrm
            q[:, k] = vec / nrm
    return q, r, deficient


@dataclass(eq=False)
class AngularBasis:
    """Columns orthonormal in the weighted inner product.

    ``beta[j]`` is the quadrature integral of column j over the sphere.  When
    ``pinned`` the first column is exactly the constant 1/sqrt(4*pi), so
    ``beta = (sqrt(4*pi), 0, ..., 0)`` up to quadrature roundoff.
    """

    values: np.ndarray
    beta: np.ndarray | None = None
    pinned: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ContractViolation("angular basis must be a 2D (n_angles, rank) array")

    def bind(self, quad):
        self.beta = self.values.T @ quad.weights
        return self

    @property
    def rank(self):
        return self.values.shape[1]

    def orthonormality_residual(self, quad):
        g = inner_product(self.values, self.values, quad)
        return float(np.abs(g - np.eye(self.rank)).max())


def constant_column(quad):
    return np.full(quad.n_angles, 1.0 / np.sqrt(FOUR_PI))


def angular_monomials(quad, count):
    """Deterministic padding candidates: monomials in omega of rising degree.

    Monomials restricted to a product quadrature can saturate below the full
    node-space dimension, so coordinate directions are appended as a last
    resort; callers may therefore draw up to ``count + n_angles`` candidates.
    """
    ox, oy, oz = quad.omegas.T
    cands = [np.ones_like(ox)]
    degree = 1
    while len(cands) < count:
        for kx in range(degree, -1, -1):
            for ky in range(degree - kx, -1, -1):
                kz = degree - kx - ky
                cands.append(ox**kx * oy**ky * oz**kz)
        degree += 1
    return cands[:count] + list(np.eye(quad.n_angles))


def orthonormalize(columns, quad, pin_constant=False):
    """Orthonormalize columns in the weighted inner product.

    Returns ``(basis, R, deficient)`` with ``columns = basis.values @ R``.
    With ``pin_constant`` the constant 1/sqrt(4*pi) is prepended and the input
    columns follow it (R then refers to the input columns only).
    """
    cols = np.asarray(columns, dtype=float)
    if cols.shape[0] != quad.n_angles:
        raise ContractViolation(
            f"basis rows ({cols.shape[0]}) must match quadrature size ({quad.n_angles})"
        )
    dot = lambda a, b: float(np.sum(quad.weights * a * b))
    completion = angular_monomials(quad, cols.shape[1] + 8)
    if pin_constant:
        stacked = np.column_stack([constant_column(quad), cols])
        q, r, deficient = gram_schmidt(stacked, dot, completion)
        basis = AngularBasis(values=q, pinned=True).bind(quad)
        return basis, r[:, 1:], [d - 1 for d in deficient if d > 0]
    q, r, deficient = gram_schmidt(cols, dot, completion)
    basis = AngularBasis(values=q, pinned=False).bind(quad)
    return basis, r, deficient


def parity_split(values, quad):
    """Even/odd decomposition under ``omega -> -omega``; returns (even, odd)."""
    v = np.asarray(values, dtype=float)
    flipped = v[quad.antipode] if v.ndim == 1 else v[quad.antipode, :]
    return 0.5 * (v + flipped), 0.5 * (v - flipped)
