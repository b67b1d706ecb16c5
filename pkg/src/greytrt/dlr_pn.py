"""Low-rank transport step built on even-parity solves over nodal elements.

Instead of sweeping angles, this stepper advances the factored intensity with
three projected solves on the continuous bilinear space:

* K step: split the current angular basis into even and odd halves under
  omega -> -omega, re-orthonormalize each half into reduced channel bases,
  and solve the second-order even-parity system (and its odd counterpart)
  for the channel fields.  Both systems are symmetric positive definite and
  solved matrix-free with Jacobi-preconditioned conjugate gradients.
* L step: fix the old spatial basis and solve the small angle-coupled row
  system at every quadrature node (volume streaming only, closure through
  the quadrature weights, angle coupling eliminated exactly).
* S step: re-solve the coupling matrix against the unchanged bases (one
  dense rank^2 x rank^2 Galerkin system).

All three solves start from the same old state; their updates are combined
at doubled rank as K W^T + X L^T - X S W^T, compressed back to the target
rank by a weighted SVD, and the constant angular mode is re-pinned as the
first basis column.  Pinning keeps the scattering closure a rank-one
coupling and makes the scalar flux of the even solve available directly
from channel zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .angular import (
    AngularBasis,
    constant_column,
    gram_schmidt,
    inner_product,
    parity_split,
)
from .errors import ContractViolation
from .lowrank import DlrState, solve_row_system, svd_truncate
from .mesh import EDGE_LOCALS, q1_reference
from .transport_sn import FOUR_PI, pcg

_INDEPENDENCE_TOL = 1e-8


# ---------------------------------------------------------------------------
# nodal (continuous) operators


@dataclass(eq=False)
class NodalOperators:
    """Per-step sparse operators on the continuous bilinear space."""

    grid: object
    step: object
    mass: sp.csr_matrix
    mass_t: sp.csr_matrix  # sigma_t weighted
    mass_s: sp.csr_matrix  # sigma_s weighted
    stiff: dict  # (a, b) -> (1/sigma_t)-weighted mixed stiffness
    dgrad: tuple  # k -> (1/sigma_t) * (d_k test, trial)
    sgrad: tuple  # k -> (sigma_s / (4 pi sigma_t)) * (d_k test, trial)
    conv: tuple  # k -> plain (test, d_k trial)
    bmass: tuple  # boundary mass on x walls, y walls
    load_q: np.ndarray  # emission load vector
    gload_q: tuple  # k -> (q / sigma_t) gradient loads


def assemble_nodal_operators(grid, step):
    if grid.flavor != "continuous":
        raise ContractViolation("even-parity solves need the continuous dof layout")
    for name in ("sigma_t", "sigma_s", "q"):
        if getattr(step, name).shape != (grid.n_cells,):
            raise ContractViolation(f"step field {name} must be per-cell")

    ref = q1_reference()
    dx, dy = grid.dx, grid.dy
    n = grid.n_dofs
    dofs = grid.cell_dofs
    nc = grid.n_cells
    rows = np.broadcast_to(dofs[:, :, None], (nc, 4, 4)).ravel()
    cols = np.broadcast_to(dofs[:, None, :], (nc, 4, 4)).ravel()

    def build(block, coeff=None):
        data = np.broadcast_to(block, (nc, 4, 4))
        if coeff is not None:
            data = data * coeff[:, None, None]
        return sp.csr_matrix((data.ravel(), (rows, cols)), shape=(n, n))

    inv_st = 1.0 / step.sigma_t
    mass_block = dx * dy * ref["mass"]
    s_blocks = {
        (0, 0): (dy / dx) * ref["stiff"][0][0],
        (0, 1): ref["stiff"][0][1],
        (1, 0): ref["stiff"][1][0],
        (1, 1): (dx / dy) * ref["stiff"][1][1],
    }
    g_blocks = (dy * ref["grad"][0], dx * ref["grad"][1])  # (d_k test, trial)

    mass = build(mass_block)
    mass_t = build(mass_block, step.sigma_t)
    mass_s = build(mass_block, step.sigma_s)
    stiff = {ab: build(b, inv_st) for ab, b in s_blocks.items()}
    dgrad = tuple(build(g, inv_st) for g in g_blocks)
    sgrad = tuple(build(g, step.sigma_s * inv_st / FOUR_PI) for g in g_blocks)
    conv = tuple(build(g.T) for g in g_blocks)

    load_q = np.zeros(n)
    np.add.at(load_q, dofs, step.q[:, None] * mass_block.sum(axis=1)[None, :])
    gload_q = []
    for g in g_blocks:
        vec = np.zeros(n)
        np.add.at(vec, dofs, (step.q * inv_st)[:, None] * g.sum(axis=1)[None, :])
        gload_q.append(vec)

    bx = sp.lil_matrix((n, n))
    by = sp.lil_matrix((n, n))
    for f in range(grid.bface_cell.size):
        wall = grid.bface_wall[f]
        ids = dofs[grid.bface_cell[f], list(EDGE_LOCALS[wall])]
        e2 = grid.bface_length[f] * ref["edge"]
        target = bx if wall in ("left", "right") else by
        target[np.ix_(ids, ids)] += e2

    return NodalOperators(
        grid=grid,
        step=step,
        mass=mass,
        mass_t=mass_t,
        mass_s=mass_s,
        stiff=stiff,
        dgrad=dgrad,
        sgrad=sgrad,
        conv=conv,
        bmass=(bx.tocsr(), by.tocsr()),
        load_q=load_q,
        gload_q=tuple(gload_q),
    )


# ---------------------------------------------------------------------------
# reduced parity bases


@dataclass(eq=False)
class ParityBases:
    """Orthonormal even/odd channel bases with maps back to the full basis."""

    even: np.ndarray  # (n_angles, re), column 0 is the constant
    odd: np.ndarray  # (n_angles, ro)
    ce: np.ndarray  # (re, r) even part of every basis column in channels
    co: np.ndarray  # (ro, r)
    beta_e: np.ndarray  # (re,) angular integrals of the even channels
    second: dict  # (a, b) -> per-parity second moments <omega_a omega_b e e>
    bwall: dict  # axis -> per-parity <|omega_axis| e e> boundary couplings
    mixed: tuple  # k -> <omega_k E O> cross tensors (re, ro)


def _independent_columns(cols, quad, head=None):
    """Orthonormal spanning set of the given columns (dependent ones dropped)."""
    kept = [] if head is None else [head]
    for j in range(cols.shape[1]):
        v = cols[:, j]
        norm = np.sqrt(inner_product(v, v, quad))
        if norm <= 1e-14:
            continue
        v = v / norm
        for _ in range(2):
            for q in kept:
                v = v - inner_product(q, v, quad) * q
        resid = np.sqrt(inner_product(v, v, quad))
        if resid > _INDEPENDENCE_TOL:
            kept.append(v / resid)
    if not kept:
        return np.zeros((cols.shape[0], 0))
    return np.column_stack(kept)


def build_parity_bases(basis, quad):
    if not basis.pinned:
        raise ContractViolation(
            "even-parity stepping needs the constant mode pinned as basis column 0"
        )
    we, wo = parity_split(basis.values, quad)
    even = _independent_columns(we[:, 1:], quad, head=constant_column(quad))
    odd = _independent_columns(wo, quad)

    w = quad.weights
    om = quad.omegas
    second = {}
    bwall = {}
    for vals, tag in ((even, "e"), (odd, "o")):
        for a in (0, 1):
            for b in (0, 1):
                second[(a, b, tag)] = np.einsum(
                    "d,de,df->ef", w * om[:, a] * om[:, b], vals, vals
                )
        bwall[("x", tag)] = np.einsum("d,de,df->ef", w * np.abs(om[:, 0]), vals, vals)
        bwall[("y", tag)] = np.einsum("d,de,df->ef", w * np.abs(om[:, 1]), vals, vals)
    mixed = tuple(
        np.einsum("d,de,do->eo", w * om[:, k], even, odd) for k in (0, 1)
    )

    return ParityBases(
        even=even,
        odd=odd,
        ce=inner_product(even, basis.values, quad),
        co=inner_product(odd, basis.values, quad),
        beta_e=even.T @ w,
        second=second,
        bwall=bwall,
        mixed=mixed,
    )


# ---------------------------------------------------------------------------
# K step: even-parity and odd-parity channel solves


def _parity_matvec(nops, second, bx, by, scatter_beta):
    """Matrix-free application of one parity system to (n, channels) fields."""

    def apply(u):
        out = nops.mass_t @ u
        for (a, b), mat in nops.stiff.items():
            out += (mat @ u) @ second[(a, b)].T
        out += (nops.bmass[0] @ u) @ bx.T
        out += (nops.bmass[1] @ u) @ by.T
        if scatter_beta is not None:
            iso = nops.mass_s @ (u @ scatter_beta)
            out -= np.outer(iso, scatter_beta) / FOUR_PI
        return out

    return apply


def _parity_diagonal(nops, second, bx, by, scatter_beta):
    n = nops.grid.n_dofs
    nch = bx.shape[0]
    diag = np.tile(nops.mass_t.diagonal()[:, None], (1, nch))
    for (a, b), mat in nops.stiff.items():
        diag += np.outer(mat.diagonal(), np.diagonal(second[(a, b)]))
    diag += np.outer(nops.bmass[0].diagonal(), np.diagonal(bx))
    diag += np.outer(nops.bmass[1].diagonal(), np.diagonal(by))
    if scatter_beta is not None:
        diag -= np.outer(nops.mass_s.diagonal(), scatter_beta**2) / FOUR_PI
    if np.any(diag <= 0):
        raise ContractViolation("parity system lost positivity on the diagonal")
    return diag.reshape(n * nch)


def _solve_parity(nops, second, bx, by, scatter_beta, rhs, tol, label):
    nch = rhs.shape[1]
    if nch == 0:
        return rhs.copy(), 0
    apply2d = _parity_matvec(nops, second, bx, by, scatter_beta)
    n = nops.grid.n_dofs

    def matvec(flat):
        return apply2d(flat.reshape(n, nch)).ravel()

    diag = _parity_diagonal(nops, second, bx, by, scatter_beta)
    sol, iters = pcg(matvec, rhs.ravel(), diag, tol=tol, label=label)
    return sol.reshape(n, nch), iters


@dataclass(eq=False)
class KStepResult:
    k_new: np.ndarray  # (n_dofs, r) coefficients on the old angular basis
    even_fields: np.ndarray  # (n_dofs, re) channel solutions
    odd_fields: np.ndarray
    phi: np.ndarray  # scalar flux of the even solve
    iterations: tuple


def k_step(nops, bases, state, quad, cg_tol=1e-10):
    step = nops.step
    sec = bases.second
    p_plus = state.X @ (state.S @ bases.ce.T)
    p_minus = state.X @ (state.S @ bases.co.T)

    sec_e = {(a, b): sec[(a, b, "e")] for a in (0, 1) for b in (0, 1)}
    sec_o = {(a, b): sec[(a, b, "o")] for a in (0, 1) for b in (0, 1)}

    # even right side: isotropic emission, even time term, odd-source gradient
    rhs_e = step.inv_cdt * (nops.mass @ p_plus)
    rhs_e += np.outer(nops.load_q, bases.beta_e)
    for k in (0, 1):
        rhs_e += step.inv_cdt * (nops.dgrad[k] @ (p_minus @ bases.mixed[k].T))
    even, it_e = _solve_parity(
        nops, sec_e, bases.bwall[("x", "e")], bases.bwall[("y", "e")],
        bases.beta_e, rhs_e, cg_tol, "even parity",
    )
    phi = even @ bases.beta_e

    # odd right side: odd time term plus the gradient of the even source,
    # scattering entering through the even solve's scalar flux
    ro = bases.odd.shape[1]
    if ro:
        rhs_o = step.inv_cdt * (nops.mass @ p_minus)
        for k in (0, 1):
            tb = bases.mixed[k].T @ bases.beta_e  # channel weights of isotropic pieces
            rhs_o += np.outer(nops.gload_q[k] + nops.sgrad[k] @ phi, tb)
            rhs_o += step.inv_cdt * (nops.dgrad[k] @ (p_plus @ bases.mixed[k]))
        odd, it_o = _solve_parity(
            nops, sec_o, bases.bwall[("x", "o")], bases.bwall[("y", "o")],
            None, rhs_o, cg_tol, "odd parity",
        )
    else:
        odd, it_o = np.zeros((nops.grid.n_dofs, 0)), 0

    k_new = even @ bases.ce + odd @ bases.co
    return KStepResult(
        k_new=k_new, even_fields=even, odd_fields=odd, phi=phi, iterations=(it_e, it_o)
    )


# ---------------------------------------------------------------------------
# L step and S step


def l_step(nops, state, quad):
    """Row solve at every quadrature node against the old spatial basis."""
    x = state.X
    bx = x.T @ (nops.conv[0] @ x)
    by = x.T @ (nops.conv[1] @ x)
    mt = x.T @ (nops.mass_t @ x)
    ms = x.T @ (nops.mass_s @ x)
    q_hat = x.T @ nops.load_q
    om = quad.omegas
    b_all = om[:, 0, None, None] * bx + om[:, 1, None, None] * by + mt[None, :, :]
    l_time = state.angular_coefficients()
    q_all = q_hat[None, :] + nops.step.inv_cdt * l_time
    return solve_row_system(b_all, ms, q_all, quad.weights)


S_DENSE_CAP = 64  # dense rank^2 x rank^2 factorizations stay desk sized


def s_step(nops, state, quad):
    """Coupling-matrix solve against the current bases; one dense system."""
    r = state.rank
    if r > S_DENSE_CAP:
        raise ContractViolation(f"coefficient solve capped at rank {S_DENSE_CAP}, got {r}")
    x = state.X
    bx = x.T @ (nops.conv[0] @ x)
    by = x.T @ (nops.conv[1] @ x)
    mt = x.T @ (nops.mass_t @ x)
    ms = x.T @ (nops.mass_s @ x)
    q_hat = x.T @ nops.load_q
    w = state.W.values
    beta = state.W.beta
    om = quad.omegas
    kap = [
        np.einsum("d,dj,dk->jk", quad.weights * om[:, k], w, w) for k in (0, 1)
    ]
    a = (
        np.kron(bx, kap[0])
        + np.kron(by, kap[1])
        + np.kron(mt, np.eye(r))
        - np.kron(ms, np.outer(beta, beta)) / FOUR_PI
    )
    rhs = nops.step.inv_cdt * state.S + np.outer(q_hat, beta)
    return np.linalg.solve(a, rhs.ravel()).reshape(r, r)


def repin_constant(basis, quad):
    """Rotate an angular basis so column 0 is exactly the constant.

    Returns ``(new_basis, t)`` with ``basis.values ~ new_basis.values @ t``;
    exact when the constant already lies in the span, otherwise the least
    aligned direction is displaced.
    """
    cols = np.column_stack([constant_column(quad), basis.values])
    dot = lambda a, b: float(np.sum(quad.weights * a * b))
    # deficient columns are dropped below, so none need completing (at full
    # rank the prepended constant makes completion impossible anyway)
    q, _, deficient = gram_schmidt(cols, dot, completion=(), strict=False)
    keep = [0]
    for j in range(1, cols.shape[1]):
        if j not in deficient and len(keep) < basis.rank:
            keep.append(j)
    vals = q[:, keep]
    vals[:, 0] = constant_column(quad)  # undo normalization roundoff on the pin
    new_basis = AngularBasis(values=vals, pinned=True).bind(quad)
    t = inner_product(vals, basis.values, quad)
    return new_basis, t


def wall_outflow(grid, psi, quad):
    """Boundary leakage of a nodal intensity under the weak vacuum condition.

    The even-parity wall term charges the whole |omega . n| moment, not a
    one-sided upwind flux: the weak vacuum condition leaves a nonzero
    incoming trace and bills it against the walls.  This is the rate the
    discrete system actually loses, so the linearized energy balance closes
    against it.  The moment is even under omega -> -omega, so the full
    reconstructed intensity can be used directly.
    """
    edge = q1_reference()["edge"]
    moment = {
        "x": psi @ (quad.weights * np.abs(quad.omegas[:, 0])),
        "y": psi @ (quad.weights * np.abs(quad.omegas[:, 1])),
    }
    total = 0.0
    for f in range(grid.bface_cell.size):
        wall = grid.bface_wall[f]
        ids = grid.cell_dofs[grid.bface_cell[f], list(EDGE_LOCALS[wall])]
        trace = moment["x" if wall in ("left", "right") else "y"][ids]
        total += grid.bface_length[f] * float(edge.sum(axis=0) @ trace)
    return total


# ---------------------------------------------------------------------------
# full step


@dataclass(eq=False)
class EvenParityStepInfo:
    phi: np.ndarray  # nodal scalar flux backing the temperature update
    iterations: tuple  # conjugate-gradient counts (even, odd)
    discarded: float  # truncation error of the doubled-rank combination
    parity_ranks: tuple


def step_even_parity(grid, step, quad, state, *, rank=None, cg_tol=1e-10, check_state=True):
    """Advance one linearized step; returns (new_state, EvenParityStepInfo)."""
    nops = assemble_nodal_operators(grid, step)
    if check_state:
        state.check(nops.mass, quad)
    bases = build_parity_bases(state.W, quad)

    kres = k_step(nops, bases, state, quad, cg_tol=cg_tol)
    l_all, _ = l_step(nops, state, quad)
    s_new = s_step(nops, state, quad)

    # combine the three one-sided updates at doubled rank:
    # K W0^T + X0 L^T - X0 S_new W0^T, collected into two factor blocks
    y = np.column_stack([kres.k_new - state.X @ s_new, state.X])
    z = np.column_stack([state.W.values, l_all])
    target = rank if rank is not None else state.rank
    trunc, discarded = svd_truncate(y, z, target, nops.mass, quad)

    w_new, rot = repin_constant(trunc.W, quad)
    new_state = DlrState(X=trunc.X, S=trunc.S @ rot.T, W=w_new)
    if check_state:
        new_state.check(nops.mass, quad)

    info = EvenParityStepInfo(
        phi=kres.phi,
        iterations=kres.iterations,
        discarded=discarded,
        parity_ranks=(bases.even.shape[1], bases.odd.shape[1]),
    )
    return new_state, info
