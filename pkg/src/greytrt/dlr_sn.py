"""Rank-preserving low-rank transport step built on angle-collocated sweeps.

One implicit step advances the factored intensity X S W^T in three moves:

1. pick interpolation angles for the current angular basis and run the
   ordinary sweep-plus-acceleration source iteration restricted to those
   angles, with the scalar flux closed through the interpolatory closure
   weights instead of quadrature weights;
2. re-orthonormalize the swept columns to get the new spatial basis, then
   solve the reduced angle-coupled row system (the transport operator tested
   against the new spatial basis) directly at the same angle nodes;
3. extend the nodal rows back to every quadrature angle through the old
   basis and re-orthonormalize, which hands back an updated factorization of
   the same rank.

The reduced row operator projects the full streaming-plus-face discrete
operator, so when the true step solution lies in the span of the new spatial
basis the reduced solve reproduces it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lowrank import (
    DlrState,
    deim_select,
    evaluate_rows,
    mass_inner,
    solve_row_system,
    spatial_monomials,
)
from .angular import gram_schmidt, orthonormalize
from .mesh import dof_coordinates
from .transport_sn import assemble_operators, source_iteration


@dataclass(eq=False)
class CollocationStepInfo:
    iterations: int
    interpolation_condition: float
    angle_indices: np.ndarray
    phi: np.ndarray  # per-dof scalar flux backing the temperature update
    spatial_deficiency: int
    angular_deficiency: int


def project_initial(state, x_new, mass):
    """Old angular factors re-expressed against a new spatial basis.

    Row d holds the coefficients of the start-of-step intensity at quadrature
    node d: ``out[d, j] = sum_i L0_i(omega_d) <X0_i, x_new_j>_M``.  Equals the
    old factors exactly when ``x_new`` spans the old columns, and zero when it
    is M-orthogonal to them.
    """
    return state.W.values @ (state.S.T @ (state.X.T @ (mass @ x_new)))


def project_row_operators(ops, x):
    """Reduced r-by-r images of the streaming, penalty and mass operators."""
    return {
        "px": x.T @ (ops.Px @ x),
        "py": x.T @ (ops.Py @ x),
        "jx": x.T @ (ops.Jx @ x),
        "jy": x.T @ (ops.Jy @ x),
        "mt": x.T @ ops.mass_apply(x, coeff=ops.step.sigma_t),
        "ms": x.T @ ops.mass_apply(x, coeff=ops.step.sigma_s),
        "q": x.T @ ops.source_vector(ops.step.q),
    }


def row_matrices(proj, omegas):
    """Per-angle reduced operators B_d from the projected pieces."""
    om = np.asarray(omegas, dtype=float)
    return (
        om[:, 0, None, None] * proj["px"]
        + om[:, 1, None, None] * proj["py"]
        + np.abs(om[:, 0])[:, None, None] * proj["jx"]
        + np.abs(om[:, 1])[:, None, None] * proj["jy"]
        + proj["mt"][None, :, :]
    )


def step_collocation(
    grid,
    step,
    quad,
    state,
    *,
    si_tol=1e-8,
    si_max_iters=200,
    use_dsa=True,
    dsa_penalty="simplified",
    threads=0,
    check_state=True,
):
    """Advance one linearized step; returns (new_state, CollocationStepInfo)."""
    selection = deim_select(state.W.values)
    closure = selection.closure_weights(state.W.beta)
    omegas_sel = quad.omegas[selection.indices]

    penalty_closure = (omegas_sel, closure) if dsa_penalty == "collocation" else None
    ops = assemble_operators(grid, step, dsa_penalty=dsa_penalty, penalty_closure=penalty_closure)
    mass = ops.mass_matrix()
    if check_state:
        state.check(mass, quad)

    flux0 = evaluate_rows(state, selection)
    result = source_iteration(
        ops,
        omegas_sel,
        closure,
        psi_time=flux0.values,
        use_dsa=use_dsa,
        tol=si_tol,
        max_iters=si_max_iters,
        phi_start=state.scalar_flux(),
        threads=threads,
    )

    # new spatial basis from the converged swept columns
    completion = spatial_monomials(dof_coordinates(grid), grid.extent, state.rank + 8)
    x_new, _, deficient_x = gram_schmidt(result.psi, mass_inner(mass), completion)

    # reduced row solve against the new basis, angle coupling eliminated exactly
    proj = project_row_operators(ops, x_new)
    b_all = row_matrices(proj, omegas_sel)
    l_time = project_initial(state, x_new, mass)[selection.indices]
    q_all = proj["q"][None, :] + step.inv_cdt * l_time
    l_nodes, l_bar = solve_row_system(b_all, proj["ms"], q_all, closure)

    # nodal rows -> functions of angle through the old basis, then orthonormalize
    gamma = selection.interpolation_coefficients(l_nodes)
    l_full = state.W.values @ gamma
    basis_new, r_ang, deficient_w = orthonormalize(l_full, quad)

    new_state = DlrState(X=x_new, S=r_ang.T.copy(), W=basis_new)
    if check_state:
        new_state.check(mass, quad)

    info = CollocationStepInfo(
        iterations=result.iterations,
        interpolation_condition=selection.cond,
        angle_indices=selection.indices.copy(),
        phi=x_new @ l_bar,
        spatial_deficiency=len(deficient_x),
        angular_deficiency=len(deficient_w),
    )
    return new_state, info
