"""Time and space reconstructions of the discrete solution.

Two devices live here.  The C1 time interpolant turns node values and
backward-difference rates into a piecewise-cubic function of t whose
second derivative on each interval is (1 + mu^n(t)) d2V^n with the
mean-zero linear weight mu^n.  The elliptic reconstruction solves, on an
enriched space (a uniformly refined mesh with the same RT index), the
stationary mixed problem whose mixed projection onto the run space is
the computed pair (U^n, Sigma^n).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import quadrature
from .assembly import assemble_system
from .mesh import refine_uniform
from .solver import SingularSystemError, TimeGrid, initial_acceleration, load_vector
from .spaces import MixedSpace


class ReconstructionError(Exception):
    pass


class GridMismatchError(ReconstructionError):
    pass


class OutOfDomainError(ReconstructionError):
    pass


def mu(grid: TimeGrid, n, t):
    """The interval weight mu^n(t) = -6 k_n^-1 (t - t_{n-1/2})."""
    if not 1 <= n <= grid.num_steps:
        raise OutOfDomainError("interval index {} out of range".format(n))
    k = grid.steps[n - 1]
    t_mid = 0.5 * (grid.nodes[n - 1] + grid.nodes[n])
    return -6.0 / k * (np.asarray(t) - t_mid)


@dataclass(frozen=True)
class C1Interpolant:
    """Piecewise cubic V(t) with V(t_n) = V^n and V_t(t_n) = dV^n.

    values, rates and seconds are (N+1, m) arrays of coefficient vectors;
    seconds[n] = (rates[n] - rates[n-1]) / k_n for n >= 1 (row 0 unused).
    """

    grid: TimeGrid
    values: np.ndarray
    rates: np.ndarray
    seconds: np.ndarray


def c1_build(grid, node_values, initial_rate):
    """Build the C1 interpolant from node values and the initial rate.

    Rates at n >= 1 are the backward differences (V^n - V^{n-1}) / k_n.
    """
    V = np.atleast_2d(np.asarray(node_values, dtype=float))
    if len(V) != grid.num_steps + 1:
        raise GridMismatchError(
            "got {} value rows for {} time nodes".format(len(V), grid.num_steps + 1)
        )
    R = np.empty_like(V)
    R[0] = np.asarray(initial_rate, dtype=float)
    k = grid.steps
    R[1:] = np.diff(V, axis=0) / k[:, None]
    S = np.zeros_like(V)
    S[1:] = np.diff(R, axis=0) / k[:, None]
    return C1Interpolant(grid=grid, values=V, rates=R, seconds=S)


def c1_from_rates(grid, node_values, node_rates):
    """Interpolant from explicitly supplied rates (trajectory data)."""
    V = np.atleast_2d(np.asarray(node_values, dtype=float))
    R = np.atleast_2d(np.asarray(node_rates, dtype=float))
    if V.shape != R.shape or len(V) != grid.num_steps + 1:
        raise GridMismatchError("values and rates must both cover all nodes")
    S = np.zeros_like(V)
    S[1:] = np.diff(R, axis=0) / grid.steps[:, None]
    return C1Interpolant(grid=grid, values=V, rates=R, seconds=S)


def c1_eval(interp, t):
    """Evaluate (V, V_t, V_tt) at time t in [0, T]."""
    grid = interp.grid
    if t < 0.0 or t > grid.final_time + 1e-14:
        raise OutOfDomainError("time {} outside [0, T]".format(t))
    n = grid.interval_index(t)
    t0, t1 = grid.nodes[n - 1], grid.nodes[n]
    k = t1 - t0
    V, R, S = interp.values[n], interp.rates[n], interp.seconds[n]
    back, fwd = t - t0, t1 - t
    value = V + (t - t1) * R - (back * fwd ** 2 / k) * S
    rate = R - ((fwd ** 2 - 2.0 * back * fwd) / k) * S
    second = (1.0 + mu(grid, n, t)) * S
    return value, rate, second


# ----------------------------------------------------------------------
# enriched spaces and prolongation
# ----------------------------------------------------------------------

@dataclass
class EnrichedSpace:
    """A refined companion space with transfer operators from the run space.

    P_stress and P_disp carry coarse coefficient vectors to the enriched
    space exactly (the coarse spaces are subspaces of the enriched ones).
    """

    coarse: MixedSpace
    fine: MixedSpace
    levels: int
    parent_of_cell: np.ndarray = field(repr=False)
    P_stress: sp.csr_matrix = field(repr=False)
    P_disp: sp.csr_matrix = field(repr=False)


def _disp_prolongation(coarse, fine, parent):
    w = fine.quad_weights
    fb = fine.disp_at_quad  # (Tf, nq, nd)
    cb = coarse.eval_disp_basis(parent, fine.quad_points)
    M = np.einsum("tq,tqa,tqb->tab", w, fb, fb)
    R = np.einsum("tq,tqa,tqb->tab", w, fb, cb)
    P_loc = np.linalg.solve(M, R)  # (Tf, nd, nd)
    rows = np.repeat(fine.cell_disp_dofs, coarse.n_loc_disp, axis=1)
    cols = coarse.cell_disp_dofs[parent]
    cols = np.tile(cols, (1, fine.n_loc_disp))
    return sp.coo_matrix(
        (P_loc.ravel(), (rows.ravel(), cols.ravel())),
        shape=(fine.n_disp, coarse.n_disp),
    ).tocsr()


def _stress_prolongation(coarse, fine, parent):
    """Enriched-space degrees of freedom of every coarse stress basis function.

    Edge moments are taken from the side fine.edge_cells[:, 0]; coarse RT
    normal traces are single-valued across edges, so the side is
    immaterial.
    """
    l = coarse.rt_index
    mesh_f = fine.mesh
    eval_cells = parent[mesh_f.edge_cells[:, 0]]
    tq, tw = quadrature.segment_rule(2 * l + 2)
    pts, w = quadrature.map_to_edges(mesh_f, tq, tw)
    basis = coarse.eval_stress_basis(eval_cells, pts)  # (Ef, nq, nl, 2)
    vn = np.einsum("eqkc,ec->eqk", basis, mesh_f.edge_normals())

    rows_list, cols_list, vals_list = [], [], []
    cols_edge = coarse.cell_stress_dofs[eval_cells]  # (Ef, nl)
    for i in range(l + 1):
        q = np.ones_like(tq) if i == 0 else 2.0 * tq - 1.0
        moments = np.einsum("eq,eqk->ek", w * q[None, :], vn)
        rows = (l + 1) * np.arange(mesh_f.num_edges) + i
        rows_list.append(np.repeat(rows, coarse.n_loc_stress))
        cols_list.append(cols_edge.ravel())
        vals_list.append(moments.ravel())
    if l == 1:
        cells_f = np.arange(mesh_f.num_cells)
        basis = coarse.eval_stress_basis(parent, fine.quad_points)
        cellint = np.einsum("tq,tqkc->tkc", fine.quad_weights, basis)
        base = 2 * mesh_f.num_edges
        cols_cell = coarse.cell_stress_dofs[parent]
        for c in range(2):
            rows = base + 2 * cells_f + c
            rows_list.append(np.repeat(rows, coarse.n_loc_stress))
            cols_list.append(cols_cell.ravel())
            vals_list.append(cellint[:, :, c].ravel())
    P = sp.coo_matrix(
        (
            np.concatenate(vals_list),
            (np.concatenate(rows_list), np.concatenate(cols_list)),
        ),
        shape=(fine.n_stress, coarse.n_stress),
    ).tocsr()
    P.sum_duplicates()
    return P


def enrich_space(space, levels=1):
    """Refine the mesh `levels` times and build the transfer operators."""
    if levels < 0:
        raise ReconstructionError("enrichment level must be >= 0")
    mesh = space.mesh
    parent = np.arange(mesh.num_cells)
    for _ in range(levels):
        res = refine_uniform(mesh)
        mesh = res.child_mesh
        parent = parent[res.parent_of_cell]
    fine = MixedSpace(mesh, space.rt_index)
    return EnrichedSpace(
        coarse=space,
        fine=fine,
        levels=levels,
        parent_of_cell=parent,
        P_stress=_stress_prolongation(space, fine, parent),
        P_disp=_disp_prolongation(space, fine, parent),
    )


# ----------------------------------------------------------------------
# elliptic reconstruction
# ----------------------------------------------------------------------

def _elliptic_factor(fine_system):
    key = "elliptic"
    if key not in fine_system._factor_cache:
        K = sp.bmat(
            [
                [fine_system.M_sigma, -fine_system.B.T],
                [fine_system.B, None],
            ],
            format="csc",
        )
        try:
            fine_system._factor_cache[key] = spla.splu(K)
        except RuntimeError as exc:
            raise SingularSystemError(str(exc)) from exc
    return fine_system._factor_cache[key]


def reconstruct_elliptic(fine_system, rhs_disp):
    """Solve the enriched mixed Poisson problem.

    Finds (sigma_t, u_t) with (alpha sigma_t, v) - (u_t, div v) = 0 and
    (div sigma_t, w) = (rhs_disp, w) for all enriched test functions;
    `rhs_disp` is already a load vector over the enriched displacement
    basis.  Returns (u_t, sigma_t) coefficient vectors.
    """
    lu = _elliptic_factor(fine_system)
    n_s = fine_system.space.n_stress
    sol = lu.solve(np.concatenate([np.zeros(n_s), rhs_disp]))
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError("reconstruction solve produced non-finite values")
    return sol[n_s:], sol[:n_s]


@dataclass
class EllipticReconstruction:
    """Elliptic reconstructions of every node of a trajectory.

    All coefficient arrays live on the enriched space.  u_tilde and
    sigma_tilde are the reconstructions; U_fine and Sigma_fine are the
    exact transfers of the discrete states.  c1_u and c1_sigma are the
    C1-in-time interpolants of the reconstruction node data.
    """

    enriched: EnrichedSpace
    fine_system: object
    grid: TimeGrid
    u_tilde: np.ndarray
    sigma_tilde: np.ndarray
    U_fine: np.ndarray
    Sigma_fine: np.ndarray
    c1_u: C1Interpolant
    c1_sigma: C1Interpolant


def reconstruct_trajectory(traj, enriched=None, levels=1):
    """Reconstruct (u_t^n, sigma_t^n) at every node of `traj`.

    The right-hand side at node n >= 1 is f_bar^n - d2U^n transferred to
    the enriched space; at n = 0 the discrete initial acceleration
    stands in for the undefined d2U^0.  The initial reconstruction rates
    are one-sided differences of the node reconstructions.
    """
    space = traj.space
    if enriched is None:
        enriched = enrich_space(space, levels)
    fine = enriched.fine
    fine_system = assemble_system(fine, traj.system.coefficient)

    N = traj.grid.num_steps
    u_t = np.zeros((N + 1, fine.n_disp))
    s_t = np.zeros((N + 1, fine.n_stress))
    a0 = initial_acceleration(traj)
    for n in range(N + 1):
        dt2 = enriched.P_disp @ (a0 if n == 0 else traj.dt2U(n))
        if traj.f is None:
            load = np.zeros(fine.n_disp)
        elif n == 0:
            load = load_vector(fine_system, traj.f, 0.0, 0.0, "pointwise")
        else:
            load = load_vector(
                fine_system,
                traj.f,
                traj.grid.nodes[n - 1],
                traj.grid.nodes[n],
                traj.forcing_mode,
            )
        rhs = load - fine_system.M_u @ dt2
        u_t[n], s_t[n] = reconstruct_elliptic(fine_system, rhs)

    k1 = traj.grid.steps[0]
    c1_u = c1_build(traj.grid, u_t, (u_t[1] - u_t[0]) / k1)
    c1_sigma = c1_build(traj.grid, s_t, (s_t[1] - s_t[0]) / k1)
    return EllipticReconstruction(
        enriched=enriched,
        fine_system=fine_system,
        grid=traj.grid,
        u_tilde=u_t,
        sigma_tilde=s_t,
        U_fine=traj.U @ enriched.P_disp.T,
        Sigma_fine=traj.Sigma @ enriched.P_stress.T,
        c1_u=c1_u,
        c1_sigma=c1_sigma,
    )


def galerkin_orthogonality(recon, n):
    """Residuals of the projection property against the run-space basis.

    Returns (res1, res2): the maxima over coarse test functions of
    |(alpha(sigma_t - Sigma), v_h) - (u_t - U, div v_h)| and
    |(div(sigma_t - Sigma), w_h)|.  Both vanish (to solver tolerance)
    because the run spaces are subspaces of the enriched ones.
    """
    e = recon.enriched
    fs = recon.fine_system
    ds = recon.sigma_tilde[n] - recon.Sigma_fine[n]
    du = recon.u_tilde[n] - recon.U_fine[n]
    res1 = e.P_stress.T @ (fs.M_sigma @ ds - fs.B.T @ du)
    res2 = e.P_disp.T @ (fs.B @ ds)
    return float(np.abs(res1).max()), float(np.abs(res2).max())


def enriched_mixed_residual(recon, n):
    """Max defect of (alpha sigma_t, v) - (u_t, div v) = 0 on the fine basis.

    This is the discrete shadow of alpha sigma_t = -grad u_t.
    """
    fs = recon.fine_system
    r = fs.M_sigma @ recon.sigma_tilde[n] - fs.B.T @ recon.u_tilde[n]
    return float(np.abs(r).max())
