"""Sparse operators and functionals of the discrete mixed problem.

Builds the alpha-weighted stress mass matrix (alpha = A^-1), the
divergence coupling and the displacement mass matrix, plus the load
vectors and the edge/cell quantities consumed by the estimators.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import quadrature
from .spaces import MixedSpace, StressField, _eval_scalar


class AssemblyError(Exception):
    pass


class CoefficientNotSPDError(AssemblyError):
    """Coefficient matrix A has a non-positive eigenvalue somewhere."""


class Coefficient:
    """Symmetric uniformly positive definite coefficient A(x).

    `entries` is either None (identity), a constant (2, 2) array, or a
    callable (x, y) -> array of shape x.shape + (2, 2).
    """

    def __init__(self, entries=None):
        if callable(entries):
            self.kind = "callable"
            self.fn = entries
        elif entries is None:
            self.kind = "identity"
        else:
            A = np.asarray(entries, dtype=float)
            if A.shape != (2, 2) or not np.allclose(A, A.T):
                raise AssemblyError("constant coefficient must be symmetric 2x2")
            self.kind = "constant"
            self.A = A

    @property
    def is_constant(self):
        return self.kind in ("identity", "constant")

    def a_at(self, pts):
        """A at points (..., 2) -> (..., 2, 2)."""
        shape = pts.shape[:-1]
        if self.kind == "identity":
            return np.broadcast_to(np.eye(2), shape + (2, 2)).copy()
        if self.kind == "constant":
            return np.broadcast_to(self.A, shape + (2, 2)).copy()
        A = np.asarray(self.fn(pts[..., 0], pts[..., 1]), dtype=float)
        return np.broadcast_to(A, shape + (2, 2)).copy()

    def alpha_at(self, pts):
        """alpha = A^-1 at points, with an SPD check."""
        A = self.a_at(pts)
        tr = A[..., 0, 0] + A[..., 1, 1]
        det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
        disc = np.sqrt(np.maximum((tr / 2) ** 2 - det, 0.0))
        if np.any(tr / 2 - disc <= 0.0):
            raise CoefficientNotSPDError("A has a non-positive eigenvalue")
        return np.linalg.inv(A)


def as_coefficient(A):
    return A if isinstance(A, Coefficient) else Coefficient(A)


@dataclass
class SaddleSystem:
    """Sparse matrices of the discrete mixed forms.

    M_sigma : (alpha Sigma, v), n_stress x n_stress, SPD
    B : (div Sigma, w), n_disp x n_stress
    M_u : (U, w), n_disp x n_disp, cell-block-diagonal SPD
    """

    space: MixedSpace
    coefficient: Coefficient
    M_sigma: sp.csr_matrix
    B: sp.csr_matrix
    M_u: sp.csr_matrix
    _factor_cache: dict = field(default_factory=dict, repr=False)


def _scatter(rows, cols, vals, shape):
    m = sp.coo_matrix(
        (vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape
    ).tocsr()
    m.sum_duplicates()
    return m


def assemble_system(space, A=None):
    """Assemble M_sigma, B and M_u for coefficient A (identity default)."""
    coeff = as_coefficient(A)
    w = space.quad_weights  # (T, nq)
    sb = space.stress_at_quad  # (T, nq, nl, 2)
    db = space.div_at_quad  # (T, nq, nl)
    ub = space.disp_at_quad  # (T, nq, nd)
    alpha = coeff.alpha_at(space.quad_points)  # (T, nq, 2, 2)

    asb = np.einsum("tqcd,tqkd->tqkc", alpha, sb)
    Ms_loc = np.einsum("tq,tqic,tqjc->tij", w, asb, sb)
    B_loc = np.einsum("tq,tqa,tqj->taj", w, ub, db)
    Mu_loc = np.einsum("tq,tqa,tqb->tab", w, ub, ub)

    sd = space.cell_stress_dofs
    dd = space.cell_disp_dofs
    n_s, n_d = space.n_stress, space.n_disp
    M_sigma = _scatter(
        np.repeat(sd, sd.shape[1], axis=1),
        np.tile(sd, (1, sd.shape[1])),
        Ms_loc,
        (n_s, n_s),
    )
    B = _scatter(
        np.repeat(dd, sd.shape[1], axis=1),
        np.tile(sd, (1, dd.shape[1])),
        B_loc,
        (n_d, n_s),
    )
    M_u = _scatter(
        np.repeat(dd, dd.shape[1], axis=1),
        np.tile(dd, (1, dd.shape[1])),
        Mu_loc,
        (n_d, n_d),
    )
    return SaddleSystem(
        space=space, coefficient=coeff, M_sigma=M_sigma, B=B, M_u=M_u
    )


def assemble_load(space, f, t=None):
    """Load vector (f(., t), w_h) over the displacement basis."""
    pts = space.quad_points
    if t is None:
        vals = _eval_scalar(f, pts)
    else:
        vals = np.broadcast_to(
            np.asarray(f(pts[..., 0], pts[..., 1], t), dtype=float),
            pts.shape[:-1],
        )
    loc = np.einsum("tq,tq,tqa->ta", space.quad_weights, vals, space.disp_at_quad)
    out = np.zeros(space.n_disp)
    np.add.at(out, space.cell_disp_dofs, loc)
    return out


def disp_l2_norm(space, vals):
    """L2 norm of cellwise values sampled at the default quadrature."""
    return float(np.sqrt(np.einsum("tq,tq->", space.quad_weights, vals ** 2)))


def disp_l2_norm_cellwise(space, vals):
    return np.sqrt(np.einsum("tq,tq->t", space.quad_weights, vals ** 2))


# ----------------------------------------------------------------------
# estimator ingredients
# ----------------------------------------------------------------------

def _alpha_sigma_tangential(space, coeff, coefficients, edge_pts, edge_cells_side):
    """(alpha sigma_h) . t from one side of each selected edge."""
    mesh = space.mesh
    basis = space.eval_stress_basis(edge_cells_side, edge_pts)
    loc = coefficients[space.cell_stress_dofs[edge_cells_side]]
    sig = np.einsum("eqkc,ek->eqc", basis, loc)
    alpha = coeff.alpha_at(edge_pts)
    return np.einsum("eqcd,eqd->eqc", alpha, sig)


def edge_tangential_jump(field: StressField, A=None):
    """Per-edge integrals int_E |J(alpha sigma_h . t)|^2 ds.

    Boundary edges get 0; the jump uses the canonical edge orientation.
    """
    space = field.space
    mesh = space.mesh
    coeff = as_coefficient(A)
    out = np.zeros(mesh.num_edges)
    interior = np.flatnonzero(~mesh.boundary_edge)
    if len(interior) == 0:
        return out
    tq, tw = quadrature.segment_rule(space.edge_degree)
    pts, w = quadrature.map_to_edges(mesh, tq, tw, interior)
    tangents = mesh.edge_tangents()[interior]
    left = mesh.edge_cells[interior, 0]
    right = mesh.edge_cells[interior, 1]
    gl = _alpha_sigma_tangential(space, coeff, field.coefficients, pts, left)
    gr = _alpha_sigma_tangential(space, coeff, field.coefficients, pts, right)
    jump = np.einsum("eqc,ec->eq", gl - gr, tangents)
    out[interior] = np.einsum("eq,eq->e", w, jump ** 2)
    return out


def curl_elementwise(field: StressField, A=None, fd_step_scale=1e-6):
    """Per-cell integrals int_K |curl_h(alpha sigma_h)|^2.

    curl g = d1 g2 - d2 g1 with g = alpha sigma_h.  Stress derivatives
    are analytic; for non-constant A the derivative of alpha is taken by
    central finite differences of A with step fd_step_scale * h_K.
    """
    space = field.space
    coeff = as_coefficient(A)
    pts = space.quad_points
    cells = np.arange(space.mesh.num_cells)
    loc = field.local_coefficients()
    sig = field.at_quad()  # (T, nq, 2)
    grad_basis = space.eval_stress_grad_basis(cells, pts)
    dsig = np.einsum("tqkcd,tk->tqcd", grad_basis, loc)  # (T, nq, 2, 2)
    alpha = coeff.alpha_at(pts)
    # alpha * dsig part: curl contribution with alpha frozen
    adx = np.einsum("tqcd,tqd->tqc", alpha, dsig[..., 0])
    ady = np.einsum("tqcd,tqd->tqc", alpha, dsig[..., 1])
    curl = adx[..., 1] - ady[..., 0]
    if not coeff.is_constant:
        h = space.mesh.h_cell[:, None, None]
        for d in range(2):
            step = np.zeros((1, 1, 2))
            step[..., d] = 1.0
            delta = fd_step_scale * h * step
            ap = coeff.alpha_at(pts + delta)
            am = coeff.alpha_at(pts - delta)
            dalpha = (ap - am) / (2.0 * fd_step_scale * h[..., None])
            term = np.einsum("tqcd,tqd->tqc", dalpha, sig)
            if d == 0:
                curl = curl + term[..., 1]
            else:
                curl = curl - term[..., 0]
    return np.einsum("tq,tq->t", space.quad_weights, curl ** 2)
