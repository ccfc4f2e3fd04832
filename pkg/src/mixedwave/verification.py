"""Manufactured solutions, true-error norms, studies and dense oracles.

Problems are registered as closed-form sympy expressions; the stress
sigma = -A grad u and the forcing f = u_tt + div sigma are derived
symbolically, so the strong equation holds by construction and is
re-checked numerically at registration.  Convergence studies couple the
step size to the mesh (spatial) or fix the mesh and halve the step
against a fine reference (temporal).
"""

import os
from dataclasses import dataclass, field

import numpy as np
import sympy as sym

from . import estimators as est
from . import reconstruction as rec
from . import solver
from .assembly import Coefficient, assemble_load, assemble_system
from .mesh import unit_square_mesh
from .spaces import MixedSpace


class VerificationError(Exception):
    pass


class SelfCheckError(VerificationError):
    """Manufactured closed forms do not satisfy the strong equation."""


_X, _Y, _T = sym.symbols("x y t", real=True)


def _lambdify(expr):
    if expr == 0:
        return None
    return sym.lambdify((_X, _Y, _T), expr, modules="numpy")


def _wrap_scalar(fn):
    if fn is None:
        return None

    def wrapped(x, y, t):
        return np.broadcast_to(np.asarray(fn(x, y, t), dtype=float), np.shape(x))

    return wrapped


@dataclass
class ManufacturedProblem:
    """Closed-form exact solution of u_tt - div(A grad u) = f.

    All callables take (x, y, t) arrays; sigma returns shape
    x.shape + (2,) and A is a Coefficient.  f is None when the forcing
    vanishes identically.
    """

    name: str
    A: Coefficient
    u: object
    u_t: object
    u_tt: object
    sigma: object
    div_sigma: object
    f: object
    final_time: float = 0.5

    def u0(self, x, y):
        return self.u(x, y, 0.0)

    def u1(self, x, y):
        return self.u_t(x, y, 0.0)

    def self_check(self, samples=100, tol=1e-10, seed=7):
        """Residual of the strong equation at random space-time points."""
        rng = np.random.default_rng(seed)
        x = rng.uniform(0.0, 1.0, samples)
        y = rng.uniform(0.0, 1.0, samples)
        t = rng.uniform(0.0, self.final_time, samples)
        resid = self.u_tt(x, y, t) + self.div_sigma(x, y, t)
        if self.f is not None:
            resid = resid - self.f(x, y, t)
        worst = float(np.abs(resid).max())
        if worst > tol:
            raise SelfCheckError(
                "strong-equation residual {} exceeds {}".format(worst, tol)
            )
        return worst


def manufactured(name, u_expr, A_entries=None, final_time=0.5):
    """Register a problem from sympy expressions in (x, y, t).

    A_entries is a 2x2 nested list of sympy expressions (identity when
    None); sigma and f are derived symbolically and the result is
    self-checked at 100 random samples.
    """
    if A_entries is None:
        A_mat = sym.eye(2)
        coeff = Coefficient()
    else:
        A_mat = sym.Matrix(A_entries)
        entries = [[_lambdify(A_mat[i, j]) for j in range(2)] for i in range(2)]

        def A_fn(x, y, _e=entries):
            shape = np.shape(x)
            out = np.zeros(shape + (2, 2))
            for i in range(2):
                for j in range(2):
                    fn = _e[i][j]
                    if fn is not None:
                        out[..., i, j] = fn(x, y, 0.0)
            return out

        coeff = Coefficient(A_fn)

    grad_u = sym.Matrix([sym.diff(u_expr, _X), sym.diff(u_expr, _Y)])
    sigma_vec = -A_mat * grad_u
    div_sigma = sym.diff(sigma_vec[0], _X) + sym.diff(sigma_vec[1], _Y)
    u_tt = sym.diff(u_expr, _T, 2)
    f_expr = sym.simplify(u_tt + div_sigma)

    sx, sy = _lambdify(sigma_vec[0]), _lambdify(sigma_vec[1])

    def sigma_fn(x, y, t):
        shape = np.shape(x)
        out = np.zeros(shape + (2,))
        if sx is not None:
            out[..., 0] = sx(x, y, t)
        if sy is not None:
            out[..., 1] = sy(x, y, t)
        return out

    prob = ManufacturedProblem(
        name=name,
        A=coeff,
        u=_wrap_scalar(_lambdify(u_expr)) or (lambda x, y, t: np.zeros(np.shape(x))),
        u_t=_wrap_scalar(_lambdify(sym.diff(u_expr, _T)))
        or (lambda x, y, t: np.zeros(np.shape(x))),
        u_tt=_wrap_scalar(_lambdify(u_tt)) or (lambda x, y, t: np.zeros(np.shape(x))),
        sigma=sigma_fn,
        div_sigma=_wrap_scalar(_lambdify(sym.simplify(div_sigma)))
        or (lambda x, y, t: np.zeros(np.shape(x))),
        f=_wrap_scalar(_lambdify(f_expr)),
        final_time=final_time,
    )
    prob.self_check()
    return prob


_MODE = sym.sin(sym.pi * _X) * sym.sin(sym.pi * _Y)


def standing_wave():
    """Exact eigenmode of the unit square: A = I and f = 0."""
    return manufactured(
        "standing-wave", _MODE * sym.cos(sym.sqrt(2) * sym.pi * _T)
    )


def variable_coefficient():
    """Same displacement with A = diag(1 + x/2, 1 + y/2); f derived."""
    A = [[1 + _X / 2, 0], [0, 1 + _Y / 2]]
    return manufactured(
        "variable-coefficient", _MODE * sym.cos(sym.sqrt(2) * sym.pi * _T), A
    )


def forced_oscillation():
    """Rapidly forced problem: u = sin(pi x) sin(pi y) cos(20 t), A = I."""
    return manufactured("forced-cos20", _MODE * sym.cos(20 * _T))


PROBLEMS = {
    "standing-wave": standing_wave,
    "variable-coefficient": variable_coefficient,
    "forced-cos20": forced_oscillation,
}


# ----------------------------------------------------------------------
# true errors
# ----------------------------------------------------------------------

def true_error(traj, problem):
    """Per-node errors ||U^n - u(t_n)|| and ||Sigma^n - sigma(t_n)||_{A^-1}."""
    space = traj.space
    pts = space.quad_points
    w = space.quad_weights
    alpha = problem.A.alpha_at(pts)
    cells = np.arange(space.mesh.num_cells)
    N = traj.grid.num_steps
    err_u = np.zeros(N + 1)
    err_s = np.zeros(N + 1)
    for m in range(N + 1):
        t = traj.grid.nodes[m]
        du = space.disp_field(traj.U[m]).at_quad() - problem.u(
            pts[..., 0], pts[..., 1], t
        )
        err_u[m] = np.sqrt(np.einsum("tq,tq->", w, du ** 2))
        ds = space.stress_field(traj.Sigma[m]).eval(cells, pts) - problem.sigma(
            pts[..., 0], pts[..., 1], t
        )
        err_s[m] = np.sqrt(np.einsum("tq,tqcd,tqc,tqd->", w, alpha, ds, ds))
    return err_u, err_s


def initial_errors(traj, problem):
    """(||e_u(0)||, ||e_{u,t}(0)||, ||e_sigma(0)||_{A^-1})."""
    space = traj.space
    pts = space.quad_points
    w = space.quad_weights
    du = space.disp_field(traj.U[0]).at_quad() - problem.u(pts[..., 0], pts[..., 1], 0.0)
    dut = space.disp_field(traj.dtU[0]).at_quad() - problem.u_t(
        pts[..., 0], pts[..., 1], 0.0
    )
    cells = np.arange(space.mesh.num_cells)
    ds = space.stress_field(traj.Sigma[0]).eval(cells, pts) - problem.sigma(
        pts[..., 0], pts[..., 1], 0.0
    )
    alpha = problem.A.alpha_at(pts)
    return (
        float(np.sqrt(np.einsum("tq,tq->", w, du ** 2))),
        float(np.sqrt(np.einsum("tq,tq->", w, dut ** 2))),
        float(np.sqrt(np.einsum("tq,tqcd,tqc,tqd->", w, alpha, ds, ds))),
    )


def solve_problem(problem, n, N, T=None, rt_index=0, forcing_mode="pointwise"):
    """Convenience wrapper: mesh, space, system, run."""
    T = problem.final_time if T is None else T
    space = MixedSpace(unit_square_mesh(n), rt_index)
    system = assemble_system(space, problem.A)
    return solver.run(
        system, problem.f, problem.u0, problem.u1, solver.uniform_grid(T, N),
        forcing_mode=forcing_mode,
    )


# ----------------------------------------------------------------------
# studies
# ----------------------------------------------------------------------

@dataclass
class StudyResult:
    """Per-level errors, bounds, effectivity and observed rates."""

    kind: str
    h: np.ndarray
    k: np.ndarray
    err_u: np.ndarray
    err_sigma: np.ndarray
    bound_u: np.ndarray
    bound_sigma: np.ndarray
    eff_u: np.ndarray
    eff_sigma: np.ndarray
    rate_u: np.ndarray
    rate_sigma: np.ndarray
    extras: dict = field(default_factory=dict)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(
                "level,h,k,err_u,err_sigma,bound_u,bound_sigma,"
                "eff_u,eff_sigma,rate_u,rate_sigma\n"
            )
            for i in range(len(self.h)):
                fh.write(
                    ",".join(
                        ["%d" % i]
                        + [
                            "%.17g" % v
                            for v in (
                                self.h[i],
                                self.k[i],
                                self.err_u[i],
                                self.err_sigma[i],
                                self.bound_u[i],
                                self.bound_sigma[i],
                                self.eff_u[i],
                                self.eff_sigma[i],
                                self.rate_u[i],
                                self.rate_sigma[i],
                            )
                        ]
                    )
                    + "\n"
                )


def _rates(h, e):
    r = np.zeros(len(e))
    for i in range(1, len(e)):
        r[i] = np.log(e[i - 1] / e[i]) / np.log(h[i - 1] / h[i])
    return r


def run_spatial_study(
    problem,
    mesh_levels=(8, 16, 32),
    rt_index=0,
    coupling=0.25,
    T=None,
    forcing_mode="pointwise",
    recovery_mode="cg-recovery",
    constants="unit",
):
    """Refine the mesh with k ~ coupling * h^2 so time error is subdominant.

    Returns a StudyResult with L-infinity-in-time node errors, composite
    bounds, effectivity and observed rates per level.  Under the
    calibrated constants policy the scales are fit on the coarsest level
    (effectivity 2) and frozen.
    """
    if len(mesh_levels) < 3:
        raise VerificationError("a study needs at least 3 levels")
    T = problem.final_time if T is None else T
    hs, ks = [], []
    eu, es = [], []
    bu_unit, bs_unit, bu_cal, bs_cal = [], [], [], []
    calibration = None
    for n in mesh_levels:
        h = np.sqrt(2.0) / n
        N = max(2, int(round(T / (coupling * h ** 2))))
        traj = solve_problem(problem, n, N, T, rt_index, forcing_mode)
        err_u, err_s = true_error(traj, problem)
        e0 = initial_errors(traj, problem)
        rep = est.compose_report(
            traj,
            A=problem.A,
            recovery_mode=recovery_mode,
            constants="unit",
            err_u=err_u,
            err_sigma=err_s,
            initial_errors=e0,
        )
        if calibration is None:
            calibration = est.calibrate_scales(rep)
        s_u, s_s = calibration
        hs.append(h)
        ks.append(T / N)
        mu, ms = int(np.argmax(err_u)), int(np.argmax(err_s))
        eu.append(err_u[mu])
        es.append(err_s[ms])
        bu_unit.append(rep.bound_u[mu])
        bs_unit.append(rep.bound_sigma[ms])
        # calibrated bounds are the unit sums rescaled; no recomputation
        bu_cal.append(rep.err_u0 + s_u * (rep.bound_u[mu] - rep.err_u0))
        off = rep.err_ut0 + rep.err_sigma0
        bs_cal.append(off + s_s * (rep.bound_sigma[ms] - off))
    hs, eu, es = np.array(hs), np.array(eu), np.array(es)
    bu_unit, bs_unit = np.array(bu_unit), np.array(bs_unit)
    bu_cal, bs_cal = np.array(bu_cal), np.array(bs_cal)
    bu, bs = (bu_cal, bs_cal) if constants == "calibrated" else (bu_unit, bs_unit)
    return StudyResult(
        kind="spatial",
        h=hs,
        k=np.array(ks),
        err_u=eu,
        err_sigma=es,
        bound_u=bu,
        bound_sigma=bs,
        eff_u=bu / eu,
        eff_sigma=bs / es,
        rate_u=_rates(hs, eu),
        rate_sigma=_rates(hs, es),
        extras={
            "constants": constants,
            "calibration": calibration,
            "eff_u_unit": bu_unit / eu,
            "eff_sigma_unit": bs_unit / es,
            "eff_u_calibrated": bu_cal / eu,
            "eff_sigma_calibrated": bs_cal / es,
        },
    )


def run_temporal_study(
    problem,
    mesh_n=32,
    steps=(20, 40, 80),
    ref_steps=640,
    rt_index=0,
    T=None,
    forcing_mode="pointwise",
):
    """Fixed mesh, halved steps, errors against a fine-step reference.

    The reference shares the mesh, so the measured error is purely
    temporal (self-convergence); every coarse node must be a reference
    node.  Also records the first-family k-weighted term (the k^2/2 and
    k^3/12 sums) per level for its k-exponent.
    """
    T = problem.final_time if T is None else T
    space = MixedSpace(unit_square_mesh(mesh_n), rt_index)
    system = assemble_system(space, problem.A)
    ref = solver.run(
        system, problem.f, problem.u0, problem.u1, solver.uniform_grid(T, ref_steps),
        forcing_mode=forcing_mode,
    )
    hs, ks, eu, es, e13s = [], [], [], [], []
    alpha_norm = lambda v: float(np.sqrt(v @ (system.M_sigma @ v)))
    for N in steps:
        if ref_steps % N != 0:
            raise VerificationError("reference steps must be a multiple of each N")
        stride = ref_steps // N
        traj = solver.run(
            system, problem.f, problem.u0, problem.u1, solver.uniform_grid(T, N),
            forcing_mode=forcing_mode,
        )
        du = traj.U - ref.U[::stride]
        ds = traj.Sigma - ref.Sigma[::stride]
        eu.append(
            max(float(np.sqrt(d @ (system.M_u @ d))) for d in du)
        )
        es.append(max(alpha_norm(d) for d in ds))
        te = est.temporal_estimate(traj)
        e13s.append(float(te.e13[-1]))
        hs.append(space.mesh.h_max)
        ks.append(T / N)
    ks, eu, es = np.array(ks), np.array(eu), np.array(es)
    zeros = np.zeros(len(ks))
    return StudyResult(
        kind="temporal",
        h=np.array(hs),
        k=ks,
        err_u=eu,
        err_sigma=es,
        bound_u=zeros.copy(),
        bound_sigma=zeros.copy(),
        eff_u=zeros.copy(),
        eff_sigma=zeros.copy(),
        rate_u=_rates(ks, eu),
        rate_sigma=_rates(ks, es),
        extras={"e13": np.array(e13s), "e13_rate": _rates(ks, np.array(e13s))},
    )


# ----------------------------------------------------------------------
# dense oracles and energy checks
# ----------------------------------------------------------------------

def oracle_small_instance(problem=None, steps=3, rt_index=0, k=0.1):
    """Dense re-solve of a tiny instance; returns worst relative gaps.

    Assembles the same saddle systems densely and solves with numpy; the
    sparse path must agree to 1e-11 relative in every degree of freedom,
    for both the time steps and the elliptic reconstruction.
    """
    from .mesh import two_triangle_square

    if problem is None:
        problem = standing_wave()
    space = MixedSpace(two_triangle_square(), rt_index)
    system = assemble_system(space, problem.A)
    grid = solver.uniform_grid(k * steps, steps)
    traj = solver.run(system, problem.f, problem.u0, problem.u1, grid)

    Ms = system.M_sigma.toarray()
    B = system.B.toarray()
    Mu = system.M_u.toarray()
    ns = space.n_stress
    worst = 0.0
    scale = max(np.abs(traj.U).max(), np.abs(traj.Sigma).max(), 1.0)

    Sigma0 = np.linalg.solve(Ms, B.T @ traj.U[0])
    worst = max(worst, np.abs(Sigma0 - traj.Sigma[0]).max() / scale)
    for n in range(1, steps + 1):
        kn = grid.steps[n - 1]
        K = np.block([[Ms, -B.T], [B, Mu / kn ** 2]])
        rhs = np.concatenate(
            [
                np.zeros(ns),
                traj.f_bar[n] + Mu @ (traj.U[n - 1] + kn * traj.dtU[n - 1]) / kn ** 2,
            ]
        )
        sol = np.linalg.solve(K, rhs)
        worst = max(worst, np.abs(sol[:ns] - traj.Sigma[n]).max() / scale)
        worst = max(worst, np.abs(sol[ns:] - traj.U[n]).max() / scale)

    # reconstruction: dense solve of the enriched mixed Poisson problem
    recon = rec.reconstruct_trajectory(traj, levels=1)
    fs = recon.fine_system
    Msf = fs.M_sigma.toarray()
    Bf = fs.B.toarray()
    nsf = recon.enriched.fine.n_stress
    a0 = solver.initial_acceleration(traj)
    for n in range(steps + 1):
        dt2 = recon.enriched.P_disp @ (a0 if n == 0 else traj.dt2U(n))
        if traj.f is None:
            load = np.zeros(recon.enriched.fine.n_disp)
        else:
            load = assemble_load(recon.enriched.fine, traj.f, grid.nodes[n])
        rhs = np.concatenate([np.zeros(nsf), load - fs.M_u.toarray() @ dt2])
        K = np.block([[Msf, -Bf.T], [Bf, np.zeros((Bf.shape[0], Bf.shape[0]))]])
        sol = np.linalg.solve(K, rhs)
        rscale = max(scale, np.abs(recon.sigma_tilde[n]).max())
        worst = max(worst, np.abs(sol[:nsf] - recon.sigma_tilde[n]).max() / rscale)
        worst = max(worst, np.abs(sol[nsf:] - recon.u_tilde[n]).max() / rscale)
    return worst


def energy_drift(traj):
    """Largest per-step energy increase (0 for a monotone trajectory)."""
    E = np.array([traj.energy(n) for n in range(traj.grid.num_steps + 1)])
    return float(np.maximum(np.diff(E), 0.0).max(initial=0.0))
