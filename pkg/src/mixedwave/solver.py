"""Backward-difference time stepping of the fully discrete mixed scheme.

Each step solves the coupled saddle system for (U^n, Sigma^n) obtained by
eliminating the second backward difference
d2U^n = (U^n - U^{n-1} - k_n dU^{n-1}) / k_n^2.  The first step uses
dU^0 = P_h u1 and U^0 = P_h u0; the initial stress Sigma^0 solves
(alpha Sigma^0, v) = (U^0, div v), which makes the first discrete
equation hold at n = 0 as well.

A "semidiscrete reference" is the same stepper run with a tiny uniform
step; it stands in for the spatially-discrete, time-continuous scheme.
"""

import os
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import quadrature
from .assembly import SaddleSystem, assemble_load
from .spaces import l2_project_scalar

# 5-point Gauss rule used for all time integrals
_TIME_PTS, _TIME_WTS = quadrature.segment_rule(9)


class SolverError(Exception):
    pass


class SingularSystemError(SolverError):
    pass


class ToleranceNotMetError(SolverError):
    pass


class GridError(SolverError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time nodes t_0 = 0 < ... < t_N = T."""

    nodes: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.nodes, dtype=float)
        if len(t) < 2 or t[0] != 0.0 or np.any(np.diff(t) <= 0.0):
            raise GridError("time nodes must start at 0 and strictly increase")
        object.__setattr__(self, "nodes", t)

    @property
    def steps(self):
        return np.diff(self.nodes)

    @property
    def num_steps(self):
        return len(self.nodes) - 1

    @property
    def final_time(self):
        return float(self.nodes[-1])

    def interval_index(self, t):
        """n with t in (t_{n-1}, t_n]; t = 0 maps to interval 1."""
        if t < 0.0 or t > self.nodes[-1] + 1e-14:
            raise GridError("time {} outside [0, T]".format(t))
        n = int(np.searchsorted(self.nodes, t, side="left"))
        return max(1, min(n, self.num_steps))


def uniform_grid(T, N):
    return TimeGrid(np.linspace(0.0, T, N + 1))


@dataclass
class Trajectory:
    """Discrete states of one run on a fixed mesh.

    U, Sigma, dtU hold one coefficient row per time node; f_bar holds the
    load vectors (f_bar^n, w_h) actually used (row 0 is the load at t=0).
    """

    grid: TimeGrid
    system: SaddleSystem
    U: np.ndarray
    Sigma: np.ndarray
    dtU: np.ndarray
    f_bar: np.ndarray
    forcing_mode: str = "pointwise"
    f: object = field(default=None, repr=False)

    @property
    def space(self):
        return self.system.space

    def dt2U(self, n):
        """Backward second difference at node n >= 1 (coefficients)."""
        if n < 1:
            raise SolverError("second difference needs n >= 1")
        k = self.grid.steps[n - 1]
        return (self.dtU[n] - self.dtU[n - 1]) / k

    def energy(self, n):
        """Discrete energy ||dtU^n||^2 + ||Sigma^n||^2_{A^-1}."""
        s = self.system
        return float(
            self.dtU[n] @ (s.M_u @ self.dtU[n])
            + self.Sigma[n] @ (s.M_sigma @ self.Sigma[n])
        )


def _saddle_matrix(system, k):
    n_s = system.space.n_stress
    K = sp.bmat(
        [
            [system.M_sigma, -system.B.T],
            [system.B, system.M_u / k ** 2],
        ],
        format="csc",
    )
    return K


def _factorize(system, k):
    key = float(k)
    if key not in system._factor_cache:
        try:
            system._factor_cache[key] = spla.splu(_saddle_matrix(system, k))
        except RuntimeError as exc:
            raise SingularSystemError(str(exc)) from exc
    return system._factor_cache[key]


def step(system, U_prev, dtU_prev, k, load, rtol=1e-10):
    """Advance one step: returns (U, Sigma, dtU) at the new node."""
    if k <= 0.0:
        raise SolverError("step size must be positive")
    lu = _factorize(system, k)
    n_s = system.space.n_stress
    rhs_u = load + system.M_u @ (U_prev + k * dtU_prev) / k ** 2
    rhs = np.concatenate([np.zeros(n_s), rhs_u])
    sol = lu.solve(rhs)
    Sigma, U = sol[:n_s], sol[n_s:]
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError("solution contains non-finite entries")

    r1 = system.M_sigma @ Sigma - system.B.T @ U
    r2 = system.B @ Sigma + system.M_u @ U / k ** 2 - rhs_u
    scale = max(
        np.abs(system.M_sigma @ Sigma).max(initial=0.0),
        np.abs(rhs_u).max(initial=0.0),
        1e-300,
    )
    if max(np.abs(r1).max(), np.abs(r2).max()) > rtol * scale:
        raise ToleranceNotMetError("algebraic residual exceeds tolerance")
    dtU = (U - U_prev) / k
    return U, Sigma, dtU


def initial_stress(system, U0):
    """Sigma^0 from (alpha Sigma^0, v) = (U^0, div v) for all v_h."""
    try:
        lu = spla.splu(system.M_sigma.tocsc())
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from exc
    return lu.solve(system.B.T @ U0)


def initial_acceleration(traj):
    """Discrete acceleration at t = 0: solves M_u a = F^0 - B Sigma^0.

    The scheme leaves the second difference at node 0 undefined; this is
    the value the spatially discrete equation assigns at t = 0, and it
    makes the second residual vanish on the discrete space at n = 0.
    """
    s = traj.system
    rhs = traj.f_bar[0] - s.B @ traj.Sigma[0]
    return spla.spsolve(s.M_u.tocsc(), rhs)


def load_vector(system, f, t_prev, t_n, forcing_mode):
    """(f_bar^n, w_h): pointwise at t_n or the interval average."""
    space = system.space
    if f is None:
        return np.zeros(space.n_disp)
    if forcing_mode == "pointwise":
        return assemble_load(space, f, t_n)
    if forcing_mode != "average":
        raise SolverError("forcing_mode must be 'pointwise' or 'average'")
    k = t_n - t_prev
    out = np.zeros(space.n_disp)
    for tau, w in zip(_TIME_PTS, _TIME_WTS):
        out += w * assemble_load(space, f, t_prev + tau * k)
    return out


def run(system, f, u0, u1, grid, forcing_mode="pointwise"):
    """Run the fully discrete scheme over `grid`; returns a Trajectory."""
    space = system.space
    N = grid.num_steps
    U = np.zeros((N + 1, space.n_disp))
    Sigma = np.zeros((N + 1, space.n_stress))
    dtU = np.zeros((N + 1, space.n_disp))
    f_bar = np.zeros((N + 1, space.n_disp))

    U[0] = l2_project_scalar(space, u0).coefficients
    dtU[0] = l2_project_scalar(space, u1).coefficients
    Sigma[0] = initial_stress(system, U[0])
    f_bar[0] = load_vector(system, f, 0.0, 0.0, "pointwise")

    for n in range(1, N + 1):
        k = grid.steps[n - 1]
        f_bar[n] = load_vector(system, f, grid.nodes[n - 1], grid.nodes[n], forcing_mode)
        U[n], Sigma[n], dtU[n] = step(system, U[n - 1], dtU[n - 1], k, f_bar[n])
    return Trajectory(
        grid=grid,
        system=system,
        U=U,
        Sigma=Sigma,
        dtU=dtU,
        f_bar=f_bar,
        forcing_mode=forcing_mode,
        f=f,
    )


def semidiscrete_reference(system, f, u0, u1, T, kappa, forcing_mode="pointwise"):
    """Same stepper with a tiny uniform step kappa (semidiscrete stand-in)."""
    N = int(round(T / kappa))
    if abs(N * kappa - T) > 1e-12 * max(T, 1.0):
        raise GridError("kappa must divide T")
    return run(system, f, u0, u1, uniform_grid(T, N), forcing_mode)


def residual_functionals(traj, n):
    """Discrete residuals (r1^n over V_h basis, r2^n over W_h basis).

    Both vanish identically for states produced by the scheme; r2 is
    defined for n >= 1, r1 also at n = 0.
    """
    s = traj.system
    r1 = s.M_sigma @ traj.Sigma[n] - s.B.T @ traj.U[n]
    if n == 0:
        return r1, None
    r2 = s.M_u @ traj.dt2U(n) + s.B @ traj.Sigma[n] - traj.f_bar[n]
    return r1, r2


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------

_MAGIC = b"MWSTATE1"


def save_trajectory(traj, directory):
    """Write grid.csv and per-node state_<n>.bin files.

    Binary layout (little-endian): 8-byte magic ``MWSTATE1``, three
    int64 counts (n_disp, n_stress, node index), then the U, Sigma and
    dtU coefficient blocks as float64.
    """
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "grid.csv"), "w") as fh:
        fh.write("n,t_n,k_n\n")
        for n, t in enumerate(traj.grid.nodes):
            k = 0.0 if n == 0 else traj.grid.steps[n - 1]
            fh.write("{},{:.17g},{:.17g}\n".format(n, t, k))
    nd, ns = traj.space.n_disp, traj.space.n_stress
    for n in range(traj.grid.num_steps + 1):
        path = os.path.join(directory, "state_{}.bin".format(n))
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<qqq", nd, ns, n))
            fh.write(traj.U[n].astype("<f8").tobytes())
            fh.write(traj.Sigma[n].astype("<f8").tobytes())
            fh.write(traj.dtU[n].astype("<f8").tobytes())


def load_states(directory):
    """Read back (nodes, U, Sigma, dtU) written by save_trajectory."""
    nodes = []
    with open(os.path.join(directory, "grid.csv")) as fh:
        next(fh)
        for line in fh:
            nodes.append(float(line.split(",")[1]))
    U, Sigma, dtU = [], [], []
    for n in range(len(nodes)):
        path = os.path.join(directory, "state_{}.bin".format(n))
        with open(path, "rb") as fh:
            if fh.read(8) != _MAGIC:
                raise SolverError("bad magic in {}".format(path))
            nd, ns, idx = struct.unpack("<qqq", fh.read(24))
            if idx != n:
                raise SolverError("state index mismatch in {}".format(path))
            U.append(np.frombuffer(fh.read(8 * nd), dtype="<f8"))
            Sigma.append(np.frombuffer(fh.read(8 * ns), dtype="<f8"))
            dtU.append(np.frombuffer(fh.read(8 * nd), dtype="<f8"))
    return np.array(nodes), np.array(U), np.array(Sigma), np.array(dtU)
