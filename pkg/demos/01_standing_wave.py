"""Solve the standing-wave problem and report errors and energy.

The exact solution u = sin(pi x) sin(pi y) cos(sqrt(2) pi t) is an
eigenmode of the unit square, so the forcing vanishes and the discrete
energy should be monotone non-increasing.
"""

import numpy as np

from mixedwave import solver, verification as ver

problem = ver.standing_wave()
traj = ver.solve_problem(problem, n=16, N=40)

err_u, err_sigma = ver.true_error(traj, problem)
print("mesh: {}".format(traj.space.mesh))
print("steps: {} of size {:.4g}".format(traj.grid.num_steps, traj.grid.steps[0]))
print()
print("  n    t_n     ||u - U||    ||sigma - Sigma||    energy")
for n in range(0, traj.grid.num_steps + 1, 5):
    print(
        "{:>3d}  {:5.3f}   {:10.4e}   {:14.4e}   {:10.6f}".format(
            n, traj.grid.nodes[n], err_u[n], err_sigma[n], traj.energy(n)
        )
    )

drift = ver.energy_drift(traj)
print()
print("worst L-infinity displacement error: {:.4e}".format(err_u.max()))
print("largest per-step energy increase:    {:.3e}".format(drift))
