"""Crank-Nicolson time stepping for the log-moneyness Dupire problem.

The transformed forward PDE is

    -u_tau + a (u_yy - u_y) + b u_y = 0,   u(0, y) = S0 (1 - e^y)^+,

with Dirichlet values S0 at the left truncation l_y and 0 at the right
truncation r_y.  One banded (tridiagonal) solve advances each time level;
diffusion and convection coefficients are averaged across the two levels of
the step, which keeps the scheme second order in both directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .grid import MeshSpec, ObservationOperator, PriceSurface, VarianceSurface


class ForwardSolveError(RuntimeError):
    """Tridiagonal system failed; carries the offending time level."""

    def __init__(self, level: int, message: str):
        super().__init__(f"forward solve failed at time level {level}: {message}")
        self.level = level


@dataclass(frozen=True)
class ForwardParams:
    """Scalar inputs of the forward problem.

    s0 scales the initial and boundary data, b is the drift coefficient in
    the PDE (1/years), and r is the annualized rate handed to the
    Black-Scholes analytics (it does not enter the PDE itself).
    """

    s0: float
    b: float = 0.0
    r: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.s0) and self.s0 > 0):
            raise ValueError(f"s0 must be finite and positive, got {self.s0!r}")
        if not (np.isfinite(self.b) and np.isfinite(self.r)):
            raise ValueError("b and r must be finite")


def payoff_row(mesh: MeshSpec, s0: float) -> np.ndarray:
    """Initial condition u(0, y) = S0 (1 - e^y)^+ on the mesh nodes."""
    return s0 * np.maximum(1.0 - np.exp(mesh.ys), 0.0)


def step_coefficients(a_values: np.ndarray, mesh: MeshSpec, b: float, i: int):
    """Stencil weights (lam, mu) for the step from level i to i + 1.

    lam multiplies second differences and mu central first differences on
    the interior columns.  Coefficients use the level-averaged variance
    (a_i + a_{i+1}) / 2, so both the implicit and explicit sides of the
    step see the same diffusion (a_i + a_{i+1}) / (4 dy^2) and convection
    ((a_i + a_{i+1}) / 2 - b) / (4 dy) weights.
    """
    s = a_values[i, 1:-1] + a_values[i + 1, 1:-1]
    lam = mesh.dtau * s / (4.0 * mesh.dy**2)
    mu = mesh.dtau * (s - 2.0 * b) / (8.0 * mesh.dy)
    return lam, mu


def solve_forward(a: VarianceSurface, p: ForwardParams) -> PriceSurface:
    """March the Crank-Nicolson scheme over all time levels.

    Returns the full price surface, payoff row and boundary columns
    included.  Pure function: identical inputs produce bit-identical
    surfaces.
    """
    mesh = a.mesh
    u = np.empty(mesh.shape)
    u[0] = payoff_row(mesh, p.s0)
    u[:, 0] = p.s0
    u[:, -1] = 0.0

    ab = np.empty((3, mesh.m_y))
    for i in range(mesh.m_tau + 1):
        lam, mu = step_coefficients(a.values, mesh, p.b, i)

        # Implicit side: rows [-(lam+mu), 1+2 lam, -(lam-mu)] in banded form.
        ab[0, 1:] = -(lam[:-1] - mu[:-1])
        ab[1, :] = 1.0 + 2.0 * lam
        ab[2, :-1] = -(lam[1:] + mu[1:])

        rhs = (
            (lam + mu) * u[i, :-2]
            + (1.0 - 2.0 * lam) * u[i, 1:-1]
            + (lam - mu) * u[i, 2:]
        )
        rhs[0] += (lam[0] + mu[0]) * p.s0  # implicit-side left Dirichlet value
        # Right boundary value is 0, so no correction enters the last row.

        try:
            interior = solve_banded((1, 1), ab, rhs, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise ForwardSolveError(i + 1, str(exc)) from exc
        if not np.all(np.isfinite(interior)):
            raise ForwardSolveError(i + 1, "non-finite solution (ill-conditioned system)")
        u[i + 1, 1:-1] = interior

    return PriceSurface(mesh=mesh, values=u)


def predict_data(
    a: VarianceSurface, p: ForwardParams, P: ObservationOperator
) -> np.ndarray:
    """Predicted prices at the quote locations: P applied to the solve."""
    return P.apply(solve_forward(a, p))
