"""Finite-difference American/Bermudan put in log price.

Crank-Nicolson with Rannacher start, on a uniform grid in x = ln S.  The
early-exercise constraint is enforced with a penalty iteration when
exercise is continuous (American) and by projection at the exercise dates
when it is discrete (Bermudan, used to benchmark a stopping rule that only
sees a finite mesh).  Each projection restarts the scheme with implicit
half-steps to damp the kink it introduces.

The solver also extracts the exercise boundary: at each time level, the
largest grid price where the value sticks to the payoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from ..errors import ContractError, DomainError, SolverError

__all__ = ["FdSolution", "american_put_fd"]

_PENALTY = 1e7
_PENALTY_TOL = 1e-10
_PENALTY_MAX_IT = 60
_RANNACHER_PAIRS = 2


@dataclass(frozen=True)
class FdSolution:
    price: float
    grid_s: np.ndarray
    values_t0: np.ndarray
    boundary_times: np.ndarray
    boundary_levels: np.ndarray
    strike: float
    maturity: float

    def price_at(self, s: float | np.ndarray) -> np.ndarray:
        """Linear interpolation of the time-0 value curve."""
        return np.interp(s, self.grid_s, self.values_t0)

    def boundary_at(self, t: float | np.ndarray) -> np.ndarray:
        """Exercise boundary level at calendar time(s) t (interpolated)."""
        return np.interp(t, self.boundary_times, self.boundary_levels)


def _step_matrices(lo: float, mid: float, hi: float, n: int, dt: float, theta: float):
    """Banded LHS (I - theta dt L) and dense-diag RHS weights (I + (1-theta) dt L).

    Interior rows only; boundary rows are identity."""
    ab = np.zeros((3, n))
    ab[0, 2:] = -theta * dt * hi
    ab[1, :] = 1.0
    ab[1, 1:-1] = 1.0 - theta * dt * mid
    ab[2, :-2] = -theta * dt * lo
    return ab


def _apply_explicit(v: np.ndarray, lo: float, mid: float, hi: float,
                    dt: float, theta: float) -> np.ndarray:
    """rhs = (I + (1-theta) dt L) v on interior rows, v on boundary rows."""
    rhs = v.copy()
    w = (1.0 - theta) * dt
    if w != 0.0:
        rhs[1:-1] = v[1:-1] + w * (lo * v[:-2] + mid * v[1:-1] + hi * v[2:])
    return rhs


def american_put_fd(s0: float, strike: float, rate: float, sigma: float,
                    maturity: float, n_space: int = 500, n_time: int = 800,
                    exercise_times: np.ndarray | None = None) -> FdSolution:
    """Price an American put (exercise_times=None) or a Bermudan put
    exercisable exactly at the given calendar times.

    n_time counts backward-induction steps; for the Bermudan case the time
    grid is the union of a uniform grid and the exercise dates.
    """
    if s0 <= 0.0 or strike <= 0.0 or sigma <= 0.0 or maturity <= 0.0:
        raise DomainError("need s0, strike, sigma, maturity > 0")
    if n_space < 50 or n_time < 10:
        raise ContractError("grid too coarse to be meaningful")

    halfwidth = 6.0 * sigma * np.sqrt(maturity) + abs(np.log(strike / s0)) + 0.5
    x = np.linspace(np.log(s0) - halfwidth, np.log(s0) + halfwidth, n_space)
    dx = x[1] - x[0]
    s = np.exp(x)
    psi = np.maximum(strike - s, 0.0)

    a = 0.5 * sigma * sigma / (dx * dx)
    b = 0.5 * (rate - 0.5 * sigma * sigma) / dx
    lo, mid, hi = a - b, -2.0 * a - rate, a + b

    # backward time grid: calendar times of each level, maturity first
    if exercise_times is None:
        levels = np.linspace(maturity, 0.0, n_time + 1)
        exercise_set = None
    else:
        ex = np.asarray(exercise_times, dtype=np.float64)
        if np.any(ex < 0.0) or np.any(ex > maturity):
            raise ContractError("exercise times must lie in [0, maturity]")
        grid = np.union1d(np.linspace(0.0, maturity, n_time + 1), ex)
        levels = grid[::-1].copy()
        exercise_set = set(np.round(ex, 12))

    v = psi.copy()
    boundary_t: list[float] = []
    boundary_s: list[float] = []
    if exercise_set is None or np.round(maturity, 12) in exercise_set:
        boundary_t.append(maturity)
        boundary_s.append(strike)

    implicit_budget = 2 * _RANNACHER_PAIRS  # pending implicit half-steps

    for t_now, t_next in zip(levels[:-1], levels[1:]):
        dt = t_now - t_next
        if implicit_budget > 0:
            sub_steps, theta = 2, 1.0
            implicit_budget -= 2
        else:
            sub_steps, theta = 1, 0.5
        for _ in range(sub_steps):
            h = dt / sub_steps
            ab = _step_matrices(lo, mid, hi, n_space, h, theta)
            rhs = _apply_explicit(v, lo, mid, hi, h, theta)
            rhs[0] = psi[0]
            rhs[-1] = 0.0
            if exercise_set is None:
                v = _penalty_solve(ab, rhs, psi, h, theta, lo, mid, hi)
            else:
                v = solve_banded((1, 1), ab, rhs)

        if exercise_set is None:
            _record_boundary(boundary_t, boundary_s, t_next, s, v, psi)
        elif np.round(t_next, 12) in exercise_set:
            v = np.maximum(v, psi)
            _record_boundary(boundary_t, boundary_s, t_next, s, v, psi)
            implicit_budget = 2 * _RANNACHER_PAIRS

    price = float(np.interp(np.log(s0), x, v))
    order = np.argsort(boundary_t)
    return FdSolution(price=price, grid_s=s, values_t0=v.copy(),
                      boundary_times=np.asarray(boundary_t)[order],
                      boundary_levels=np.asarray(boundary_s)[order],
                      strike=strike, maturity=maturity)


def _penalty_solve(ab: np.ndarray, rhs: np.ndarray, psi: np.ndarray,
                   h: float, theta: float, lo: float, mid: float, hi: float) -> np.ndarray:
    """Forsyth-Vetzal penalty iteration for the discrete obstacle problem."""
    v = np.maximum(rhs, psi)
    for _ in range(_PENALTY_MAX_IT):
        pen = np.where(v < psi, _PENALTY, 0.0)
        pen[0] = pen[-1] = 0.0
        ab_pen = ab.copy()
        ab_pen[1, :] += pen
        v_new = solve_banded((1, 1), ab_pen, rhs + pen * psi)
        if np.max(np.abs(v_new - v)) / max(1.0, np.max(np.abs(v_new))) < _PENALTY_TOL:
            v = v_new
            break
        v = v_new
    else:
        raise SolverError("penalty iteration did not converge")
    return np.maximum(v, psi)


_BOUNDARY_TOL = 1e-9


def _record_boundary(ts: list[float], ss: list[float], t: float,
                     s: np.ndarray, v: np.ndarray, psi: np.ndarray) -> None:
    """Exercise boundary: where value - intrinsic first exceeds the contact
    tolerance, linearly interpolated between the straddling nodes."""
    gap = v - psi
    above = np.nonzero(gap > _BOUNDARY_TOL)[0]
    if above.size == 0 or above[0] == 0:
        return
    i = above[0]
    g0, g1 = gap[i - 1], gap[i]
    frac = (_BOUNDARY_TOL - g0) / (g1 - g0)
    ts.append(float(t))
    ss.append(float(s[i - 1] + frac * (s[i] - s[i - 1])))
