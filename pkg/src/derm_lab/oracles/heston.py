"""Semi-analytic European option prices under Heston stochastic volatility.

Characteristic-function formulation that keeps the complex logarithm on
its principal branch for long maturities; the two exercise probabilities
are recovered by real quadrature on (0, u_max).  The variance risk
premium folds into effective reversion parameters (kappa + lam,
kappa*theta/(kappa + lam)), so pricing only ever sees a plain CIR
variance.  A vanishing vol-of-vol degenerates to Black-Scholes with the
deterministic integrated variance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from ..errors import DomainError, SolverError
from ..markets import HestonParams
from .black_scholes import bs_call_price, bs_put_price

__all__ = ["HestonQuote", "heston_call_price", "heston_put_price", "heston_call_quote"]

_U_MAX = 200.0
_QUAD_LIMIT = 400
_SIGMA_VOL_FLOOR = 1e-12


@dataclass(frozen=True)
class HestonQuote:
    strike: float
    maturity: float
    price: float
    error_estimate: float


def _log_cf(u: complex, params: HestonParams, maturity: float) -> complex:
    """log E[exp(i u ln S_T)] under the pricing dynamics."""
    kappa = params.kappa_eff
    theta = params.theta_eff
    sigma = params.sigma_vol
    rho = params.rho
    x0 = np.log(params.s0)

    iu = 1j * u
    beta = kappa - rho * sigma * iu
    d = np.sqrt(beta * beta + sigma * sigma * (iu + u * u))
    g = (beta - d) / (beta + d)
    e_dt = np.exp(-d * maturity)
    log_frac = np.log((1.0 - g * e_dt) / (1.0 - g))
    c = iu * (x0 + params.rate * maturity) \
        + kappa * theta / (sigma * sigma) * ((beta - d) * maturity - 2.0 * log_frac)
    dd = (beta - d) / (sigma * sigma) * (1.0 - e_dt) / (1.0 - g * e_dt)
    return c + dd * params.v0


def _probability(j: int, params: HestonParams, strike: float, maturity: float,
                 u_max: float, limit: int) -> tuple[float, float]:
    """(P_j, abs error) in the two-term decomposition (j = 1 shifts by -i)."""
    log_k = np.log(strike)
    if j == 1:
        denom_log = _log_cf(-1j, params, maturity)

        def integrand(u: float) -> float:
            val = np.exp(_log_cf(u - 1j, params, maturity) - denom_log - 1j * u * log_k)
            return (val / (1j * u)).real
    else:
        def integrand(u: float) -> float:
            val = np.exp(_log_cf(u, params, maturity) - 1j * u * log_k)
            return (val / (1j * u)).real

    value, abserr = quad(integrand, 0.0, u_max, limit=limit)
    if abserr > 1e-6:
        raise SolverError(f"characteristic-function quadrature error {abserr:.2e} too large")
    return 0.5 + value / np.pi, abserr / np.pi


def _degenerate_sigma(params: HestonParams, maturity: float) -> float:
    """Effective BS volatility when vol-of-vol is zero (deterministic CIR)."""
    kappa, theta = params.kappa_eff, params.theta_eff
    if kappa == 0.0:
        integrated = params.v0 * maturity
    else:
        integrated = theta * maturity + (params.v0 - theta) * (1.0 - np.exp(-kappa * maturity)) / kappa
    return float(np.sqrt(max(integrated, 0.0) / maturity))


def _probabilities(params: HestonParams, strike: float, maturity: float,
                   u_max: float, limit: int) -> tuple[float, float, float]:
    if strike <= 0.0 or maturity <= 0.0:
        raise DomainError("need strike > 0 and maturity > 0")
    p1, e1 = _probability(1, params, strike, maturity, u_max, limit)
    p2, e2 = _probability(2, params, strike, maturity, u_max, limit)
    err = params.s0 * e1 + strike * np.exp(-params.rate * maturity) * e2
    return p1, p2, err


def heston_call_price(params: HestonParams, strike: float, maturity: float,
                      u_max: float = _U_MAX, limit: int = _QUAD_LIMIT) -> float:
    if params.sigma_vol < _SIGMA_VOL_FLOOR:
        if strike <= 0.0 or maturity <= 0.0:
            raise DomainError("need strike > 0 and maturity > 0")
        return bs_call_price(params.s0, strike, params.rate,
                             _degenerate_sigma(params, maturity), maturity)
    p1, p2, _ = _probabilities(params, strike, maturity, u_max, limit)
    return float(params.s0 * p1 - strike * np.exp(-params.rate * maturity) * p2)


def heston_put_price(params: HestonParams, strike: float, maturity: float,
                     u_max: float = _U_MAX, limit: int = _QUAD_LIMIT) -> float:
    if params.sigma_vol < _SIGMA_VOL_FLOOR:
        if strike <= 0.0 or maturity <= 0.0:
            raise DomainError("need strike > 0 and maturity > 0")
        return bs_put_price(params.s0, strike, params.rate,
                            _degenerate_sigma(params, maturity), maturity)
    p1, p2, _ = _probabilities(params, strike, maturity, u_max, limit)
    return float(strike * np.exp(-params.rate * maturity) * (1.0 - p2)
                 - params.s0 * (1.0 - p1))


def heston_call_quote(params: HestonParams, strike: float, maturity: float,
                      u_max: float = _U_MAX, limit: int = _QUAD_LIMIT) -> HestonQuote:
    """Call price plus an integration error estimate; warns off-Feller."""
    if not params.feller_ok:
        warnings.warn("Feller condition violated for pricing parameters", stacklevel=2)
    if params.sigma_vol < _SIGMA_VOL_FLOOR:
        price = heston_call_price(params, strike, maturity)
        return HestonQuote(strike=strike, maturity=maturity, price=price, error_estimate=0.0)
    p1, p2, err = _probabilities(params, strike, maturity, u_max, limit)
    price = float(params.s0 * p1 - strike * np.exp(-params.rate * maturity) * p2)
    return HestonQuote(strike=strike, maturity=maturity, price=price, error_estimate=err)
