"""Black-Scholes closed forms and a CRR binomial lattice for American payoffs."""

from __future__ import annotations

import numpy as np
from scipy.stats import norm

from ..errors import ContractError, DomainError

__all__ = ["bs_call_price", "bs_put_price", "binomial_american"]


def _check(s0: float, strike: float, maturity: float, sigma: float) -> None:
    if s0 <= 0.0 or strike <= 0.0:
        raise DomainError("need s0 > 0 and strike > 0")
    if maturity < 0.0 or sigma < 0.0:
        raise DomainError("need maturity >= 0 and sigma >= 0")


def bs_call_price(s0: float, strike: float, rate: float, sigma: float,
                  maturity: float, div: float = 0.0) -> float:
    _check(s0, strike, maturity, sigma)
    if maturity == 0.0 or sigma == 0.0:
        fwd = s0 * np.exp((rate - div) * maturity)
        return float(np.exp(-rate * maturity) * max(fwd - strike, 0.0))
    vol = sigma * np.sqrt(maturity)
    d1 = (np.log(s0 / strike) + (rate - div + 0.5 * sigma ** 2) * maturity) / vol
    d2 = d1 - vol
    return float(s0 * np.exp(-div * maturity) * norm.cdf(d1)
                 - strike * np.exp(-rate * maturity) * norm.cdf(d2))


def bs_put_price(s0: float, strike: float, rate: float, sigma: float,
                 maturity: float, div: float = 0.0) -> float:
    _check(s0, strike, maturity, sigma)
    if maturity == 0.0 or sigma == 0.0:
        fwd = s0 * np.exp((rate - div) * maturity)
        return float(np.exp(-rate * maturity) * max(strike - fwd, 0.0))
    vol = sigma * np.sqrt(maturity)
    d1 = (np.log(s0 / strike) + (rate - div + 0.5 * sigma ** 2) * maturity) / vol
    d2 = d1 - vol
    return float(strike * np.exp(-rate * maturity) * norm.cdf(-d2)
                 - s0 * np.exp(-div * maturity) * norm.cdf(-d1))


def binomial_american(s0: float, strike: float, rate: float, sigma: float,
                      maturity: float, n_steps: int, kind: str = "put",
                      div: float = 0.0) -> float:
    """Cox-Ross-Rubinstein lattice with exercise at every node."""
    _check(s0, strike, maturity, sigma)
    if n_steps < 1:
        raise ContractError("n_steps must be >= 1")
    if kind not in ("put", "call"):
        raise ContractError(f"kind must be 'put' or 'call', got {kind!r}")
    dt = maturity / n_steps
    u = np.exp(sigma * np.sqrt(dt))
    d = 1.0 / u
    disc = np.exp(-rate * dt)
    p = (np.exp((rate - div) * dt) - d) / (u - d)
    if not 0.0 < p < 1.0:
        raise DomainError(f"risk-neutral up-probability {p:.4f} outside (0, 1); refine the lattice")

    j = np.arange(n_steps + 1)
    s_terminal = s0 * u ** (2.0 * j - n_steps)
    payoff = (lambda s: np.maximum(strike - s, 0.0)) if kind == "put" \
        else (lambda s: np.maximum(s - strike, 0.0))
    value = payoff(s_terminal)
    for step in range(n_steps - 1, -1, -1):
        value = disc * (p * value[1:step + 2] + (1.0 - p) * value[:step + 1])
        s_nodes = s0 * u ** (2.0 * np.arange(step + 1) - step)
        value = np.maximum(value, payoff(s_nodes))
    return float(value[0])
