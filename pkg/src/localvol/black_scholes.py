"""Black-Scholes call pricing and implied-volatility inversion.

Used as the closed-form oracle for the forward solver and to translate
calibrated surfaces into implied-volatility misfits.  The commodity-market
convention of quoting the interest rate as the dividend yield is supported
through the optional ``div`` argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm


class ImpliedVolError(ValueError):
    """Price violates the no-arbitrage bounds; reason says which side."""

    def __init__(self, message: str, reason: str):
        super().__init__(message)
        self.reason = reason  # "below_intrinsic" or "above_spot"


@dataclass(frozen=True)
class BsQuote:
    """One European call quote under constant volatility."""

    spot: float
    strike: float
    tau: float
    rate: float
    vol: float

    def __post_init__(self):
        if not (self.spot > 0 and self.strike > 0):
            raise ValueError("spot and strike must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.vol > 0:
            raise ValueError("vol must be positive")


def call_price(
    spot: float, strike: float, tau: float, rate: float, vol: float, div: float = 0.0
) -> float:
    """European call value; strictly increasing in vol."""
    srt = vol * np.sqrt(tau)
    d1 = (np.log(spot / strike) + (rate - div + 0.5 * vol**2) * tau) / srt
    d2 = d1 - srt
    return float(
        spot * np.exp(-div * tau) * norm.cdf(d1)
        - strike * np.exp(-rate * tau) * norm.cdf(d2)
    )


def bs_call_price(q: BsQuote, div: float = 0.0) -> float:
    return call_price(q.spot, q.strike, q.tau, q.rate, q.vol, div)


def vega(
    spot: float, strike: float, tau: float, rate: float, vol: float, div: float = 0.0
) -> float:
    srt = vol * np.sqrt(tau)
    d1 = (np.log(spot / strike) + (rate - div + 0.5 * vol**2) * tau) / srt
    return float(spot * np.exp(-div * tau) * norm.pdf(d1) * np.sqrt(tau))


# Initial inversion bracket (annualized vol); covers market-plausible values
# and is widened once before giving up.
_BRACKET = (1e-4, 5.0)
_WIDE_BRACKET = (1e-6, 10.0)


def implied_vol(
    price: float,
    spot: float,
    strike: float,
    tau: float,
    rate: float,
    div: float = 0.0,
    tol: float = 1e-10,
) -> float:
    """Invert the call price for volatility.

    Uses a bracketing bisection/Newton hybrid and refines until the
    reproduced price is within ``tol`` (absolute) of the target.  Prices at
    or outside the no-arbitrage bounds raise ImpliedVolError with the
    violated side identified.
    """
    intrinsic = max(spot * np.exp(-div * tau) - strike * np.exp(-rate * tau), 0.0)
    upper = spot * np.exp(-div * tau)
    if price <= intrinsic:
        raise ImpliedVolError(
            f"price {price} at or below intrinsic value {intrinsic}",
            reason="below_intrinsic",
        )
    if price >= upper:
        raise ImpliedVolError(
            f"price {price} at or above the spot bound {upper}", reason="above_spot"
        )

    def f(v):
        return call_price(spot, strike, tau, rate, v, div) - price

    lo, hi = _BRACKET
    flo, fhi = f(lo), f(hi)
    if flo > 0 or fhi < 0:
        lo, hi = _WIDE_BRACKET
        flo, fhi = f(lo), f(hi)
        if flo > 0 or fhi < 0:
            raise ValueError(
                f"implied vol not bracketed in [{lo}, {hi}] for price {price}"
            )

    x = 0.5 * (lo + hi)
    for _ in range(200):
        fx = f(x)
        if abs(fx) <= tol:
            return x
        if fx > 0:
            hi = x
        else:
            lo = x
        v = vega(spot, strike, tau, rate, x, div)
        if v > 1e-14:
            x_new = x - fx / v
        else:
            x_new = np.nan
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)  # Newton left the bracket; bisect instead
        x = x_new
    raise ValueError(f"implied vol iteration did not reach tolerance {tol}")
