"""Closed-form link power and delay mathematics.

A data link with noise power sigma carrying flow t at transmit power p has
capacity c = 0.5*log(1 + p/sigma) and average delay

    h(p) = t / (c - t),        valid while c > t.

Minimizing a sum of such delays under a node energy budget puts every
outgoing link of the node on a common water level lambda = -h'(p), and the
per-link optimum inverts in closed form through the Lambert W function:

    p(lambda) = sigma * (exp(2*(W(z) + t)) - 1),
    z = sqrt(t * exp(-2*t) / (2 * lambda * sigma)).

This module implements W, the delay function, its partial derivatives, the
closed-form inverse, and the monotonicity derivatives dp/dsigma and dp/dt,
all as pure functions.  Scalar operations accept a LinkParams pair; the
underscore-prefixed helpers are vectorized over numpy arrays and are what
the solvers call in inner loops.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np


class PowerMathError(ValueError):
    pass


class NegativeArgument(PowerMathError):
    pass


class NegativePower(PowerMathError):
    pass


class ZeroFlow(PowerMathError):
    pass


class CapacityNotExceedingFlow(PowerMathError):
    pass


class LinkParams(NamedTuple):
    """Noise power and flow of one data link."""

    sigma: float
    t: float


def _w0_scalar(z):
    if z < 0:
        raise NegativeArgument("lambert_w0 requires x >= 0")
    if z == 0.0:
        return 0.0
    w = z * (1.0 - z) if z < 1.0 else math.log1p(z)
    tol = 1e-12 * max(1.0, z)
    for _ in range(50):
        ew = math.exp(w)
        resid = w * ew - z
        if abs(resid) <= tol:
            break
        wp1 = w + 1.0
        # Halley step; denominator never vanishes for w >= 0
        w -= resid / (ew * wp1 - (w + 2.0) * resid / (2.0 * wp1))
    return w


def lambert_w0(x):
    """Principal branch of the Lambert W function for x >= 0.

    Solves w * exp(w) = x by Halley iteration from a series/log initial
    guess: w0 = x*(1-x) for x < 1 and w0 = log(1+x) otherwise.  Stops when
    the residual satisfies |w e^w - x| <= 1e-12 * max(1, x) (50 iteration
    cap; convergence is cubic, a handful suffice).

    Accepts scalars or numpy arrays; returns the same shape.
    """
    if np.isscalar(x):
        return _w0_scalar(float(x))
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return _w0_scalar(float(arr))
    if arr.size <= 8:
        # small-array fast path; the solvers call this per node in loops
        return np.array([_w0_scalar(float(v)) for v in arr.ravel()]).reshape(
            arr.shape)
    if np.any(arr < 0):
        raise NegativeArgument("lambert_w0 requires x >= 0")
    z = arr.copy()
    w = np.where(z < 1.0, z * (1.0 - z), np.log1p(z))
    tol = 1e-12 * np.maximum(1.0, z)
    for _ in range(50):
        ew = np.exp(w)
        resid = w * ew - z
        if np.all(np.abs(resid) <= tol):
            break
        wp1 = w + 1.0
        # Halley step; denominator never vanishes for w >= 0
        denom = ew * wp1 - (w + 2.0) * resid / (2.0 * wp1)
        w = w - resid / denom
    return w.reshape(arr.shape)


def min_power(sigma, t):
    """Smallest power with capacity >= flow: sigma * (exp(2 t) - 1)."""
    return sigma * np.expm1(2.0 * np.asarray(t, dtype=float))


def capacity(p, sigma):
    """Link capacity 0.5 * log(1 + p / sigma) in nats per unit time."""
    return 0.5 * np.log1p(np.asarray(p, dtype=float) / sigma)


def link_delay(p, lp: LinkParams):
    """Average delay t / (c - t) of one link.

    Returns 0.0 for a zero-flow link and the +inf sentinel when the
    capacity does not strictly exceed a positive flow, so that searches
    can penalize infeasible iterates instead of raising.
    """
    if p < 0:
        raise NegativePower(f"power must be non-negative, got {p}")
    if lp.t == 0:
        return 0.0
    gap = capacity(p, lp.sigma) - lp.t
    if gap <= 0:
        return np.inf
    return lp.t / gap


def dh_dp(p, lp: LinkParams):
    """Partial derivative of the link delay with respect to power.

    Equals -(t / (2*(sigma+p))) * (c - t)^-2; strictly negative whenever
    t > 0, and 0 for a zero-flow link.
    """
    if lp.t == 0:
        return 0.0
    gap = capacity(p, lp.sigma) - lp.t
    if gap <= 0:
        raise CapacityNotExceedingFlow(
            f"capacity {lp.t + gap:.6g} does not exceed flow {lp.t:.6g}")
    return -lp.t / (2.0 * (lp.sigma + p)) / (gap * gap)


def dh_dt(p, lp: LinkParams):
    """Partial derivative of the link delay with respect to flow.

    Equals c * (c - t)^-2 with the power held fixed; positive whenever the
    link carries power.
    """
    c = capacity(p, lp.sigma)
    gap = c - lp.t
    if gap <= 0:
        raise CapacityNotExceedingFlow(
            f"capacity {c:.6g} does not exceed flow {lp.t:.6g}")
    return c / (gap * gap)


def _z_of_lambda(lam, sigma, t):
    return np.sqrt(t * np.exp(-2.0 * t) / (2.0 * lam * sigma))


def p_of_lambda(lam, lp: LinkParams):
    """Closed-form optimal link power at water level lam.

    p = sigma * (exp(2*(W(z) + t)) - 1) with z = sqrt(t e^{-2t} / (2 lam
    sigma)).  Strictly decreasing in lam and always above the feasibility
    floor sigma*(exp(2t)-1).  A zero-flow link gets no power by convention.
    """
    if lam <= 0:
        raise PowerMathError(f"water level must be positive, got {lam}")
    if lp.t == 0:
        return 0.0
    w = lambert_w0(_z_of_lambda(lam, lp.sigma, lp.t))
    return lp.sigma * np.expm1(2.0 * (w + lp.t))


def dp_dsigma(lam, lp: LinkParams):
    """Sensitivity of the optimal power to the noise power, at fixed lam.

    exp(2t) * exp(2W(z)) / (1 + W(z)) - 1, strictly positive: noisier
    links draw more power (channel-inversion behaviour).
    """
    if lp.t <= 0:
        raise ZeroFlow("dp_dsigma needs a positive flow")
    if lam <= 0:
        raise PowerMathError(f"water level must be positive, got {lam}")
    w = lambert_w0(_z_of_lambda(lam, lp.sigma, lp.t))
    return np.exp(2.0 * lp.t) * np.exp(2.0 * w) / (1.0 + w) - 1.0


def dp_dt(lam, lp: LinkParams):
    """Sensitivity of the optimal power to the flow, at fixed lam.

    sigma * (W(z) + 2t) * exp(2*(W(z)+t)) / (t * (1 + W(z))), strictly
    positive: heavier links draw more power.
    """
    if lp.t <= 0:
        raise ZeroFlow("dp_dt needs a positive flow")
    if lam <= 0:
        raise PowerMathError(f"water level must be positive, got {lam}")
    w = lambert_w0(_z_of_lambda(lam, lp.sigma, lp.t))
    return (lp.sigma * (w + 2.0 * lp.t) * np.exp(2.0 * (w + lp.t))
            / (lp.t * (1.0 + w)))


# ---------------------------------------------------------------------------
# vectorized helpers used by the solvers


def _delay_vec(p, sigma, t):
    """Total and per-link delay for link arrays; +inf where c <= t > 0."""
    p = np.asarray(p, dtype=float)
    d = np.zeros_like(p)
    pos = t > 0
    if np.any(pos):
        gap = 0.5 * np.log1p(p[pos] / sigma[pos]) - t[pos]
        with np.errstate(divide="ignore"):
            d[pos] = np.where(gap > 0, t[pos] / np.where(gap > 0, gap, 1.0), np.inf)
    return d


def _p_vec(lam, sigma, t):
    """Closed-form powers for an array of links at a common water level."""
    p = np.zeros(len(t))
    pos = t > 0
    if pos.any():
        w = lambert_w0(_z_of_lambda(lam, sigma[pos], t[pos]))
        p[pos] = sigma[pos] * np.expm1(2.0 * (w + t[pos]))
    return p


def _sum_p(lam, sigma, t):
    total = 0.0
    for k in range(len(t)):
        tk = t[k]
        if tk > 0:
            sk = sigma[k]
            w = _w0_scalar(math.sqrt(tk * math.exp(-2.0 * tk) / (2.0 * lam * sk)))
            total += sk * math.expm1(2.0 * (w + tk))
    return total


def _dh_dp_vec(p, sigma, t):
    """Vector of delay/power derivatives; 0 entries for zero-flow links."""
    g = np.zeros_like(np.asarray(p, dtype=float))
    pos = t > 0
    if np.any(pos):
        gap = 0.5 * np.log1p(p[pos] / sigma[pos]) - t[pos]
        g[pos] = -t[pos] / (2.0 * (sigma[pos] + p[pos])) / (gap * gap)
    return g
