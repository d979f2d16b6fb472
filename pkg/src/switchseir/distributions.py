"""Sampling and log-density primitives for the model's distributions.

Covers Beta, Dirichlet, Gamma (shape/rate), truncated Normal, categorical
and Uniform.  All densities are computed in log space; outside-support
evaluations return -inf rather than NaN.  Samplers take an explicit
numpy Generator so each thread of execution can own its stream.

Parameter containers accept scalars or arrays (fields broadcast), which
lets the particle engine evaluate whole particle populations in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, log_ndtr, ndtr, ndtri

# Smallest admissible simplex component; Dirichlet draws are clamped here
# and renormalized so downstream log densities stay finite.
SIMPLEX_FLOOR = 1e-12


@dataclass(frozen=True)
class BetaParams:
    """Shape parameters of a Beta distribution; both must be positive."""

    a: float | np.ndarray
    b: float | np.ndarray

    def __post_init__(self):
        if not (np.all(np.asarray(self.a) > 0) and np.all(np.asarray(self.b) > 0)):
            raise ValueError("Beta shape parameters must be strictly positive")


@dataclass(frozen=True)
class DirichletParams:
    """Concentration vector of a Dirichlet distribution.

    The last axis is the simplex dimension (>= 2); leading axes broadcast
    over independent distributions.
    """

    concentration: np.ndarray

    def __post_init__(self):
        conc = np.asarray(self.concentration, dtype=float)
        object.__setattr__(self, "concentration", conc)
        if conc.shape[-1] < 2:
            raise ValueError("Dirichlet dimension must be >= 2")
        if not np.all(conc > 0):
            raise ValueError("Dirichlet concentrations must be strictly positive")


@dataclass(frozen=True)
class TruncNormalParams:
    """Normal(mean, sd^2) truncated to (lower, upper)."""

    mean: float
    sd: float
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("sd must be strictly positive")
        if not self.lower < self.upper:
            raise ValueError("lower must be strictly less than upper")


@dataclass(frozen=True)
class GammaParams:
    """Gamma distribution in shape/rate form: mean = shape/rate."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("Gamma shape and rate must be strictly positive")


def beta_logpdf(y, params: BetaParams):
    """Log density of Beta(a, b) at y in (0,1).

    y and the shape parameters broadcast; raises on y outside (0,1).
    """
    y = np.asarray(y, dtype=float)
    if not np.all((y > 0) & (y < 1)):
        raise ValueError("Beta density requires y strictly inside (0,1)")
    a = np.asarray(params.a, dtype=float)
    b = np.asarray(params.b, dtype=float)
    out = (
        (a - 1) * np.log(y)
        + (b - 1) * np.log1p(-y)
        - (gammaln(a) + gammaln(b) - gammaln(a + b))
    )
    return out if out.ndim else float(out)


def dirichlet_logpdf(x, params: DirichletParams):
    """Log density of Dirichlet(concentration) at simplex point(s) x.

    x must lie on the open simplex (entries in (0,1), summing to one
    within 1e-12 ... well inside float tolerance).  Broadcasts over
    leading axes of x and the concentration.
    """
    x = np.asarray(x, dtype=float)
    if not np.all((x > 0) & (x < 1)):
        raise ValueError("Dirichlet density requires components inside (0,1)")
    if not np.all(np.abs(x.sum(axis=-1) - 1.0) <= 1e-9):
        raise ValueError("Dirichlet density requires x on the simplex")
    conc = params.concentration
    out = (
        gammaln(conc.sum(axis=-1))
        - gammaln(conc).sum(axis=-1)
        + ((conc - 1) * np.log(x)).sum(axis=-1)
    )
    return out if np.ndim(out) else float(out)


def sample_dirichlet(params: DirichletParams, rng: np.random.Generator) -> np.ndarray:
    """Draw from Dirichlet(concentration) via normalized Gamma variates.

    Components are floored at SIMPLEX_FLOOR and renormalized so the draw
    never contains exact zeros (zero components would push log densities
    to -inf downstream).
    """
    conc = params.concentration
    g = rng.standard_gamma(conc)
    x = g / g.sum(axis=-1, keepdims=True)
    x = np.clip(x, SIMPLEX_FLOOR, None)
    return x / x.sum(axis=-1, keepdims=True)


def gamma_logpdf(x, params: GammaParams):
    """Log density of Gamma(shape, rate) at x; -inf for x <= 0."""
    x = np.asarray(x, dtype=float)
    a, b = params.shape, params.rate
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(
            x > 0,
            a * math.log(b) - gammaln(a) + (a - 1) * np.log(np.where(x > 0, x, 1.0)) - b * x,
            -np.inf,
        )
    return out if out.ndim else float(out)


def sample_gamma(params: GammaParams, rng: np.random.Generator, size=None):
    """Draw from Gamma(shape, rate)."""
    return rng.standard_gamma(params.shape, size=size) / params.rate


def uniform_logpdf(x, lower: float, upper: float):
    """Log density of Uniform(lower, upper); -inf outside the interval."""
    x = np.asarray(x, dtype=float)
    out = np.where((x > lower) & (x < upper), -math.log(upper - lower), -np.inf)
    return out if out.ndim else float(out)


def sample_uniform(lower: float, upper: float, rng: np.random.Generator, size=None):
    """Draw from Uniform(lower, upper)."""
    return rng.uniform(lower, upper, size=size)


def _standardized_bounds(params: TruncNormalParams) -> tuple[float, float]:
    lo = (params.lower - params.mean) / params.sd
    hi = (params.upper - params.mean) / params.sd
    return lo, hi


def trunc_normal_mass(params: TruncNormalParams) -> float:
    """Probability a Normal(mean, sd^2) draw lands in (lower, upper)."""
    lo, hi = _standardized_bounds(params)
    # Work in the left tail (symmetry) to avoid cancellation of CDFs near 1.
    if lo >= 0:
        lo, hi = -hi, -lo
    return float(ndtr(hi) - ndtr(lo))


def trunc_normal_log_mass(params: TruncNormalParams) -> float:
    """log of the truncation mass, accurate even for far-tail windows."""
    lo, hi = _standardized_bounds(params)
    if lo >= 0:
        lo, hi = -hi, -lo
    a, b = float(log_ndtr(lo)), float(log_ndtr(hi))
    d = a - b  # <= 0
    if d == 0.0:
        return -math.inf
    # log(e^b - e^a) = b + log(1 - e^d)
    if d > -math.log(2):
        return b + math.log(-math.expm1(d))
    return b + math.log1p(-math.exp(d))


def trunc_normal_logpdf(x, params: TruncNormalParams):
    """Log density of the truncated Normal; -inf outside (lower, upper)."""
    x = np.asarray(x, dtype=float)
    z = (x - params.mean) / params.sd
    log_mass = trunc_normal_log_mass(params)
    core = -0.5 * z * z - 0.5 * math.log(2 * math.pi) - math.log(params.sd) - log_mass
    out = np.where((x > params.lower) & (x < params.upper), core, -np.inf)
    return out if out.ndim else float(out)


def sample_trunc_normal(
    params: TruncNormalParams, rng: np.random.Generator, size=None
):
    """Draw from the truncated Normal.

    Uses plain rejection from the untruncated Normal when the acceptance
    mass exceeds 0.1 (cheap, exact), and inverse-CDF sampling otherwise
    (robust for narrow or far-out truncation windows).
    """
    n = 1 if size is None else int(np.prod(size))
    mass = trunc_normal_mass(params)
    if mass > 0.1:
        out = np.empty(n)
        filled = 0
        while filled < n:
            # Expected acceptance ratio is `mass`; over-draw accordingly.
            want = n - filled
            draws = params.mean + params.sd * rng.standard_normal(
                max(16, int(want / mass * 1.2))
            )
            good = draws[(draws > params.lower) & (draws < params.upper)]
            take = min(want, good.size)
            out[filled : filled + take] = good[:take]
            filled += take
    else:
        lo, hi = _standardized_bounds(params)
        flip = lo >= 0
        if flip:
            lo, hi = -hi, -lo
        u = rng.uniform(ndtr(lo), ndtr(hi), size=n)
        z = ndtri(u)
        if flip:
            z = -z
        out = params.mean + params.sd * z
        # Inverse CDF can land exactly on a bound in float arithmetic.
        out = np.clip(out, np.nextafter(params.lower, math.inf),
                      np.nextafter(params.upper, -math.inf))
    if size is None:
        return float(out[0])
    return out.reshape(size)


def sample_categorical(weights, rng: np.random.Generator, size=None):
    """Draw index (or indices) i with probability weights[i].

    Weights must be nonnegative, free of NaN, and sum to 1 within 1e-9.
    Indices are 0-based.
    """
    w = np.asarray(weights, dtype=float)
    if np.any(np.isnan(w)) or np.any(w < 0):
        raise ValueError("categorical weights must be nonnegative and non-NaN")
    total = w.sum()
    if total <= 0:
        raise ValueError("categorical weights are all zero")
    if abs(total - 1.0) > 1e-9:
        raise ValueError("categorical weights must sum to 1 within 1e-9")
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    u = rng.random(size=() if size is None else size)
    idx = np.searchsorted(cdf, u, side="right")
    idx = np.minimum(idx, len(w) - 1)
    return int(idx) if size is None else idx


def logsumexp(log_values) -> float:
    """Exact-order-invariant log-sum-exp over a 1-D array.

    Uses math.fsum for the mantissa sum, so permuting the inputs cannot
    change the result bit-for-bit (needed for the particle engine's
    label-exchangeability guarantee).
    """
    lv = np.asarray(log_values, dtype=float)
    m = lv.max() if lv.size else -math.inf
    if not np.isfinite(m):
        return -math.inf
    return float(m + math.log(math.fsum(np.exp(lv - m))))


def normalize_log_weights(log_weights: np.ndarray) -> tuple[np.ndarray, float]:
    """Return (normalized weights, log of the mean unnormalized weight)."""
    total = logsumexp(log_weights)
    if not np.isfinite(total):
        return np.full_like(log_weights, np.nan), -math.inf
    w = np.exp(log_weights - total)
    return w / w.sum(), total - math.log(len(log_weights))
