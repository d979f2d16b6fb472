"""Particle machinery: bootstrap SMC, block-conditional SMC with ancestor
sampling, reference-trajectory extraction, and the marginal-likelihood
estimator.

Both filters use the transition densities as proposals, so the
unnormalized importance weight at every step reduces to the observation
density.  Resampling is multinomial at every step.  Within a step all
particle work is vectorized; weight normalization uses an
order-invariant log-sum-exp, so particle labels are exchangeable
bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .distributions import (
    DirichletParams,
    dirichlet_logpdf,
    logsumexp,
    sample_categorical,
    sample_dirichlet,
)
from .model import LatentPath, ParameterSet, PriorSpec, transition_mean


class DegenerateWeightsError(RuntimeError):
    """All particle weights underflowed at one time step.

    The engine aborts rather than injecting uniform weights: silent
    recovery would corrupt the invariant distribution of the particle
    Gibbs kernel built on top of it.
    """

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        msg = f"all particle weights degenerate at time step {step}"
        super().__init__(msg + (f" ({detail})" if detail else ""))


@dataclass(frozen=True)
class ParticleSystem:
    """Complete output of one SMC/CSMC pass.

    thetas: (T, N, 4); regimes: (T, N); log_weights and norm_weights:
    (T, N); ancestors: (T-1, N) with ancestors[t] indexing the time-t
    parents of the time-t+1 particles; log_marginal: sum over t of
    log mean unnormalized weight.
    """

    thetas: np.ndarray
    regimes: np.ndarray
    log_weights: np.ndarray
    norm_weights: np.ndarray
    ancestors: np.ndarray
    log_marginal: float

    @property
    def n_steps(self) -> int:
        return self.thetas.shape[0]

    @property
    def n_particles(self) -> int:
        return self.thetas.shape[1]


@dataclass(frozen=True)
class ReferenceTrajectory:
    """A retained latent path plus the particle lineage it was read from."""

    path: LatentPath
    lineage: np.ndarray

    def __post_init__(self):
        lin = np.asarray(self.lineage, dtype=int)
        if lin.shape != (len(self.path),):
            raise ValueError("lineage length must match the path")
        lin.setflags(write=False)
        object.__setattr__(self, "lineage", lin)


def _obs_log_weights(y_t: float, thetas: np.ndarray, t: int, params: ParameterSet):
    """Observation log density for every particle at one step."""
    p = params.ident_rate_at(t)
    mean = p * thetas[:, 2]
    a = params.lambda_ * mean
    b = params.lambda_ * (1.0 - mean)
    out = np.full(len(thetas), -np.inf)
    ok = (a > 0) & (b > 0)
    if np.any(ok):
        out[ok] = (
            (a[ok] - 1) * math.log(y_t)
            + (b[ok] - 1) * math.log1p(-y_t)
            - _betaln(a[ok], b[ok])
        )
    return out


def _betaln(a, b):
    return gammaln(a) + gammaln(b) - gammaln(a + b)


def _normalize_step(log_w: np.ndarray, t: int) -> tuple[np.ndarray, float]:
    total = logsumexp(log_w)
    if not np.isfinite(total):
        raise DegenerateWeightsError(t)
    w = np.exp(log_w - total)
    return w / w.sum(), total - math.log(len(log_w))


def _draw_initial_thetas(
    priors: PriorSpec, n: int, rng: np.random.Generator, deterministic: bool
) -> np.ndarray:
    conc = priors.theta1.concentration
    if deterministic:
        return np.broadcast_to(conc / conc.sum(), (n, 4)).copy()
    return sample_dirichlet(
        DirichletParams(np.broadcast_to(conc, (n, 4))), rng
    )


def _propagate(
    thetas_prev: np.ndarray,
    regimes_next: np.ndarray,
    params: ParameterSet,
    rng: np.random.Generator,
    deterministic: bool,
) -> np.ndarray:
    eta = transition_mean(thetas_prev, regimes_next, params)
    if deterministic:
        return eta
    return sample_dirichlet(DirichletParams(params.kappa * eta), rng)


def _resample_indices(
    norm_w: np.ndarray, n_draws: int, rng: np.random.Generator
) -> np.ndarray:
    cdf = np.cumsum(norm_w)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(n_draws), side="right").clip(
        max=len(norm_w) - 1
    )


def run_smc(
    y: np.ndarray,
    params: ParameterSet,
    priors: PriorSpec,
    n_particles: int,
    rng: np.random.Generator,
    deterministic_transitions: bool = False,
) -> ParticleSystem:
    """Bootstrap particle filter over the observation series.

    deterministic_transitions collapses the Dirichlet state transition to
    a point mass at its mean and pins theta_1 at its prior mean; it
    exists only so tests can compare against exact path enumeration.
    """
    y = np.asarray(y, dtype=float)
    horizon, n = len(y), n_particles
    if horizon < 1:
        raise ValueError("need at least one observation")
    if n < 2:
        raise ValueError("need at least two particles")
    k = params.n_regimes

    thetas = np.empty((horizon, n, 4))
    regimes = np.empty((horizon, n), dtype=int)
    log_w = np.empty((horizon, n))
    norm_w = np.empty((horizon, n))
    ancestors = np.empty((max(horizon - 1, 0), n), dtype=int)

    thetas[0] = _draw_initial_thetas(priors, n, rng, deterministic_transitions)
    regimes[0] = rng.integers(k, size=n)
    log_w[0] = _obs_log_weights(y[0], thetas[0], 0, params)
    norm_w[0], log_marginal = _normalize_step(log_w[0], 0)

    row_cdf = np.cumsum(params.trans_matrix, axis=1)
    row_cdf[:, -1] = 1.0

    for t in range(1, horizon):
        anc = _resample_indices(norm_w[t - 1], n, rng)
        ancestors[t - 1] = anc
        # Regime proposal: one uniform per particle through the ancestor's row CDF.
        u = rng.random(n)
        regimes[t] = np.argmax(u[:, None] < row_cdf[regimes[t - 1][anc]], axis=1)
        thetas[t] = _propagate(
            thetas[t - 1][anc], regimes[t], params, rng, deterministic_transitions
        )
        log_w[t] = _obs_log_weights(y[t], thetas[t], t, params)
        norm_w[t], inc = _normalize_step(log_w[t], t)
        log_marginal += inc

    return ParticleSystem(thetas, regimes, log_w, norm_w, ancestors, log_marginal)


def run_csmc_as(
    y: np.ndarray,
    params: ParameterSet,
    priors: PriorSpec,
    reference: ReferenceTrajectory,
    m_per_regime: int,
    rng: np.random.Generator,
) -> ParticleSystem:
    """Conditional SMC with block-deterministic regimes and ancestor sampling.

    Regimes are assigned deterministically in K blocks of M particles;
    the reference pair overwrites the last slot of its regime's block at
    every step, and its ancestor is redrawn with ancestor-sampling
    weights.  Non-reference ancestors are M multinomial draws from the
    previous weights, replicated across the K blocks.
    """
    y = np.asarray(y, dtype=float)
    horizon, m, k = len(y), m_per_regime, params.n_regimes
    if m < 2:
        raise ValueError("need at least two particles per regime")
    ref = reference.path
    if len(ref) != horizon:
        raise ValueError("reference length must match the observation series")
    if np.any(ref.regimes < 0) or np.any(ref.regimes >= k):
        raise ValueError("reference regimes out of range")
    if np.any(np.abs(ref.thetas.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("reference states are off the simplex")

    n = k * m
    block_regimes = np.repeat(np.arange(k), m)

    thetas = np.empty((horizon, n, 4))
    regimes = np.empty((horizon, n), dtype=int)
    log_w = np.empty((horizon, n))
    norm_w = np.empty((horizon, n))
    ancestors = np.empty((max(horizon - 1, 0), n), dtype=int)

    def ref_slot(t: int) -> int:
        return (int(ref.regimes[t]) + 1) * m - 1

    thetas[0] = _draw_initial_thetas(priors, n, rng, False)
    regimes[0] = block_regimes
    s0 = ref_slot(0)
    thetas[0, s0] = ref.thetas[0]
    regimes[0, s0] = ref.regimes[0]
    log_w[0] = _obs_log_weights(y[0], thetas[0], 0, params)
    norm_w[0], log_marginal = _normalize_step(log_w[0], 0)

    for t in range(1, horizon):
        anc = np.tile(_resample_indices(norm_w[t - 1], m, rng), k)
        regimes[t] = block_regimes
        thetas[t] = _propagate(thetas[t - 1][anc], regimes[t], params, rng, False)

        slot = ref_slot(t)
        thetas[t, slot] = ref.thetas[t]
        regimes[t, slot] = ref.regimes[t]
        anc[slot] = _ancestor_sampling_draw(
            ref.thetas[t],
            int(ref.regimes[t]),
            thetas[t - 1],
            regimes[t - 1],
            norm_w[t - 1],
            params,
            rng,
            t,
        )
        ancestors[t - 1] = anc

        log_w[t] = _obs_log_weights(y[t], thetas[t], t, params)
        norm_w[t], inc = _normalize_step(log_w[t], t)
        log_marginal += inc

    return ParticleSystem(thetas, regimes, log_w, norm_w, ancestors, log_marginal)


def _ancestor_sampling_draw(
    theta_ref: np.ndarray,
    x_ref: int,
    thetas_prev: np.ndarray,
    regimes_prev: np.ndarray,
    norm_w_prev: np.ndarray,
    params: ParameterSet,
    rng: np.random.Generator,
    t: int,
) -> int:
    """Draw the reference particle's ancestor index.

    Weights are proportional to transition density to the reference state
    times regime transition probability times the previous normalized
    weight (the observation factor is constant across candidates and
    drops out of the normalization).
    """
    eta = transition_mean(thetas_prev, np.full(len(thetas_prev), x_ref), params)
    log_g = dirichlet_logpdf(theta_ref, DirichletParams(params.kappa * eta))
    p_x = params.trans_matrix[regimes_prev, x_ref]
    with np.errstate(divide="ignore"):
        log_as = log_g + np.log(p_x) + np.log(norm_w_prev)
    total = logsumexp(log_as)
    if not np.isfinite(total):
        raise DegenerateWeightsError(t, "ancestor-sampling weights all zero")
    w = np.exp(log_as - total)
    return sample_categorical(w / w.sum(), rng)


def sample_reference(
    system: ParticleSystem, rng: np.random.Generator
) -> ReferenceTrajectory:
    """Draw a trajectory from the particle system by backward lineage trace."""
    horizon = system.n_steps
    lineage = np.empty(horizon, dtype=int)
    lineage[-1] = sample_categorical(system.norm_weights[-1], rng)
    for t in range(horizon - 2, -1, -1):
        lineage[t] = system.ancestors[t][lineage[t + 1]]
    idx = np.arange(horizon)
    path = LatentPath(system.thetas[idx, lineage], system.regimes[idx, lineage])
    return ReferenceTrajectory(path, lineage)


def estimate_log_marginal(system: ParticleSystem) -> float:
    """Marginal log likelihood estimate from the unnormalized weights."""
    n = system.n_particles
    total = 0.0
    for t in range(system.n_steps):
        step = logsumexp(system.log_weights[t]) - math.log(n)
        if not np.isfinite(step):
            return -math.inf
        total += step
    return total
