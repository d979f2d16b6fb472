"""Posterior summaries, Gelman-Rubin convergence checks, and marginal-
likelihood comparison across regime counts."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .model import ParameterSet, PriorSpec
from .pg import ChainRecord, SamplerConfig, run_pg


def param_values(params: ParameterSet) -> dict[str, float]:
    """Flatten psi into labeled scalars for reporting.

    Identification rates are labeled p (single segment) or p1..pJ;
    modifiers f2..fK; transition entries pi_ij with 1-based indices.
    """
    out = {
        "alpha": params.alpha,
        "beta": params.beta,
        "gamma": params.gamma,
        "lambda": params.lambda_,
        "kappa": params.kappa,
    }
    if len(params.ident_rates) == 1:
        out["p"] = params.ident_rates[0][0]
    else:
        for j, (rate, _) in enumerate(params.ident_rates):
            out[f"p{j + 1}"] = rate
    for k in range(1, params.n_regimes):
        out[f"f{k + 1}"] = float(params.modifiers[k])
    if params.n_regimes >= 2:
        for i in range(params.n_regimes):
            for j in range(params.n_regimes):
                out[f"pi_{i + 1}{j + 1}"] = float(params.trans_matrix[i, j])
    return out


@dataclass(frozen=True)
class ParamStats:
    mean: float
    median: float
    sd: float
    ci_lo: float
    ci_hi: float


@dataclass(frozen=True)
class PosteriorSummary:
    """Pooled posterior summary.

    params maps each label (plus derived r0 = beta/gamma) to its
    statistics; regime_probs[t, k] is the posterior probability of
    regime k at time t; the curve arrays give posterior means and
    equal-tailed 95% bands per time point.
    """

    params: dict[str, ParamStats]
    regime_probs: np.ndarray
    seir_mean: np.ndarray
    seir_lo: np.ndarray
    seir_hi: np.ndarray
    ey_mean: np.ndarray
    ey_lo: np.ndarray
    ey_hi: np.ndarray

    @property
    def n_regimes(self) -> int:
        return self.regime_probs.shape[1]


def _stats(values: np.ndarray) -> ParamStats:
    if np.all(values == values[0]):
        point = float(values[0])
        return ParamStats(point, point, 0.0, point, point)
    lo, med, hi = np.quantile(values, [0.025, 0.5, 0.975])
    return ParamStats(
        mean=float(values.mean()),
        median=float(med),
        sd=float(values.std(ddof=1)) if len(values) > 1 else 0.0,
        ci_lo=float(lo),
        ci_hi=float(hi),
    )


def summarize(chains: list[list[ChainRecord]]) -> PosteriorSummary:
    """Pool post-burn-in records across chains into a posterior summary."""
    if not chains or any(len(c) == 0 for c in chains):
        raise ValueError("summarize needs at least one non-empty chain")
    records = [rec for chain in chains for rec in chain]
    if len(records) < 100:
        raise ValueError("need at least 100 retained records to summarize")

    labels = list(param_values(records[0].params))
    columns = {lab: np.empty(len(records)) for lab in labels}
    for i, rec in enumerate(records):
        vals = param_values(rec.params)
        for lab in labels:
            columns[lab][i] = vals[lab]
    stats = {lab: _stats(col) for lab, col in columns.items()}
    stats["r0"] = _stats(columns["beta"] / columns["gamma"])

    horizon = len(records[0].path)
    k = records[0].params.n_regimes
    thetas = np.stack([rec.path.thetas for rec in records])
    regimes = np.stack([rec.path.regimes for rec in records])
    regime_probs = np.stack(
        [(regimes == j).mean(axis=0) for j in range(k)], axis=1
    )
    ey = np.stack(
        [
            rec.params.ident_series(horizon) * rec.path.thetas[:, 2]
            for rec in records
        ]
    )
    seir_lo, seir_hi = np.quantile(thetas, [0.025, 0.975], axis=0)
    ey_lo, ey_hi = np.quantile(ey, [0.025, 0.975], axis=0)
    return PosteriorSummary(
        params=stats,
        regime_probs=regime_probs,
        seir_mean=thetas.mean(axis=0),
        seir_lo=seir_lo,
        seir_hi=seir_hi,
        ey_mean=ey.mean(axis=0),
        ey_lo=ey_lo,
        ey_hi=ey_hi,
    )


def classify_regimes(summary: PosteriorSummary) -> np.ndarray:
    """Most probable regime per time point (0-based)."""
    return summary.regime_probs.argmax(axis=1)


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor of one scalar across chains.

    chains is an (m, n) array-like of m >= 2 equal-length chains with
    n >= 10.  Raises when the within-chain variance is zero.
    """
    z = np.asarray(chains, dtype=float)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError("need >= 2 equal-length chains")
    m, n = z.shape
    if n < 10:
        raise ValueError("chains must have length >= 10")
    within = z.var(axis=1, ddof=1).mean()
    if within == 0:
        raise ValueError("within-chain variance is zero")
    between = n * z.mean(axis=1).var(ddof=1)
    return float(math.sqrt(((n - 1) / n * within + between / n) / within))


def gelman_rubin_table(chains: list[list[ChainRecord]]) -> dict[str, float]:
    """R-hat per reported parameter across >= 2 chains of records."""
    if len(chains) < 2:
        raise ValueError("Gelman-Rubin needs at least two chains")
    n = min(len(c) for c in chains)
    if n < 10:
        raise ValueError("chains must have at least 10 records each")
    labels = list(param_values(chains[0][0].params)) + ["r0"]
    out = {}
    for lab in labels:
        z = np.empty((len(chains), n))
        for i, chain in enumerate(chains):
            for j in range(n):
                vals = param_values(chain[j].params)
                z[i, j] = (
                    vals["beta"] / vals["gamma"] if lab == "r0" else vals[lab]
                )
        out[lab] = gelman_rubin(z)
    return out


@dataclass(frozen=True)
class SelectionRow:
    n_regimes: int
    log_ml_mean: float
    log_ml_sd: float
    n_records: int
    error: str | None = None


@dataclass(frozen=True)
class ModelSelectionReport:
    """Per-K marginal-likelihood scores, sorted best first."""

    rows: list[SelectionRow]


def score_records(records: list[ChainRecord]) -> tuple[float, float]:
    """Mean and SD of the per-iteration marginal log likelihoods.

    The score is the mean of the logs (not the log of the mean), with
    the spread reported across retained iterations.
    """
    lm = np.array([rec.log_marginal for rec in records])
    sd = float(lm.std(ddof=1)) if len(lm) > 1 else 0.0
    return float(lm.mean()), sd


def _fit_candidate(task) -> SelectionRow:
    k, y, priors, cfg = task
    try:
        records = run_pg(y, priors, cfg)
        mean, sd = score_records(records)
        return SelectionRow(k, mean, sd, len(records))
    except Exception as exc:  # per-K failures are reported, not fatal
        return SelectionRow(k, -math.inf, math.nan, 0, str(exc))


def select_regimes(
    y: np.ndarray,
    priors_by_k: dict[int, PriorSpec],
    candidate_ks: list[int],
    config: SamplerConfig,
    jobs: int = 1,
) -> ModelSelectionReport:
    """Fit each candidate regime count and compare marginal likelihoods.

    Seeds are offset by K so candidate fits are independent; a failing
    fit is reported in its row rather than aborting the others.  With
    jobs > 1 the candidate fits run in parallel processes.
    """
    tasks = [
        (k, y, priors_by_k[k], dc_replace(config, seed=config.seed + k))
        for k in candidate_ks
    ]
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_fit_candidate, tasks))
    else:
        rows = [_fit_candidate(t) for t in tasks]
    rows.sort(key=lambda r: r.log_ml_mean, reverse=True)
    return ModelSelectionReport(rows)
