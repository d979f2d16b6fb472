"""Data ingestion, simulation scenarios, configuration, and serialization.

File formats (all delimited text; numbers printed with 17 significant
digits so values round-trip exactly):

- case counts (input): two columns ``label,active_count``, header
  optional; counts are divided by the population and clamped to
  (1e-6, 1 - 1e-6).
- proportions (input/output): two columns ``label,y``.
- truth sidecar: ``t,S,E,I,R,regime`` with 1-based t and regimes.
- chain files: one JSON header line, then one JSON record per retained
  iteration (schema below); append-friendly.
- checkpoint: single JSON object with the full sampler state.
- summary table: ``parameter,mean,median,sd,ci_lo,ci_hi``.
- regime curves: ``t,label,p_regime_1..K,y_obs,Ey_mean,Ey_lo,Ey_hi``.
- SEIR curves: ``t,S_mean,S_lo,S_hi,...,R_hi``.
- model selection: ``K,log_ml_mean,log_ml_sd``.
- particle dump: ``t,particle,regime,S,E,I,R,log_weight,norm_weight,
  ancestor`` (ancestor is -1 at t=1).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .distributions import DirichletParams, GammaParams, TruncNormalParams
from .model import OBS_EPS, LatentPath, ParameterSet, PriorSpec, simulate_dataset
from .pg import ChainRecord, PgState, SamplerConfig
from .rng import TAG_SIM, substream
from .smc import ParticleSystem, ReferenceTrajectory

CHAIN_SCHEMA = 1
OBS_CLAMP = OBS_EPS


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


class ChainFileError(ValueError):
    """Unreadable chain file; carries the last complete record index."""

    def __init__(self, msg: str, last_complete: int):
        super().__init__(msg)
        self.last_complete = last_complete


def fmt(x) -> str:
    """Render a number with 17 significant digits (exact float round trip)."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


@dataclass(frozen=True)
class Dataset:
    """An observed series of infectious proportions."""

    times: tuple[str, ...]
    y: np.ndarray
    population: float | None = None

    def __post_init__(self):
        yy = np.asarray(self.y, dtype=float)
        if len(self.times) != len(yy):
            raise ValueError("times and y lengths differ")
        if np.any((yy <= 0) | (yy >= 1)):
            raise ValueError("proportions must lie strictly inside (0, 1)")
        yy.setflags(write=False)
        object.__setattr__(self, "y", yy)
        object.__setattr__(self, "times", tuple(str(t) for t in self.times))

    @property
    def horizon(self) -> int:
        return len(self.y)


def _split_csv_line(line: str) -> list[str]:
    return [cell.strip() for cell in line.strip().split(",")]


def load_counts(path, population: float, aggregation: str = "none") -> Dataset:
    """Read a label,active_count file into clamped infectious proportions.

    aggregation="weekly" averages consecutive chunks of up to 7 daily
    rows into one weekly value (the rule is recorded in output headers).
    """
    if aggregation not in ("none", "weekly"):
        raise ValueError("aggregation must be 'none' or 'weekly'")
    if population <= 0:
        raise ValueError("population must be positive")
    labels: list[str] = []
    counts: list[float] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            cells = _split_csv_line(line)
            if len(cells) != 2:
                raise ValueError(f"{path}: line {lineno}: expected 2 columns")
            label, raw = cells
            try:
                value = float(raw)
            except ValueError:
                if lineno == 1:
                    continue  # header row
                raise ValueError(
                    f"{path}: line {lineno}: non-numeric count {raw!r}"
                ) from None
            if value < 0:
                raise ValueError(f"{path}: line {lineno}: negative count")
            if value > population:
                raise ValueError(
                    f"{path}: line {lineno}: count exceeds population"
                )
            labels.append(label)
            counts.append(value)
    if not counts:
        raise ValueError(f"{path}: no data rows")
    series = np.asarray(counts)
    if aggregation == "weekly":
        weekly = [series[i : i + 7].mean() for i in range(0, len(series), 7)]
        labels = [labels[i] for i in range(0, len(series), 7)]
        series = np.asarray(weekly)
    y = np.clip(series / population, OBS_CLAMP, 1.0 - OBS_CLAMP)
    return Dataset(tuple(labels), y, population)


def load_proportions(path) -> Dataset:
    """Read a label,proportion file (clamped to the open interval)."""
    labels: list[str] = []
    values: list[float] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            cells = _split_csv_line(line)
            if len(cells) != 2:
                raise ValueError(f"{path}: line {lineno}: expected 2 columns")
            try:
                value = float(cells[1])
            except ValueError:
                if lineno == 1:
                    continue
                raise ValueError(
                    f"{path}: line {lineno}: non-numeric value {cells[1]!r}"
                ) from None
            labels.append(cells[0])
            values.append(value)
    y = np.clip(np.asarray(values), OBS_CLAMP, 1.0 - OBS_CLAMP)
    return Dataset(tuple(labels), y)


# --- simulation scenarios ---------------------------------------------------

SCENARIOS = {
    "two-regime": dict(
        horizon=150,
        alpha=1.0 / 3.0,
        beta=0.39,
        gamma=0.18,
        lambda_=2500.0,
        kappa=5500.0,
        ident=0.25,
        modifiers=(1.0, 0.1),
        trans_matrix=((0.9, 0.1), (0.1, 0.9)),
        theta1=(0.99, 0.001, 0.003, 0.006),
        x1=0,
    ),
    "three-regime": dict(
        horizon=175,
        alpha=0.3,
        beta=0.5,
        gamma=0.2,
        lambda_=2000.0,
        kappa=8000.0,
        ident=0.25,
        modifiers=(1.0, 0.6, 0.05),
        trans_matrix=(
            (0.94, 0.03, 0.03),
            (0.03, 0.94, 0.03),
            (0.03, 0.03, 0.94),
        ),
        theta1=(0.99, 0.001, 0.003, 0.006),
        x1=0,
    ),
}


def scenario_params(name: str) -> ParameterSet:
    """True parameter values of a named simulation scenario."""
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; have {sorted(SCENARIOS)}")
    s = SCENARIOS[name]
    return ParameterSet(
        alpha=s["alpha"],
        beta=s["beta"],
        gamma=s["gamma"],
        lambda_=s["lambda_"],
        kappa=s["kappa"],
        ident_rates=((s["ident"], 0),),
        trans_matrix=np.asarray(s["trans_matrix"]),
        modifiers=np.asarray(s["modifiers"]),
    )


def scenario_priors(name: str) -> PriorSpec:
    """Fitting priors matching a named scenario's regime count."""
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; have {sorted(SCENARIOS)}")
    k = len(SCENARIOS[name]["modifiers"])
    lam = GammaParams(2.0, 0.001) if name == "two-regime" else GammaParams(20.0, 0.01)
    return PriorSpec(
        n_regimes=k,
        alpha=TruncNormalParams(0.3, 0.1, 0.0, math.inf),
        beta=TruncNormalParams(0.4, 0.1, 0.0, math.inf),
        gamma=TruncNormalParams(0.2, 0.1, 0.0, math.inf),
        lambda_=lam,
        kappa=GammaParams(200.0, 0.01),
        ident=(TruncNormalParams(0.25, 0.05, 0.1, 0.4),),
        row_concentrations=diagonal_row_priors(k),
    )


def diagonal_row_priors(n_regimes: int, stay: float = 10.0) -> tuple:
    """Stay-favoring Dirichlet row priors (concentration `stay` on the
    diagonal, 1 elsewhere); empty for a single-regime model."""
    if n_regimes == 1:
        return ()
    return tuple(
        tuple(stay if i == j else 1.0 for j in range(n_regimes))
        for i in range(n_regimes)
    )


def priors_for_k(base: PriorSpec, n_regimes: int) -> PriorSpec:
    """Re-target a prior specification at a different regime count.

    Scalar priors are kept; row priors follow the stay-favoring rule and
    modifier bands are implied by the regime count.
    """
    return PriorSpec(
        n_regimes=n_regimes,
        alpha=base.alpha,
        beta=base.beta,
        gamma=base.gamma,
        lambda_=base.lambda_,
        kappa=base.kappa,
        ident=base.ident,
        ident_start_times=base.ident_start_times,
        row_concentrations=diagonal_row_priors(n_regimes),
        theta1=base.theta1,
    )


def generate_simulation(
    scenario: str | None = None,
    seed: int = 0,
    params: ParameterSet | None = None,
    priors: PriorSpec | None = None,
    horizon: int | None = None,
    initial: tuple | None = None,
) -> tuple[Dataset, LatentPath, ParameterSet]:
    """Simulate a dataset from a named scenario or explicit ingredients."""
    if scenario is not None:
        params = scenario_params(scenario)
        priors = scenario_priors(scenario)
        s = SCENARIOS[scenario]
        horizon = s["horizon"]
        initial = (np.asarray(s["theta1"]), s["x1"])
    if params is None or priors is None or horizon is None:
        raise ValueError("need a scenario name or explicit params/priors/horizon")
    rng = substream(seed, TAG_SIM)
    y, path = simulate_dataset(params, priors, horizon, rng, initial=initial)
    times = tuple(str(t + 1) for t in range(horizon))
    return Dataset(times, y), path, params


# --- JSON serialization of model objects ------------------------------------


def params_to_dict(params: ParameterSet) -> dict:
    return {
        "alpha": float(params.alpha),
        "beta": float(params.beta),
        "gamma": float(params.gamma),
        "lambda": float(params.lambda_),
        "kappa": float(params.kappa),
        "ident_rates": [[float(p), int(s)] for p, s in params.ident_rates],
        "trans_matrix": [[float(v) for v in row] for row in params.trans_matrix],
        "modifiers": [float(v) for v in params.modifiers],
    }


def params_from_dict(d: dict) -> ParameterSet:
    return ParameterSet(
        alpha=d["alpha"],
        beta=d["beta"],
        gamma=d["gamma"],
        lambda_=d["lambda"],
        kappa=d["kappa"],
        ident_rates=tuple((p, s) for p, s in d["ident_rates"]),
        trans_matrix=np.asarray(d["trans_matrix"]),
        modifiers=np.asarray(d["modifiers"]),
    )


def path_to_dict(path: LatentPath) -> dict:
    return {
        "thetas": [[float(v) for v in row] for row in path.thetas],
        "regimes": [int(v) for v in path.regimes],
    }


def path_from_dict(d: dict) -> LatentPath:
    return LatentPath(np.asarray(d["thetas"]), np.asarray(d["regimes"]))


def priors_to_dict(priors: PriorSpec) -> dict:
    def tn(p: TruncNormalParams) -> dict:
        out = {"mean": p.mean, "sd": p.sd}
        if math.isfinite(p.lower):
            out["lower"] = p.lower
        if math.isfinite(p.upper):
            out["upper"] = p.upper
        return out

    return {
        "alpha": tn(priors.alpha),
        "beta": tn(priors.beta),
        "gamma": tn(priors.gamma),
        "lambda": {"shape": priors.lambda_.shape, "rate": priors.lambda_.rate},
        "kappa": {"shape": priors.kappa.shape, "rate": priors.kappa.rate},
        "ident": [tn(p) for p in priors.ident],
        "rows": [list(row) for row in priors.row_concentrations],
        "theta1": [float(v) for v in priors.theta1.concentration],
    }


def priors_from_dict(d: dict, n_regimes: int, ident_start_times=(0,)) -> PriorSpec:
    def tn(e: dict, default_lower=0.0, default_upper=math.inf) -> TruncNormalParams:
        return TruncNormalParams(
            e["mean"],
            e["sd"],
            e.get("lower", default_lower),
            e.get("upper", default_upper),
        )

    rows = tuple(tuple(float(c) for c in row) for row in d.get("rows", ()))
    if n_regimes == 1:
        rows = ()
    elif not rows:
        rows = diagonal_row_priors(n_regimes)
    return PriorSpec(
        n_regimes=n_regimes,
        alpha=tn(d["alpha"]),
        beta=tn(d["beta"]),
        gamma=tn(d["gamma"]),
        lambda_=GammaParams(d["lambda"]["shape"], d["lambda"]["rate"]),
        kappa=GammaParams(d["kappa"]["shape"], d["kappa"]["rate"]),
        ident=tuple(tn(e) for e in d["ident"]),
        ident_start_times=tuple(ident_start_times),
        row_concentrations=rows,
        theta1=DirichletParams(
            np.asarray(d.get("theta1", [100.0, 1.0, 1.0, 1.0]))
        ),
    )


# --- chain files -------------------------------------------------------------


def chain_header(n_regimes: int, horizon: int, config_hash: str, seed: int) -> dict:
    return {
        "kind": "switchseir-chain",
        "schema": CHAIN_SCHEMA,
        "n_regimes": n_regimes,
        "horizon": horizon,
        "config_hash": config_hash,
        "seed": seed,
    }


def record_to_dict(rec: ChainRecord) -> dict:
    return {
        "iteration": rec.iteration,
        "log_marginal": float(rec.log_marginal),
        "params": params_to_dict(rec.params),
        "path": path_to_dict(rec.path),
        "accepted": {pid: list(map(bool, f)) for pid, f in rec.mh_accepted.items()},
    }


def record_from_dict(d: dict) -> ChainRecord:
    return ChainRecord(
        iteration=d["iteration"],
        params=params_from_dict(d["params"]),
        path=path_from_dict(d["path"]),
        log_marginal=d["log_marginal"],
        mh_accepted={pid: tuple(f) for pid, f in d["accepted"].items()},
    )


def _json_line(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=True) + "\n"


def write_chain(path, records: list[ChainRecord], header: dict) -> None:
    """Write a complete chain file (header line + one record per line)."""
    with open(path, "w") as fh:
        fh.write(_json_line(header))
        for rec in records:
            fh.write(_json_line(record_to_dict(rec)))


def append_chain_record(fh, rec: ChainRecord) -> None:
    fh.write(_json_line(record_to_dict(rec)))
    fh.flush()


def read_chain(path) -> tuple[dict, list[ChainRecord]]:
    """Read a chain file; raises ChainFileError naming the last complete
    record when the file is truncated or corrupt."""
    with open(path) as fh:
        lines = fh.readlines()
    if not lines:
        raise ChainFileError(f"{path}: empty chain file", last_complete=-1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError:
        raise ChainFileError(f"{path}: unreadable header", last_complete=-1) from None
    if header.get("kind") != "switchseir-chain":
        raise ChainFileError(f"{path}: not a chain file", last_complete=-1)
    if header.get("schema") != CHAIN_SCHEMA:
        raise ChainFileError(
            f"{path}: schema version {header.get('schema')} unsupported "
            f"(expected {CHAIN_SCHEMA})",
            last_complete=-1,
        )
    records = []
    for i, line in enumerate(lines[1:], start=1):
        if not line.strip():
            continue
        try:
            records.append(record_from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError):
            raise ChainFileError(
                f"{path}: record {i} unreadable; last complete record is "
                f"{i - 1}",
                last_complete=i - 1,
            ) from None
    return header, records


def truncate_chain(path, n_records: int) -> None:
    """Keep the header and the first n_records records (crash cleanup)."""
    with open(path) as fh:
        lines = fh.readlines()
    with open(path, "w") as fh:
        fh.writelines(lines[: n_records + 1])


# --- checkpoints -------------------------------------------------------------


def state_to_dict(state: PgState, config_hash: str, seed: int) -> dict:
    return {
        "kind": "switchseir-checkpoint",
        "schema": CHAIN_SCHEMA,
        "config_hash": config_hash,
        "seed": seed,
        "iteration": state.iteration,
        "params": params_to_dict(state.params),
        "reference": {
            "path": path_to_dict(state.reference.path),
            "lineage": [int(v) for v in state.reference.lineage],
        },
        "step_sizes": {k: float(v) for k, v in state.step_sizes.items()},
        "window_counts": state.window_counts,
        "total_counts": state.total_counts,
        "n_emitted": state.n_emitted,
        "n_degenerate": state.n_degenerate,
    }


def state_from_dict(d: dict) -> PgState:
    ref = ReferenceTrajectory(
        path_from_dict(d["reference"]["path"]),
        np.asarray(d["reference"]["lineage"]),
    )
    return PgState(
        iteration=d["iteration"],
        params=params_from_dict(d["params"]),
        reference=ref,
        step_sizes=dict(d["step_sizes"]),
        window_counts={k: list(v) for k, v in d["window_counts"].items()},
        total_counts={k: list(v) for k, v in d["total_counts"].items()},
        n_emitted=d["n_emitted"],
        n_degenerate=d["n_degenerate"],
    )


def write_checkpoint(path, state: PgState, config_hash: str, seed: int) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(_json_line(state_to_dict(state, config_hash, seed)))
    os.replace(tmp, path)


def read_checkpoint(path) -> dict:
    with open(path) as fh:
        d = json.load(fh)
    if d.get("kind") != "switchseir-checkpoint":
        raise ValueError(f"{path}: not a checkpoint file")
    return d


# --- run configuration -------------------------------------------------------

_CONFIG_BLOCKS = {"model", "priors", "sampler", "data", "output"}
_MODEL_KEYS = {"n_regimes", "ident_change_times"}
_PRIOR_KEYS = {"alpha", "beta", "gamma", "lambda", "kappa", "ident", "rows", "theta1"}
_SAMPLER_KEYS = {
    "n_iterations",
    "burn_in",
    "m_per_regime",
    "seed",
    "mh_sweeps_per_iter",
    "step_sizes",
    "thin",
}
_DATA_KEYS = {"path", "population", "aggregation", "format"}
_OUTPUT_KEYS = {"directory", "dump_particles"}


@dataclass(frozen=True)
class RunConfig:
    """Parsed and validated run configuration."""

    n_regimes: int
    priors: PriorSpec
    sampler: SamplerConfig
    data: dict
    output: dict
    raw: dict

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    """Hash of everything that must match for chains to be comparable.

    The iteration count is excluded so a finished short run can be
    resumed to a longer one.
    """
    hashed = {
        "model": raw.get("model"),
        "priors": raw.get("priors"),
        "sampler": {
            k: v
            for k, v in raw.get("sampler", {}).items()
            if k != "n_iterations"
        },
        "data": raw.get("data"),
    }
    blob = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _check_keys(block: str, entries: dict, allowed: set) -> None:
    for key in entries:
        if key not in allowed:
            raise ConfigError(f"unknown config key {block}.{key}")


def parse_config(raw: dict) -> RunConfig:
    """Validate a config dict (see README for the schema)."""
    for block in raw:
        if block not in _CONFIG_BLOCKS:
            raise ConfigError(f"unknown config block {block!r}")
    for block in ("model", "priors", "sampler", "data"):
        if block not in raw:
            raise ConfigError(f"missing config block {block!r}")
    _check_keys("model", raw["model"], _MODEL_KEYS)
    _check_keys("priors", raw["priors"], _PRIOR_KEYS)
    _check_keys("sampler", raw["sampler"], _SAMPLER_KEYS)
    _check_keys("data", raw["data"], _DATA_KEYS)
    _check_keys("output", raw.get("output", {}), _OUTPUT_KEYS)

    model = raw["model"]
    if "n_regimes" not in model:
        raise ConfigError("missing config key model.n_regimes")
    n_regimes = int(model["n_regimes"])
    change_times = model.get("ident_change_times", [1])
    if not change_times or int(change_times[0]) != 1:
        raise ConfigError("model.ident_change_times must start with 1")
    starts = tuple(int(t) - 1 for t in change_times)

    try:
        priors = priors_from_dict(raw["priors"], n_regimes, starts)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"priors block incomplete: missing {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"priors block invalid: {exc}") from None

    sampler_raw = dict(raw["sampler"])
    try:
        sampler = SamplerConfig(**sampler_raw)
    except TypeError as exc:
        raise ConfigError(f"sampler block invalid: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"sampler block invalid: {exc}") from None

    data = dict(raw["data"])
    if "path" not in data:
        raise ConfigError("missing config key data.path")
    data.setdefault("aggregation", "none")
    data.setdefault("format", "counts")
    if data["format"] not in ("counts", "proportions"):
        raise ConfigError("data.format must be 'counts' or 'proportions'")
    if data["format"] == "counts" and "population" not in data:
        raise ConfigError("missing config key data.population")

    output = dict(raw.get("output", {}))
    output.setdefault("directory", "out")
    output.setdefault("dump_particles", False)
    return RunConfig(n_regimes, priors, sampler, data, output, raw)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return parse_config(raw)


def load_dataset(data_block: dict, base_dir=".") -> Dataset:
    """Load the observation series named by a config data block."""
    path = data_block["path"]
    if not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    if data_block.get("format", "counts") == "proportions":
        return load_proportions(path)
    return load_counts(
        path,
        float(data_block["population"]),
        data_block.get("aggregation", "none"),
    )


# --- output writers ----------------------------------------------------------


def write_dataset(path, dataset: Dataset) -> None:
    with open(path, "w") as fh:
        fh.write("label,y\n")
        for label, value in zip(dataset.times, dataset.y):
            fh.write(f"{label},{fmt(value)}\n")


def write_truth(path, latent: LatentPath) -> None:
    with open(path, "w") as fh:
        fh.write("t,S,E,I,R,regime\n")
        for t in range(len(latent)):
            cells = [str(t + 1)]
            cells += [fmt(v) for v in latent.thetas[t]]
            cells.append(str(int(latent.regimes[t]) + 1))
            fh.write(",".join(cells) + "\n")


def read_truth(path) -> LatentPath:
    thetas = []
    regimes = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            cells = _split_csv_line(line)
            thetas.append([float(v) for v in cells[1:5]])
            regimes.append(int(cells[5]) - 1)
    return LatentPath(np.asarray(thetas), np.asarray(regimes))


def write_summary_table(path, summary) -> None:
    with open(path, "w") as fh:
        fh.write("parameter,mean,median,sd,ci_lo,ci_hi\n")
        for name, st in summary.params.items():
            fh.write(
                f"{name},{fmt(st.mean)},{fmt(st.median)},{fmt(st.sd)},"
                f"{fmt(st.ci_lo)},{fmt(st.ci_hi)}\n"
            )


def write_regime_curves(path, summary, dataset: Dataset) -> None:
    k = summary.n_regimes
    with open(path, "w") as fh:
        cols = ["t", "label"]
        cols += [f"p_regime_{j + 1}" for j in range(k)]
        cols += ["y_obs", "Ey_mean", "Ey_lo", "Ey_hi"]
        fh.write(",".join(cols) + "\n")
        for t in range(dataset.horizon):
            cells = [str(t + 1), dataset.times[t]]
            cells += [fmt(summary.regime_probs[t, j]) for j in range(k)]
            cells += [
                fmt(dataset.y[t]),
                fmt(summary.ey_mean[t]),
                fmt(summary.ey_lo[t]),
                fmt(summary.ey_hi[t]),
            ]
            fh.write(",".join(cells) + "\n")


def write_seir_curves(path, summary) -> None:
    names = ["S", "E", "I", "R"]
    with open(path, "w") as fh:
        cols = ["t"]
        for name in names:
            cols += [f"{name}_mean", f"{name}_lo", f"{name}_hi"]
        fh.write(",".join(cols) + "\n")
        for t in range(summary.seir_mean.shape[0]):
            cells = [str(t + 1)]
            for j in range(4):
                cells += [
                    fmt(summary.seir_mean[t, j]),
                    fmt(summary.seir_lo[t, j]),
                    fmt(summary.seir_hi[t, j]),
                ]
            fh.write(",".join(cells) + "\n")


def write_selection_table(path, report) -> None:
    with open(path, "w") as fh:
        fh.write("K,log_ml_mean,log_ml_sd\n")
        for row in report.rows:
            fh.write(
                f"{row.n_regimes},{fmt(row.log_ml_mean)},{fmt(row.log_ml_sd)}\n"
            )


def write_rhat_table(path, rhats: dict, threshold: float = 1.2) -> None:
    with open(path, "w") as fh:
        fh.write("parameter,rhat,status\n")
        for name, value in rhats.items():
            status = "PASS" if value < threshold else "FAIL"
            fh.write(f"{name},{fmt(value)},{status}\n")


def dump_particle_system(path, system: ParticleSystem) -> None:
    """Columnar debugging dump of a particle system (schema in module doc)."""
    with open(path, "w") as fh:
        fh.write(
            "t,particle,regime,S,E,I,R,log_weight,norm_weight,ancestor\n"
        )
        for t in range(system.n_steps):
            for i in range(system.n_particles):
                anc = int(system.ancestors[t - 1, i]) if t > 0 else -1
                cells = [str(t + 1), str(i + 1), str(int(system.regimes[t, i]) + 1)]
                cells += [fmt(v) for v in system.thetas[t, i]]
                cells += [
                    fmt(system.log_weights[t, i]),
                    fmt(system.norm_weights[t, i]),
                    str(anc),
                ]
                fh.write(",".join(cells) + "\n")
