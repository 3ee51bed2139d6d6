"""Experiment configuration, single-run orchestration, batch execution, and
trace replay.

A run is fully determined by (config, master_seed, run_index): the run seed
derives from the master seed, and every random draw (initial energy split,
merge-key shuffle, scheduler picks, exchange ratios, loss fractions) comes
from one MT19937 stream seeded with it, in a fixed order.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

from .core import EnergyState, Population, TreeNetwork
from .energy import EnergyProtocol, LossModel, parse_energy_protocol
from .errors import ConfigError, DomainError, ReplayMismatch
from .formation import FormationProtocol, snapshot_digest
from .metrics import energy_distance, write_metrics_csv
from .runner import (
    BASIS_INITIAL,
    BASIS_POST_FORMATION,
    CONCURRENT,
    TWOPHASE,
    RecordedEnergyDriver,
    SimOutcome,
    pair_count,
    simulate,
)
from .scheduler import (
    InteractionTrace,
    RandomScheduler,
    ScriptedScheduler,
    derive_run_seed,
    make_rng,
    write_trace,
)

UNIFORM = "uniform"
RANDOM = "random"

RUNS_CSV_HEADER = [
    "run_index",
    "seed",
    "formation_steps",
    "estimation_steps",
    "tau",
    "converged",
    "ed",
    "ed_percent",
    "loss_percent",
]


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 10
    protocol: str = "kary:2"  # formation protocol spec
    energy_protocol: Optional[str] = "lambda:2"
    loss: str = "lossless"
    initial_energy: str = UNIFORM
    total_energy: Optional[float] = None  # default n * 1e3
    repetitions: int = 100
    master_seed: int = 42
    step_budget: Optional[int] = None  # per phase; default 500 * C(n,2)
    phase_mode: str = TWOPHASE
    target_energy_basis: str = BASIS_POST_FORMATION
    quiescence_window: Optional[int] = None  # default 10 * C(n,2)
    metric_cadence: Optional[int] = None  # default 1 for n <= 10, else n
    emit_traces: bool = False
    emit_metrics: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.initial_energy not in (UNIFORM, RANDOM):
            raise ConfigError(f"unknown initial energy mode {self.initial_energy!r}")
        if self.phase_mode not in (TWOPHASE, CONCURRENT):
            raise ConfigError(f"unknown phase mode {self.phase_mode!r}")
        if self.target_energy_basis not in (BASIS_INITIAL, BASIS_POST_FORMATION):
            raise ConfigError(f"unknown target basis {self.target_energy_basis!r}")
        if self.phase_mode == CONCURRENT and self.target_energy_basis != BASIS_INITIAL:
            raise ConfigError("concurrent mode requires target_energy_basis=initial")
        if self.total_energy is not None and self.total_energy <= 0:
            raise ConfigError("total_energy must be positive")
        try:
            self.formation()
            if self.energy_protocol is not None:
                self.energy()
            self.loss_model()
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc

    # -- resolved accessors -------------------------------------------------
    def formation(self) -> FormationProtocol:
        return FormationProtocol.parse(self.protocol)

    def energy(self) -> Optional[EnergyProtocol]:
        if self.energy_protocol is None:
            return None
        return parse_energy_protocol(self.energy_protocol)

    def loss_model(self) -> LossModel:
        return LossModel.parse(self.loss)

    def resolved_total(self) -> float:
        return self.n * 1e3 if self.total_energy is None else self.total_energy

    def resolved_budget(self) -> int:
        return (
            500 * max(pair_count(self.n), 1)
            if self.step_budget is None
            else self.step_budget
        )

    def resolved_window(self) -> int:
        return (
            10 * max(pair_count(self.n), 1)
            if self.quiescence_window is None
            else self.quiescence_window
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "ExperimentConfig":
        known = {f for f in ExperimentConfig.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return ExperimentConfig(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @staticmethod
    def from_json(path: "str | Path") -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return ExperimentConfig.from_dict(data)


def split_initial_energy(config: ExperimentConfig, rng) -> list[float]:
    """Uniform mode gives total/n to each node. Random mode draws n uniform
    weights and normalizes, pinning the last node to the exact residual so
    the vector sums to the total exactly."""
    n = config.n
    total = config.resolved_total()
    if config.initial_energy == UNIFORM:
        share = total / n
        return [share] * n
    weights = [rng.random() for _ in range(n)]
    scale = total / math.fsum(weights)
    energies = [w * scale for w in weights]
    partial = math.fsum(energies[:-1])
    energies[-1] = total - partial
    return energies


def build_population(config: ExperimentConfig, rng) -> Population:
    """Draw order: initial energies (random mode only), then the merge-key
    permutation, then everything the scheduler consumes."""
    energies = split_initial_energy(config, rng)
    w = list(range(config.n))
    rng.shuffle(w)
    formation = config.formation()
    net = TreeNetwork(config.n, arity_bound=formation.k)
    return Population(net, EnergyState(energies), w=w)


@dataclass
class RunResult:
    run_index: int
    seed: int
    formation_steps: int
    estimation_steps: int
    tau: int
    converged: bool
    ed: float
    ed_percent: float
    loss_percent: float
    outcome: SimOutcome = field(repr=False)

    def row(self) -> dict:
        return {
            "run_index": self.run_index,
            "seed": self.seed,
            "formation_steps": self.formation_steps,
            "estimation_steps": self.estimation_steps,
            "tau": self.tau,
            "converged": int(self.converged),
            "ed": self.ed,
            "ed_percent": self.ed_percent,
            "loss_percent": self.loss_percent,
        }


def run_single(
    config: ExperimentConfig,
    run_index: int,
    *,
    record_trace: Optional[bool] = None,
    record_metrics: Optional[bool] = None,
    validate: bool = False,
) -> RunResult:
    """Execute one seeded run of the configured experiment."""
    seed = derive_run_seed(config.master_seed, run_index)
    rng = make_rng(seed)
    pop = build_population(config, rng)
    scheduler = (
        RandomScheduler(rng, config.n) if config.n > 1 else _NullScheduler()
    )
    if record_trace is None:
        record_trace = config.emit_traces
    if record_metrics is None:
        record_metrics = config.emit_metrics
    outcome = simulate(
        pop,
        formation=config.formation(),
        scheduler=scheduler,
        rng=rng,
        energy_protocol=config.energy(),
        loss=config.loss_model(),
        phase_mode=config.phase_mode,
        formation_budget=config.resolved_budget(),
        energy_budget=config.resolved_budget(),
        window=config.resolved_window(),
        metric_cadence=config.metric_cadence,
        target_basis=config.target_energy_basis,
        record_trace=record_trace,
        trace_seed=seed,
        trace_config=config.to_dict(),
        validate=validate,
        record_metrics=record_metrics,
    )
    return _result_from_outcome(config, run_index, seed, outcome)


class _NullScheduler:
    def next_pair(self):  # pragma: no cover - never called for n == 1
        raise DomainError("no pairs in a single-node population")


def _result_from_outcome(
    config: ExperimentConfig, run_index: int, seed: int, outcome: SimOutcome
) -> RunResult:
    report = outcome.report
    if report is None:
        tau, converged = 0, True
    else:
        tau, converged = report.tau, report.converged
    if outcome.ideal is not None:
        ed = energy_distance(outcome.pop.energy.per_node, outcome.ideal)
        ed_percent = 100.0 * ed / outcome.ideal.total
    else:
        ed = math.nan
        ed_percent = math.nan
    if report is not None:
        report.ed = ed
    initial_total = outcome.pop.energy.initial_total
    loss_percent = (
        100.0 * outcome.pop.energy.lost / initial_total if initial_total > 0 else 0.0
    )
    return RunResult(
        run_index=run_index,
        seed=seed,
        formation_steps=outcome.formation_steps,
        estimation_steps=outcome.estimation_steps,
        tau=tau,
        converged=converged,
        ed=ed,
        ed_percent=ed_percent,
        loss_percent=loss_percent,
        outcome=outcome,
    )


AGGREGATE_FIELDS = [
    "formation_steps",
    "estimation_steps",
    "tau",
    "ed",
    "ed_percent",
    "loss_percent",
]


def aggregate_rows(rows: list[dict]) -> dict:
    """Mean and population stddev of each numeric column, plus convergence
    counts. NaNs (never-formed runs) are excluded per column."""
    out: dict = {"repetitions": len(rows)}
    for name in AGGREGATE_FIELDS:
        values = [r[name] for r in rows if not math.isnan(r[name])]
        if values:
            out[name] = {
                "mean": statistics.fmean(values),
                "stddev": statistics.pstdev(values),
            }
        else:
            out[name] = {"mean": math.nan, "stddev": math.nan}
    out["converged_count"] = sum(int(r["converged"]) for r in rows)
    return out


@dataclass
class ExperimentSummary:
    config: ExperimentConfig
    results: list[RunResult]
    aggregate: dict

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "aggregate": self.aggregate,
        }


def run_experiment(
    config: ExperimentConfig,
    out_dir: "str | Path | None" = None,
    *,
    progress=None,
) -> ExperimentSummary:
    """Execute config.repetitions independent seeded runs and aggregate.

    With ``out_dir`` set, writes runs.csv and summary.json, plus per-run
    metrics.csv / trace.txt when the config enables them.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    results = []
    for i in range(config.repetitions):
        result = run_single(config, i)
        results.append(result)
        if progress is not None:
            progress(result)
        if out is not None and (config.emit_metrics or config.emit_traces):
            run_dir = out / f"run_{i}"
            run_dir.mkdir(exist_ok=True)
            if config.emit_metrics and result.outcome.samples:
                write_metrics_csv(result.outcome.samples, run_dir / "metrics.csv")
            if config.emit_traces and result.outcome.trace is not None:
                write_trace(result.outcome.trace, run_dir / "trace.txt")
    rows = [r.row() for r in results]
    summary = ExperimentSummary(config, results, aggregate_rows(rows))
    if out is not None:
        with open(out / "runs.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=RUNS_CSV_HEADER)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        (out / "summary.json").write_text(
            json.dumps(summary.to_json_dict(), indent=2, sort_keys=True) + "\n"
        )
    return summary


def read_runs_csv(path: "str | Path") -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            rows.append(
                {
                    "run_index": int(raw["run_index"]),
                    "seed": int(raw["seed"]),
                    "formation_steps": int(raw["formation_steps"]),
                    "estimation_steps": int(raw["estimation_steps"]),
                    "tau": int(raw["tau"]),
                    "converged": int(raw["converged"]),
                    "ed": float(raw["ed"]),
                    "ed_percent": float(raw["ed_percent"]),
                    "loss_percent": float(raw["loss_percent"]),
                }
            )
    return rows


def replay_trace(trace: InteractionTrace) -> SimOutcome:
    """Re-execute a recorded run: pairs come from the trace, formation and
    estimation rules are recomputed, energy moves are applied verbatim.
    Raises ReplayMismatch if the end-state digest differs from the record."""
    config = ExperimentConfig.from_dict(trace.config)
    rng = make_rng(trace.seed)
    pop = build_population(config, rng)
    scheduler = ScriptedScheduler([(r.u, r.v) for r in trace.records])
    try:
        outcome = simulate(
            pop,
            formation=config.formation(),
            scheduler=scheduler,
            rng=None,
            energy_protocol=config.energy(),
            loss=config.loss_model(),
            phase_mode=config.phase_mode,
            formation_budget=config.resolved_budget(),
            energy_budget=config.resolved_budget(),
            window=config.resolved_window(),
            metric_cadence=config.metric_cadence,
            target_basis=config.target_energy_basis,
            energy_driver=RecordedEnergyDriver(trace.records),
            record_metrics=False,
        )
    except DomainError as exc:
        # e.g. the re-execution did not stop where the record did, so the
        # scripted pair supply ran dry: the trace is not self-consistent
        raise ReplayMismatch(f"trace diverged during re-execution: {exc}") from exc
    digest = snapshot_digest(outcome.pop)
    if trace.final_digest is not None and digest != trace.final_digest:
        raise ReplayMismatch(
            f"replayed digest {digest[:12]}... != recorded {trace.final_digest[:12]}..."
        )
    return outcome
