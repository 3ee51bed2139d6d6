"""Command-line interface.

Subcommands: form (grow one tree and emit a snapshot), redistribute (run an
energy protocol over a snapshot), experiment (seeded repetitions from a JSON
config), replay (re-execute a trace and verify its digest), sweep (cartesian
parameter grids of experiments).

Exit codes: 0 success, 1 configuration/usage error, 2 replay digest mismatch.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from pathlib import Path

from .energy import LossModel, parse_energy_protocol
from .errors import ConfigError, DomainError, ReplayMismatch
from .formation import load_snapshot, snapshot_digest, snapshot_lines
from .harness import (
    ExperimentConfig,
    build_population,
    replay_trace,
    run_experiment,
)
from .metrics import energy_distance, write_metrics_csv
from .runner import simulate
from .scheduler import RandomScheduler, derive_run_seed, make_rng, read_trace


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 instead of argparse's default 2
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="enertree")
    sub = parser.add_subparsers(dest="command", required=True)

    p_form = sub.add_parser("form", help="grow a tree and emit a node snapshot")
    p_form.add_argument("--n", type=int, required=True)
    p_form.add_argument("--protocol", default="arbitrary", help="arbitrary | kary:K")
    p_form.add_argument("--seed", type=int, default=42)
    p_form.add_argument("--total-energy", type=float, default=None)
    p_form.add_argument("--initial-energy", default="uniform", choices=["uniform", "random"])
    p_form.add_argument("--out", default=None, help="snapshot file (default stdout)")
    p_form.add_argument("--quiet", action="store_true")

    p_red = sub.add_parser("redistribute", help="run an energy protocol on a snapshot")
    p_red.add_argument("--snapshot", required=True)
    p_red.add_argument("--energy-protocol", required=True,
                       help="ideal | lambda:L | rand | kappa:K | kdepth:K")
    p_red.add_argument("--loss", default="lossless", help="lossless | normal:MEAN,STD")
    p_red.add_argument("--seed", type=int, default=42)
    p_red.add_argument("--budget", type=int, default=None)
    p_red.add_argument("--window", type=int, default=None)
    p_red.add_argument("--out", default=None, help="output directory")
    p_red.add_argument("--quiet", action="store_true")

    p_exp = sub.add_parser("experiment", help="run seeded repetitions from a config file")
    p_exp.add_argument("--config", required=True)
    p_exp.add_argument("--seed", type=int, default=None, help="override master_seed")
    p_exp.add_argument("--out", default=None, help="output directory")
    p_exp.add_argument("--mode", choices=["twophase", "concurrent"], default=None)
    p_exp.add_argument("--quiet", action="store_true")

    p_rep = sub.add_parser("replay", help="re-execute a trace and verify its digest")
    p_rep.add_argument("--trace", required=True)
    p_rep.add_argument("--quiet", action="store_true")

    p_sw = sub.add_parser("sweep", help="cartesian grid of experiments")
    p_sw.add_argument("--config", required=True)
    p_sw.add_argument("--grid", action="append", default=[],
                      help="FIELD=V1,V2,... (repeatable)")
    p_sw.add_argument("--out", required=True)
    p_sw.add_argument("--quiet", action="store_true")

    return parser


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _cmd_form(args) -> int:
    config = ExperimentConfig(
        n=args.n,
        protocol=args.protocol,
        energy_protocol=None,
        total_energy=args.total_energy,
        initial_energy=args.initial_energy,
        master_seed=args.seed,
        repetitions=1,
    )
    seed = derive_run_seed(config.master_seed, 0)
    rng = make_rng(seed)
    pop = build_population(config, rng)
    scheduler = RandomScheduler(rng, config.n) if config.n > 1 else None
    outcome = simulate(
        pop,
        formation=config.formation(),
        scheduler=scheduler,
        rng=rng,
        formation_budget=config.resolved_budget(),
    )
    if not outcome.completed:
        print("formation did not complete within the step budget", file=sys.stderr)
        return 1
    lines = snapshot_lines(pop)
    text = "\n".join(["# columns: id state parent w d h energy"] + lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    _say(args, f"# formed in {outcome.formation_steps} steps, "
               f"estimates stabilized after {outcome.estimation_steps} more; "
               f"digest={snapshot_digest(pop)}")
    return 0


def _cmd_redistribute(args) -> int:
    try:
        lines = Path(args.snapshot).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read snapshot: {exc}")
    pop = load_snapshot(lines)
    protocol = parse_energy_protocol(args.energy_protocol)
    loss = LossModel.parse(args.loss)
    rng = make_rng(args.seed)
    scheduler = RandomScheduler(rng, pop.n) if pop.n > 1 else None
    outcome = simulate(
        pop,
        formation=None,
        scheduler=scheduler,
        rng=rng,
        energy_protocol=protocol,
        loss=loss,
        energy_budget=args.budget,
        window=args.window,
    )
    report = outcome.report
    report.ed = energy_distance(pop.energy.per_node, outcome.ideal)
    _say(
        args,
        f"converged={report.converged} tau={report.tau} "
        f"dd_at_tau={report.dd_at_tau:.6g} ed={report.ed:.6g} "
        f"lost={outcome.pop.energy.lost:.6g}",
    )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(outcome.samples, out / "metrics.csv")
        (out / "final_snapshot.txt").write_text("\n".join(snapshot_lines(pop)) + "\n")
    return 0


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_json(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        overrides["phase_mode"] = args.mode
        if args.mode == "concurrent":
            overrides["target_energy_basis"] = "initial"
    if overrides:
        config = ExperimentConfig.from_dict({**config.to_dict(), **overrides})
    return config


def _cmd_experiment(args) -> int:
    config = _load_config(args)
    summary = run_experiment(config, out_dir=args.out)
    agg = summary.aggregate
    _say(
        args,
        f"runs={agg['repetitions']} converged={agg['converged_count']} "
        f"tau={agg['tau']['mean']:.1f} ed%={agg['ed_percent']['mean']:.2f} "
        f"loss%={agg['loss_percent']['mean']:.2f}",
    )
    if args.out is None and not args.quiet:
        print(json.dumps(summary.to_json_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_replay(args) -> int:
    trace = read_trace(args.trace)
    outcome = replay_trace(trace)  # raises ReplayMismatch on digest drift
    _say(args, f"replay ok: {len(trace.records)} steps, digest={outcome.digest}")
    return 0


def _parse_grid(specs: list[str]) -> dict[str, list]:
    grid: dict[str, list] = {}
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"grid spec needs FIELD=V1,V2 (got {spec!r})")
        key, values = spec.split("=", 1)
        parsed = []
        for raw in values.split(","):
            raw = raw.strip()
            try:
                parsed.append(json.loads(raw))
            except json.JSONDecodeError:
                parsed.append(raw)
        if not parsed:
            raise ConfigError(f"empty grid for {key}")
        grid[key.strip()] = parsed
    return grid


def _cmd_sweep(args) -> int:
    base = ExperimentConfig.from_json(args.config)
    grid = _parse_grid(args.grid)
    if not grid:
        raise ConfigError("sweep needs at least one --grid")
    keys = sorted(grid)
    out_root = Path(args.out)
    for combo in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, combo))
        config = ExperimentConfig.from_dict({**base.to_dict(), **overrides})
        name = ",".join(
            f"{k}={str(v).replace(':', '-').replace('/', '-')}" for k, v in overrides.items()
        )
        _say(args, f"sweep {name}")
        run_experiment(config, out_dir=out_root / name)
    return 0


_COMMANDS = {
    "form": _cmd_form,
    "redistribute": _cmd_redistribute,
    "experiment": _cmd_experiment,
    "replay": _cmd_replay,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ReplayMismatch as exc:
        print(f"replay mismatch: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
