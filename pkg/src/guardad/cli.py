"""Command-line front end.

Subcommands:

* ``run``     - execute guarded episodes, write traces and a metrics file
* ``eval``    - recompute suite metrics from existing trace files
* ``explain`` - render one step of a trace (states, fired rules, prompt)
* ``gen``     - emit scenario files
* ``sweep``   - metrics table over (n, k) ranges
* ``check``   - validate a rule catalog

All commands are deterministic under fixed seeds.  Exit status: 0 success,
1 configuration error, 2 runtime error; errors print one line of the form
``error[<slug>]: <detail>`` on stderr.  ``GUARDAD_SEED`` overrides the
seed given on the command line.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .guard import GuardConfig, StrategyMode
from .policy import parse_policy_spec
from .rules import CatalogError, RuleCatalog, default_catalog, load_catalog
from .scene import Action
from .sim import (
    EmptyInput,
    UnknownTemplate,
    compute_metrics,
    generate_scenarios,
    outcome_from_json_dict,
    read_scenario,
    read_trace_file,
    run_episode,
    template_by_name,
    write_scenario,
    write_trace,
)


class CliError(Exception):
    def __init__(self, slug: str, message: str, code: int = 1):
        super().__init__(message)
        self.slug = slug
        self.code = code


class StepOutOfRange(CliError):
    def __init__(self, message: str):
        super().__init__("step-out-of-range", message, code=1)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit 1, not argparse's default 2
        raise CliError("usage", message)


def _action(token: str) -> Action:
    for a in Action:
        if a.value == token:
            return a
    raise CliError("bad-action", f"unknown action token {token!r}")


def _mode(token: str) -> StrategyMode:
    for m in StrategyMode:
        if m.value == token:
            return m
    raise CliError("bad-mode", f"unknown mode {token!r}")


def _add_guard_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rules", help="catalog path (defaults to the packaged catalog)")
    p.add_argument("--policy", default="oracle", help="policy spec, e.g. faulty:blind=0.7,comply=0.9")
    p.add_argument("--mode", default="full", help="full | predicate-static | predicate-targets | forced-fallback | constrained-select")
    p.add_argument("--n", type=int, default=4, help="temporal window order")
    p.add_argument("--k", type=int, default=2, help="observation history length")
    p.add_argument("--theta", type=float, default=1.0, help="inclusion threshold")
    p.add_argument("--retries", type=int, default=1, help="re-query budget on violation")
    p.add_argument("--fallback", default="Stop", help="fallback action for forced-fallback mode")
    p.add_argument("--reaction", type=int, default=3, help="reaction window in steps")
    p.add_argument("--unguarded", action="store_true", help="run with an empty catalog (no interventions)")


def _add_scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", action="append", default=[], help="scenario file or glob (repeatable)")
    p.add_argument("--template", help="scenario template name")
    p.add_argument("--count", type=int, default=1, help="scenarios to generate per template")
    p.add_argument("--gap", type=int, help="onset-to-collision gap override")
    p.add_argument("--length", type=int, help="episode length override (ClearRoad)")
    p.add_argument("--occlude", help="comma-separated occlusion offsets relative to the collision step")
    p.add_argument("--dropout", type=float, default=0.0, help="perception dropout probability")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="guardad", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run guarded episodes and write traces + metrics")
    _add_guard_args(p_run)
    _add_scenario_args(p_run)
    p_run.add_argument("--out", required=True, help="output directory")

    p_eval = sub.add_parser("eval", help="recompute metrics from trace files")
    p_eval.add_argument("--traces", action="append", required=True, help="trace file or glob (repeatable)")
    p_eval.add_argument("--out", help="write metrics JSON here instead of stdout")

    p_explain = sub.add_parser("explain", help="render one step of a trace")
    p_explain.add_argument("--trace", required=True)
    p_explain.add_argument("--step", type=int, required=True)

    p_gen = sub.add_parser("gen", help="emit scenario files")
    _add_scenario_args(p_gen)
    p_gen.add_argument("--out", required=True, help="output directory")

    p_sweep = sub.add_parser("sweep", help="metrics table over (n, k) ranges")
    _add_guard_args(p_sweep)
    _add_scenario_args(p_sweep)
    p_sweep.add_argument("--n-range", default="4:4", help="inclusive range a:b")
    p_sweep.add_argument("--k-range", default="2:2", help="inclusive range a:b")
    p_sweep.add_argument("--out", help="write the table here as well as stdout")

    p_check = sub.add_parser("check", help="validate a rule catalog")
    p_check.add_argument("--rules", required=True)

    return parser


def _seed(args) -> int:
    env = os.environ.get("GUARDAD_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError("bad-seed", f"GUARDAD_SEED must be an integer, got {env!r}")
    return args.seed


def _load_rules(args) -> RuleCatalog:
    if getattr(args, "unguarded", False):
        return RuleCatalog.empty()
    if args.rules is None:
        return default_catalog()
    if not os.path.exists(args.rules):
        raise CliError("missing-catalog", f"catalog path does not exist: {args.rules}")
    try:
        return load_catalog(args.rules)
    except CatalogError as exc:
        raise CliError("bad-catalog", str(exc))


def _template_params(args) -> dict:
    params: dict = {}
    if args.gap is not None:
        params["gap"] = args.gap
    if args.length is not None:
        params["length"] = args.length
    if args.occlude:
        try:
            params["occlude"] = [int(tok) for tok in args.occlude.split(",") if tok.strip()]
        except ValueError:
            raise CliError("bad-occlude", f"occlusion offsets must be integers: {args.occlude!r}")
    if args.dropout:
        params["dropout"] = args.dropout
    return params


def _collect_scenarios(args, seed: int) -> list:
    scenarios = []
    for pattern in args.scenario:
        paths = sorted(glob.glob(pattern)) or [pattern]
        for path in paths:
            if not os.path.exists(path):
                raise CliError("missing-scenario", f"scenario path does not exist: {path}")
            try:
                scenarios.append(read_scenario(path))
            except (ValueError, KeyError) as exc:
                raise CliError("bad-scenario", f"{path}: {exc}")
    if args.template:
        try:
            template = template_by_name(args.template)
        except UnknownTemplate as exc:
            raise CliError("unknown-template", str(exc))
        if args.count < 1:
            raise CliError("bad-count", "count must be >= 1")
        scenarios.extend(generate_scenarios(template, args.count, seed, _template_params(args)))
    if not scenarios:
        raise CliError("no-scenarios", "no scenarios given; use --scenario or --template")
    return scenarios


def _config(args) -> GuardConfig:
    try:
        return GuardConfig(
            n=args.n,
            k=args.k,
            theta=args.theta,
            max_retries=args.retries,
            mode=_mode(args.mode),
            fallback_action=_action(args.fallback),
        )
    except ValueError as exc:
        raise CliError("bad-config", str(exc))


def _policy_spec(args, seed: int):
    try:
        return parse_policy_spec(args.policy, default_seed=seed)
    except ValueError as exc:
        raise CliError("bad-policy-spec", str(exc))


def _run_all(scenarios, spec, config, catalog, reaction):
    traces, outcomes = [], []
    for scenario in scenarios:
        trace, outcome = run_episode(scenario, spec, config, catalog, r=reaction)
        traces.append(trace)
        outcomes.append(outcome)
    return traces, outcomes


def _metrics_json(metrics) -> str:
    return json.dumps(metrics.to_json_dict(), sort_keys=True) + "\n"


def cmd_run(args) -> int:
    seed = _seed(args)
    catalog = _load_rules(args)
    scenarios = _collect_scenarios(args, seed)
    config = _config(args)
    spec = _policy_spec(args, seed)
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("bad-outdir", f"cannot create output directory: {exc}")
    try:
        traces, outcomes = _run_all(scenarios, spec, config, catalog, args.reaction)
    except Exception as exc:  # policy/launch failures surface as runtime errors
        raise CliError("runtime", str(exc), code=2)
    for trace in traces:
        write_trace(trace, out_dir / f"{trace.scenario_id}.trace.jsonl")
    metrics = compute_metrics(outcomes)
    (out_dir / "metrics.json").write_text(_metrics_json(metrics), encoding="utf-8")
    print(f"episodes={metrics.episodes} accident_rate={metrics.accident_rate:.6f} task_score={metrics.task_score:.6f}")
    return 0


def cmd_eval(args) -> int:
    outcomes = []
    for pattern in args.traces:
        paths = sorted(glob.glob(pattern)) or [pattern]
        for path in paths:
            if not os.path.exists(path):
                raise CliError("missing-trace", f"trace path does not exist: {path}")
            try:
                _, outcome = read_trace_file(path)
                outcomes.append(outcome_from_json_dict(outcome))
            except (ValueError, KeyError) as exc:
                raise CliError("bad-trace", f"{path}: {exc}")
    try:
        metrics = compute_metrics(outcomes)
    except EmptyInput as exc:
        raise CliError("no-traces", str(exc))
    text = _metrics_json(metrics)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_explain(args) -> int:
    if not os.path.exists(args.trace):
        raise CliError("missing-trace", f"trace path does not exist: {args.trace}")
    records, outcome = read_trace_file(args.trace)
    by_t = {rec["t"]: rec for rec in records}
    if args.step not in by_t:
        raise StepOutOfRange(f"step {args.step} not in trace (steps 0..{max(by_t) if by_t else -1})")
    rec = by_t[args.step]
    lines = [
        f"step {rec['t']} of {outcome.get('scenario_id', '?')}",
        f"  active constraints:  {', '.join(rec['z_now']) or '(none)'}",
        f"  refined constraints: {', '.join(rec['z_refined']) or '(none)'}",
        f"  fired rules:         {', '.join(rec['fired_rules']) or '(none)'}",
        f"  base action:         {rec['base_action']}",
        f"  violation:           {'yes' if rec['delta'] else 'no'}",
    ]
    if rec.get("prompt") is not None:
        lines.append(f"  prompt:              {rec['prompt']}")
    lines.append(f"  retries used:        {rec['retries_used']}")
    lines.append(f"  final action:        {rec['final_action']} ({rec['strategy_note']})")
    print("\n".join(lines))
    return 0


def cmd_gen(args) -> int:
    seed = _seed(args)
    if not args.template:
        raise CliError("no-template", "gen requires --template")
    try:
        template = template_by_name(args.template)
    except UnknownTemplate as exc:
        raise CliError("unknown-template", str(exc))
    if args.count < 1:
        raise CliError("bad-count", "count must be >= 1")
    scenarios = generate_scenarios(template, args.count, seed, _template_params(args))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for scenario in scenarios:
        write_scenario(scenario, out_dir / f"{scenario.id}.scenario.json")
    print(f"wrote {len(scenarios)} scenario files to {out_dir}")
    return 0


def _parse_range(text: str, what: str) -> list[int]:
    lo, sep, hi = text.partition(":")
    try:
        if not sep:
            values = [int(lo)]
        else:
            values = list(range(int(lo), int(hi) + 1))
    except ValueError:
        raise CliError("bad-range", f"{what} range must be a:b, got {text!r}")
    if not values:
        raise CliError("empty-range", f"{what} range {text!r} is empty")
    return values


_SWEEP_COLUMNS = (
    "n",
    "k",
    "episodes",
    "accident_rate",
    "intervention_rate",
    "false_intervention_rate",
    "task_score",
)


def cmd_sweep(args) -> int:
    seed = _seed(args)
    catalog = _load_rules(args)
    scenarios = _collect_scenarios(args, seed)
    spec = _policy_spec(args, seed)
    n_values = _parse_range(args.n_range, "n")
    k_values = _parse_range(args.k_range, "k")
    rows = []
    for n in n_values:
        for k in k_values:
            try:
                config = GuardConfig(
                    n=n,
                    k=k,
                    theta=args.theta,
                    max_retries=args.retries,
                    mode=_mode(args.mode),
                    fallback_action=_action(args.fallback),
                )
            except ValueError as exc:
                raise CliError("bad-config", str(exc))
            try:
                _, outcomes = _run_all(scenarios, spec, config, catalog, args.reaction)
            except Exception as exc:
                raise CliError("runtime", str(exc), code=2)
            m = compute_metrics(outcomes)
            rows.append(
                (
                    str(n),
                    str(k),
                    str(m.episodes),
                    f"{m.accident_rate:.6f}",
                    f"{m.intervention_rate:.6f}",
                    f"{m.false_intervention_rate:.6f}",
                    f"{m.task_score:.6f}",
                )
            )
    table = "\t".join(_SWEEP_COLUMNS) + "\n" + "".join("\t".join(row) + "\n" for row in rows)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return 0


def cmd_check(args) -> int:
    if not os.path.exists(args.rules):
        raise CliError("missing-catalog", f"catalog path does not exist: {args.rules}")
    try:
        catalog = load_catalog(args.rules)
    except CatalogError as exc:
        raise CliError("bad-catalog", str(exc))
    print(
        f"ok: {len(catalog.predicates)} predicates, {len(catalog.constraints)} constraints, "
        f"{len(catalog.horn_rules)} rules, {len(catalog.temporal_rules)} temporal rules"
    )
    return 0


_COMMANDS = {
    "run": cmd_run,
    "eval": cmd_eval,
    "explain": cmd_explain,
    "gen": cmd_gen,
    "sweep": cmd_sweep,
    "check": cmd_check,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error[{exc.slug}]: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
