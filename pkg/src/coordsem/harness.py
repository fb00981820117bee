"""CLI entry point and execution harness.

Loads models, runs execution sequences strictly sequentially (with a
quiescence barrier between actions), measures performance with paired
with/without-coordination runs, and offers an interactive session. Sequence
and model files share one JSON tree format; the bundled recruitment and
insurance scenarios live in the package data directory.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .engine import Engine
from .lifecycle import LifecycleError, TransitionOutcome
from .model import Model, ModelError, load_model, validate_model
from .rules import rule_catalog_text
from .structure import CoordinationVetoError, StructureError

DATA_DIR = Path(__file__).resolve().parent / "data"

# Two-sided 95% t critical values for df 1..30 (df > 30 uses the last entry).
_T_95 = [12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
         2.201, 2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
         2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042]


class SequenceError(Exception):
    pass


@dataclass
class Action:
    op: str  # instantiate | link | set | commit
    args: dict[str, Any]

    @property
    def kind(self) -> str:
        return {"instantiate": "InstantiateProcess", "link": "LinkInstances",
                "set": "ChangeAttributeValue", "commit": "CommitTransition"}[self.op]


@dataclass
class ExecutionSequence:
    name: str
    model_name: str
    actions: list[Action]


def load_sequence(path: str | Path) -> ExecutionSequence:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SequenceError(f"{path}: malformed sequence file: {exc}") from exc
    actions = []
    defined: set[str] = set()
    for i, entry in enumerate(raw.get("actions", [])):
        op = entry.get("op")
        if op not in ("instantiate", "link", "set", "commit"):
            raise SequenceError(f"{path}: actions[{i}]: unknown op {op!r}")
        args = {k: v for k, v in entry.items() if k != "op"}
        if op == "instantiate":
            symbol = args.get("as")
            if not symbol:
                raise SequenceError(f"{path}: actions[{i}]: instantiate requires 'as'")
            defined.add(symbol)
        else:
            for key in ("a", "b", "instance"):
                symbol = args.get(key)
                if symbol is not None and symbol not in defined:
                    raise SequenceError(
                        f"{path}: actions[{i}]: symbol {symbol!r} used before instantiation")
        actions.append(Action(op, args))
    return ExecutionSequence(raw.get("name", path.stem), raw.get("model", ""), actions)


@dataclass
class ActionResult:
    index: int
    kind: str
    duration: float
    status: str  # ok | pending | vetoed | error | skipped
    detail: str = ""


@dataclass
class RunReport:
    sequence: str
    mode: str
    coordination: bool
    actions: list[ActionResult] = field(default_factory=list)
    final_states: dict[str, dict[str, str]] = field(default_factory=dict)
    total_time: float = 0.0

    @property
    def vetoed(self) -> list[ActionResult]:
        return [a for a in self.actions if a.status == "vetoed"]

    @property
    def pending(self) -> list[ActionResult]:
        return [a for a in self.actions if a.status == "pending"]

    def to_dict(self) -> dict[str, Any]:
        return {
            "sequence": self.sequence,
            "mode": self.mode,
            "coordination": self.coordination,
            "total_time": self.total_time,
            "actions": [{"index": a.index, "kind": a.kind, "duration": a.duration,
                         "status": a.status, "detail": a.detail} for a in self.actions],
            "final_states": self.final_states,
        }


def run_sequence(model: Model, sequence: ExecutionSequence, mode: str = "deterministic",
                 seed: int = 0, strict: bool = False, no_coordination: bool = False,
                 stop_after: Optional[int] = None,
                 keep_engine: bool = False) -> RunReport | tuple[RunReport, Engine]:
    """Execute a sequence action by action, waiting for quiescence in between.

    In strict mode a veto or a lifecycle error aborts; in lenient mode (the
    default) the action is recorded and skipped. Per-action timing wraps only
    the action and its quiescence barrier.
    """
    if no_coordination:
        model = model.without_coordination()
    engine = Engine(model, mode=mode, seed=seed)
    report = RunReport(sequence.name, mode, not no_coordination)
    symbols: dict[str, int] = {}
    try:
        for index, action in enumerate(sequence.actions):
            if stop_after is not None and index >= stop_after:
                break
            status, detail = "ok", ""
            started = time.perf_counter()
            try:
                if action.op == "instantiate":
                    symbols[action.args["as"]] = engine.instantiate(action.args["type"])
                elif action.op == "link":
                    engine.link(symbols[action.args["a"]], symbols[action.args["b"]],
                                action.args.get("relation_type"))
                elif action.op == "set":
                    engine.set_attribute(symbols[action.args["instance"]],
                                         action.args["attribute"], action.args.get("value"))
                else:
                    source, target = action.args["transition"]
                    outcome = engine.commit(symbols[action.args["instance"]], source, target)
                    if outcome is TransitionOutcome.PENDING:
                        status, detail = "pending", f"{target} blocked"
                engine.quiesce()
            except CoordinationVetoError as exc:
                status, detail = "vetoed", str(exc)
                engine.quiesce()
            except (LifecycleError, StructureError) as exc:
                status, detail = "error", str(exc)
                engine.quiesce()
            duration = time.perf_counter() - started
            report.actions.append(ActionResult(index, action.kind, duration, status, detail))
            if strict and status in ("vetoed", "error"):
                raise SequenceError(f"action {index} ({action.kind}) failed: {detail}")
        report.total_time = sum(a.duration for a in report.actions)
        report.final_states = {symbol: engine.state_markings(instance_id)
                               for symbol, instance_id in sorted(symbols.items())}
    finally:
        if not keep_engine:
            engine.close()
    if keep_engine:
        return report, engine
    return report


@dataclass
class MeasurementConfig:
    min_runs: int = 6
    max_runs: int = 30
    confidence: float = 0.95
    width_fraction: float = 0.10  # stop once CI width < this fraction of the mean


@dataclass
class MeasurementReport:
    sequence: str
    runs_with: list[float] = field(default_factory=list)
    runs_without: list[float] = field(default_factory=list)
    interval_with: tuple[float, float] = (0.0, 0.0)
    interval_without: tuple[float, float] = (0.0, 0.0)
    confidence_reached: bool = True
    action_stats: dict[str, dict[str, float]] = field(default_factory=dict)
    max_action_time: float = 0.0

    @property
    def overhead_factor(self) -> float:
        """Median-based: robust against stray pauses hitting single runs."""
        without = statistics.median(self.runs_without)
        return statistics.median(self.runs_with) / without if without > 0 else math.inf

    def to_dict(self) -> dict[str, Any]:
        return {
            "sequence": self.sequence,
            "runs_with": self.runs_with,
            "runs_without": self.runs_without,
            "interval_with": list(self.interval_with),
            "interval_without": list(self.interval_without),
            "confidence_reached": self.confidence_reached,
            "overhead_factor": self.overhead_factor,
            "max_action_time": self.max_action_time,
            "action_stats": self.action_stats,
        }


def t_interval(samples: list[float]) -> tuple[float, float]:
    """Mean +/- t-based 95% confidence half-width."""
    if len(samples) < 2:
        value = samples[0] if samples else 0.0
        return (value, value)
    mean = statistics.mean(samples)
    sem = statistics.stdev(samples) / math.sqrt(len(samples))
    t = _T_95[min(len(samples) - 2, len(_T_95) - 1)]
    return (mean - t * sem, mean + t * sem)


def _interval_converged(samples: list[float], config: MeasurementConfig) -> bool:
    if len(samples) < config.min_runs:
        return False
    low, high = t_interval(samples)
    mean = statistics.mean(samples)
    return mean > 0 and (high - low) < config.width_fraction * mean


def measure(model: Model, sequence: ExecutionSequence,
            config: Optional[MeasurementConfig] = None, mode: str = "deterministic",
            seed: int = 0) -> MeasurementReport:
    """Repeat the sequence with fresh engine state per run, with and without
    the coordination processes, until the confidence criterion is met.

    Runs are paired (coordinated and uncoordinated runs interleave) so load
    drift hits both variants alike; one warmup pair is discarded.
    """
    config = config or MeasurementConfig()
    report = MeasurementReport(sequence.name)
    per_action: list[ActionResult] = []
    run_sequence(model, sequence, mode=mode, seed=seed)
    run_sequence(model, sequence, mode=mode, seed=seed, no_coordination=True)
    while len(report.runs_with) < config.max_runs:
        run = run_sequence(model, sequence, mode=mode, seed=seed)
        report.runs_with.append(run.total_time)
        per_action = run.actions  # last coordinated run feeds the stats
        baseline = run_sequence(model, sequence, mode=mode, seed=seed,
                                no_coordination=True)
        report.runs_without.append(baseline.total_time)
        if _interval_converged(report.runs_with, config) and \
                _interval_converged(report.runs_without, config):
            break
    if not (_interval_converged(report.runs_with, config)
            and _interval_converged(report.runs_without, config)):
        report.confidence_reached = False
    report.interval_with = t_interval(report.runs_with)
    report.interval_without = t_interval(report.runs_without)
    by_kind: dict[str, list[float]] = {}
    for result in per_action:
        by_kind.setdefault(result.kind, []).append(result.duration)
    for kind, durations in sorted(by_kind.items()):
        report.action_stats[kind] = {
            "max": max(durations),
            "avg": statistics.mean(durations),
            "median": statistics.median(durations),
            "min": min(durations),
        }
    report.max_action_time = max((r.duration for r in per_action), default=0.0)
    return report


# ---------------------------------------------------------------------------
# Interactive session


REPL_HELP = """commands:
  new <Type>                 create a process instance
  link <a> <b>               link two instances (names or ids)
  set <inst> <attr> <value>  write an attribute value
  commit <inst> <target>     commit the transition from the active state
  back <inst> <target>       take a backwards transition
  inspect <entity>           inspect an instance or coordination entity
  markings                   print all state markings
  trace on|off               toggle cascade tracing output
  quit                       leave the session
"""


class Repl:
    def __init__(self, model: Model, mode: str = "deterministic", seed: int = 0,
                 out=sys.stdout):
        self.engine = Engine(model, mode=mode, seed=seed, collect_traces=True)
        self.model = model
        self.symbols: dict[str, int] = {}
        self.trace_on = False
        self.out = out
        self._trace_mark = 0

    def _resolve(self, token: str) -> int:
        if token in self.symbols:
            return self.symbols[token]
        if token.isdigit() and int(token) in self.engine.views:
            return int(token)
        raise SequenceError(f"unknown instance {token!r}")

    def _print(self, text: str = "") -> None:
        print(text, file=self.out)

    def _show_new_trace(self) -> None:
        if not self.trace_on:
            self._trace_mark = len(self.engine.cascade_trace)
            return
        for line in self.engine.cascade_trace[self._trace_mark:]:
            self._print(f"  [trace] {line.format()}")
        self._trace_mark = len(self.engine.cascade_trace)

    def handle(self, line: str) -> bool:
        parts = line.split()
        if not parts:
            return True
        cmd, args = parts[0], parts[1:]
        try:
            if cmd == "quit":
                return False
            if cmd == "help":
                self._print(REPL_HELP)
            elif cmd == "new":
                type_name = " ".join(args)
                instance_id = self.engine.instantiate(type_name)
                self.engine.quiesce()
                symbol = f"{type_name.lower().replace(' ', '_')}{instance_id}"
                self.symbols[symbol] = instance_id
                self._print(f"created {symbol} (id {instance_id})")
            elif cmd == "link":
                self.engine.link(self._resolve(args[0]), self._resolve(args[1]))
                self.engine.quiesce()
                self._print("linked")
            elif cmd == "set":
                self.engine.set_attribute(self._resolve(args[0]), args[1], " ".join(args[2:]))
                self.engine.quiesce()
                self._print("set")
            elif cmd in ("commit", "back"):
                instance_id = self._resolve(args[0])
                target = " ".join(args[1:])
                if cmd == "commit":
                    active = self.engine.active_state(instance_id)
                    outcome = self.engine.commit(instance_id, active, target)
                    self.engine.quiesce()
                    self._print(f"{target}: {outcome.value}")
                    if outcome is TransitionOutcome.PENDING:
                        for entry in self.engine.explain_blocked(instance_id, target):
                            self._print(f"  {entry}")
                else:
                    view = self.engine.views[instance_id]
                    source = view.pending_target or view.active_state
                    self.engine.commit_backwards(instance_id, source, target)
                    self.engine.quiesce()
                    self._print(f"back to {target}")
            elif cmd == "markings":
                for symbol, instance_id in sorted(self.symbols.items()):
                    markings = self.engine.state_markings(instance_id)
                    self._print(f"{symbol}: " + ", ".join(f"{s}={m}" for s, m in markings.items()))
            elif cmd == "inspect":
                token = " ".join(args)
                if token in self.symbols or token.isdigit():
                    instance_id = self._resolve(token)
                    markings = self.engine.state_markings(instance_id)
                    inst = self.engine.structure.instances[instance_id]
                    self._print(f"instance {instance_id} ({inst.type_name})")
                    for state, marking in markings.items():
                        self._print(f"  {state}: {marking}")
                    for name, value in sorted(inst.attributes.items()):
                        self._print(f"  attr {name} = {value!r}")
                else:
                    shown = False
                    for unit_id in sorted(self.engine.cp_units):
                        for dump_line in self.engine.cp_dump(unit_id):
                            if token in dump_line:
                                self._print(dump_line)
                                shown = True
                    if not shown:
                        self._print(f"nothing matches {token!r}")
            elif cmd == "trace":
                self.trace_on = bool(args) and args[0] == "on"
                self._trace_mark = len(self.engine.cascade_trace)
                self._print(f"trace {'on' if self.trace_on else 'off'}")
            else:
                self._print(f"unknown command {cmd!r} (try 'help')")
        except CoordinationVetoError as exc:
            self.engine.quiesce()
            self._print(f"vetoed: {exc}")
        except (SequenceError, StructureError, LifecycleError, KeyError, IndexError) as exc:
            self._print(f"error: {exc}")
        self._show_new_trace()
        return True

    def loop(self) -> None:
        self._print("coordination engine session; 'help' lists commands")
        while True:
            try:
                line = input("coordsem> ")
            except EOFError:
                break
            if not self.handle(line):
                break
        self.engine.close()


# ---------------------------------------------------------------------------
# CLI


def _model_path(token: str) -> Path:
    path = Path(token)
    if path.exists():
        return path
    bundled = DATA_DIR / f"{token}.model"
    if bundled.exists():
        return bundled
    raise ModelError(f"model file {token!r} not found")


def _sequence_path(token: str) -> Path:
    path = Path(token)
    if path.exists():
        return path
    bundled = DATA_DIR / f"{token}.seq"
    if bundled.exists():
        return bundled
    raise SequenceError(f"sequence file {token!r} not found")


def _trace_dir() -> Optional[Path]:
    value = os.environ.get("COORDSEM_TRACE_DIR")
    if not value:
        return None
    path = Path(value)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _emit_report(name: str, human: str, machine: dict[str, Any]) -> None:
    print(human)
    trace_dir = _trace_dir()
    if trace_dir is not None:
        (trace_dir / f"{name}.json").write_text(json.dumps(machine, indent=1),
                                                encoding="utf-8")


def cmd_validate(args: argparse.Namespace) -> int:
    model = load_model(_model_path(args.model))
    report = validate_model(model)
    print(report)
    return 0 if report.ok else 1


def cmd_run(args: argparse.Namespace) -> int:
    model = load_model(_model_path(args.model))
    sequence = load_sequence(_sequence_path(args.sequence))
    report = run_sequence(model, sequence, mode=args.mode, seed=args.seed,
                          strict=args.strict, no_coordination=args.no_coordination)
    lines = [f"sequence {report.sequence}: {len(report.actions)} actions, "
             f"total {report.total_time * 1000:.1f} ms "
             f"({'with' if report.coordination else 'without'} coordination)"]
    for result in report.actions:
        if result.status != "ok":
            lines.append(f"  action {result.index} {result.kind}: {result.status} {result.detail}")
    lines.append(f"  vetoed: {len(report.vetoed)}, pending: {len(report.pending)}")
    _emit_report(f"run-{report.sequence}", "\n".join(lines), report.to_dict())
    return 0


def cmd_measure(args: argparse.Namespace) -> int:
    model = load_model(_model_path(args.model))
    sequence = load_sequence(_sequence_path(args.sequence))
    config = MeasurementConfig(min_runs=args.min_runs, confidence=args.confidence)
    report = measure(model, sequence, config, mode=args.mode, seed=args.seed)
    w_low, w_high = report.interval_with
    n_low, n_high = report.interval_without
    lines = [
        f"sequence {report.sequence}: {len(report.runs_with)} coordinated runs, "
        f"{len(report.runs_without)} uncoordinated runs",
        f"  with coordination:    [{w_low * 1000:.1f} ms, {w_high * 1000:.1f} ms]",
        f"  without coordination: [{n_low * 1000:.1f} ms, {n_high * 1000:.1f} ms]",
        f"  overhead factor: {report.overhead_factor:.2f}x",
        f"  max action time: {report.max_action_time * 1000:.1f} ms",
        f"  confidence reached: {report.confidence_reached}",
    ]
    header = f"  {'action':<22}{'max':>9}{'avg':>9}{'median':>9}{'min':>9}"
    lines.append(header)
    for kind, stats in report.action_stats.items():
        lines.append(f"  {kind:<22}" + "".join(
            f"{stats[k] * 1000:>8.1f}m" for k in ("max", "avg", "median", "min")))
    _emit_report(f"measure-{report.sequence}", "\n".join(lines), report.to_dict())
    return 0 if report.confidence_reached else 1


def cmd_repl(args: argparse.Namespace) -> int:
    model = load_model(_model_path(args.model))
    report = validate_model(model)
    if not report.ok:
        print(report)
        return 1
    Repl(model, mode=args.mode, seed=args.seed).loop()
    return 0


def cmd_dump(args: argparse.Namespace) -> int:
    model = load_model(_model_path(args.model))
    sequence = load_sequence(_sequence_path(args.sequence))
    report, engine = run_sequence(model, sequence, mode=args.mode, seed=args.seed,
                                  stop_after=args.at, keep_engine=True)
    try:
        for unit_id in sorted(engine.cp_units):
            for line in engine.cp_dump(unit_id):
                print(line)
        print(f"-- after action {min(args.at, len(sequence.actions))} of {len(sequence.actions)}")
    finally:
        engine.close()
    return 0


def cmd_rules(args: argparse.Namespace) -> int:
    print(rule_catalog_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coordsem",
        description="Execution engine for coordination processes")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--mode", choices=["deterministic", "concurrent"],
                       default="deterministic", dest="mode")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("validate", help="validate a model file")
    p.add_argument("model")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run an execution sequence")
    p.add_argument("model")
    p.add_argument("sequence")
    p.add_argument("--no-coordination", action="store_true")
    p.add_argument("--strict", action="store_true")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("measure", help="measure a sequence with/without coordination")
    p.add_argument("model")
    p.add_argument("sequence")
    p.add_argument("--min-runs", type=int, default=6)
    p.add_argument("--confidence", type=float, default=0.95)
    common(p)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("repl", help="interactive session")
    p.add_argument("model")
    common(p)
    p.set_defaults(func=cmd_repl)

    p = sub.add_parser("dump", help="dump coordination graphs after N actions")
    p.add_argument("model")
    p.add_argument("sequence")
    p.add_argument("--at", type=int, required=True, metavar="ACTION_INDEX")
    common(p)
    p.set_defaults(func=cmd_dump)

    p = sub.add_parser("rules", help="print the built-in process rule catalog")
    p.set_defaults(func=cmd_rules)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ModelError, SequenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
