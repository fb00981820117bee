"""Design-time model: process types, state-based views, relation types,
coordination process types, file loading, and validation.

Models are immutable after loading and shared read-only by every execution
unit. Loading resolves references (a dangling name is an error with a
location); semantic validation is a separate step that returns a report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional

from .expressions import ExpressionError, parse_expression

TOP_DOWN = "top-down"
BOTTOM_UP = "bottom-up"
TRANSVERSE = "transverse"
SELF = "self"
SELF_TRANSVERSE = "self-transverse"

SEM_KINDS = (TOP_DOWN, BOTTOM_UP, TRANSVERSE, SELF, SELF_TRANSVERSE)

EXPRESSION_KINDS = (BOTTOM_UP, TRANSVERSE, SELF_TRANSVERSE)
ANCESTOR_KINDS = (TRANSVERSE, SELF_TRANSVERSE)


class ModelError(Exception):
    """Parse or reference error while loading a model file."""

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


@dataclass(frozen=True)
class StateViewDef:
    """Public state-based view of a process type."""

    states: tuple[str, ...]
    transitions: tuple[tuple[str, str], ...]
    backwards_transitions: tuple[tuple[str, str], ...]
    start_state: str
    end_states: frozenset[str]
    activity_free_states: frozenset[str] = frozenset()

    def successors(self, state: str) -> list[str]:
        return [t for s, t in self.transitions if s == state]

    def predecessors(self, state: str) -> list[str]:
        return [s for s, t in self.transitions if t == state]

    @lru_cache(maxsize=None)
    def reachable_from(self, state: str) -> frozenset[str]:
        """States reachable from `state` via forward transitions, excluding it."""
        seen: set[str] = set()
        stack = [state]
        while stack:
            for nxt in self.successors(stack.pop()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return frozenset(seen)

    def can_reach(self, source: str, target: str) -> bool:
        return target == source or target in self.reachable_from(source)

    def outgoing(self, state: str) -> list[tuple[str, str]]:
        return [(s, t) for s, t in self.transitions if s == state]


@dataclass(frozen=True)
class ProcessTypeDef:
    name: str
    state_view: StateViewDef
    attributes: tuple[str, ...] = ()


@dataclass(frozen=True)
class RelationTypeDef:
    """Directed many-to-many relation; source is the lower-level side.

    m_* bound the targets per source instance, n_* the sources per target.
    None means unbounded.
    """

    source_type: str
    target_type: str
    m_lower: int = 0
    m_upper: Optional[int] = None
    n_lower: int = 0
    n_upper: Optional[int] = None

    @property
    def key(self) -> str:
        return f"{self.source_type}->{self.target_type}"


@dataclass
class RelationalTypeStructure:
    name: str
    process_types: dict[str, ProcessTypeDef]
    relation_types: dict[str, RelationTypeDef]

    def relation_types_between(self, source: str, target: str) -> list[RelationTypeDef]:
        return [r for r in self.relation_types.values()
                if r.source_type == source and r.target_type == target]

    def _edges(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {n: set() for n in self.process_types}
        for rel in self.relation_types.values():
            out[rel.source_type].add(rel.target_type)
        return out

    def higher_level_types(self, type_name: str) -> set[str]:
        """All types transitively reachable via relation edges (strictly higher)."""
        edges = self._edges()
        seen: set[str] = set()
        stack = [type_name]
        while stack:
            for nxt in edges.get(stack.pop(), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    def lower_level_types(self, type_name: str) -> set[str]:
        incoming: dict[str, set[str]] = {n: set() for n in self.process_types}
        for rel in self.relation_types.values():
            incoming[rel.target_type].add(rel.source_type)
        seen: set[str] = set()
        stack = [type_name]
        while stack:
            for nxt in incoming.get(stack.pop(), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen


@dataclass(frozen=True)
class SemanticRelDef:
    """Semantic relationship attached to a coordination transition type."""

    kind: str
    expression: Optional[str] = None
    valid_states: frozenset[str] = frozenset()
    common_ancestor: Optional[str] = None


@dataclass
class CoordStepTypeDef:
    key: str  # "ProcessType:State"
    process_type: str
    state: str
    port_ids: tuple[str, ...] = ()


@dataclass
class CoordPortTypeDef:
    key: str  # "ProcessType:State.port"
    step_key: str
    port_id: str
    incoming: tuple[str, ...] = ()  # transition keys


@dataclass
class CoordTransitionTypeDef:
    key: str
    source_step: str
    target_step: str
    target_port: str  # port key
    rel: SemanticRelDef


@dataclass
class CoordProcessTypeDef:
    name: str
    coordinating_type: str
    steps: dict[str, CoordStepTypeDef]
    ports: dict[str, CoordPortTypeDef]
    transitions: dict[str, CoordTransitionTypeDef]

    def start_steps(self) -> list[CoordStepTypeDef]:
        return [s for s in self.steps.values() if not s.port_ids]

    def end_steps(self) -> list[CoordStepTypeDef]:
        outgoing = {t.source_step for t in self.transitions.values()}
        return [s for s in self.steps.values() if s.key not in outgoing]

    def ports_of(self, step_key: str) -> list[CoordPortTypeDef]:
        step = self.steps[step_key]
        return [self.ports[f"{step_key}.{pid}"] for pid in step.port_ids]

    def transitions_from(self, step_key: str) -> list[CoordTransitionTypeDef]:
        return [t for t in self.transitions.values() if t.source_step == step_key]


@dataclass
class Model:
    structure: RelationalTypeStructure
    coordination_processes: dict[str, CoordProcessTypeDef] = field(default_factory=dict)

    def without_coordination(self) -> "Model":
        return Model(structure=self.structure, coordination_processes={})

    def step_containers_for_type(self, type_name: str) -> list[tuple[str, CoordStepTypeDef]]:
        """(cp name, step type) pairs whose step references the process type."""
        found = []
        for cp_name, cp in self.coordination_processes.items():
            for step in cp.steps.values():
                if step.process_type == type_name:
                    found.append((cp_name, step))
        return found


@dataclass
class ValidationIssue:
    code: str
    message: str
    location: str = ""

    def __str__(self) -> str:
        return f"[{self.code}] {self.location}: {self.message}" if self.location else f"[{self.code}] {self.message}"


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, code: str, message: str, location: str = "") -> None:
        self.issues.append(ValidationIssue(code, message, location))

    def __str__(self) -> str:
        if self.ok:
            return "model valid"
        return "\n".join(str(i) for i in self.issues)


# ---------------------------------------------------------------------------
# Loading


def _require(mapping: dict, key: str, location: str):
    if key not in mapping:
        raise ModelError(f"missing required key {key!r}", location)
    return mapping[key]


def _load_state_view(data: dict, location: str) -> StateViewDef:
    states = tuple(_require(data, "states", location))
    declared = set(states)
    transitions = []
    for pair in data.get("transitions", []):
        src, tgt = pair[0], pair[1]
        for name in (src, tgt):
            if name not in declared:
                raise ModelError(f"transition references unknown state {name!r}", location)
        transitions.append((src, tgt))
    backwards = []
    for pair in data.get("backwards_transitions", []):
        src, tgt = pair[0], pair[1]
        for name in (src, tgt):
            if name not in declared:
                raise ModelError(f"backwards transition references unknown state {name!r}", location)
        backwards.append((src, tgt))
    start = _require(data, "start_state", location)
    if start not in declared:
        raise ModelError(f"start state {start!r} is not a declared state", location)
    ends = data.get("end_states", [])
    for name in ends:
        if name not in declared:
            raise ModelError(f"end state {name!r} is not a declared state", location)
    activity_free = data.get("activity_free_states", [])
    for name in activity_free:
        if name not in declared:
            raise ModelError(f"activity-free state {name!r} is not a declared state", location)
    return StateViewDef(
        states=states,
        transitions=tuple(transitions),
        backwards_transitions=tuple(backwards),
        start_state=start,
        end_states=frozenset(ends),
        activity_free_states=frozenset(activity_free),
    )


def _load_structure(data: dict) -> RelationalTypeStructure:
    location = "structure"
    process_types: dict[str, ProcessTypeDef] = {}
    for i, entry in enumerate(data.get("process_types", [])):
        loc = f"{location}.process_types[{i}]"
        name = _require(entry, "name", loc)
        if name in process_types:
            raise ModelError(f"duplicate process type name {name!r}", loc)
        view = _load_state_view(_require(entry, "state_view", loc), f"{loc}.state_view")
        process_types[name] = ProcessTypeDef(
            name=name, state_view=view, attributes=tuple(entry.get("attributes", []))
        )
    relation_types: dict[str, RelationTypeDef] = {}
    for i, entry in enumerate(data.get("relation_types", [])):
        loc = f"{location}.relation_types[{i}]"
        source = _require(entry, "source", loc)
        target = _require(entry, "target", loc)
        for name in (source, target):
            if name not in process_types:
                raise ModelError(f"relation endpoint {name!r} is not a process type", loc)
        rel = RelationTypeDef(
            source_type=source,
            target_type=target,
            m_lower=entry.get("m_lower", 0),
            m_upper=entry.get("m_upper"),
            n_lower=entry.get("n_lower", 0),
            n_upper=entry.get("n_upper"),
        )
        if rel.key in relation_types:
            raise ModelError(f"duplicate relation type {rel.key!r}", loc)
        relation_types[rel.key] = rel
    return RelationalTypeStructure(
        name=data.get("name", "structure"),
        process_types=process_types,
        relation_types=relation_types,
    )


def _load_coordination_process(data: dict, structure: RelationalTypeStructure,
                               index: int) -> CoordProcessTypeDef:
    location = f"coordination_processes[{index}]"
    name = data.get("name", f"cp{index}")
    coordinating = _require(data, "coordinating_type", location)
    if coordinating not in structure.process_types:
        raise ModelError(f"coordinating type {coordinating!r} is not a process type", location)

    steps: dict[str, CoordStepTypeDef] = {}
    for key, entry in _require(data, "steps", location).items():
        loc = f"{location}.steps[{key!r}]"
        if ":" not in key:
            raise ModelError("step key must have the form 'ProcessType:State'", loc)
        ptype, state = key.rsplit(":", 1)
        if ptype not in structure.process_types:
            raise ModelError(f"step references unknown process type {ptype!r}", loc)
        if state not in structure.process_types[ptype].state_view.states:
            raise ModelError(f"step references unknown state {state!r} of {ptype!r}", loc)
        steps[key] = CoordStepTypeDef(
            key=key, process_type=ptype, state=state,
            port_ids=tuple(entry.get("ports", [])),
        )

    ports: dict[str, CoordPortTypeDef] = {}
    for step in steps.values():
        for pid in step.port_ids:
            ports[f"{step.key}.{pid}"] = CoordPortTypeDef(
                key=f"{step.key}.{pid}", step_key=step.key, port_id=pid
            )

    transitions: dict[str, CoordTransitionTypeDef] = {}
    incoming: dict[str, list[str]] = {k: [] for k in ports}
    for i, entry in enumerate(_require(data, "transitions", location)):
        loc = f"{location}.transitions[{i}]"
        source = _require(entry, "source", loc)
        target = _require(entry, "target", loc)
        if source not in steps:
            raise ModelError(f"transition source references unknown step {source!r}", loc)
        if target not in steps:
            raise ModelError(f"transition target references unknown step {target!r}", loc)
        port_id = entry.get("port", "p1")
        port_key = f"{target}.{port_id}"
        if port_key not in ports:
            raise ModelError(f"transition targets unknown port {port_key!r}", loc)
        kind = _require(entry, "kind", loc)
        if kind not in SEM_KINDS:
            raise ModelError(f"unknown semantic relationship kind {kind!r}", loc)
        ancestor = entry.get("common_ancestor")
        if ancestor is not None and ancestor not in structure.process_types:
            raise ModelError(f"common ancestor {ancestor!r} is not a process type", loc)
        rel = SemanticRelDef(
            kind=kind,
            expression=entry.get("expression"),
            valid_states=frozenset(entry.get("valid_states", [])),
            common_ancestor=ancestor,
        )
        key = f"{source}->{port_key}"
        transitions[key] = CoordTransitionTypeDef(
            key=key, source_step=source, target_step=target, target_port=port_key, rel=rel
        )
        incoming[port_key].append(key)

    for port in ports.values():
        port.incoming = tuple(incoming[port.key])
    return CoordProcessTypeDef(
        name=name, coordinating_type=coordinating,
        steps=steps, ports=ports, transitions=transitions,
    )


def load_model(path: str | Path) -> Model:
    """Load a model file. Resolves references; does not validate semantics."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelError(f"malformed model file: {exc}", str(path)) from exc
    return load_model_data(raw)


def load_model_data(raw: dict) -> Model:
    if not isinstance(raw, dict):
        raise ModelError("model document must be an object")
    structure = _load_structure(raw.get("structure", {}))
    cps: dict[str, CoordProcessTypeDef] = {}
    for i, entry in enumerate(raw.get("coordination_processes", [])):
        cp = _load_coordination_process(entry, structure, i)
        if cp.name in cps:
            raise ModelError(f"duplicate coordination process name {cp.name!r}",
                             f"coordination_processes[{i}]")
        cps[cp.name] = cp
    return Model(structure=structure, coordination_processes=cps)


# ---------------------------------------------------------------------------
# Inference, scope, validation


def infer_semantic_relationship(src_step: CoordStepTypeDef, tar_step: CoordStepTypeDef,
                                structure: RelationalTypeStructure) -> set[str]:
    """Candidate semantic relationship kinds for a transition between two steps.

    Derived from the type-level relation direction: lower-to-higher source gives
    bottom-up, higher-to-lower gives top-down, unrelated types under a common
    higher-level type give transverse, and equal types leave the modeler to pick
    between self and self-transverse.
    """
    src_type, tar_type = src_step.process_type, tar_step.process_type
    if src_type == tar_type:
        return {SELF, SELF_TRANSVERSE}
    if tar_type in structure.lower_level_types(src_type):
        return {TOP_DOWN}
    if src_type in structure.lower_level_types(tar_type):
        return {BOTTOM_UP}
    common = structure.higher_level_types(src_type) & structure.higher_level_types(tar_type)
    if common:
        return {TRANSVERSE}
    return set()


def common_ancestor_types(src_type: str, tar_type: str,
                          structure: RelationalTypeStructure) -> set[str]:
    if src_type == tar_type:
        return structure.higher_level_types(src_type)
    return structure.higher_level_types(src_type) & structure.higher_level_types(tar_type)


def compute_scope(cp: CoordProcessTypeDef, structure: RelationalTypeStructure) -> set[str]:
    """All process types coordinated by `cp`: the coordinating type plus its
    transitive lower-level types."""
    if cp.coordinating_type not in structure.process_types:
        raise ModelError(f"unknown coordinating type {cp.coordinating_type!r}")
    return structure.lower_level_types(cp.coordinating_type) | {cp.coordinating_type}


def _validate_state_view(name: str, view: StateViewDef, report: ValidationReport) -> None:
    loc = f"process type {name!r}"
    if not view.states:
        report.add("empty-view", "state view has no states", loc)
        return
    reachable = {view.start_state} | set(view.reachable_from(view.start_state))
    for state in view.states:
        if state not in reachable:
            report.add("unreachable-state", f"state {state!r} is unreachable from the start state", loc)
    for src, tgt in view.backwards_transitions:
        if not view.can_reach(tgt, src) or src == tgt:
            report.add("bad-backwards-transition",
                       f"backwards transition {src!r} -> {tgt!r} does not target a predecessor", loc)
    for end in view.end_states:
        if view.successors(end):
            report.add("end-state-outgoing", f"end state {end!r} has outgoing transitions", loc)


def _validate_type_graph(structure: RelationalTypeStructure, report: ValidationReport) -> None:
    for rel in structure.relation_types.values():
        loc = f"relation type {rel.key!r}"
        if rel.m_upper is not None and rel.m_lower > rel.m_upper:
            report.add("bad-bounds", "m_lower exceeds m_upper", loc)
        if rel.n_upper is not None and rel.n_lower > rel.n_upper:
            report.add("bad-bounds", "n_lower exceeds n_upper", loc)
    # Lower/higher-level must be a strict partial order: the type graph is acyclic.
    for name in structure.process_types:
        if name in structure.higher_level_types(name):
            report.add("type-cycle", f"process type {name!r} is on a relation cycle",
                       "structure")


def _validate_coordination_process(cp: CoordProcessTypeDef,
                                   structure: RelationalTypeStructure,
                                   report: ValidationReport) -> None:
    loc = f"coordination process {cp.name!r}"
    scope = compute_scope(cp, structure)

    seen_pairs: set[tuple[str, str]] = set()
    for step in cp.steps.values():
        pair = (step.process_type, step.state)
        if pair in seen_pairs:
            report.add("duplicate-step", f"duplicate step for {step.key!r}", loc)
        seen_pairs.add(pair)
        if step.process_type not in scope:
            report.add("step-out-of-scope",
                       f"step {step.key!r} references a type outside the coordination scope", loc)

    starts = cp.start_steps()
    if len(starts) != 1:
        report.add("start-step", f"expected exactly one start step without ports, found {len(starts)}", loc)
    if not cp.end_steps():
        report.add("end-step", "no end step (every step has outgoing transitions)", loc)
    for step in cp.steps.values():
        if step.port_ids and not any(
            cp.ports[f"{step.key}.{pid}"].incoming for pid in step.port_ids
        ):
            report.add("unconnected-step", f"step {step.key!r} has ports but no incoming transitions", loc)
    for port in cp.ports.values():
        if not port.incoming:
            report.add("empty-port", f"port {port.key!r} has no incoming transitions", loc)

    # Acyclicity over steps.
    edges: dict[str, set[str]] = {k: set() for k in cp.steps}
    for t in cp.transitions.values():
        edges[t.source_step].add(t.target_step)
    WHITE, GRAY, BLACK = 0, 1, 2
    colors = {k: WHITE for k in cp.steps}

    def visit(node: str) -> bool:
        colors[node] = GRAY
        for nxt in sorted(edges[node]):
            if colors[nxt] == GRAY:
                return False
            if colors[nxt] == WHITE and not visit(nxt):
                return False
        colors[node] = BLACK
        return True

    for node in cp.steps:
        if colors[node] == WHITE and not visit(node):
            report.add("cycle", f"coordination process graph has a cycle through {node!r}", loc)
            break

    # Connectivity: every step reachable from the start step (ignoring direction
    # is unnecessary; the graph is rooted at the start step).
    if len(starts) == 1:
        reached = {starts[0].key}
        frontier = [starts[0].key]
        while frontier:
            for nxt in edges[frontier.pop()]:
                if nxt not in reached:
                    reached.add(nxt)
                    frontier.append(nxt)
        for key in cp.steps:
            if key not in reached:
                report.add("disconnected", f"step {key!r} is not reachable from the start step", loc)

    for t in cp.transitions.values():
        tloc = f"{loc}, transition {t.key!r}"
        src = cp.steps[t.source_step]
        tar = cp.steps[t.target_step]
        candidates = infer_semantic_relationship(src, tar, structure)
        if t.rel.kind not in candidates:
            report.add("direction",
                       f"kind {t.rel.kind!r} inconsistent with relation structure "
                       f"(candidates: {sorted(candidates) or 'none'})", tloc)
        if t.rel.kind in EXPRESSION_KINDS:
            if not t.rel.expression:
                report.add("missing-expression", f"{t.rel.kind} transition requires an expression", tloc)
            else:
                try:
                    parse_expression(t.rel.expression)
                except ExpressionError as exc:
                    report.add("bad-expression", str(exc), tloc)
        elif t.rel.expression:
            report.add("unexpected-expression", f"{t.rel.kind} transition does not take an expression", tloc)
        if t.rel.kind in ANCESTOR_KINDS:
            if not t.rel.common_ancestor:
                report.add("missing-ancestor", f"{t.rel.kind} transition requires a common ancestor", tloc)
            else:
                legal = common_ancestor_types(src.process_type, tar.process_type, structure)
                if t.rel.common_ancestor not in legal:
                    report.add("bad-ancestor",
                               f"{t.rel.common_ancestor!r} is not a common higher-level type of "
                               f"{src.process_type!r} and {tar.process_type!r}", tloc)
        elif t.rel.common_ancestor:
            report.add("unexpected-ancestor", f"{t.rel.kind} transition does not take a common ancestor", tloc)
        if t.rel.kind == TOP_DOWN:
            view = structure.process_types[src.process_type].state_view
            for st in t.rel.valid_states:
                if st not in view.states:
                    report.add("bad-valid-state",
                               f"valid state {st!r} is not a state of {src.process_type!r}", tloc)
        elif t.rel.valid_states:
            report.add("unexpected-valid-states", f"{t.rel.kind} transition does not take valid states", tloc)


def validate_model(model: Model) -> ValidationReport:
    """Check every structural invariant; an empty report means executable."""
    report = ValidationReport()
    for name, ptype in model.structure.process_types.items():
        _validate_state_view(name, ptype.state_view, report)
    _validate_type_graph(model.structure, report)
    for cp in model.coordination_processes.values():
        _validate_coordination_process(cp, model.structure, report)
    return report
