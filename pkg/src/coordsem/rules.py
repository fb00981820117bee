"""Process rules: the marking cascade that enacts a coordination process.

Rules come in two classes. Notification rules react to a marking change and
flag dependent neighbors with the transient Update marking (with one direct
assignment: a Completed step sets its outgoing components Active, the
AND-split). Update rules overwrite Update by recomputing the entity's own
marking from its neighbors. Dead path elimination and its reversal are the
same cascade: elimination is never sticky, every re-evaluation recomputes the
full decision procedure.

Each engine instance serves exactly one coordination process instance and is
strictly single-threaded; it reads only that instance's graph and mirrors.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .coordgraph import Component, CoordGraph, Marking, PortInstance, StepInstance
from .expressions import evaluate

_EMPTY: dict = {}
from .lifecycle import StateMarking
from .model import SELF, TOP_DOWN

EXT = "ext"
INT = "int"

ACTIVATED = StateMarking.ACTIVATED.value
CONFIRMED = StateMarking.CONFIRMED.value
PENDING = StateMarking.PENDING.value
WAITING = StateMarking.WAITING.value
SKIPPED = StateMarking.SKIPPED.value


class CascadeBudgetError(Exception):
    """The cascade exceeded its step budget; indicates a rule-set defect."""

    def __init__(self, message: str, dump: list[str]):
        super().__init__(message)
        self.dump = dump


class Event:
    __slots__ = ("seq", "type", "origin", "entity", "payload")

    def __init__(self, seq: int, type: str, origin: str, entity: Any,
                 payload: Optional[dict[str, Any]] = None):
        self.seq = seq
        self.type = type
        self.origin = origin
        self.entity = entity
        self.payload = payload


@dataclass
class Snapshot:
    version: int
    timestamp: int
    pending_events: int

    @property
    def stable(self) -> bool:
        return self.pending_events == 0


@dataclass
class TraceLine:
    snapshot_version: int
    event: str
    rule: str
    context: str
    effects: tuple[str, ...]

    def format(self) -> str:
        effects = "; ".join(self.effects)
        return f"{self.snapshot_version}\t{self.event}\t{self.rule}\t{self.context}\t{effects}"


RULE_CATALOG: list[tuple[str, str, str, str]] = [
    ("notify_state_changed", "notification", "process instance",
     "A state-changed event flags the instance's coordination steps and every "
     "component whose membership involves the instance for re-evaluation."),
    ("notify_graph_changed", "notification", "structure",
     "Creation/deletion of processes or relations flags the new and rewired "
     "entities for re-evaluation."),
    ("notify_component_changed", "notification", "component",
     "A component marking change flags its target ports."),
    ("notify_port_changed", "notification", "port",
     "A port marking change flags its coordination step."),
    ("notify_step_changed", "notification", "step",
     "A step marking change flags its ports and outgoing components; a "
     "Completed step assigns Active to its outgoing components directly "
     "(AND-split); an Active step triggers the pending-state promotion check."),
    ("update_step", "update",
     "step", "Eliminated if the state is Skipped or all ports are Eliminated; "
     "Completed if the state is Activated/Confirmed and a port is Active or "
     "Completed; Active if a port is Active; otherwise Inactive."),
    ("update_port", "update", "port",
     "Eliminated if its step is Eliminated; Completed if its step is "
     "Completed; Eliminated if all incoming components are Eliminated; Active "
     "if all incoming components are Completed (AND-join); otherwise Inactive."),
    ("update_component", "update", "component",
     "Eliminated if all source steps are Eliminated or the condition is "
     "provably unfulfillable; Completed if a source step is Completed and the "
     "condition holds; Active if a source step is Completed; otherwise Inactive."),
]


class RuleEngine:
    def __init__(self, graph: CoordGraph,
                 emit_promotion: Optional[Callable[[int, str], None]] = None,
                 trace: Optional[list[TraceLine]] = None,
                 budget_factor: int = 60):
        self.graph = graph
        self.emit_promotion = emit_promotion
        self.trace = trace
        self.budget_factor = budget_factor
        self.queue: deque[Event] = deque()
        self.version = 0
        self.timestamp = 0
        self._event_seq = 0
        self._steps_taken = 0
        self._current_event: Optional[Event] = None
        self._end_containers: Optional[list[Any]] = None
        self._refreshed_version = -1
        self.budget_exceeded = False

    # -- events

    def raise_event(self, ev_type: str, origin: str, entity: Any,
                    payload: Optional[dict[str, Any]] = None) -> None:
        self._event_seq += 1
        self.queue.append(Event(self._event_seq, ev_type, origin, entity, payload))

    def raise_external(self, ev_type: str, payload: dict[str, Any]) -> None:
        self.raise_event(ev_type, EXT, payload.get("instance"), payload)

    def snapshot(self) -> Snapshot:
        return Snapshot(self.version, self.timestamp, len(self.queue))

    # -- cascade loop

    def run_cascade(self) -> Snapshot:
        """Process events until the queue drains, yielding a stable snapshot.

        The queue holds external events and, between them, the entities
        flagged Update whose own update rule still has to run.
        """
        budget = self.budget_factor * (self.graph.entity_count() + 8) * len(Marking)
        self._steps_taken = 0
        queue = self.queue
        while queue:
            self._steps_taken += 1
            if self._steps_taken > budget:
                self.budget_exceeded = True
                raise CascadeBudgetError(
                    f"cascade exceeded {budget} rule applications for {self.graph.cp_id}",
                    self.graph.dump())
            item = queue.popleft()
            self.timestamp += 1
            if item.__class__ is Event:
                self._current_event = item
                self._handle_external(item)
            elif not item.deleted:
                self._apply_update_rule(self._current_event, item)
        if self.version != self._refreshed_version:
            self._refresh_own_marking()
            self._refreshed_version = self.version
        return self.snapshot()

    # -- external events (graph maintenance + notification)

    def _handle_external(self, event: Event) -> None:
        graph = self.graph
        p = event.payload
        touched: list[Any] = []
        if event.type == "state-changed":
            if "delta" in p:
                touched = graph.apply_state_delta(p["instance"], p["delta"])
            else:
                touched = graph.update_state(p["instance"], p["markings"])
            self._promotion_scan(p["instance"])
            rule = "notify_state_changed"
        elif event.type == "structure-changed":
            for inst in p.get("removed_instances", ()):
                touched.extend(graph.remove_instance(inst))
            for inst in p.get("instances", ()):
                touched.extend(graph.add_instance(
                    inst["id"], inst["type"], inst["markings"], inst["up"]))
            touched.extend(graph.apply_reach_delta(
                p.get("added_pairs", ()), p.get("removed_pairs", ())))
            rule = "notify_graph_changed"
        else:
            return
        if self.trace is not None:
            self._trace(event, rule, str(event.entity),
                        [f"evaluate({e.id})" for e in _dedup(touched) if not e.deleted])
        for entity in _dedup(touched):
            # Entities already flagged Update sit in the queue and will be
            # evaluated there; evaluating them here would double the work.
            if not entity.deleted and entity.marking is not Marking.UPDATE:
                self._evaluate(event, entity)

    # -- notification rules (invoked directly at each marking change)
    #
    # Dependents read only the Completed/Eliminated facets of steps and
    # components; transitions that stay outside that set cannot flip any
    # neighbor's update rule. The traced variant mirrors the plain one and
    # additionally records effects.

    def _notify(self, entity: Any, old: Marking) -> None:
        if self.trace is not None:
            self._notify_traced(entity, old)
            return
        marking = entity.marking
        significant = (old is Marking.COMPLETED or old is Marking.ELIMINATED
                       or marking is Marking.COMPLETED or marking is Marking.ELIMINATED)
        kind = entity.kind
        mark_update = self._mark_update
        if kind == "component":
            if significant:
                for port in entity.target_ports():
                    mark_update(port)
        elif kind == "port":
            step = entity.step
            if not (step.marking is Marking.COMPLETED
                    and marking in (Marking.ACTIVE, Marking.COMPLETED)
                    and old in (Marking.ACTIVE, Marking.COMPLETED)):
                mark_update(step)
        else:
            if marking is Marking.COMPLETED:
                # AND-split: outgoing components become Active directly.
                for comp in list(entity.out_components.values()):
                    if comp.marking not in (Marking.ACTIVE, Marking.COMPLETED):
                        self._assign(comp, Marking.ACTIVE)
                    mark_update(comp)
            elif significant:
                for comp in list(entity.out_components.values()):
                    mark_update(comp)
            if significant:
                for port in entity.ports:
                    mark_update(port)
            if marking is Marking.ACTIVE:
                self._request_promotion(entity)

    def _notify_traced(self, entity: Any, old: Marking) -> None:
        effects: list[str] = []

        def note(target: Any) -> None:
            if self._mark_update(target):
                effects.append(f"{target.id}.marking := {Marking.UPDATE.value}")

        significant = (old is Marking.COMPLETED or old is Marking.ELIMINATED
                       or entity.marking is Marking.COMPLETED
                       or entity.marking is Marking.ELIMINATED)
        kind = entity.kind
        if kind == "component":
            rule = "notify_component_changed"
            if significant:
                for port in entity.target_ports():
                    note(port)
        elif kind == "port":
            rule = "notify_port_changed"
            note(entity.step)
        else:
            rule = "notify_step_changed"
            if entity.marking is Marking.COMPLETED:
                # AND-split: outgoing components become Active directly.
                for comp in list(entity.out_components.values()):
                    if comp.marking not in (Marking.ACTIVE, Marking.COMPLETED):
                        if self._assign(comp, Marking.ACTIVE):
                            effects.append(f"{comp.id}.marking := {Marking.ACTIVE.value}")
                    note(comp)
            elif significant:
                for comp in list(entity.out_components.values()):
                    note(comp)
            if significant:
                for port in entity.ports:
                    note(port)
            if entity.marking is Marking.ACTIVE:
                if self._request_promotion(entity):
                    effects.append(f"promote({entity.instance_id}, {entity.state})")
        if effects:
            self._trace(self._current_event, rule, entity.id, effects)

    def _request_promotion(self, step: StepInstance) -> bool:
        state_marking = step.state_marking
        if state_marking == PENDING and self.emit_promotion is not None:
            self.emit_promotion(step.instance_id, step.state)
            return True
        return False

    def _promotion_scan(self, instance_id: int) -> None:
        """State-first commits may arrive after the step already turned Active."""
        for step in self.graph.steps_of_instance.get(instance_id, []):
            if step.marking == Marking.ACTIVE:
                self._request_promotion(step)

    # -- update rules

    def _apply_update_rule(self, event: Optional[Event], entity: Any) -> None:
        self._evaluate(event, entity)

    def _evaluate(self, event: Optional[Event], entity: Any) -> None:
        """Recompute an entity's own marking from its neighbors."""
        kind = entity.kind
        if kind == "step":
            computed = self.compute_step(entity)
        elif kind == "port":
            computed = self.compute_port(entity)
        else:
            computed = self.compute_component(entity)
        previous = entity.prev_marking if entity.marking is Marking.UPDATE else entity.marking
        if computed is previous:
            entity.marking = previous  # idempotent: no new event
            return
        if entity.kind == "component" and computed is Marking.COMPLETED and \
                previous is not Marking.ACTIVE and self.trace is not None:
            # Components complete in two applications: source completion first
            # enables them (Active), the condition evaluation then completes.
            # Untraced runs collapse the transient Active hop; the fixpoint and
            # all dependent evaluations are identical (an Inactive-to-Active
            # component transition notifies nobody).
            self._assign(entity, Marking.ACTIVE)
            self._mark_update(entity)
            self._trace(event, "update_component", entity.id,
                        [f"{entity.id}.marking := {Marking.ACTIVE.value}",
                         f"{entity.id}.marking := {Marking.UPDATE.value}"])
            return
        self._assign(entity, computed)
        if self.trace is not None:
            self._trace(event, f"update_{entity.kind}", entity.id,
                        [f"{entity.id}.marking := {computed.value}"])

    # -- marking assignment

    def _assign(self, entity: Any, marking: Marking) -> bool:
        old = entity.marking if entity.marking is not Marking.UPDATE else entity.prev_marking
        if old is marking:
            entity.marking = marking  # clears a transient Update silently
            entity.prev_marking = marking
            return False
        entity.marking = marking
        entity.prev_marking = marking
        self.version += 1
        self._steps_taken += 1
        self._notify(entity, old)
        return True

    def _mark_update(self, entity: Any) -> bool:
        if entity.marking is Marking.UPDATE:
            return False  # idempotent, no new event
        entity.prev_marking = entity.marking
        entity.marking = Marking.UPDATE
        self.version += 1
        self.queue.append(entity)
        return True

    # -- decision procedures (markings are functions of neighbor markings)

    def compute_marking(self, entity: Any) -> Marking:
        kind = entity.kind
        if kind == "step":
            return self.compute_step(entity)
        if kind == "port":
            return self.compute_port(entity)
        return self.compute_component(entity)

    @staticmethod
    def _entity_marking(entity: Any) -> Marking:
        return entity.prev_marking if entity.marking is Marking.UPDATE else entity.marking

    def compute_step(self, step: StepInstance) -> Marking:
        state_marking = step.state_marking
        if state_marking == SKIPPED:
            return Marking.ELIMINATED
        any_active = any_enabling = False
        all_eliminated = bool(step.ports)
        for port in step.ports:
            m = port.prev_marking if port.marking is Marking.UPDATE else port.marking
            if m is not Marking.ELIMINATED:
                all_eliminated = False
            if m is Marking.ACTIVE:
                any_active = any_enabling = True
            elif m is Marking.COMPLETED:
                any_enabling = True
        if all_eliminated:
            return Marking.ELIMINATED
        if state_marking == ACTIVATED or state_marking == CONFIRMED:
            if not step.ports or any_enabling:
                return Marking.COMPLETED
        if any_active:
            return Marking.ACTIVE
        return Marking.INACTIVE

    def compute_port(self, port: PortInstance) -> Marking:
        # The step-side elimination needs its primary justification (the state
        # is Skipped) rather than the step marking: a step eliminated because
        # all its ports are eliminated must not in turn sustain the ports'
        # elimination, or reversing a dead path could never unlock the pair.
        if port.step.state_marking == SKIPPED:
            return Marking.ELIMINATED
        step_marking = self._entity_marking(port.step)
        # A Completed step fixes its ports: completed progress is history and
        # is never retroactively eliminated by later constraint changes.
        if step_marking is Marking.COMPLETED:
            return Marking.COMPLETED
        all_eliminated = bool(port.in_components)
        all_completed = True
        for comp in port.in_components.values():
            m = comp.prev_marking if comp.marking is Marking.UPDATE else comp.marking
            if m is not Marking.ELIMINATED:
                all_eliminated = False
            if m is not Marking.COMPLETED:
                all_completed = False
        if all_eliminated:
            return Marking.ELIMINATED
        if all_completed:
            return Marking.ACTIVE  # AND-join; vacuously true when unconstrained
        return Marking.INACTIVE

    def compute_component(self, comp: Component) -> Marking:
        src_step = comp.src_step
        any_completed = False
        counts = None
        if src_step is not None:
            m = src_step.prev_marking if src_step.marking is Marking.UPDATE else src_step.marking
            all_eliminated = m is Marking.ELIMINATED
            any_completed = m is Marking.COMPLETED
        else:
            # One pass over the members: source markings and state counts.
            source_in = source_after = source_before = 0
            all_eliminated = bool(comp.b_src)
            for step in comp.b_src.values():
                m = step.prev_marking if step.marking is Marking.UPDATE else step.marking
                if m is not Marking.ELIMINATED:
                    all_eliminated = False
                if m is Marking.COMPLETED:
                    any_completed = True
                state = step.state_marking
                if state == ACTIVATED:
                    source_in += 1
                elif state == CONFIRMED:
                    source_after += 1
                elif state == WAITING or state == PENDING:
                    source_before += 1
            counts = (source_in, source_after, source_before, len(comp.b_src))
        if all_eliminated:
            return Marking.ELIMINATED
        if comp.sem_kind == TOP_DOWN and comp.rel.valid_states and \
                self._valid_states_unreachable(comp):
            return Marking.ELIMINATED
        if any_completed:
            if self._condition(comp, counts):
                return Marking.COMPLETED
            return Marking.ACTIVE
        return Marking.INACTIVE

    def _valid_states_unreachable(self, comp: Component) -> bool:
        instance = comp.src_step.instance_id
        active = self.graph.active_state_of(instance)
        if active is None:
            return False
        view = self.graph.model.structure.process_types[
            comp.src_step.container.step_type.process_type].state_view
        return not any(view.can_reach(active, v) for v in comp.rel.valid_states)

    # -- conditions

    def condition_fulfilled(self, comp: Component) -> bool:
        return self._condition(comp, None)

    def _condition(self, comp: Component, counts: Optional[tuple[int, int, int, int]]) -> bool:
        if comp.sem_kind == SELF:
            return True
        if comp.sem_kind == TOP_DOWN:
            if not comp.rel.valid_states:
                return True
            active = self.graph.active_state_of(comp.src_step.instance_id)
            return active in comp.rel.valid_states
        if counts is None:
            si, sa, sb, st, ta = self._count_tuple(comp)
            return comp.compiled(si, sa, sb, st, ta)
        target_active = 0
        if comp.uses_target_active:
            for port in comp.target_ports():
                if port.step.state_marking == ACTIVATED:
                    target_active += 1
        return comp.compiled(counts[0], counts[1], counts[2], counts[3], target_active)

    def _count_tuple(self, comp: Component) -> tuple[int, int, int, int, int]:
        source_in = source_after = source_before = 0
        for step in comp.b_src.values():
            marking = step.state_marking
            if marking == ACTIVATED:
                source_in += 1
            elif marking == CONFIRMED:
                source_after += 1
            elif marking == WAITING or marking == PENDING:
                source_before += 1
        target_active = 0
        if comp.uses_target_active:
            for port in comp.target_ports():
                if port.step.state_marking == ACTIVATED:
                    target_active += 1
        return (source_in, source_after, source_before, len(comp.b_src), target_active)

    def expression_counts(self, comp: Component) -> dict[str, int]:
        si, sa, sb, st, ta = self._count_tuple(comp)
        return {"#SourceIn": si, "#SourceAfter": sa, "#SourceBefore": sb,
                "#SourceTotal": st, "#TargetActive": ta}

    # -- dead path elimination entry points

    def dead_path_elimination(self, origin: Any) -> None:
        """Cascade eliminations from an entity that just became Eliminated."""
        self._current_event = Event(0, "dead-path-elimination", INT, origin)
        self._notify(origin, Marking.INACTIVE)
        self.run_cascade()

    def reverse_dead_path_elimination(self, origin: Any) -> None:
        """Re-open a path whose condition became fulfillable again: affected
        Eliminated entities are re-marked by the normal update rules."""
        self._current_event = Event(0, "reverse-dead-path-elimination", INT, origin)
        self._mark_update(origin)
        self.run_cascade()

    # -- coordination process instance marking (interpretation: Completed once
    #    any end step instance completes, otherwise Active)

    def _refresh_own_marking(self) -> None:
        graph = self.graph
        if self._end_containers is None:
            self._end_containers = [graph.containers[s.key] for s in graph.ctype.end_steps()]
        for container in self._end_containers:
            for step in container.instances.values():
                if step.marking is Marking.COMPLETED:
                    graph.marking = Marking.COMPLETED
                    return
        graph.marking = Marking.ACTIVE

    # -- diagnostics

    def _trace(self, event: Optional[Event], rule: str, context: str,
               effects: list[str]) -> None:
        if self.trace is None:
            return
        descr = f"{event.origin}:{event.type}" if event is not None else "int:?"
        self.trace.append(TraceLine(self.version, descr, rule, context, tuple(effects)))

    def check_consistency(self) -> list[str]:
        """Stable-snapshot self-consistency: no Update markings; every stored
        marking equals its recomputation from neighbors; join semantics hold."""
        problems = []
        if self.queue:
            problems.append(f"{self.graph.cp_id}: event queue not empty")
        for entity in self.graph.all_entities():
            if entity.marking == Marking.UPDATE:
                problems.append(f"{entity.id}: Update marking at stable snapshot")
                continue
            recomputed = self.compute_marking(entity)
            if recomputed != entity.marking:
                problems.append(
                    f"{entity.id}: stored {entity.marking.value} != recomputed {recomputed.value}")
        for port in self.graph.ports.values():
            if port.marking == Marking.ACTIVE and port.in_components and \
                    not all(c.marking == Marking.COMPLETED for c in port.in_components.values()):
                problems.append(f"{port.id}: Active port with non-Completed incoming component")
        for step in self.graph.steps.values():
            if step.marking == Marking.ACTIVE and step.ports and \
                    not any(p.marking in (Marking.ACTIVE,) for p in step.ports):
                problems.append(f"{step.id}: Active step without an Active port")
        return problems


def _dedup(entities: list[Any]) -> list[Any]:
    if len(entities) < 2:
        return entities
    seen: set[int] = set()
    out = []
    for e in entities:
        if e is None or id(e) in seen:
            continue
        seen.add(id(e))
        out.append(e)
    return out


def rule_catalog_text() -> str:
    """Human-readable export of the built-in rule set."""
    lines = ["Process rule catalog", "====================", ""]
    for name, klass, context, description in RULE_CATALOG:
        lines.append(f"{name} ({klass} rule, context: {context})")
        lines.append(f"    {description}")
        lines.append("")
    return "\n".join(lines)
