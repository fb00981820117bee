"""Engine facade: wires the relational structure, state views, and
coordination process instances onto the messaging runtime.

Unit layout: one structure unit serializes all structure mutations; one unit
per process instance owns its state view and attributes; one unit per
coordination process instance owns its graph and rule engine. Reads across
units go through runtime.query strictly down the hierarchy
structure -> process -> coordination process, so no query cycle exists.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .coordgraph import CoordGraph, Marking
from .lifecycle import StateViewInstance, TransitionOutcome, ViewTraceRecord
from .model import Model, validate_model
from .rules import EXT, CascadeBudgetError, RuleEngine, TraceLine
from .runtime import Message, Runtime, RoutingError, make_runtime
from .structure import (
    EV_RELATION_CREATED,
    EV_RELATION_REMOVED,
    CoordinationVetoError,
    EventRecord,
    ProcessInstance,
    RelationalInstanceStructure,
)


class EngineError(Exception):
    pass


@dataclass
class CoordUnit:
    unit_id: str
    graph: CoordGraph
    rules: RuleEngine
    pending_promotions: dict[tuple[int, str], None] = field(default_factory=dict)

    def drain_promotions(self) -> list[tuple[int, str]]:
        out = list(self.pending_promotions)
        self.pending_promotions.clear()
        return out


class Engine:
    def __init__(self, model: Model, mode: str = "deterministic", seed: int = 0,
                 workers: int = 4, collect_traces: bool = False,
                 budget_factor: int = 60, validate: bool = True):
        if validate:
            report = validate_model(model)
            if not report.ok:
                raise EngineError(f"model is not executable:\n{report}")
        self.model = model
        self.mode = mode
        self.runtime: Runtime = make_runtime(mode, seed=seed, workers=workers,
                                             record_deliveries=collect_traces)
        self.structure = RelationalInstanceStructure(model)
        self.structure.listeners.append(self._on_structure_event)
        self.structure.link_veto_hook = self._veto_hook
        self.collect_traces = collect_traces
        self.budget_factor = budget_factor

        self.views: dict[int, StateViewInstance] = {}
        self.view_trace: list[ViewTraceRecord] = []
        self.cp_units: dict[str, CoordUnit] = {}
        self.cps_of_coordinator: dict[int, list[str]] = {}
        # Per-instance mirror of the coordination process units covering it,
        # written only by that instance's unit (plus at creation time).
        self.covering_cps: dict[int, dict[str, int]] = {}
        self.cascade_trace: list[TraceLine] = []
        self.failures: list[BaseException] = []

        # (process type, state) -> coordination process type names referencing it.
        self.coordinated_states: dict[tuple[str, str], list[str]] = {}
        # States a coordination process can observe, per process type: states
        # referenced by a step container, plus every state of a type that
        # sources a top-down transition with a valid-state set (whose condition
        # reads the active state).
        self.watched_states: dict[str, set[str]] = {
            name: set() for name in model.structure.process_types}
        for cp_name, cp in model.coordination_processes.items():
            for step in cp.steps.values():
                self.coordinated_states.setdefault((step.process_type, step.state), []).append(cp_name)
                self.watched_states[step.process_type].add(step.state)
            for transition in cp.transitions.values():
                if transition.rel.kind == "top-down" and transition.rel.valid_states:
                    source_type = cp.steps[transition.source_step].process_type
                    view = model.structure.process_types[source_type].state_view
                    self.watched_states[source_type].update(view.states)

        self.runtime.register("structure", "structure", self._structure_handler)

    # ------------------------------------------------------------------ units

    def _structure_handler(self, msg: Message) -> Any:
        kind = msg.kind
        payload = msg.payload
        if kind == "create":
            return self._do_create(payload["type"], payload.get("label"))
        if kind == "link":
            relation = self.structure.link(payload["a"], payload["b"],
                                           relation_type=payload.get("relation_type"),
                                           arrangement=payload.get("arrangement", False))
            return relation.id
        if kind == "unlink":
            self.structure.unlink(payload["relation"])
            return None
        if kind == "delete":
            return self._do_delete(payload["instance"])
        if kind == "export":
            return self.structure.export_state()
        raise EngineError(f"unknown structure operation {kind!r}")

    def _do_create(self, type_name: str, label: Optional[str]) -> int:
        instance = self.structure.create_instance(type_name, label)
        view_def = self.model.structure.process_types[type_name].state_view
        view = StateViewInstance(
            instance.id, view_def,
            trace=self.view_trace if self.collect_traces else None)
        self.views[instance.id] = view
        self.covering_cps[instance.id] = {}
        self.runtime.register(f"proc:{instance.id}", "process-instance",
                              self._proc_handler(instance.id))
        self.cps_of_coordinator[instance.id] = []
        for cp in self.model.coordination_processes.values():
            if cp.coordinating_type != type_name:
                continue
            unit_id = f"cp:{cp.name}:{instance.id}"
            graph = CoordGraph(unit_id, cp, instance.id, self.model)
            cu = CoordUnit(unit_id, graph, RuleEngine(
                graph,
                emit_promotion=lambda w, s, _cu_id=unit_id: self._queue_promotion(_cu_id, w, s),
                trace=self.cascade_trace if self.collect_traces else None,
                budget_factor=self.budget_factor))
            self.cp_units[unit_id] = cu
            self.cps_of_coordinator[instance.id].append(unit_id)
            self.covering_cps[instance.id][unit_id] = instance.id
            self.runtime.register(unit_id, "coordination-process", self._cp_handler(unit_id))
            self.runtime.send(unit_id, "structure-changed", {
                "instances": [self._instance_descriptor(instance.id)],
                "added_pairs": [], "removed_pairs": [], "removed_instances": [],
            }, sender="structure")
        return instance.id

    def _do_delete(self, instance_id: int) -> None:
        self.structure.instance(instance_id)
        own_cps = list(self.cps_of_coordinator.get(instance_id, []))
        self.structure.delete_instance(instance_id)
        for unit_id in own_cps:
            self.runtime.unregister(unit_id)
            self.cp_units.pop(unit_id, None)
        self.cps_of_coordinator.pop(instance_id, None)
        self.runtime.unregister(f"proc:{instance_id}")
        self.views.pop(instance_id, None)
        self.covering_cps.pop(instance_id, None)

    def _instance_descriptor(self, instance_id: int) -> dict[str, Any]:
        with self.runtime.reading(f"proc:{instance_id}"):
            markings = self.views[instance_id].snapshot()
        return {
            "id": instance_id,
            "type": self.structure.instances[instance_id].type_name,
            "markings": markings,
            "up": list(self.structure.higher_view(instance_id)),
        }

    # Structure events fan out to the affected coordination process units.
    def _on_structure_event(self, record: EventRecord) -> None:
        if record.event_type == EV_RELATION_CREATED:
            self._propagate_pairs(record.payload["added_pairs"], added=True)
        elif record.event_type == EV_RELATION_REMOVED:
            self._propagate_pairs(record.payload["removed_pairs"], added=False)

    def _propagate_pairs(self, pairs: list[tuple[int, int]], added: bool) -> None:
        pairs = [tuple(p) for p in pairs]
        # Only coordinators at or above an upper endpoint of a changed pair can
        # see a scope or membership change.
        affected: set[int] = set()
        for upper in {y for _, y in pairs}:
            affected.add(upper)
            if upper in self.structure.instances:
                affected.update(self.structure.higher_view(upper))
        for coordinator in sorted(affected):
            for unit_id in self.cps_of_coordinator.get(coordinator, ()):
                cu = self.cp_units.get(unit_id)
                if cu is not None:
                    self._propagate_pairs_to(unit_id, cu, coordinator, pairs, added)

    def _propagate_pairs_to(self, unit_id: str, cu: CoordUnit, coordinator: int,
                            pairs: list[tuple[int, int]], added: bool) -> None:
        lower = self.structure.lower_view(coordinator)

        def in_scope(x: int) -> bool:
            return x == coordinator or x in lower
        if added:
            gained = [x for (x, y) in pairs if y == coordinator]
            relevant = [(x, y) for (x, y) in pairs
                        if in_scope(x) and in_scope(y) and x not in gained]
            if not gained and not relevant:
                return
            message = {
                "instances": [self._instance_descriptor(x) for x in sorted(gained)],
                "added_pairs": sorted(relevant),
                "removed_pairs": [], "removed_instances": [],
            }
            for x in sorted(gained):
                self.runtime.send(f"proc:{x}", "scope-changed",
                                  {"add": {unit_id: coordinator}}, sender="structure")
        else:
            lost = [x for (x, y) in pairs if y == coordinator]
            relevant = [(x, y) for (x, y) in pairs
                        if in_scope(x) and in_scope(y)]
            if not lost and not relevant:
                return
            message = {
                "instances": [], "added_pairs": [],
                "removed_pairs": sorted(relevant),
                "removed_instances": sorted(lost),
            }
            for x in sorted(lost):
                self.runtime.send(f"proc:{x}", "scope-changed",
                                  {"remove": [unit_id]}, sender="structure")
        self.runtime.send(unit_id, "structure-changed", message, sender="structure")

    def _proc_handler(self, instance_id: int):
        def handler(msg: Message) -> Any:
            view = self.views.get(instance_id)
            if view is None:
                raise RoutingError(f"process instance {instance_id} deleted")
            kind = msg.kind
            if kind == "commit":
                return self._do_commit(instance_id, view, tuple(msg.payload["transition"]))
            if kind == "back":
                view.commit_backwards(tuple(msg.payload["transition"]))
                self._broadcast_state(instance_id, view)
                return None
            if kind == "promote":
                promoted = view.promote_pending(msg.payload["state"])
                if promoted:
                    self._broadcast_state(instance_id, view)
                    self._maybe_auto_advance(instance_id, view)
                return promoted
            if kind == "set-attr":
                self.structure.instances[instance_id].attributes[msg.payload["name"]] = \
                    msg.payload["value"]
                return None
            if kind == "scope-changed":
                covering = self.covering_cps[instance_id]
                for unit_id, coordinator in msg.payload.get("add", {}).items():
                    covering[unit_id] = coordinator
                for unit_id in msg.payload.get("remove", ()):
                    covering.pop(unit_id, None)
                return None
            raise EngineError(f"unknown process operation {kind!r}")
        return handler

    def _do_commit(self, instance_id: int, view: StateViewInstance,
                   transition: tuple[str, str]) -> str:
        target = transition[1]
        permitted = self._coordination_permits(instance_id, target)
        outcome = view.commit(transition, permitted)
        self._broadcast_state(instance_id, view)
        if outcome is TransitionOutcome.ACTIVATED:
            self._maybe_auto_advance(instance_id, view)
        return outcome.value

    def _coordination_permits(self, instance_id: int, target_state: str) -> bool:
        type_name = self.structure.instances[instance_id].type_name
        cp_names = self.coordinated_states.get((type_name, target_state))
        if not cp_names:
            return True
        step_key = f"{type_name}:{target_state}"
        relevant = False
        for unit_id in list(self.covering_cps[instance_id]):
            cu = self.cp_units.get(unit_id)
            if cu is None or cu.graph.ctype.name not in cp_names:
                continue
            relevant = True
            with self.runtime.reading(unit_id):
                container = cu.graph.containers.get(step_key)
                step = container.instances.get(instance_id) if container is not None else None
                if step is not None and step.marking is Marking.ACTIVE:
                    return True
        return not relevant

    def _broadcast_state(self, instance_id: int, view: StateViewInstance) -> None:
        changes = view.pop_changes()
        covering = self.covering_cps[instance_id]
        if not covering or not changes:
            return
        watched = self.watched_states[self.structure.instances[instance_id].type_name]
        delta = {state: new for state, _, new in changes if state in watched}
        if not delta:
            return  # provably invisible to every coordination process
        for unit_id in list(covering):
            self.runtime.send(unit_id, "state-changed",
                              {"instance": instance_id, "delta": delta},
                              sender=f"proc:{instance_id}")

    def _maybe_auto_advance(self, instance_id: int, view: StateViewInstance) -> None:
        candidate = view.auto_advance_candidate()
        if candidate is not None:
            self.runtime.send(f"proc:{instance_id}", "commit",
                              {"transition": list(candidate), "auto": True},
                              sender=f"proc:{instance_id}")

    def _cp_handler(self, unit_id: str):
        def handler(msg: Message) -> Any:
            cu = self.cp_units.get(unit_id)
            if cu is None:
                raise RoutingError(f"coordination process {unit_id} deleted")
            if msg.kind not in ("structure-changed", "state-changed"):
                raise EngineError(f"unknown coordination operation {msg.kind!r}")
            cu.rules.raise_event(msg.kind, EXT, msg.payload.get("instance"), msg.payload)
            try:
                snapshot = cu.rules.run_cascade()
            except CascadeBudgetError as exc:
                # Budget trips signal a rule-set defect; surface at quiescence
                # even when nobody awaits this message's handle.
                self.failures.append(exc)
                raise
            for instance_id, state in cu.drain_promotions():
                self.runtime.send(f"proc:{instance_id}", "promote", {"state": state},
                                  sender=unit_id)
            return snapshot.version
        return handler

    def _queue_promotion(self, unit_id: str, instance_id: int, state: str) -> None:
        self.cp_units[unit_id].pending_promotions[(instance_id, state)] = None

    # ------------------------------------------------------------- veto check

    def _veto_hook(self, source: ProcessInstance, target: int,
                   gained: list[int]) -> Optional[str]:
        view_def = self.model.structure.process_types[source.type_name].state_view
        with self.runtime.reading(f"proc:{source.id}"):
            active = self.views[source.id].active_state
        if active != view_def.start_state:
            return None
        if (source.type_name, active) not in self.coordinated_states:
            return None
        ancestors_after = {target} | self.structure.higher_level_of(target)
        for coordinator in gained:
            for unit_id in self.cps_of_coordinator.get(coordinator, ()):
                cu = self.cp_units[unit_id]
                with self.runtime.reading(unit_id):
                    reason = self._veto_eval(cu, source, active, ancestors_after)
                if reason:
                    return reason
        return None

    @staticmethod
    def _veto_eval(cu: CoordUnit, source: ProcessInstance, state: str,
                   ancestors_after: set[int]) -> Optional[str]:
        """Reject when the instance sits in a coordinated start state whose
        incoming top-down coordination is unfulfilled for the link target."""
        container = cu.graph.containers.get(f"{source.type_name}:{state}")
        if container is None or not container.port_containers:
            return None
        unfulfilled: list[str] = []
        for pc in container.port_containers:
            saw_top_down = False
            port_blockers: list[str] = []
            for ti in pc.in_transitions:
                if ti.ttype.rel.kind != "top-down":
                    continue
                saw_top_down = True
                for c in ti.components.values():
                    if c.src_step is not None and c.marking is Marking.COMPLETED \
                            and c.src_step.instance_id in ancestors_after:
                        break
                else:
                    port_blockers.append(ti.key)
            if not saw_top_down or not port_blockers:
                return None  # this port keeps the link open
            unfulfilled.extend(port_blockers)
        return (f"linking {source.type_name} {source.id} rejected: start state "
                f"{state!r} is blocked by unfulfilled top-down coordination "
                f"({', '.join(sorted(set(unfulfilled)))})")

    # ------------------------------------------------------------- public API

    def instantiate(self, type_name: str, label: Optional[str] = None) -> int:
        return self.runtime.call("structure", "create", {"type": type_name, "label": label})

    def link(self, a: int, b: int, relation_type: Optional[str] = None) -> int:
        return self.runtime.call("structure", "link",
                                 {"a": a, "b": b, "relation_type": relation_type})

    def link_arrangement(self, root: int, target: int,
                         relation_type: Optional[str] = None) -> int:
        return self.runtime.call("structure", "link",
                                 {"a": root, "b": target, "relation_type": relation_type,
                                  "arrangement": True})

    def unlink(self, relation_id: int) -> None:
        self.runtime.call("structure", "unlink", {"relation": relation_id})

    def delete(self, instance_id: int) -> None:
        self.runtime.call("structure", "delete", {"instance": instance_id})

    def set_attribute(self, instance_id: int, name: str, value: Any) -> None:
        self.runtime.call(f"proc:{instance_id}", "set-attr", {"name": name, "value": value})

    def commit(self, instance_id: int, source: str, target: str) -> TransitionOutcome:
        result = self.runtime.call(f"proc:{instance_id}", "commit",
                                   {"transition": [source, target]})
        return TransitionOutcome(result)

    def commit_backwards(self, instance_id: int, source: str, target: str) -> None:
        self.runtime.call(f"proc:{instance_id}", "back", {"transition": [source, target]})

    def quiesce(self, timeout: Optional[float] = None) -> None:
        self.runtime.await_quiescence(timeout)
        if self.failures:
            raise self.failures[0]

    def close(self) -> None:
        self.runtime.close()

    # ------------------------------------------------------------- inspection

    def state_markings(self, instance_id: int) -> dict[str, str]:
        return self.runtime.query(f"proc:{instance_id}",
                                  lambda: self.views[instance_id].snapshot())

    def active_state(self, instance_id: int) -> str:
        return self.runtime.query(f"proc:{instance_id}",
                                  lambda: self.views[instance_id].active_state)

    def all_state_markings(self) -> dict[int, dict[str, str]]:
        return {i: self.state_markings(i) for i in sorted(self.views)}

    def cp_dump(self, unit_id: str) -> list[str]:
        cu = self.cp_units[unit_id]
        return self.runtime.query(unit_id, cu.graph.dump)

    def all_cp_dumps(self) -> dict[str, list[str]]:
        return {unit_id: self.cp_dump(unit_id) for unit_id in sorted(self.cp_units)}

    def graph_markings(self) -> dict[str, dict[str, str]]:
        """Entity markings of every coordination process instance."""
        out: dict[str, dict[str, str]] = {}
        for unit_id in sorted(self.cp_units):
            cu = self.cp_units[unit_id]

            def snap(cu=cu) -> dict[str, str]:
                return {e.id: e.marking.value for e in cu.graph.all_entities()}

            out[unit_id] = self.runtime.query(unit_id, snap)
        return out

    def explain_blocked(self, instance_id: int, state: str) -> list[str]:
        """Why a state cannot activate: the unfulfilled components per port."""
        type_name = self.structure.instances[instance_id].type_name
        step_key = f"{type_name}:{state}"
        lines: list[str] = []
        for unit_id in list(self.covering_cps.get(instance_id, ())):
            cu = self.cp_units.get(unit_id)
            if cu is None:
                continue

            def explain(cu=cu) -> list[str]:
                found = []
                container = cu.graph.containers.get(step_key)
                if container is None:
                    return found
                step = container.instances.get(instance_id)
                if step is None:
                    return [f"{unit_id}: no step instance for {step_key} yet"]
                found.append(f"{unit_id}: step {step.id} is {step.marking.value}")
                for port in step.ports:
                    found.append(f"  port {port.id} is {port.marking.value}")
                    for comp in port.in_components.values():
                        detail = f"    component {comp.id} [{comp.sem_kind}] is {comp.marking.value}"
                        if comp.expression is not None:
                            counts = cu.rules.expression_counts(comp)
                            shown = {k: v for k, v in counts.items()}
                            detail += f" expr={comp.rel.expression!r} counts={shown}"
                        found.append(detail)
                return found

            lines.extend(self.runtime.query(unit_id, explain))
        return lines

    def check_invariants(self, include_structure_oracle: bool = True) -> list[str]:
        """Engine-wide soundness checks, run at stable points by the tests."""
        problems: list[str] = []
        for unit_id in sorted(self.cp_units):
            cu = self.cp_units[unit_id]

            def check(cu=cu) -> list[str]:
                found = cu.rules.check_consistency()
                for comp in cu.graph.components.values():
                    want_src, want_tar = cu.graph.membership_oracle(comp)
                    have_src = {s.id for s in comp.sources()}
                    have_tar = {p.id for p in comp.target_ports()}
                    if comp.sem_kind in ("bottom-up", "transverse", "self-transverse"):
                        if want_src != have_src:
                            found.append(f"{comp.id}: B_src {sorted(have_src)} != oracle {sorted(want_src)}")
                    if comp.sem_kind in ("top-down", "transverse", "self-transverse"):
                        if want_tar != have_tar:
                            found.append(f"{comp.id}: H_tar {sorted(have_tar)} != oracle {sorted(want_tar)}")
                if cu.rules.budget_exceeded:
                    found.append(f"{unit_id}: cascade budget was exceeded")
                return found

            problems.extend(self.runtime.query(unit_id, check))
        if include_structure_oracle:
            for instance_id in sorted(self.structure.instances):
                lower, higher = self.structure.closure_oracle(instance_id)
                if lower != self.structure.lower_level_of(instance_id):
                    problems.append(f"instance {instance_id}: maintained lower set diverged")
                if higher != self.structure.higher_level_of(instance_id):
                    problems.append(f"instance {instance_id}: maintained higher set diverged")
        for instance_id, view in self.views.items():
            markings = list(view.markings.values())
            if sum(1 for m in markings if m.value == "Activated") != 1:
                problems.append(f"instance {instance_id}: not exactly one Activated state")
        return problems

    def event_log_digest(self) -> list[str]:
        """Deterministic digest of everything observable, for replay checks."""
        lines = [f"{r.seq_no}|{r.event_type}|{r.entity_id}|{sorted(r.payload.items())!r}"
                 for r in self.structure.event_log]
        lines.extend(f"view|{t.instance_id}|{t.state}|{t.old_marking}->{t.new_marking}|{t.cause}"
                     for t in self.view_trace)
        lines.extend(f"delivery|{s}|{to}|{kind}" for s, to, kind in self.runtime.delivery_log)
        lines.extend(t.format() for t in self.cascade_trace)
        return lines
