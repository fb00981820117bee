"""Run-time coordination graph.

Containers are the static scaffolding created once per coordination process
instance; coordination step instances, port instances, and coordination
components are dynamic and follow the process instances in scope. Each
component kind has its instantiator: the source step (self, top-down), the
target port (bottom-up), or the common-ancestor process instance (transverse,
self-transverse).

The graph keeps local mirrors of in-scope state markings and of the
scope-relevant relation reachability, maintained purely from events, so rule
evaluation never reads another unit's data.
"""

from __future__ import annotations

from enum import Enum
from typing import Any, Iterable, Optional

from .expressions import Expr, compile_expression, counters_used, parse_expression
from .lifecycle import StateMarking

_EVALUATE_STATES = frozenset((StateMarking.ACTIVATED.value, StateMarking.CONFIRMED.value,
                              StateMarking.SKIPPED.value))
_PROGRESS_STATES = frozenset((StateMarking.ACTIVATED.value, StateMarking.CONFIRMED.value))
_EMPTY: dict = {}
from .model import (
    BOTTOM_UP,
    SELF,
    SELF_TRANSVERSE,
    TOP_DOWN,
    TRANSVERSE,
    CoordProcessTypeDef,
    CoordStepTypeDef,
    CoordPortTypeDef,
    CoordTransitionTypeDef,
    Model,
    compute_scope,
)


class Marking(str, Enum):
    INACTIVE = "Inactive"
    UPDATE = "Update"
    ACTIVE = "Active"
    COMPLETED = "Completed"
    ELIMINATED = "Eliminated"


_PROGRESS = {Marking.ELIMINATED: -1, Marking.INACTIVE: 0, Marking.UPDATE: 0,
             Marking.ACTIVE: 1, Marking.COMPLETED: 2}


class StepContainer:
    __slots__ = ("key", "step_type", "instances", "out_transitions", "port_containers")

    def __init__(self, step_type: CoordStepTypeDef):
        self.key = step_type.key
        self.step_type = step_type
        self.instances: dict[int, "StepInstance"] = {}
        self.out_transitions: list["TransitionInstance"] = []
        self.port_containers: list["PortContainer"] = []

    @property
    def marking(self) -> Marking:
        return _aggregate(s.marking for s in self.instances.values())


class PortContainer:
    __slots__ = ("key", "port_type", "step_container", "in_transitions", "instances")

    def __init__(self, port_type: CoordPortTypeDef, step_container: StepContainer):
        self.key = port_type.key
        self.port_type = port_type
        self.step_container = step_container
        self.in_transitions: list["TransitionInstance"] = []
        self.instances: dict[int, "PortInstance"] = {}

    @property
    def marking(self) -> Marking:
        return _aggregate(p.marking for p in self.instances.values())


class TransitionInstance:
    __slots__ = ("key", "ttype", "source_container", "target_port_container", "components")

    def __init__(self, ttype: CoordTransitionTypeDef, source: StepContainer, target: PortContainer):
        self.key = ttype.key
        self.ttype = ttype
        self.source_container = source
        self.target_port_container = target
        self.components: dict[str, "Component"] = {}

    @property
    def marking(self) -> Marking:
        return _aggregate(c.marking for c in self.components.values())


_TARGET_ACTIVE_MEMO: dict[int, bool] = {}


def _uses_target_active(expression: Expr) -> bool:
    key = id(expression)
    cached = _TARGET_ACTIVE_MEMO.get(key)
    if cached is None:
        cached = _TARGET_ACTIVE_MEMO[key] = "#TargetActive" in counters_used(expression)
    return cached


def _aggregate(markings: Iterable[Marking]) -> Marking:
    """Max-progress aggregate of dynamic contents; monitoring only."""
    best: Optional[Marking] = None
    for m in markings:
        if best is None or _PROGRESS[m] > _PROGRESS[best]:
            best = m
    return best if best is not None else Marking.INACTIVE


class StepInstance:
    kind = "step"
    __slots__ = ("container", "instance_id", "marking", "prev_marking",
                 "deleted", "out_components", "ports", "state_marking")

    def __init__(self, container: StepContainer, instance_id: int):
        self.container = container
        self.instance_id = instance_id
        self.marking = Marking.INACTIVE
        self.prev_marking = Marking.INACTIVE
        self.deleted = False
        self.out_components: dict[str, "Component"] = {}
        self.ports: list["PortInstance"] = []
        # Mirror of the referenced state's current marking, maintained by the
        # owning graph's state-delta handler.
        self.state_marking = StateMarking.WAITING.value

    @property
    def id(self) -> str:
        return f"{self.container.key}#{self.instance_id}"

    @property
    def state(self) -> str:
        return self.container.step_type.state

    def __repr__(self) -> str:
        return f"<step {self.id} {self.marking.value}>"


class PortInstance:
    kind = "port"
    __slots__ = ("container", "step", "instance_id", "marking", "prev_marking",
                 "deleted", "in_components")

    def __init__(self, container: PortContainer, step: StepInstance):
        self.container = container
        self.step = step
        self.instance_id = step.instance_id
        self.marking = Marking.INACTIVE
        self.prev_marking = Marking.INACTIVE
        self.deleted = False
        self.in_components: dict[str, "Component"] = {}

    @property
    def id(self) -> str:
        return f"{self.container.key}#{self.instance_id}"

    def __repr__(self) -> str:
        return f"<port {self.id} {self.marking.value}>"


class Component:
    """Run-time coordination component; one of the five semantic kinds."""

    kind = "component"
    __slots__ = ("sem_kind", "transition", "rel", "anchor_instance", "marking",
                 "prev_marking", "deleted", "expression", "compiled", "src_step", "tar_port",
                 "b_src", "h_tar", "source_state", "target_state", "uses_target_active")

    def __init__(self, sem_kind: str, transition: TransitionInstance,
                 anchor_instance: int):
        self.sem_kind = sem_kind
        self.transition = transition
        self.rel = transition.ttype.rel
        self.anchor_instance = anchor_instance
        self.marking = Marking.INACTIVE
        self.prev_marking = Marking.INACTIVE
        self.deleted = False
        # Expressions are held per component instance (parallel evaluation);
        # identical texts share one immutable tree.
        self.expression: Optional[Expr] = (
            parse_expression(self.rel.expression) if self.rel.expression else None
        )
        self.compiled = compile_expression(self.expression) if self.expression is not None else None
        self.src_step: Optional[StepInstance] = None       # self, top-down
        self.tar_port: Optional[PortInstance] = None       # self, bottom-up
        # Membership keyed by process instance id (one entity per container).
        self.b_src: dict[int, StepInstance] = {}           # bottom-up, transverse, self-transverse
        self.h_tar: dict[int, PortInstance] = {}           # top-down, transverse, self-transverse
        # State names whose marking changes can flip the condition.
        self.source_state = transition.source_container.step_type.state
        self.target_state = transition.target_port_container.step_container.step_type.state
        self.uses_target_active = (
            self.expression is not None and _uses_target_active(self.expression))

    @property
    def id(self) -> str:
        return f"cmp:{self.sem_kind}:{self.transition.key}@{self.anchor_instance}"

    def sources(self) -> list[StepInstance]:
        if self.src_step is not None:
            return [self.src_step]
        return list(self.b_src.values())

    def target_ports(self) -> list[PortInstance]:
        if self.tar_port is not None:
            return [self.tar_port]
        return list(self.h_tar.values())

    def __repr__(self) -> str:
        return f"<{self.sem_kind} {self.id} {self.marking.value}>"


class CoordGraph:
    """Graph of one coordination process instance, plus its event mirrors."""

    def __init__(self, cp_id: str, ctype: CoordProcessTypeDef, coordinating_instance: int,
                 model: Model):
        self.cp_id = cp_id
        self.ctype = ctype
        self.coordinating_instance = coordinating_instance
        self.model = model
        self.scope_types = compute_scope(ctype, model.structure)
        self.marking = Marking.ACTIVE

        self.containers: dict[str, StepContainer] = {}
        self.port_containers: dict[str, PortContainer] = {}
        self.transition_instances: dict[str, TransitionInstance] = {}
        self.steps: dict[int, StepInstance] = {}
        self.ports: dict[int, PortInstance] = {}
        self.components: dict[str, Component] = {}

        # Mirrors maintained from events only.
        self.state_mirror: dict[int, dict[str, str]] = {}
        self.reach_up: dict[int, set[int]] = {}
        self.instance_types: dict[int, str] = {}
        self.in_scope: dict[int, None] = {}

        # Indexes.
        self.steps_of_instance: dict[int, list[StepInstance]] = {}
        self.ports_of_instance: dict[int, list[PortInstance]] = {}
        self.components_by_anchor: dict[int, dict[str, Component]] = {}
        self.components_touching: dict[int, dict[str, Component]] = {}

        self._ancestor_transitions = [
            t for t in ctype.transitions.values() if t.rel.common_ancestor is not None
        ]
        self._containers_by_type: dict[str, list[StepContainer]] = {}
        self._build_containers()
        for container in self.containers.values():
            self._containers_by_type.setdefault(
                container.step_type.process_type, []).append(container)

    # -- scaffolding

    def _build_containers(self) -> None:
        for step_type in self.ctype.steps.values():
            self.containers[step_type.key] = StepContainer(step_type)
        for port_type in self.ctype.ports.values():
            container = self.containers[port_type.step_key]
            pc = PortContainer(port_type, container)
            self.port_containers[pc.key] = pc
            container.port_containers.append(pc)
        for ttype in self.ctype.transitions.values():
            source = self.containers[ttype.source_step]
            target = self.port_containers[ttype.target_port]
            ti = TransitionInstance(ttype, source, target)
            self.transition_instances[ti.key] = ti
            source.out_transitions.append(ti)
            target.in_transitions.append(ti)

    # -- mirror helpers

    def related(self, lower: int, higher: int) -> bool:
        return higher in self.reach_up.get(lower, ())

    def active_state_of(self, instance_id: int) -> Optional[str]:
        markings = self.state_mirror.get(instance_id)
        if not markings:
            return None
        for state, marking in markings.items():
            if marking == StateMarking.ACTIVATED.value:
                return state
        return None

    def state_marking_of(self, instance_id: int, state: str) -> str:
        return self.state_mirror.get(instance_id, {}).get(state, StateMarking.WAITING.value)

    # -- dynamic entity maintenance; all methods return entities to re-evaluate

    def add_instance(self, instance_id: int, type_name: str,
                     state_markings: dict[str, str], up: Iterable[int]) -> list[Any]:
        if instance_id in self.in_scope:
            return self.update_state(instance_id, state_markings)
        self.in_scope[instance_id] = None
        self.instance_types[instance_id] = type_name
        self.state_mirror[instance_id] = dict(state_markings)
        self.reach_up[instance_id] = set(up)
        self.steps_of_instance[instance_id] = []
        self.ports_of_instance[instance_id] = []
        self.components_touching.setdefault(instance_id, {})
        self.components_by_anchor.setdefault(instance_id, {})

        new_comps: list[Any] = []
        new_steps: list[StepInstance] = []
        for container in self._containers_by_type.get(type_name, ()):
            step = StepInstance(container, instance_id)
            step.state_marking = state_markings.get(
                step.state, StateMarking.WAITING.value)
            container.instances[instance_id] = step
            self.steps[id(step)] = step
            self.steps_of_instance[instance_id].append(step)
            new_steps.append(step)
            for pc in container.port_containers:
                port = PortInstance(pc, step)
                pc.instances[instance_id] = port
                self.ports[id(port)] = port
                self.ports_of_instance[instance_id].append(port)
                step.ports.append(port)

        # Instantiator logic: source steps spawn self/top-down components.
        for step in new_steps:
            for ti in step.container.out_transitions:
                if ti.ttype.rel.kind in (SELF, TOP_DOWN):
                    new_comps.append(self._spawn_source_component(ti, step))
        # Port instances spawn their bottom-up components.
        for step in new_steps:
            for port in step.ports:
                for ti in port.container.in_transitions:
                    if ti.ttype.rel.kind == BOTTOM_UP:
                        new_comps.append(self._spawn_bottom_up(ti, port))
        # Common-ancestor instances spawn transverse/self-transverse components.
        for ttype in self._ancestor_transitions:
            if ttype.rel.common_ancestor == type_name:
                ti = self.transition_instances[ttype.key]
                new_comps.append(self._spawn_ancestor_component(ti, instance_id))

        # Rewire existing components whose anchor the new instance relates to.
        new_comps.extend(self._join_memberships(instance_id))

        # Fresh entities default to Inactive; only those whose decision
        # procedure can leave the default need an initial evaluation (later
        # changes reach the rest through notifications). Steps and ports go
        # first so component evaluations see settled sources.
        touched: list[Any] = []
        for step in new_steps:
            marking = state_markings.get(step.state)
            if marking in _EVALUATE_STATES:
                touched.append(step)
            for port in step.ports:
                if not port.in_components or any(
                        c.marking is Marking.COMPLETED or c.marking is Marking.ELIMINATED
                        for c in port.in_components.values()):
                    touched.append(port)
        for comp in new_comps:
            if comp.kind != "component":
                touched.append(comp)  # ports returned by membership joins
            elif comp.sem_kind == TOP_DOWN and comp.rel.valid_states:
                touched.append(comp)  # may start out Eliminated (unreachable states)
            elif any(s.marking is Marking.COMPLETED or s.marking is Marking.ELIMINATED
                     for s in comp.sources()):
                touched.append(comp)
        return touched

    def _register_membership(self, component: Component, instance_id: int) -> None:
        table = self.components_touching.get(instance_id)
        if table is None:
            table = self.components_touching[instance_id] = {}
        table[id(component)] = component

    def _spawn_source_component(self, ti: TransitionInstance, src_step: StepInstance) -> Component:
        kind = ti.ttype.rel.kind
        comp = Component(kind, ti, src_step.instance_id)
        comp.src_step = src_step
        src_step.out_components[id(comp)] = comp
        ti.components[id(comp)] = comp
        self.components[id(comp)] = comp
        self.components_by_anchor.setdefault(src_step.instance_id, {})[id(comp)] = comp
        self._register_membership(comp, src_step.instance_id)
        if kind == SELF:
            # Both endpoints reference the same process instance.
            port = ti.target_port_container.instances.get(src_step.instance_id)
            if port is not None:
                comp.tar_port = port
                port.in_components[id(comp)] = comp
        else:
            for port in ti.target_port_container.instances.values():
                if self.related(port.instance_id, src_step.instance_id):
                    comp.h_tar[port.instance_id] = port
                    port.in_components[id(comp)] = comp
                    self._register_membership(comp, port.instance_id)
        return comp

    def _spawn_bottom_up(self, ti: TransitionInstance, tar_port: PortInstance) -> Component:
        comp = Component(BOTTOM_UP, ti, tar_port.instance_id)
        comp.tar_port = tar_port
        tar_port.in_components[id(comp)] = comp
        ti.components[id(comp)] = comp
        self.components[id(comp)] = comp
        self.components_by_anchor.setdefault(tar_port.instance_id, {})[id(comp)] = comp
        self._register_membership(comp, tar_port.instance_id)
        for step in ti.source_container.instances.values():
            if self.related(step.instance_id, tar_port.instance_id):
                comp.b_src[step.instance_id] = step
                step.out_components[id(comp)] = comp
                self._register_membership(comp, step.instance_id)
        return comp

    def _spawn_ancestor_component(self, ti: TransitionInstance, anchor: int) -> Component:
        kind = ti.ttype.rel.kind
        comp = Component(kind, ti, anchor)
        ti.components[id(comp)] = comp
        self.components[id(comp)] = comp
        self.components_by_anchor.setdefault(anchor, {})[id(comp)] = comp
        for step in ti.source_container.instances.values():
            if self.related(step.instance_id, anchor):
                comp.b_src[step.instance_id] = step
                step.out_components[id(comp)] = comp
                self._register_membership(comp, step.instance_id)
        for port in ti.target_port_container.instances.values():
            if self.related(port.instance_id, anchor):
                comp.h_tar[port.instance_id] = port
                port.in_components[id(comp)] = comp
                self._register_membership(comp, port.instance_id)
        return comp

    def _join_memberships(self, instance_id: int) -> list[Any]:
        """Attach a (newly related) instance to existing components anchored above it."""
        touched: list[Any] = []
        for anchor in list(self.reach_up.get(instance_id, ())):
            for comp in self.components_by_anchor.get(anchor, {}).values():
                touched.extend(self._try_join(comp, instance_id))
        return touched

    def _try_join(self, comp: Component, instance_id: int) -> list[Any]:
        touched: list[Any] = []
        ti = comp.transition
        if comp.sem_kind == SELF:
            return touched
        if comp.sem_kind in (BOTTOM_UP, TRANSVERSE, SELF_TRANSVERSE):
            step = ti.source_container.instances.get(instance_id)
            if step is not None and instance_id not in comp.b_src:
                comp.b_src[instance_id] = step
                step.out_components[id(comp)] = comp
                self._register_membership(comp, instance_id)
                touched.append(comp)
        if comp.sem_kind in (TOP_DOWN, TRANSVERSE, SELF_TRANSVERSE):
            port = ti.target_port_container.instances.get(instance_id)
            if port is not None and instance_id not in comp.h_tar:
                comp.h_tar[instance_id] = port
                port.in_components[id(comp)] = comp
                self._register_membership(comp, instance_id)
                # A top-down component's own marking never depends on its
                # target set; only the joining port needs evaluation.
                if comp.sem_kind != TOP_DOWN:
                    touched.append(comp)
                touched.append(port)
        return touched

    def _leave_membership(self, comp: Component, instance_id: int) -> list[Any]:
        touched: list[Any] = []
        ti = comp.transition
        step = ti.source_container.instances.get(instance_id)
        if step is not None and instance_id in comp.b_src:
            del comp.b_src[instance_id]
            step.out_components.pop(id(comp), None)
            touched.append(comp)
        port = ti.target_port_container.instances.get(instance_id)
        if port is not None and instance_id in comp.h_tar:
            del comp.h_tar[instance_id]
            port.in_components.pop(id(comp), None)
            touched.append(comp)
            touched.append(port)
        if not any(instance_id == s.instance_id for s in comp.sources()) and \
           not any(instance_id == p.instance_id for p in comp.target_ports()):
            self.components_touching.get(instance_id, {}).pop(id(comp), None)
        return touched

    def remove_instance(self, instance_id: int) -> list[Any]:
        """Prune a process instance that died or left the scope."""
        if instance_id not in self.in_scope:
            return []
        touched: list[Any] = []
        # Components whose instantiator entity died.
        for comp in list(self.components_by_anchor.get(instance_id, {}).values()):
            touched.extend(self._delete_component(comp))
        # Remaining memberships of the instance.
        for comp in list(self.components_touching.get(instance_id, {}).values()):
            touched.extend(self._leave_membership(comp, instance_id))
        for port in self.ports_of_instance.get(instance_id, []):
            for comp in list(port.in_components.values()):
                touched.extend(self._leave_membership(comp, instance_id))
            port.container.instances.pop(instance_id, None)
            self.ports.pop(id(port), None)
            port.deleted = True
        for step in self.steps_of_instance.get(instance_id, []):
            for comp in list(step.out_components.values()):
                touched.extend(self._leave_membership(comp, instance_id))
            step.container.instances.pop(instance_id, None)
            self.steps.pop(id(step), None)
            step.deleted = True
        for table in (self.in_scope, self.instance_types, self.state_mirror, self.reach_up,
                      self.steps_of_instance, self.ports_of_instance,
                      self.components_by_anchor, self.components_touching):
            table.pop(instance_id, None)
        return [t for t in touched if self._alive(t)]

    def _delete_component(self, comp: Component) -> list[Any]:
        touched: list[Any] = []
        for step in comp.sources():
            step.out_components.pop(id(comp), None)
            self.components_touching.get(step.instance_id, {}).pop(comp.id, None)
        for port in comp.target_ports():
            port.in_components.pop(id(comp), None)
            self.components_touching.get(port.instance_id, {}).pop(comp.id, None)
            touched.append(port)
        comp.transition.components.pop(comp.id, None)
        self.components_by_anchor.get(comp.anchor_instance, {}).pop(comp.id, None)
        self.components.pop(comp.id, None)
        comp.deleted = True
        return touched

    @staticmethod
    def _alive(entity: Any) -> bool:
        return entity is not None and not entity.deleted

    def apply_reach_delta(self, added: Iterable[tuple[int, int]],
                          removed: Iterable[tuple[int, int]]) -> list[Any]:
        """Membership updates for reachability changes among in-scope instances."""
        touched: list[Any] = []
        for x, y in added:
            if x in self.in_scope:
                self.reach_up[x].add(y)
        for x, y in added:
            if x not in self.in_scope or y not in self.components_by_anchor:
                continue
            for comp in list(self.components_by_anchor[y].values()):
                touched.extend(self._try_join(comp, x))
        for x, y in removed:
            if x in self.in_scope:
                self.reach_up[x].discard(y)
        for x, y in removed:
            if x not in self.in_scope or y not in self.components_by_anchor:
                continue
            for comp in list(self.components_by_anchor[y].values()):
                if not self.related(x, y):
                    touched.extend(self._leave_membership(comp, x))
        return [t for t in touched if self._alive(t)]

    def update_state(self, instance_id: int, state_markings: dict[str, str]) -> list[Any]:
        if instance_id not in self.in_scope:
            return []
        old = self.state_mirror.get(instance_id, {})
        diff = {s for s, m in state_markings.items() if old.get(s) != m}
        self.state_mirror[instance_id] = dict(state_markings)
        return self._touched_by_state_diff(instance_id, diff)

    def apply_state_delta(self, instance_id: int, delta: dict[str, str]) -> list[Any]:
        if instance_id not in self.in_scope:
            return []
        mirror = self.state_mirror[instance_id]
        diff = {s for s, m in delta.items() if mirror.get(s) != m}
        mirror.update(delta)
        return self._touched_by_state_diff(instance_id, diff)

    def _touched_by_state_diff(self, instance_id: int, diff: set[str]) -> list[Any]:
        if not diff:
            return []
        touched: list[Any] = []
        mirror = self.state_mirror[instance_id]
        skipped = StateMarking.SKIPPED.value
        for step in self.steps_of_instance.get(instance_id, []):
            if step.state in diff:
                old = step.state_marking
                new = mirror.get(step.state, StateMarking.WAITING.value)
                step.state_marking = new
                # A Completed step stays Completed while its state moves
                # between Activated and Confirmed; nothing to re-evaluate.
                if step.marking is Marking.COMPLETED and \
                        old in _PROGRESS_STATES and new in _PROGRESS_STATES:
                    continue
                if old == skipped or new == skipped:
                    # Skip status drives port elimination directly.
                    touched.extend(step.ports)
                touched.append(step)
        for comp in self.components_touching.get(instance_id, {}).values():
            if self._condition_watches(comp, instance_id, diff):
                touched.append(comp)
        return touched

    @staticmethod
    def _condition_watches(comp: Component, instance_id: int, diff: set[str]) -> bool:
        """Whether a state change of a member instance can flip the condition."""
        if comp.sem_kind == SELF:
            return False  # depends only on the source step marking
        if comp.sem_kind == TOP_DOWN:
            # The condition reads the source process's active state, and only
            # when a valid-state set is declared.
            return (bool(comp.rel.valid_states) and comp.src_step is not None
                    and comp.src_step.instance_id == instance_id)
        if comp.source_state in diff:
            return True
        return comp.uses_target_active and comp.target_state in diff

    # -- test oracle

    def membership_oracle(self, comp: Component) -> tuple[set[str], set[str]]:
        """Recompute membership from scratch via reachability; test equipment only."""
        ti = comp.transition
        if comp.sem_kind == SELF:
            src = {comp.src_step.id} if comp.src_step else set()
            tar = {comp.tar_port.id} if comp.tar_port else set()
            return src, tar
        if comp.sem_kind == TOP_DOWN:
            anchor = comp.src_step.instance_id
            return ({comp.src_step.id},
                    {p.id for p in ti.target_port_container.instances.values()
                     if self.related(p.instance_id, anchor)})
        if comp.sem_kind == BOTTOM_UP:
            anchor = comp.tar_port.instance_id
            return ({s.id for s in ti.source_container.instances.values()
                     if self.related(s.instance_id, anchor)},
                    {comp.tar_port.id})
        anchor = comp.anchor_instance
        return ({s.id for s in ti.source_container.instances.values()
                 if self.related(s.instance_id, anchor)},
                {p.id for p in ti.target_port_container.instances.values()
                 if self.related(p.instance_id, anchor)})

    # -- inspection

    def entity_count(self) -> int:
        return len(self.steps) + len(self.ports) + len(self.components)

    def all_entities(self) -> list[Any]:
        out: list[Any] = []
        out.extend(sorted(self.steps.values(), key=lambda s: s.id))
        out.extend(sorted(self.ports.values(), key=lambda p: p.id))
        out.extend(sorted(self.components.values(), key=lambda c: c.id))
        return out

    def dump(self) -> list[str]:
        """Textual adjacency listing: (entity_kind, id, marking, refs...)."""
        lines = []
        lines.append(f"coordination-process {self.cp_id} {self.marking.value} "
                     f"coordinating={self.coordinating_instance}")
        for key in sorted(self.containers):
            c = self.containers[key]
            lines.append(f"step-container {key} {c.marking.value} "
                         f"instances={sorted(c.instances)}")
        for key in sorted(self.port_containers):
            pc = self.port_containers[key]
            lines.append(f"port-container {key} {pc.marking.value} "
                         f"instances={sorted(pc.instances)}")
        for key in sorted(self.transition_instances):
            ti = self.transition_instances[key]
            lines.append(f"transition {key} {ti.marking.value} "
                         f"components={sorted(c.id for c in ti.components.values())}")
        for s in sorted(self.steps.values(), key=lambda s: s.id):
            lines.append(f"step {s.id} {s.marking.value} state={s.state} "
                         f"ports={sorted(p.id for p in s.ports)} "
                         f"out={sorted(c.id for c in s.out_components.values())}")
        for p in sorted(self.ports.values(), key=lambda p: p.id):
            lines.append(f"port {p.id} {p.marking.value} step={p.step.id} "
                         f"in={sorted(c.id for c in p.in_components.values())}")
        for c in sorted(self.components.values(), key=lambda c: c.id):
            lam = c.rel.expression or ""
            lines.append(f"component {c.id} {c.marking.value} kind={c.sem_kind} "
                         f"sources={sorted(s.id for s in c.sources())} "
                         f"targets={sorted(p.id for p in c.target_ports())}"
                         + (f" expr={lam!r}" if lam else ""))
        return lines
