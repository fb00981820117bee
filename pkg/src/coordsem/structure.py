"""Run-time relational process instance structure.

Tracks process and relation instances, maintains the transitive lower/higher
instance sets incrementally, enforces cardinality upper bounds, and emits
change events for coordination processes. All mutations go through one
isolation unit; the sets are read as consistent snapshots between mutations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

from .model import Model, RelationTypeDef

EV_PROCESS_CREATED = "process-created"
EV_PROCESS_REMOVED = "process-removed"
EV_RELATION_CREATED = "relation-created"
EV_RELATION_REMOVED = "relation-removed"


class StructureError(Exception):
    """Invalid structure operation."""


class UnknownEntityError(StructureError):
    pass


class CardinalityError(StructureError):
    pass


class CoordinationVetoError(StructureError):
    """A coordination process rejected the link (start-state special case)."""


@dataclass
class ProcessInstance:
    id: int
    type_name: str
    label: str
    attributes: dict[str, Any] = field(default_factory=dict)


@dataclass
class RelationInstance:
    id: int
    rel_type: RelationTypeDef
    source: int
    target: int


@dataclass
class EventRecord:
    seq_no: int
    event_type: str
    entity_id: int
    payload: dict[str, Any] = field(default_factory=dict)


# Veto hook: called with (linked source instance, link target id, coordinating
# instance ids that newly gain it in scope); returns a rejection reason or None.
VetoHook = Callable[[ProcessInstance, int, list[int]], Optional[str]]


class RelationalInstanceStructure:
    def __init__(self, model: Model):
        self.model = model
        self.types = model.structure
        self.instances: dict[int, ProcessInstance] = {}
        self.relations: dict[int, RelationInstance] = {}
        self.pi_in: dict[int, set[int]] = {}
        self.pi_out: dict[int, set[int]] = {}
        # Edge multiset of the relation graph: src -> {tgt: count}.
        self._out: dict[int, dict[int, int]] = {}
        self._in: dict[int, dict[int, int]] = {}
        self._lower: dict[int, set[int]] = {}
        self._higher: dict[int, set[int]] = {}
        self.event_log: list[EventRecord] = []
        self.listeners: list[Callable[[EventRecord], None]] = []
        self.link_veto_hook: Optional[VetoHook] = None
        self._next_instance = 1
        self._next_relation = 1
        self._seq = 0

    # -- events

    def _emit(self, event_type: str, entity_id: int, payload: dict[str, Any]) -> EventRecord:
        self._seq += 1
        record = EventRecord(self._seq, event_type, entity_id, payload)
        self.event_log.append(record)
        for listener in self.listeners:
            listener(record)
        return record

    # -- queries

    def instance(self, instance_id: int) -> ProcessInstance:
        try:
            return self.instances[instance_id]
        except KeyError:
            raise UnknownEntityError(f"unknown process instance {instance_id}") from None

    def lower_level_of(self, instance_id: int) -> set[int]:
        self.instance(instance_id)
        return set(self._lower[instance_id])

    def higher_level_of(self, instance_id: int) -> set[int]:
        self.instance(instance_id)
        return set(self._higher[instance_id])

    def lower_view(self, instance_id: int) -> set[int]:
        """Internal lower set; read-only, no copy."""
        return self._lower[instance_id]

    def higher_view(self, instance_id: int) -> set[int]:
        """Internal higher set; read-only, no copy."""
        return self._higher[instance_id]

    def transitively_related(self, a: int, b: int) -> bool:
        self.instance(a)
        return b in self._higher[a] or b in self._lower[a]

    def coordinating_instances_over(self, instance_id: int) -> list[int]:
        """Coordinating instances whose scope contains `instance_id` (itself included)."""
        coordinating_types = {cp.coordinating_type for cp in self.model.coordination_processes.values()}
        result = []
        for cand in sorted(self._higher[instance_id] | {instance_id}):
            if cand in self.instances and self.instances[cand].type_name in coordinating_types:
                result.append(cand)
        return result

    # -- closure oracle (test equipment and removal recomputation)

    def closure_oracle(self, instance_id: int) -> tuple[set[int], set[int]]:
        """(lower, higher) recomputed from scratch by graph traversal."""
        return self._traverse(instance_id, self._in), self._traverse(instance_id, self._out)

    def _traverse(self, start: int, edges: dict[int, dict[int, int]]) -> set[int]:
        seen: set[int] = set()
        stack = [start]
        while stack:
            for nxt in edges.get(stack.pop(), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    # -- mutations

    def create_instance(self, type_name: str, label: Optional[str] = None) -> ProcessInstance:
        if type_name not in self.types.process_types:
            raise UnknownEntityError(f"unknown process type {type_name!r}")
        instance = ProcessInstance(
            id=self._next_instance, type_name=type_name, label=label or type_name
        )
        self._next_instance += 1
        self.instances[instance.id] = instance
        self.pi_in[instance.id] = set()
        self.pi_out[instance.id] = set()
        self._out[instance.id] = {}
        self._in[instance.id] = {}
        self._lower[instance.id] = set()
        self._higher[instance.id] = set()
        self._emit(EV_PROCESS_CREATED, instance.id, {"type": type_name, "label": instance.label})
        return instance

    def _resolve_direction(self, a: int, b: int,
                           relation_type: Optional[str]) -> tuple[RelationTypeDef, int, int]:
        ta, tb = self.instance(a).type_name, self.instance(b).type_name
        if relation_type is not None:
            rel = self.types.relation_types.get(relation_type)
            if rel is None:
                raise UnknownEntityError(f"unknown relation type {relation_type!r}")
            if rel.source_type == ta and rel.target_type == tb:
                return rel, a, b
            if rel.source_type == tb and rel.target_type == ta:
                return rel, b, a
            raise StructureError(f"relation type {relation_type!r} does not connect {ta!r} and {tb!r}")
        forward = self.types.relation_types_between(ta, tb)
        backward = self.types.relation_types_between(tb, ta)
        if len(forward) + len(backward) == 0:
            raise StructureError(f"no relation type between {ta!r} and {tb!r}")
        if len(forward) + len(backward) > 1:
            raise StructureError(
                f"ambiguous relation between {ta!r} and {tb!r}; name the relation type explicitly")
        if forward:
            return forward[0], a, b
        return backward[0], b, a

    def _check_upper_bounds(self, rel: RelationTypeDef, source: int, target: int) -> None:
        if rel.m_upper is not None:
            count = sum(1 for rid in self.pi_out[source]
                        if self.relations[rid].rel_type is rel)
            if count + 1 > rel.m_upper:
                raise CardinalityError(
                    f"instance {source} already has {count} outgoing {rel.key!r} relations (max {rel.m_upper})")
        if rel.n_upper is not None:
            count = sum(1 for rid in self.pi_in[target]
                        if self.relations[rid].rel_type is rel)
            if count + 1 > rel.n_upper:
                raise CardinalityError(
                    f"instance {target} already has {count} incoming {rel.key!r} relations (max {rel.n_upper})")

    def link(self, a: int, b: int, relation_type: Optional[str] = None,
             arrangement: bool = False) -> RelationInstance:
        """Create a relation between two instances; direction comes from the type.

        The coordination veto applies only to plain links of an instance sitting
        in its coordinated start state; arrangement links skip it (the execution
        status of the arrangement is taken as ground truth).
        """
        rel, source, target = self._resolve_direction(a, b, relation_type)
        self._check_upper_bounds(rel, source, target)

        if not arrangement and self.link_veto_hook is not None:
            gained = self._coordinators_gained(source, target)
            if gained:
                reason = self.link_veto_hook(self.instances[source], target, gained)
                if reason:
                    raise CoordinationVetoError(reason)

        relation = RelationInstance(self._next_relation, rel, source, target)
        self._next_relation += 1
        self.relations[relation.id] = relation
        self.pi_out[source].add(relation.id)
        self.pi_in[target].add(relation.id)
        self._out[source][target] = self._out[source].get(target, 0) + 1
        self._in[target][source] = self._in[target].get(source, 0) + 1

        added_pairs = self._closure_add(source, target)
        payload = {
            "relation_type": rel.key,
            "source": source,
            "target": target,
            "added_pairs": sorted(added_pairs),
            "arrangement": arrangement,
        }
        self._emit(EV_RELATION_CREATED, relation.id, payload)
        return relation

    def link_arrangement(self, root: int, target: int,
                         relation_type: Optional[str] = None) -> RelationInstance:
        """Link a whole pre-executed arrangement (root plus its lower-level
        instances) under `target` atomically, without the coordination veto."""
        self.instance(root)
        self.instance(target)
        return self.link(root, target, relation_type=relation_type, arrangement=True)

    def _coordinators_gained(self, source: int, target: int) -> list[int]:
        """Coordinating instances that would newly gain `source` in scope."""
        coordinating_types = {cp.coordinating_type for cp in self.model.coordination_processes.values()}
        up = self._higher[target] | {target}
        gained = []
        for cand in sorted(up):
            inst = self.instances.get(cand)
            if inst is None or inst.type_name not in coordinating_types:
                continue
            if cand != source and source not in self._lower[cand]:
                gained.append(cand)
        return gained

    def unlink(self, relation_id: int) -> None:
        relation = self.relations.get(relation_id)
        if relation is None:
            raise UnknownEntityError(f"unknown relation instance {relation_id}")
        source, target = relation.source, relation.target
        del self.relations[relation_id]
        self.pi_out[source].discard(relation_id)
        self.pi_in[target].discard(relation_id)
        self._out[source][target] -= 1
        if self._out[source][target] == 0:
            del self._out[source][target]
        self._in[target][source] -= 1
        if self._in[target][source] == 0:
            del self._in[target][source]
        removed_pairs = self._closure_remove(source, target)
        self._emit(EV_RELATION_REMOVED, relation_id, {
            "relation_type": relation.rel_type.key,
            "source": source,
            "target": target,
            "removed_pairs": sorted(removed_pairs),
        })

    def delete_instance(self, instance_id: int) -> None:
        """Delete an instance; incident relations are removed first so rule
        evaluation never observes a dangling reference."""
        instance = self.instance(instance_id)
        for rid in sorted(self.pi_in[instance_id] | self.pi_out[instance_id]):
            self.unlink(rid)
        del self.instances[instance_id]
        for table in (self.pi_in, self.pi_out, self._out, self._in, self._lower, self._higher):
            table.pop(instance_id, None)
        self._emit(EV_PROCESS_REMOVED, instance_id, {"type": instance.type_name})

    # -- incremental closure maintenance

    def _closure_add(self, source: int, target: int) -> set[tuple[int, int]]:
        down = {source} | self._lower[source]
        up = {target} | self._higher[target]
        added: set[tuple[int, int]] = set()
        for x in down:
            higher_x = self._higher[x]
            for y in up:
                if y not in higher_x and y != x:
                    higher_x.add(y)
                    self._lower[y].add(x)
                    added.add((x, y))
        return added

    def _closure_remove(self, source: int, target: int) -> set[tuple[int, int]]:
        affected_down = {source} | self._lower[source]
        affected_up = {target} | self._higher[target]
        removed: set[tuple[int, int]] = set()
        for y in affected_up:
            new_lower = self._traverse(y, self._in)
            for x in self._lower[y] - new_lower:
                removed.add((x, y))
            self._lower[y] = new_lower
        for x in affected_down:
            self._higher[x] = self._traverse(x, self._out)
        return removed

    # -- diagnostics

    def health_report(self) -> list[str]:
        """Lower-bound violations; informative only, never blocking."""
        problems = []
        for inst in self.instances.values():
            for rel in self.types.relation_types.values():
                if rel.source_type == inst.type_name and rel.m_lower > 0:
                    count = sum(1 for rid in self.pi_out[inst.id]
                                if self.relations[rid].rel_type is rel)
                    if count < rel.m_lower:
                        problems.append(
                            f"instance {inst.id} ({inst.type_name}) has {count} outgoing "
                            f"{rel.key!r} relations, below lower bound {rel.m_lower}")
                if rel.target_type == inst.type_name and rel.n_lower > 0:
                    count = sum(1 for rid in self.pi_in[inst.id]
                                if self.relations[rid].rel_type is rel)
                    if count < rel.n_lower:
                        problems.append(
                            f"instance {inst.id} ({inst.type_name}) has {count} incoming "
                            f"{rel.key!r} relations, below lower bound {rel.n_lower}")
        return problems

    def export_state(self) -> dict[str, Any]:
        return {
            "instances": [
                {"id": i.id, "type": i.type_name, "label": i.label,
                 "attributes": dict(sorted(i.attributes.items()))}
                for i in sorted(self.instances.values(), key=lambda i: i.id)
            ],
            "relations": [
                {"id": r.id, "type": r.rel_type.key, "source": r.source, "target": r.target}
                for r in sorted(self.relations.values(), key=lambda r: r.id)
            ],
            "lower": {str(i): sorted(self._lower[i]) for i in sorted(self.instances)},
            "higher": {str(i): sorted(self._higher[i]) for i in sorted(self.instances)},
        }
