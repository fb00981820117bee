"""State-based view instances: state markings, transition commits, backwards
transitions, and the Pending handshake with coordination.

A view holds the confirmed path from the start state to the active state and
derives all markings from it: path states are Confirmed (the last one
Activated), states forward-reachable from the active state are Waiting, and
everything else lies on a discarded exclusive branch and is Skipped. A blocked
commit overlays Pending on the target until coordination promotes it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .model import StateViewDef


class StateMarking(str, Enum):
    WAITING = "Waiting"
    PENDING = "Pending"
    ACTIVATED = "Activated"
    CONFIRMED = "Confirmed"
    SKIPPED = "Skipped"


class TransitionOutcome(str, Enum):
    ACTIVATED = "Activated"
    PENDING = "Pending"


class LifecycleError(Exception):
    pass


@dataclass
class ViewTraceRecord:
    seq_no: int
    instance_id: int
    state: str
    old_marking: str
    new_marking: str
    cause: str


class StateViewInstance:
    def __init__(self, owner: int, view: StateViewDef,
                 trace: Optional[list[ViewTraceRecord]] = None):
        self.owner = owner
        self.view = view
        self.path: list[str] = [view.start_state]
        self.pending_target: Optional[str] = None
        self.markings: dict[str, StateMarking] = {}
        self.trace = trace  # None disables trace recording
        self._trace_seq = 0
        self._changes: list[tuple[str, str, str]] = []
        # Per-state back-references to coordination step instances, registered
        # by coordination processes: state -> {(cp unit id, step instance id)}.
        self.step_refs: dict[str, set[tuple[str, str]]] = {s: set() for s in view.states}
        self._apply_markings(self._derive_markings(), cause="init")

    # -- derived markings

    @property
    def active_state(self) -> str:
        return self.path[-1]

    def marking(self, state: str) -> StateMarking:
        return self.markings[state]

    def _derive_markings(self) -> dict[str, StateMarking]:
        reachable = self.view.reachable_from(self.active_state)
        markings: dict[str, StateMarking] = {}
        on_path = set(self.path)
        for state in self.view.states:
            if state == self.active_state:
                markings[state] = StateMarking.ACTIVATED
            elif state in on_path:
                markings[state] = StateMarking.CONFIRMED
            elif state == self.pending_target:
                markings[state] = StateMarking.PENDING
            elif state in reachable:
                markings[state] = StateMarking.WAITING
            else:
                markings[state] = StateMarking.SKIPPED
        return markings

    def _apply_markings(self, new: dict[str, StateMarking],
                        cause: str) -> list[tuple[str, str, str]]:
        changes = []
        for state in self.view.states:
            old = self.markings.get(state)
            if old != new[state]:
                self.markings[state] = new[state]
                if self.trace is not None:
                    self._trace_seq += 1
                    self.trace.append(ViewTraceRecord(
                        self._trace_seq, self.owner, state,
                        old.value if old else "", new[state].value, cause))
                changes.append((state, old.value if old else "", new[state].value))
        self._changes.extend(changes)
        return changes

    def snapshot(self) -> dict[str, str]:
        return {s: m.value for s, m in self.markings.items()}

    def pop_changes(self) -> list[tuple[str, str, str]]:
        """Marking changes since the last call; consumed by the broadcaster."""
        changes, self._changes = self._changes, []
        return changes

    # -- operations

    def forward_transitions(self) -> list[tuple[str, str]]:
        return self.view.outgoing(self.active_state)

    def commit(self, transition: tuple[str, str], permitted: bool) -> TransitionOutcome:
        """Commit a forward transition; `permitted` reflects the coordination
        check (uncoordinated targets are always permitted)."""
        source, target = transition
        if self.pending_target is not None:
            raise LifecycleError(
                f"instance {self.owner} is blocked on state {self.pending_target!r}; "
                "only a backwards transition can proceed")
        if source != self.active_state:
            raise LifecycleError(
                f"transition source {source!r} is not the active state {self.active_state!r}")
        if transition not in self.view.transitions:
            raise LifecycleError(f"{source!r} -> {target!r} is not a declared transition")
        if not permitted:
            self.pending_target = target
            self._apply_markings(self._derive_markings(), cause="commit-blocked")
            return TransitionOutcome.PENDING
        self.path.append(target)
        self._apply_markings(self._derive_markings(), cause="commit")
        return TransitionOutcome.ACTIVATED

    def promote_pending(self, state: str) -> bool:
        """Activate a Pending state once its coordination step turned Active.
        Returns False (no-op) when the state is no longer pending."""
        if self.pending_target != state:
            return False
        self.pending_target = None
        self.path.append(state)
        self._apply_markings(self._derive_markings(), cause="promote")
        return True

    def commit_backwards(self, transition: tuple[str, str]) -> None:
        """Re-activate a predecessor state. Allowed from the active state or
        from a Pending state (which merely cancels the blocked commit)."""
        source, target = transition
        if transition not in self.view.backwards_transitions:
            raise LifecycleError(f"{source!r} -> {target!r} is not a declared backwards transition")
        if self.pending_target == source:
            self.pending_target = None
            if target != self.active_state:
                self._regress_to(target)
            else:
                self._apply_markings(self._derive_markings(), cause="backwards-cancel")
            return
        if source != self.active_state:
            raise LifecycleError(
                f"backwards source {source!r} is neither the active state nor pending")
        self._regress_to(target)

    def _regress_to(self, target: str) -> None:
        if target not in self.path:
            raise LifecycleError(f"state {target!r} was never confirmed; cannot regress to it")
        self.path = self.path[: self.path.index(target) + 1]
        self._apply_markings(self._derive_markings(), cause="backwards")

    def auto_advance_candidate(self) -> Optional[tuple[str, str]]:
        """The sole outgoing transition of an activity-free active state, if any."""
        if self.pending_target is not None:
            return None
        if self.active_state not in self.view.activity_free_states:
            return None
        outgoing = self.view.outgoing(self.active_state)
        if len(outgoing) == 1:
            return outgoing[0]
        return None
