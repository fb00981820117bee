"""Execution substrate: isolated units with FIFO mailboxes and reliable
messaging.

A unit services one message at a time; messages between a fixed sender and
receiver arrive in send order; every send returns a completion handle that
resolves after the target finished servicing (or with a routing error).

Two executors implement the same interface: the deterministic executor runs
everything on the calling thread, picking the next non-empty mailbox with a
seeded generator so that (seed, script) replays bit-identically; the
concurrent executor runs a worker pool with per-unit exclusion.

`query` runs a read-only callable against an idle unit (inline when
deterministic, under the unit's service lock when concurrent). Queries are
issued only along the structure -> process -> coordination unit hierarchy, so
they cannot deadlock.
"""

from __future__ import annotations

import contextlib
import random
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional


class RoutingError(Exception):
    """Message addressed to an unknown or deleted unit."""


class QuiescenceTimeout(Exception):
    def __init__(self, message: str, mailbox_dump: dict[str, list[str]]):
        super().__init__(message)
        self.mailbox_dump = mailbox_dump


class Message:
    __slots__ = ("seq", "to", "sender", "kind", "payload")

    def __init__(self, seq: int, to: str, sender: str, kind: str,
                 payload: Optional[dict[str, Any]] = None):
        self.seq = seq
        self.to = to
        self.sender = sender
        self.kind = kind
        self.payload = payload or {}


class Handle:
    """Completion callback for a sent message."""

    __slots__ = ("_event", "_resolved", "result", "error")

    def __init__(self, threadsafe: bool = True) -> None:
        self._event = threading.Event() if threadsafe else None
        self._resolved = False
        self.result: Any = None
        self.error: Optional[BaseException] = None

    @property
    def resolved(self) -> bool:
        return self._resolved

    def resolve(self, result: Any = None, error: Optional[BaseException] = None) -> None:
        self.result = result
        self.error = error
        self._resolved = True
        if self._event is not None:
            self._event.set()

    def wait(self, timeout: Optional[float] = None) -> Any:
        if self._event is None:
            if not self._resolved:
                raise QuiescenceTimeout("message not serviced yet", {})
        elif not self._event.wait(timeout):
            raise QuiescenceTimeout("message servicing timed out", {})
        if self.error is not None:
            raise self.error
        return self.result


class Unit:
    def __init__(self, unit_id: str, kind: str, handler: Callable[[Message], Any]):
        self.id = unit_id
        self.kind = kind
        self.handler = handler
        self.mailbox: deque[tuple[Message, Handle]] = deque()
        self.service_lock = threading.Lock()
        self.scheduled = False


class Runtime:
    """Common registry and messaging bookkeeping."""

    def __init__(self, seed: int = 0, record_deliveries: bool = False):
        self.seed = seed
        self.units: dict[str, Unit] = {}
        self.record_deliveries = record_deliveries
        self.delivery_log: list[tuple[int, str, str]] = []
        self.dropped_log: list[str] = []
        self._send_seq = 0
        self._registry_lock = threading.RLock()

    def register(self, unit_id: str, kind: str, handler: Callable[[Message], Any]) -> Unit:
        with self._registry_lock:
            if unit_id in self.units:
                raise ValueError(f"unit {unit_id!r} already registered")
            unit = Unit(unit_id, kind, handler)
            self.units[unit_id] = unit
            return unit

    def unregister(self, unit_id: str) -> None:
        with self._registry_lock:
            unit = self.units.pop(unit_id, None)
        if unit is None:
            return
        while unit.mailbox:
            message, handle = unit.mailbox.popleft()
            self.dropped_log.append(f"dropped {message.kind} to deleted unit {unit_id}")
            self._message_dropped()
            handle.resolve(error=RoutingError(f"unit {unit_id!r} deleted before dequeue"))

    def _message_dropped(self) -> None:
        pass

    _threadsafe_handles = True

    def send(self, to: str, kind: str, payload: Optional[dict[str, Any]] = None,
             sender: str = "") -> Handle:
        handle = Handle(threadsafe=self._threadsafe_handles)
        with self._registry_lock:
            self._send_seq += 1
            message = Message(self._send_seq, to, sender, kind, payload or {})
            unit = self.units.get(to)
            if unit is None:
                self.dropped_log.append(f"dropped {kind} to unknown unit {to}")
                handle.resolve(error=RoutingError(f"unknown unit {to!r}"))
                return handle
            unit.mailbox.append((message, handle))
            self._message_queued(unit)
        return handle

    def _message_queued(self, unit: Unit) -> None:
        raise NotImplementedError

    def _service(self, unit: Unit, message: Message, handle: Handle) -> None:
        if self.record_deliveries:
            self.delivery_log.append((message.seq, message.to, message.kind))
        try:
            result = unit.handler(message)
        except BaseException as exc:  # noqa: BLE001 - reported through the handle
            handle.resolve(error=exc)
        else:
            handle.resolve(result=result)

    def query(self, unit_id: str, fn: Callable[[], Any]) -> Any:
        raise NotImplementedError

    def reading(self, unit_id: str):
        """Context for a read-only peek at an idle unit's state."""
        raise NotImplementedError

    def call(self, to: str, kind: str, payload: Optional[dict[str, Any]] = None,
             sender: str = "", timeout: Optional[float] = None) -> Any:
        raise NotImplementedError

    def await_quiescence(self, timeout: Optional[float] = None) -> None:
        raise NotImplementedError

    def mailbox_dump(self) -> dict[str, list[str]]:
        with self._registry_lock:
            return {u.id: [m.kind for m, _ in u.mailbox]
                    for u in self.units.values() if u.mailbox}

    def close(self) -> None:
        pass


class DeterministicRuntime(Runtime):
    """Single-threaded executor; mailbox selection is driven by the seed so a
    (seed, script) pair replays to the same trace bit for bit."""

    _threadsafe_handles = False

    def __init__(self, seed: int = 0, record_deliveries: bool = False):
        super().__init__(seed, record_deliveries)
        self._rng = random.Random(seed)
        self._pumping = False
        self._ready: dict[str, Unit] = {}

    def send(self, to: str, kind: str, payload: Optional[dict[str, Any]] = None,
             sender: str = "") -> Handle:
        handle = Handle(threadsafe=False)
        self._send_seq += 1
        unit = self.units.get(to)
        if unit is None:
            self.dropped_log.append(f"dropped {kind} to unknown unit {to}")
            handle.resolve(error=RoutingError(f"unknown unit {to!r}"))
            return handle
        unit.mailbox.append((Message(self._send_seq, to, sender, kind, payload), handle))
        self._ready[to] = unit
        return handle

    def _message_queued(self, unit: Unit) -> None:
        self._ready[unit.id] = unit

    def _pump(self, until: Optional[Handle] = None) -> None:
        if self._pumping:
            # Sends from inside a handler are serviced by the outer pump.
            return
        self._pumping = True
        try:
            while True:
                if until is not None and until.resolved:
                    return
                while self._ready:
                    if len(self._ready) == 1:
                        unit = next(iter(self._ready.values()))
                    else:
                        ready = list(self._ready.values())
                        unit = ready[self._rng.randrange(len(ready))]
                    if not unit.mailbox or unit.id not in self.units:
                        self._ready.pop(unit.id, None)
                        continue
                    break
                else:
                    return
                message, handle = unit.mailbox.popleft()
                if not unit.mailbox:
                    self._ready.pop(unit.id, None)
                self._service(unit, message, handle)
        finally:
            self._pumping = False

    def query(self, unit_id: str, fn: Callable[[], Any]) -> Any:
        if unit_id not in self.units:
            raise RoutingError(f"unknown unit {unit_id!r}")
        return fn()

    _NULL_CONTEXT = contextlib.nullcontext()

    def reading(self, unit_id: str):
        return self._NULL_CONTEXT

    def call(self, to: str, kind: str, payload: Optional[dict[str, Any]] = None,
             sender: str = "", timeout: Optional[float] = None) -> Any:
        handle = self.send(to, kind, payload, sender)
        self._pump(until=handle)
        if handle.error is not None:
            raise handle.error
        return handle.result

    def await_quiescence(self, timeout: Optional[float] = None) -> None:
        self._pump()


class ConcurrentRuntime(Runtime):
    """Worker-pool executor with per-unit exclusion and a credit-style
    in-flight counter for quiescence detection."""

    def __init__(self, seed: int = 0, workers: int = 4, record_deliveries: bool = False):
        super().__init__(seed, record_deliveries)
        self.workers = workers
        self._cond = threading.Condition()
        self._in_flight = 0
        self._shutdown = False
        self._threads: list[threading.Thread] = []
        for i in range(workers):
            thread = threading.Thread(target=self._worker, args=(i,), daemon=True,
                                      name=f"coordsem-worker-{i}")
            self._threads.append(thread)
            thread.start()

    def _message_queued(self, unit: Unit) -> None:
        with self._cond:
            self._in_flight += 1
            self._cond.notify_all()

    def _message_dropped(self) -> None:
        with self._cond:
            self._in_flight -= 1
            self._cond.notify_all()

    def _worker(self, index: int) -> None:
        rng = random.Random(self.seed * 7919 + index)
        while True:
            with self._cond:
                while True:
                    if self._shutdown:
                        return
                    with self._registry_lock:
                        ready = [u for u in self.units.values()
                                 if u.mailbox and not u.scheduled]
                    if ready:
                        unit = ready[rng.randrange(len(ready))]
                        unit.scheduled = True
                        message, handle = unit.mailbox.popleft()
                        break
                    self._cond.wait(0.05)
            with unit.service_lock:
                self._service(unit, message, handle)
            with self._cond:
                unit.scheduled = False
                self._in_flight -= 1
                self._cond.notify_all()

    def query(self, unit_id: str, fn: Callable[[], Any]) -> Any:
        with self._registry_lock:
            unit = self.units.get(unit_id)
        if unit is None:
            raise RoutingError(f"unknown unit {unit_id!r}")
        with unit.service_lock:
            return fn()

    def reading(self, unit_id: str):
        with self._registry_lock:
            unit = self.units.get(unit_id)
        if unit is None:
            raise RoutingError(f"unknown unit {unit_id!r}")
        return unit.service_lock

    def call(self, to: str, kind: str, payload: Optional[dict[str, Any]] = None,
             sender: str = "", timeout: Optional[float] = None) -> Any:
        handle = self.send(to, kind, payload, sender)
        return handle.wait(timeout if timeout is not None else 60.0)

    def await_quiescence(self, timeout: Optional[float] = None) -> None:
        deadline = None if timeout is None else (threading.TIMEOUT_MAX if timeout < 0 else timeout)
        with self._cond:
            if not self._cond.wait_for(lambda: self._in_flight == 0,
                                       timeout=deadline if deadline is not None else 60.0):
                raise QuiescenceTimeout("quiescence not reached", self.mailbox_dump())

    def close(self) -> None:
        with self._cond:
            self._shutdown = True
            self._cond.notify_all()
        for thread in self._threads:
            thread.join(timeout=1.0)


def make_runtime(mode: str, seed: int = 0, workers: int = 4,
                 record_deliveries: bool = False) -> Runtime:
    if mode == "deterministic":
        return DeterministicRuntime(seed, record_deliveries)
    if mode == "concurrent":
        return ConcurrentRuntime(seed, workers, record_deliveries)
    raise ValueError(f"unknown executor mode {mode!r}")
