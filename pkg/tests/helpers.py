"""Shared helpers for the test suite."""

from __future__ import annotations

from pathlib import Path

from coordsem.engine import Engine
from coordsem.model import Model, load_model

DATA_DIR = Path(__file__).resolve().parent.parent / "src" / "coordsem" / "data"


def load_bundled(name: str) -> Model:
    return load_model(DATA_DIR / f"{name}.model")


def make_engine(model_name: str, **kwargs) -> Engine:
    return Engine(load_bundled(model_name), **kwargs)


def walk(engine: Engine, instance_id: int, *states: str) -> None:
    """Commit a chain of transitions, quiescing after each."""
    for source, target in zip(states, states[1:]):
        engine.commit(instance_id, source, target)
        engine.quiesce()


def new_linked(engine: Engine, type_name: str, parent: int) -> int:
    instance = engine.instantiate(type_name)
    engine.quiesce()
    engine.link(instance, parent)
    engine.quiesce()
    return instance


def setup_published_offer(engine: Engine) -> int:
    jo = engine.instantiate("Job Offer")
    engine.quiesce()
    walk(engine, jo, "Preparation", "Published")
    return jo


def add_decided_review(engine: Engine, app: int, verdict: str) -> int:
    review = new_linked(engine, "Review", app)
    walk(engine, review, "Creation", "Preparation", "Applicant Assessment", verdict)
    return review


def add_decided_interview(engine: Engine, app: int, verdict: str) -> int:
    interview = new_linked(engine, "Interview", app)
    walk(engine, interview, "Creation", "Preparation", "Conducted", verdict)
    return interview


def graph_snapshot(engine: Engine) -> dict[str, dict[str, str]]:
    return engine.graph_markings()
