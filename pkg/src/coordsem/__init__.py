"""Execution engine for coordination processes over relational process
structures: state-based views, marking semantics, and a process-rule cascade
on an actor-style runtime."""

from .engine import Engine, EngineError
from .lifecycle import StateMarking, TransitionOutcome
from .coordgraph import Marking
from .model import Model, ValidationReport, load_model, validate_model
from .structure import CoordinationVetoError

__all__ = [
    "Engine",
    "EngineError",
    "Marking",
    "Model",
    "StateMarking",
    "TransitionOutcome",
    "ValidationReport",
    "CoordinationVetoError",
    "load_model",
    "validate_model",
]

__version__ = "0.1.0"
