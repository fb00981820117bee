#!/usr/bin/env python3
"""Regenerate the bundled insurance model and the scenario sequence files.

The scenario sequences are reconstructions: instance and action counts are
fixed (scenario1: 96/289, scenario2: 32/82, scenario3: 18/168) while the
concrete orderings are ours. Run from the repository root:

    python3 scripts/generate_data.py
"""

from __future__ import annotations

import json
from pathlib import Path

DATA = Path(__file__).resolve().parent.parent / "src" / "coordsem" / "data"

GENERIC_STATES = ["Creation", "Preparation", "Execution", "Review", "Completed"]

INSURANCE_TREE = {
    # child type -> parent type
    "Assessment": "Claim",
    "Payment": "Claim",
    "Settlement Offer": "Claim",
    "Rejection Notice": "Claim",
    "Customer Notification": "Claim",
    "Audit": "Claim",
    "Legal Review": "Claim",
    "Damage Report": "Assessment",
    "Repair Quote": "Assessment",
    "Witness Statement": "Assessment",
    "Police Report": "Assessment",
    "Inspection": "Assessment",
    "Medical Report": "Assessment",
    "Photo Evidence": "Inspection",
    "Garage Assignment": "Inspection",
    "Invoice": "Payment",
    "Repair Order": "Payment",
}


def linear_view(states: list[str]) -> dict:
    return {
        "states": states,
        "transitions": [[a, b] for a, b in zip(states, states[1:])],
        "backwards_transitions": [],
        "start_state": states[0],
        "end_states": [states[-1]],
    }


def insurance_model() -> dict:
    process_types = [{
        "name": "Claim",
        "attributes": ["status_note", "handler"],
        "state_view": linear_view(["Registered", "Assessing", "Deciding", "Settling", "Closed"]),
    }]
    for name in INSURANCE_TREE:
        process_types.append({
            "name": name,
            "attributes": ["status_note", "handler"],
            "state_view": linear_view(list(GENERIC_STATES)),
        })
    relation_types = [{"source": child, "target": parent}
                      for child, parent in INSURANCE_TREE.items()]
    at_least_one = "#SourceIn + #SourceAfter >= 1"
    coordination = {
        "name": "Claim Coordination",
        "coordinating_type": "Claim",
        "steps": {
            "Claim:Registered": {"ports": []},
            "Claim:Assessing": {"ports": ["p1"]},
            "Claim:Deciding": {"ports": ["p1"]},
            "Claim:Settling": {"ports": ["p1"]},
            "Claim:Closed": {"ports": ["p1"]},
            "Assessment:Execution": {"ports": ["p1"]},
            "Assessment:Review": {"ports": ["p1"]},
            "Assessment:Completed": {"ports": ["p1"]},
            "Inspection:Execution": {"ports": ["p1"]},
            "Inspection:Completed": {"ports": ["p1"]},
            "Payment:Execution": {"ports": ["p1"]},
            "Payment:Completed": {"ports": ["p1"]},
            "Customer Notification:Execution": {"ports": ["p1"]},
            "Customer Notification:Completed": {"ports": ["p1"]},
        },
        "transitions": [
            {"source": "Claim:Registered", "target": "Claim:Assessing", "port": "p1",
             "kind": "self"},
            {"source": "Claim:Assessing", "target": "Assessment:Execution", "port": "p1",
             "kind": "top-down", "valid_states": []},
            {"source": "Claim:Assessing", "target": "Inspection:Execution", "port": "p1",
             "kind": "top-down", "valid_states": []},
            {"source": "Inspection:Execution", "target": "Inspection:Completed", "port": "p1",
             "kind": "self"},
            {"source": "Inspection:Completed", "target": "Assessment:Review", "port": "p1",
             "kind": "bottom-up", "expression": at_least_one},
            {"source": "Assessment:Review", "target": "Assessment:Completed", "port": "p1",
             "kind": "self"},
            {"source": "Assessment:Completed", "target": "Claim:Deciding", "port": "p1",
             "kind": "bottom-up", "expression": at_least_one},
            {"source": "Claim:Deciding", "target": "Payment:Execution", "port": "p1",
             "kind": "top-down", "valid_states": []},
            {"source": "Payment:Execution", "target": "Payment:Completed", "port": "p1",
             "kind": "self"},
            {"source": "Payment:Completed", "target": "Claim:Settling", "port": "p1",
             "kind": "bottom-up", "expression": at_least_one},
            {"source": "Claim:Settling", "target": "Customer Notification:Execution", "port": "p1",
             "kind": "top-down", "valid_states": []},
            {"source": "Customer Notification:Execution", "target": "Customer Notification:Completed",
             "port": "p1", "kind": "self"},
            {"source": "Customer Notification:Completed", "target": "Claim:Closed", "port": "p1",
             "kind": "bottom-up", "expression": at_least_one},
        ],
    }
    return {
        "structure": {
            "name": "insurance",
            "process_types": process_types,
            "relation_types": relation_types,
        },
        "coordination_processes": [coordination],
    }


class SequenceBuilder:
    def __init__(self, name: str, model: str):
        self.doc = {"name": name, "model": model, "actions": []}
        self.instances = 0

    def inst(self, type_name: str, symbol: str) -> str:
        self.doc["actions"].append({"op": "instantiate", "type": type_name, "as": symbol})
        self.instances += 1
        return symbol

    def link(self, a: str, b: str) -> None:
        self.doc["actions"].append({"op": "link", "a": a, "b": b})

    def set(self, symbol: str, attribute: str, value) -> None:
        self.doc["actions"].append(
            {"op": "set", "instance": symbol, "attribute": attribute, "value": value})

    def commit(self, symbol: str, source: str, target: str) -> None:
        self.doc["actions"].append(
            {"op": "commit", "instance": symbol, "transition": [source, target]})

    def walk(self, symbol: str, states: list[str]) -> None:
        for a, b in zip(states, states[1:]):
            self.commit(symbol, a, b)

    def pad_sets(self, targets: list[tuple[str, str]], total_actions: int) -> None:
        i = 0
        while len(self.doc["actions"]) < total_actions:
            symbol, attribute = targets[i % len(targets)]
            self.set(symbol, attribute, f"note-{i}")
            i += 1

    def write(self, path: Path, instances: int, actions: int) -> None:
        assert self.instances == instances, (path.name, self.instances)
        assert len(self.doc["actions"]) == actions, (path.name, len(self.doc["actions"]))
        path.write_text(json.dumps(self.doc, indent=1) + "\n", encoding="utf-8")
        print(f"wrote {path.name}: {self.instances} instances, {len(self.doc['actions'])} actions")


REVIEW_PATH = ["Creation", "Preparation", "Applicant Assessment"]
INTERVIEW_PATH = ["Creation", "Preparation", "Conducted"]


def add_review(seq: SequenceBuilder, symbol: str, app: str, verdict: str) -> None:
    seq.inst("Review", symbol)
    seq.link(symbol, app)
    seq.walk(symbol, REVIEW_PATH + [verdict])


def add_interview(seq: SequenceBuilder, symbol: str, app: str, verdict: str) -> None:
    seq.inst("Interview", symbol)
    seq.link(symbol, app)
    seq.walk(symbol, INTERVIEW_PATH + [verdict])


def scenario1() -> SequenceBuilder:
    """5 Applications with 3-5 Reviews; one accepted, the rest rejected."""
    seq = SequenceBuilder("scenario1", "recruitment")
    seq.inst("Job Offer", "jo1")
    seq.commit("jo1", "Preparation", "Published")
    # (reviews as (count_invite, count_reject), decided by interviews if invited)
    plans = {
        "a1": (3, 0, "hire"),
        "a2": (0, 3, None),
        "a3": (1, 3, None),
        "a4": (3, 2, "reject"),
        "a5": (1, 2, None),
    }
    for app in plans:
        seq.inst("Application", app)
        seq.link(app, "jo1")
        seq.commit(app, "Creation", "Sent")
    review_no = 0
    for app, (invites, rejects, _) in plans.items():
        for _ in range(invites):
            review_no += 1
            add_review(seq, f"r{review_no}", app, "Invite Proposed")
        for _ in range(rejects):
            review_no += 1
            add_review(seq, f"r{review_no}", app, "Reject Proposed")
        seq.commit(app, "Sent", "Checked")
    add_interview(seq, "i1", "a1", "Hire Proposed")
    add_interview(seq, "i2", "a4", "Reject Proposed")
    seq.commit("a1", "Checked", "Accepted")
    for app in ("a2", "a3", "a4", "a5"):
        seq.commit(app, "Checked", "Rejected")
    seq.commit("jo1", "Published", "Closed")
    seq.commit("jo1", "Closed", "Position Filled")
    # Padding to the published instance count: a few other open positions plus
    # draft reviews/interviews that never get attached.
    for i in range(2):
        seq.inst("Job Offer", f"extra_jo{i + 1}")
    for i in range(48):
        seq.inst("Review", f"draft_r{i + 1}")
    for i in range(20):
        seq.inst("Interview", f"draft_i{i + 1}")
    seq.pad_sets([("jo1", "title"), ("a1", "applicant_name"), ("a2", "applicant_name"),
                  ("a3", "cover_letter"), ("a4", "cover_letter"), ("a5", "applicant_name"),
                  ("i1", "schedule"), ("r1", "notes")], 289)
    return seq


def scenario2() -> SequenceBuilder:
    """One Application, submitted and accepted; ends in Position Filled."""
    seq = SequenceBuilder("scenario2", "recruitment")
    seq.inst("Job Offer", "jo1")
    seq.commit("jo1", "Preparation", "Published")
    seq.inst("Application", "a1")
    seq.link("a1", "jo1")
    seq.commit("a1", "Creation", "Sent")
    for i in range(3):
        add_review(seq, f"r{i + 1}", "a1", "Invite Proposed")
    seq.commit("a1", "Sent", "Checked")
    add_interview(seq, "i1", "a1", "Hire Proposed")
    seq.commit("a1", "Checked", "Accepted")
    seq.commit("jo1", "Published", "Closed")
    seq.commit("jo1", "Closed", "Position Filled")
    for i in range(2):
        seq.inst("Job Offer", f"extra_jo{i + 1}")
    for i in range(24):
        seq.inst("Review", f"draft_r{i + 1}")
    seq.pad_sets([("jo1", "title"), ("a1", "applicant_name"), ("r1", "notes"),
                  ("i1", "schedule")], 82)
    return seq


def scenario3() -> SequenceBuilder:
    """Insurance claim: one instance of each of the eighteen process types."""
    seq = SequenceBuilder("scenario3", "insurance")
    symbols: dict[str, str] = {}

    def sym(type_name: str) -> str:
        return type_name.lower().replace(" ", "_")

    seq.inst("Claim", "claim")
    symbols["Claim"] = "claim"
    for child, parent in INSURANCE_TREE.items():
        s = seq.inst(child, sym(child))
        symbols[child] = s
    for child, parent in INSURANCE_TREE.items():
        seq.link(symbols[child], symbols[parent])

    coordinated = ["Assessment", "Inspection", "Payment", "Customer Notification"]
    seq.commit("claim", "Registered", "Assessing")
    seq.walk(symbols["Inspection"], GENERIC_STATES)
    seq.walk(symbols["Assessment"], GENERIC_STATES)
    seq.commit("claim", "Assessing", "Deciding")
    seq.walk(symbols["Payment"], GENERIC_STATES)
    seq.commit("claim", "Deciding", "Settling")
    seq.walk(symbols["Customer Notification"], GENERIC_STATES)
    seq.commit("claim", "Settling", "Closed")
    for child in INSURANCE_TREE:
        if child not in coordinated:
            seq.walk(symbols[child], GENERIC_STATES)
    seq.pad_sets([(symbols[t], "status_note") for t in list(INSURANCE_TREE)[:6]] +
                 [("claim", "handler")], 168)
    return seq


def main() -> None:
    DATA.mkdir(parents=True, exist_ok=True)
    (DATA / "insurance.model").write_text(
        json.dumps(insurance_model(), indent=1) + "\n", encoding="utf-8")
    print("wrote insurance.model")
    scenario1().write(DATA / "scenario1.seq", instances=96, actions=289)
    scenario2().write(DATA / "scenario2.seq", instances=32, actions=82)
    scenario3().write(DATA / "scenario3.seq", instances=18, actions=168)


if __name__ == "__main__":
    main()
