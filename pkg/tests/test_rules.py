import itertools
import re

import pytest

from coordsem.coordgraph import Marking
from coordsem.engine import Engine
from coordsem.lifecycle import TransitionOutcome
from coordsem.rules import CascadeBudgetError, rule_catalog_text
from coordsem.structure import CoordinationVetoError

from helpers import (
    add_decided_interview,
    add_decided_review,
    graph_snapshot,
    load_bundled,
    make_engine,
    new_linked,
    setup_published_offer,
    walk,
)


def marking_sequences(engine):
    sequences = {}
    for line in engine.cascade_trace:
        for effect in line.effects:
            match = re.match(r"(.+)\.marking := (\w+)", effect)
            if match and match.group(2) != "Update":
                sequences.setdefault(match.group(1), []).append(match.group(2))
    return sequences


def test_golden_cascade_marking_sequences():
    engine = make_engine("golden_cascade", seed=1, collect_traces=True)
    jo = engine.instantiate("Job Offer")
    engine.quiesce()
    app = engine.instantiate("Application")
    engine.quiesce()
    engine.link(app, jo)
    engine.quiesce()
    # stage 2: the coordinated target state blocks
    assert engine.commit(app, "Creation", "Sent") is TransitionOutcome.PENDING
    engine.quiesce()
    assert engine.state_markings(app)["Sent"] == "Pending"
    # stages 3-5: fulfillment promotes the pending state and completes the path
    engine.commit(jo, "Preparation", "Published")
    engine.quiesce()
    assert engine.state_markings(app) == {"Creation": "Confirmed", "Sent": "Activated"}
    sequences = marking_sequences(engine)
    assert sequences["Application:Sent#2"] == ["Active", "Completed"]
    assert sequences["cmp:bottom-up:Application:Sent->Job Offer:Closed.p1@1"] == \
        ["Active", "Completed"]
    assert sequences["Job Offer:Closed.p1#1"] == ["Active"]
    assert sequences["Job Offer:Closed#1"] == ["Active"]
    assert engine.check_invariants() == []
    engine.close()


def test_uncoordinated_commit_activates_immediately():
    engine = make_engine("golden_cascade", seed=1)
    app = engine.instantiate("Application")
    engine.quiesce()
    # unlinked: outside every scope, the blacklist default applies
    assert engine.commit(app, "Creation", "Sent") is TransitionOutcome.ACTIVATED
    engine.close()


def test_step_completed_activates_outgoing_components():
    engine = make_engine("golden_cascade", seed=1, collect_traces=True)
    jo = engine.instantiate("Job Offer")
    engine.quiesce()
    sequences = marking_sequences(engine)
    # the start step completes at instantiation; AND-split reaches its self component
    assert sequences["Job Offer:Preparation#1"] == ["Completed"]
    assert sequences["cmp:self:Job Offer:Preparation->Job Offer:Published.p1@1"] == \
        ["Active", "Completed"]
    assert sequences["Job Offer:Published.p1#1"] == ["Active"]
    assert sequences["Job Offer:Published#1"] == ["Active"]
    engine.close()


def test_bottom_up_completes_immediately_when_fulfilled():
    engine = make_engine("golden_cascade", seed=1)
    jo = engine.instantiate("Job Offer")
    engine.quiesce()
    engine.commit(jo, "Preparation", "Published")
    engine.quiesce()
    app = engine.instantiate("Application")
    engine.quiesce()
    engine.link(app, jo)
    engine.quiesce()
    engine.commit(app, "Creation", "Sent")  # coordination-first: immediate
    engine.quiesce()
    unit = sorted(engine.cp_units)[0]
    cu = engine.cp_units[unit]
    comps = [c for c in cu.graph.components.values() if c.sem_kind == "bottom-up"]
    assert comps[0].marking is Marking.COMPLETED
    assert engine.check_invariants() == []
    engine.close()


def test_skipped_state_eliminates_step_and_dpe_respects_or_join():
    engine = make_engine("recruitment", seed=4)
    jo = setup_published_offer(engine)
    app = new_linked(engine, "Application", jo)
    walk(engine, app, "Creation", "Sent")
    for _ in range(3):
        add_decided_review(engine, app, "Invite Proposed")
    walk(engine, app, "Sent", "Checked")
    graph = engine.cp_units[sorted(engine.cp_units)[0]].graph
    # all reviews chose the invite branch: every reject-proposed step is skipped
    reject_steps = [s for s in graph.steps.values()
                    if s.container.key == "Review:Reject Proposed"]
    assert reject_steps and all(s.marking is Marking.ELIMINATED for s in reject_steps)
    rejected_ports = {p.container.port_type.port_id: p for p in graph.ports.values()
                      if p.step.container.key == "Application:Rejected"
                      and p.instance_id == app}
    # review-side port eliminated, the step survives through the interview port
    assert rejected_ports["p1"].marking is Marking.ELIMINATED
    assert rejected_ports["p2"].marking is not Marking.ELIMINATED
    rejected_step = graph.containers["Application:Rejected"].instances[app]
    assert rejected_step.marking is not Marking.ELIMINATED
    assert engine.check_invariants() == []
    engine.close()


def test_position_vacant_eliminated_after_position_filled():
    engine = make_engine("recruitment", seed=4)
    jo = setup_published_offer(engine)
    app = new_linked(engine, "Application", jo)
    walk(engine, app, "Creation", "Sent")
    for _ in range(3):
        add_decided_review(engine, app, "Invite Proposed")
    walk(engine, app, "Sent", "Checked")
    add_decided_interview(engine, app, "Hire Proposed")
    walk(engine, app, "Checked", "Accepted")
    walk(engine, jo, "Published", "Closed", "Position Filled")
    graph = engine.cp_units[sorted(engine.cp_units)[0]].graph
    vacant = graph.containers["Job Offer:Position Vacant"].instances[jo]
    assert vacant.marking is Marking.ELIMINATED  # its state is skipped
    assert engine.check_invariants() == []
    engine.close()


def test_reverse_dpe_round_trip_restores_markings():
    engine = make_engine("recruitment", seed=4)
    jo = setup_published_offer(engine)
    app = new_linked(engine, "Application", jo)
    walk(engine, app, "Creation", "Sent")
    review = new_linked(engine, "Review", app)
    walk(engine, review, "Creation", "Preparation", "Applicant Assessment")
    before = graph_snapshot(engine)
    # eliminate via the skipped branch...
    walk(engine, review, "Applicant Assessment", "Reject Proposed")
    eliminated = graph_snapshot(engine)
    unit = sorted(engine.cp_units)[0]
    invite_step = f"Review:Invite Proposed#{review}"
    assert eliminated[unit][invite_step] == "Eliminated"
    # ...then restore the inputs: markings equal the pre-elimination snapshot
    engine.commit_backwards(review, "Reject Proposed", "Applicant Assessment")
    engine.quiesce()
    assert graph_snapshot(engine) == before
    assert engine.check_invariants() == []
    engine.close()


def test_backwards_transition_never_regresses_other_instances():
    engine = make_engine("recruitment", seed=4)
    jo = setup_published_offer(engine)
    app = new_linked(engine, "Application", jo)
    walk(engine, app, "Creation", "Sent")
    reviews = [add_decided_review(engine, app, "Invite Proposed") for _ in range(3)]
    walk(engine, app, "Sent", "Checked")
    add_decided_interview(engine, app, "Hire Proposed")
    walk(engine, app, "Checked", "Accepted")
    # a review regresses after acceptance: the application stays accepted
    engine.commit_backwards(reviews[0], "Invite Proposed", "Applicant Assessment")
    engine.quiesce()
    assert engine.state_markings(app)["Accepted"] == "Activated"
    # but the invalidated constraint now blocks a second acceptance elsewhere
    other = new_linked(engine, "Application", jo)
    walk(engine, other, "Creation", "Sent")
    assert engine.commit(other, "Sent", "Checked") is TransitionOutcome.PENDING
    assert engine.check_invariants() == []
    engine.close()


def test_deletion_invalidates_fulfilled_constraint_per_example():
    engine = make_engine("recruitment", seed=4)
    jo = setup_published_offer(engine)
    app = new_linked(engine, "Application", jo)
    walk(engine, app, "Creation", "Sent")
    reviews = [add_decided_review(engine, app, "Invite Proposed") for _ in range(3)]
    walk(engine, app, "Sent", "Checked")
    engine.delete(reviews[0])
    engine.quiesce()
    markings = engine.state_markings(app)
    assert markings["Checked"] == "Activated"  # status of the process is truth
    assert engine.commit(app, "Checked", "Rejected") is TransitionOutcome.PENDING
    engine.quiesce()
    assert engine.state_markings(app)["Rejected"] == "Pending"
    assert engine.check_invariants() == []
    engine.close()


def test_closing_offer_blocks_new_applications_only():
    engine = make_engine("recruitment", seed=4)
    jo = setup_published_offer(engine)
    first = new_linked(engine, "Application", jo)
    walk(engine, first, "Creation", "Sent")
    walk(engine, jo, "Published", "Closed")
    # the veto now rejects linking fresh applications (top-down unfulfillable)
    late = engine.instantiate("Application")
    engine.quiesce()
    with pytest.raises(CoordinationVetoError):
        engine.link(late, jo)
    engine.quiesce()
    # completed progress of the first application is untouched
    assert engine.state_markings(first)["Sent"] == "Activated"
    assert engine.check_invariants() == []
    engine.close()


def test_arrangement_linking_accepts_execution_status():
    engine = make_engine("recruitment", seed=4)
    jo_a = setup_published_offer(engine)
    app = new_linked(engine, "Application", jo_a)
    walk(engine, app, "Creation", "Sent")
    reviews = [add_decided_review(engine, app, "Invite Proposed") for _ in range(3)]
    walk(engine, app, "Sent", "Checked")
    jo_b = engine.instantiate("Job Offer")
    engine.quiesce()
    # offer B never published: a plain link would be vetoed, arrangements are not
    late = engine.instantiate("Application")
    engine.quiesce()
    with pytest.raises(CoordinationVetoError):
        engine.link(late, jo_b)
    engine.quiesce()
    engine.link_arrangement(app, jo_b)
    engine.quiesce()
    unit_b = [u for u, cu in engine.cp_units.items()
              if cu.graph.coordinating_instance == jo_b][0]
    graph_b = engine.cp_units[unit_b].graph
    gained = {s.instance_id for s in graph_b.steps.values()}
    assert gained == {jo_b, app, *reviews}  # 1 + 3 arrangement instances plus the offer
    # the checked state stays Activated even though B's graph says otherwise
    assert engine.state_markings(app)["Checked"] == "Activated"
    checked_step = graph_b.containers["Application:Checked"].instances[app]
    assert checked_step.marking is not Marking.COMPLETED
    # no deadlock: further transitions follow normal rules in BOTH processes
    outcome = engine.commit(app, "Checked", "Rejected")
    engine.quiesce()
    assert outcome in (TransitionOutcome.ACTIVATED, TransitionOutcome.PENDING)
    assert engine.check_invariants() == []
    engine.close()


def test_cascade_budget_guard_trips_on_tiny_budget():
    engine = make_engine("golden_cascade", seed=1, budget_factor=0)
    with pytest.raises(CascadeBudgetError):
        try:
            engine.instantiate("Job Offer")
            engine.quiesce()
        finally:
            engine.close()


def test_event_for_deleted_entity_is_dropped():
    engine = make_engine("recruitment", seed=4)
    jo = setup_published_offer(engine)
    engine.delete(jo)
    engine.quiesce()
    handle = engine.runtime.send(f"proc:{jo}", "commit",
                                 {"transition": ["Preparation", "Published"]})
    engine.quiesce()
    assert handle.error is not None
    assert any("deleted" in entry or "unknown" in entry
               for entry in engine.runtime.dropped_log)
    engine.close()


def test_commuting_external_events_reach_identical_markings():
    model = load_bundled("recruitment")

    def run(order):
        engine = Engine(model, seed=9)
        jo = setup_published_offer(engine)
        apps = [new_linked(engine, "Application", jo) for _ in range(2)]
        for app in order:
            walk(engine, apps[app], "Creation", "Sent")
        snapshot = (engine.all_state_markings(), graph_snapshot(engine))
        assert engine.check_invariants() == []
        engine.close()
        return snapshot

    baseline = run([0, 1])
    for order in itertools.permutations([0, 1]):
        assert run(list(order)) == baseline


def test_rule_catalog_export():
    text = rule_catalog_text()
    for name in ("notify_state_changed", "notify_component_changed", "update_port",
                 "update_component", "update_step"):
        assert name in text
