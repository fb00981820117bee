import pytest

from coordsem.engine import Engine, EngineError
from coordsem.lifecycle import TransitionOutcome
from coordsem.model import load_model_data
from coordsem.structure import CoordinationVetoError

from helpers import (
    add_decided_interview,
    add_decided_review,
    load_bundled,
    make_engine,
    new_linked,
    setup_published_offer,
    walk,
)


def test_engine_rejects_invalid_model():
    doc = {
        "structure": {
            "name": "bad",
            "process_types": [
                {"name": "T", "state_view": {"states": ["A", "B"], "transitions": [],
                                             "start_state": "A", "end_states": ["B"]}},
            ],
            "relation_types": [],
        }
    }
    with pytest.raises(EngineError):
        Engine(load_model_data(doc))


def test_bare_instantiation_always_succeeds():
    engine = make_engine("recruitment", seed=6)
    # the offer is unpublished, but instantiation without linking is free
    engine.instantiate("Job Offer")
    engine.quiesce()
    app = engine.instantiate("Application")
    engine.quiesce()
    assert engine.state_markings(app)["Creation"] == "Activated"
    engine.close()


def test_link_veto_names_the_blocking_transition():
    engine = make_engine("recruitment", seed=6)
    jo = engine.instantiate("Job Offer")
    engine.quiesce()
    app = engine.instantiate("Application")
    engine.quiesce()
    with pytest.raises(CoordinationVetoError) as err:
        engine.link(app, jo)
    assert "Job Offer:Published->Application:Creation" in str(err.value)
    engine.close()


def test_veto_applies_only_to_start_states():
    engine = make_engine("recruitment", seed=6)
    jo = setup_published_offer(engine)
    app = new_linked(engine, "Application", jo)
    walk(engine, app, "Creation", "Sent", "Checked") if False else walk(engine, app, "Creation", "Sent")
    walk(engine, jo, "Published", "Closed")
    # the offer is closed: REVIEW linking is still allowed (its gate is the
    # application's Sent state, which was reached)
    review = new_linked(engine, "Review", app)
    assert review in engine.structure.lower_level_of(jo)
    engine.close()


def test_attribute_writes_are_inert():
    engine = make_engine("recruitment", seed=6)
    jo = setup_published_offer(engine)
    before = engine.graph_markings()
    engine.set_attribute(jo, "title", "Backend Engineer")
    engine.quiesce()
    assert engine.structure.instances[jo].attributes["title"] == "Backend Engineer"
    assert engine.graph_markings() == before
    engine.close()


def test_deleting_coordinating_instance_removes_its_unit():
    engine = make_engine("recruitment", seed=6)
    jo = setup_published_offer(engine)
    assert len(engine.cp_units) == 1
    engine.delete(jo)
    engine.quiesce()
    assert engine.cp_units == {}
    assert jo not in engine.views
    engine.close()


def test_multi_offer_coordination_is_independent():
    engine = make_engine("recruitment", seed=6)
    jo1 = setup_published_offer(engine)
    jo2 = setup_published_offer(engine)
    a1 = new_linked(engine, "Application", jo1)
    a2 = new_linked(engine, "Application", jo2)
    walk(engine, a1, "Creation", "Sent")
    # closing offer 2 does not affect offer 1's coordination
    walk(engine, a2, "Creation", "Sent")
    walk(engine, jo2, "Published", "Closed")
    fresh = engine.instantiate("Application")
    engine.quiesce()
    engine.link(fresh, jo1)  # jo1 still published: allowed
    engine.quiesce()
    with pytest.raises(CoordinationVetoError):
        engine.link(engine.instantiate("Application"), jo2)
    engine.quiesce()
    assert engine.check_invariants() == []
    engine.close()


def test_instance_in_two_scopes_promotes_on_any_active_step():
    engine = make_engine("recruitment", seed=6)
    jo1 = setup_published_offer(engine)
    jo2 = setup_published_offer(engine)
    app = new_linked(engine, "Application", jo1)
    engine.link(app, jo2)
    engine.quiesce()
    assert len(engine.covering_cps[app]) == 2
    walk(engine, app, "Creation", "Sent")
    # Pending would contradict the invariant: no referencing step is Active
    markings = engine.state_markings(app)
    assert markings["Sent"] == "Activated"
    assert engine.check_invariants() == []
    engine.close()


def test_degenerate_arrangement_behaves_like_link():
    engine = make_engine("recruitment", seed=6)
    jo = setup_published_offer(engine)
    app = engine.instantiate("Application")
    engine.quiesce()
    engine.link_arrangement(app, jo)
    engine.quiesce()
    walk(engine, app, "Creation", "Sent")
    assert engine.state_markings(app)["Sent"] == "Activated"
    assert engine.check_invariants() == []
    engine.close()


def test_explain_blocked_names_components_and_counts():
    engine = make_engine("recruitment", seed=6)
    jo = setup_published_offer(engine)
    app = new_linked(engine, "Application", jo)
    walk(engine, app, "Creation", "Sent")
    assert engine.commit(app, "Sent", "Checked") is TransitionOutcome.PENDING
    engine.quiesce()
    lines = "\n".join(engine.explain_blocked(app, "Checked"))
    assert "bottom-up" in lines
    assert "#SourceTotal" in lines
    assert "counts=" in lines
    engine.close()


def test_promotion_order_follows_event_order():
    engine = make_engine("golden_cascade", seed=6)
    jo = engine.instantiate("Job Offer")
    engine.quiesce()
    first = engine.instantiate("Application")
    engine.quiesce()
    second = engine.instantiate("Application")
    engine.quiesce()
    engine.link(first, jo)
    engine.link(second, jo)
    engine.quiesce()
    assert engine.commit(first, "Creation", "Sent") is TransitionOutcome.PENDING
    assert engine.commit(second, "Creation", "Sent") is TransitionOutcome.PENDING
    engine.quiesce()
    engine.commit(jo, "Preparation", "Published")
    engine.quiesce()
    # both views pending on the same constraint: both promoted
    assert engine.state_markings(first)["Sent"] == "Activated"
    assert engine.state_markings(second)["Sent"] == "Activated"
    promoted = [t for t in engine.view_trace if t.cause == "promote"] \
        if engine.view_trace else []
    assert engine.check_invariants() == []
    engine.close()


def test_event_log_digest_replays_identically():
    def digest(seed):
        engine = make_engine("recruitment", seed=seed, collect_traces=True)
        jo = setup_published_offer(engine)
        app = new_linked(engine, "Application", jo)
        walk(engine, app, "Creation", "Sent")
        add_decided_review(engine, app, "Invite Proposed")
        out = engine.event_log_digest()
        engine.close()
        return out

    assert digest(17) == digest(17)
