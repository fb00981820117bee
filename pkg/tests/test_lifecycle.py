import pytest

from coordsem.lifecycle import LifecycleError, StateMarking, StateViewInstance, TransitionOutcome

from helpers import load_bundled


def review_view(trace=None):
    model = load_bundled("recruitment")
    return StateViewInstance(1, model.structure.process_types["Review"].state_view, trace=trace)


def submission_view():
    model = load_bundled("phoodle")
    return StateViewInstance(2, model.structure.process_types["Submission"].state_view)


def test_initial_markings():
    view = review_view()
    assert view.active_state == "Creation"
    assert view.snapshot() == {
        "Creation": "Activated", "Preparation": "Waiting", "Applicant Assessment": "Waiting",
        "Invite Proposed": "Waiting", "Reject Proposed": "Waiting"}


def test_permitted_commit_advances():
    view = review_view()
    assert view.commit(("Creation", "Preparation"), permitted=True) is TransitionOutcome.ACTIVATED
    assert view.snapshot()["Creation"] == "Confirmed"
    assert view.active_state == "Preparation"


def test_blocked_commit_goes_pending_and_promotes():
    view = review_view()
    outcome = view.commit(("Creation", "Preparation"), permitted=False)
    assert outcome is TransitionOutcome.PENDING
    assert view.snapshot()["Preparation"] == "Pending"
    assert view.active_state == "Creation"  # source stays active while blocked
    assert view.promote_pending("Preparation") is True
    assert view.active_state == "Preparation"
    assert view.snapshot()["Creation"] == "Confirmed"


def test_promotion_of_non_pending_state_is_noop():
    view = review_view()
    assert view.promote_pending("Preparation") is False


def test_exclusive_branch_skipping():
    view = review_view()
    view.commit(("Creation", "Preparation"), permitted=True)
    view.commit(("Preparation", "Applicant Assessment"), permitted=True)
    view.commit(("Applicant Assessment", "Invite Proposed"), permitted=True)
    assert view.snapshot()["Reject Proposed"] == "Skipped"
    assert view.snapshot()["Invite Proposed"] == "Activated"


def test_exactly_one_activated_always():
    trace = []
    view = review_view(trace=trace)
    moves = [("Creation", "Preparation"), ("Preparation", "Applicant Assessment"),
             ("Applicant Assessment", "Reject Proposed")]
    for move in moves:
        view.commit(move, permitted=True)
        markings = list(view.snapshot().values())
        assert markings.count("Activated") == 1


def test_invalid_transitions_rejected():
    view = review_view()
    with pytest.raises(LifecycleError):
        view.commit(("Preparation", "Applicant Assessment"), permitted=True)  # not active
    with pytest.raises(LifecycleError):
        view.commit(("Creation", "Invite Proposed"), permitted=True)  # not declared


def test_pending_blocks_other_forward_transitions():
    view = submission_view()
    view.commit(("Creation", "Edit"), permitted=True)
    view.commit(("Edit", "Submit"), permitted=False)
    with pytest.raises(LifecycleError):
        view.commit(("Edit", "Submit"), permitted=True)  # only backtrack or wait


def test_backwards_from_active_reopens_branch():
    view = review_view()
    view.commit(("Creation", "Preparation"), permitted=True)
    view.commit(("Preparation", "Applicant Assessment"), permitted=True)
    view.commit(("Applicant Assessment", "Reject Proposed"), permitted=True)
    assert view.snapshot()["Invite Proposed"] == "Skipped"
    view.commit_backwards(("Reject Proposed", "Applicant Assessment"))
    snapshot = view.snapshot()
    assert snapshot["Applicant Assessment"] == "Activated"
    assert snapshot["Reject Proposed"] == "Waiting"
    assert snapshot["Invite Proposed"] == "Waiting"  # the choice reopened


def test_backwards_from_pending_cancels_block():
    view = submission_view()
    view.commit(("Creation", "Edit"), permitted=True)
    view.commit(("Edit", "Submit"), permitted=False)
    view.commit_backwards(("Submit", "Edit"))
    snapshot = view.snapshot()
    assert snapshot["Submit"] == "Waiting"
    assert view.active_state == "Edit"
    assert view.pending_target is None


def test_backwards_requires_declared_transition():
    view = review_view()
    view.commit(("Creation", "Preparation"), permitted=True)
    with pytest.raises(LifecycleError):
        view.commit_backwards(("Preparation", "Creation"))


def test_round_trip_restores_markings():
    view = review_view()
    view.commit(("Creation", "Preparation"), permitted=True)
    view.commit(("Preparation", "Applicant Assessment"), permitted=True)
    before = view.snapshot()
    view.commit(("Applicant Assessment", "Invite Proposed"), permitted=True)
    view.commit_backwards(("Invite Proposed", "Applicant Assessment"))
    assert view.snapshot() == before


def test_auto_advance_candidate_for_activity_free_state():
    view = submission_view()
    view.commit(("Creation", "Edit"), permitted=True)
    assert view.auto_advance_candidate() is None
    view.commit(("Edit", "Submit"), permitted=True)
    assert view.auto_advance_candidate() == ("Submit", "Rate")


def test_trace_records_cause_and_transitions():
    trace = []
    view = review_view(trace=trace)
    view.commit(("Creation", "Preparation"), permitted=True)
    causes = {record.cause for record in trace}
    assert causes == {"init", "commit"}
    changed = [(r.state, r.old_marking, r.new_marking) for r in trace if r.cause == "commit"]
    assert ("Creation", "Activated", "Confirmed") in changed
    assert ("Preparation", "Waiting", "Activated") in changed
