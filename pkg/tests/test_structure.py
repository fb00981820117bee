import random

import pytest

from coordsem.model import load_model_data
from coordsem.structure import (
    CardinalityError,
    RelationalInstanceStructure,
    StructureError,
    UnknownEntityError,
)

from helpers import load_bundled


def make_structure():
    return RelationalInstanceStructure(load_bundled("recruitment"))


def fig9_structure():
    """One Job Offer, two Applications, five Reviews, one Interview."""
    s = make_structure()
    jo = s.create_instance("Job Offer").id
    a1 = s.create_instance("Application").id
    a2 = s.create_instance("Application").id
    reviews = [s.create_instance("Review").id for _ in range(5)]
    interview = s.create_instance("Interview").id
    s.link(a1, jo)
    s.link(a2, jo)
    for r in reviews[:2]:
        s.link(r, a1)
    for r in reviews[2:]:
        s.link(r, a2)
    s.link(interview, a2)
    return s, jo, (a1, a2), reviews, interview


def test_instantiate_and_lower_sets():
    s, jo, (a1, a2), reviews, interview = fig9_structure()
    assert s.lower_level_of(jo) == {a1, a2, *reviews, interview}
    assert s.higher_level_of(reviews[0]) == {a1, jo}
    assert s.lower_level_of(reviews[0]) == set()
    assert s.transitively_related(reviews[4], jo)
    assert not s.transitively_related(reviews[0], interview)


def test_instantiate_unknown_type():
    s = make_structure()
    with pytest.raises(UnknownEntityError):
        s.create_instance("Nonexistent")


def test_link_direction_resolved_by_type():
    s = make_structure()
    jo = s.create_instance("Job Offer").id
    app = s.create_instance("Application").id
    relation = s.link(jo, app)  # reversed arguments still resolve
    assert relation.source == app and relation.target == jo


def test_no_relation_type_between_types():
    s = make_structure()
    jo = s.create_instance("Job Offer").id
    review = s.create_instance("Review").id
    with pytest.raises(StructureError):
        s.link(review, jo)


def test_transitive_membership_through_new_link():
    s = make_structure()
    jo = s.create_instance("Job Offer").id
    app = s.create_instance("Application").id
    review = s.create_instance("Review").id
    s.link(app, jo)
    s.link(review, app)
    assert review in s.lower_level_of(jo)


def test_cardinality_upper_bound():
    doc = {
        "structure": {
            "name": "bounded",
            "process_types": [
                {"name": "Child", "state_view": {"states": ["S"], "transitions": [],
                                                 "start_state": "S", "end_states": ["S"]}},
                {"name": "Parent", "state_view": {"states": ["S"], "transitions": [],
                                                  "start_state": "S", "end_states": ["S"]}},
            ],
            "relation_types": [
                {"source": "Child", "target": "Parent", "m_upper": 1, "n_upper": 2},
            ],
        }
    }
    s = RelationalInstanceStructure(load_model_data(doc))
    parent = s.create_instance("Parent").id
    first = s.create_instance("Child").id
    second = s.create_instance("Child").id
    third = s.create_instance("Child").id
    s.link(first, parent)
    s.link(second, parent)
    with pytest.raises(CardinalityError):
        s.link(third, parent)  # n_upper: two children max per parent
    other = s.create_instance("Parent").id
    with pytest.raises(CardinalityError):
        s.link(first, other)  # m_upper: one parent max per child


def test_lower_bounds_reported_not_blocking():
    doc = {
        "structure": {
            "name": "lower",
            "process_types": [
                {"name": "Child", "state_view": {"states": ["S"], "transitions": [],
                                                 "start_state": "S", "end_states": ["S"]}},
                {"name": "Parent", "state_view": {"states": ["S"], "transitions": [],
                                                  "start_state": "S", "end_states": ["S"]}},
            ],
            "relation_types": [
                {"source": "Child", "target": "Parent", "n_lower": 1},
            ],
        }
    }
    s = RelationalInstanceStructure(load_model_data(doc))
    parent = s.create_instance("Parent").id
    problems = s.health_report()
    assert len(problems) == 1 and "below lower bound" in problems[0]
    child = s.create_instance("Child").id
    s.link(child, parent)
    assert s.health_report() == []


def test_unlink_restores_lower_higher():
    s, jo, (a1, a2), reviews, interview = fig9_structure()
    before_lower = {i: s.lower_level_of(i) for i in s.instances}
    before_higher = {i: s.higher_level_of(i) for i in s.instances}
    relation = s.link(reviews[0], a2)  # second path for review 0
    s.unlink(relation.id)
    assert {i: s.lower_level_of(i) for i in s.instances} == before_lower
    assert {i: s.higher_level_of(i) for i in s.instances} == before_higher


def test_delete_removes_incident_relations_first():
    s, jo, (a1, a2), reviews, interview = fig9_structure()
    s.delete_instance(a2)
    assert a2 not in s.instances
    assert all(rel.source != a2 and rel.target != a2 for rel in s.relations.values())
    assert s.lower_level_of(jo) == {a1, reviews[0], reviews[1]}
    types = [record.event_type for record in s.event_log[-5:]]
    assert types == ["relation-removed"] * 4 + ["process-removed"]


def test_event_log_sequence_numbers_are_monotone():
    s, *_ = fig9_structure()
    numbers = [record.seq_no for record in s.event_log]
    assert numbers == sorted(numbers) and len(set(numbers)) == len(numbers)


def test_parallel_paths_survive_single_unlink():
    s = make_structure()
    jo = s.create_instance("Job Offer").id
    a1 = s.create_instance("Application").id
    a2 = s.create_instance("Application").id
    review = s.create_instance("Review").id
    s.link(a1, jo)
    s.link(a2, jo)
    first = s.link(review, a1)
    s.link(review, a2)
    s.unlink(first.id)
    assert jo in s.higher_level_of(review)  # still reachable via a2


def test_random_mutations_match_closure_oracle():
    rng = random.Random(7)
    s = make_structure()
    instances = []
    relations = []
    for _ in range(200):
        op = rng.random()
        if op < 0.45 or len(instances) < 4:
            type_name = rng.choice(["Job Offer", "Application", "Review", "Interview"])
            instances.append(s.create_instance(type_name).id)
        elif op < 0.8 and len(instances) >= 2:
            a, b = rng.sample(instances, 2)
            try:
                relations.append(s.link(a, b).id)
            except StructureError:
                pass
        elif relations:
            rid = relations.pop(rng.randrange(len(relations)))
            if rid in s.relations:
                s.unlink(rid)
        for instance in instances:
            lower, higher = s.closure_oracle(instance)
            assert s.lower_level_of(instance) == lower
            assert s.higher_level_of(instance) == higher


def test_export_state_round_trip_shape():
    s, jo, *_ = fig9_structure()
    doc = s.export_state()
    assert {entry["id"] for entry in doc["instances"]} == set(s.instances)
    assert doc["lower"][str(jo)] == sorted(s.lower_level_of(jo))
