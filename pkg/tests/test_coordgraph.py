import random

from coordsem.coordgraph import Marking

from helpers import (
    add_decided_interview,
    add_decided_review,
    load_bundled,
    make_engine,
    new_linked,
    setup_published_offer,
    walk,
)


def only_cp(engine):
    return engine.cp_units[sorted(engine.cp_units)[0]]


def test_instantiation_creates_five_offer_steps():
    engine = make_engine("recruitment", seed=2)
    jo = engine.instantiate("Job Offer")
    engine.quiesce()
    graph = only_cp(engine).graph
    offer_steps = [s for s in graph.steps.values()
                   if s.container.step_type.process_type == "Job Offer"]
    assert len(offer_steps) == 5
    assert {s.state for s in offer_steps} == {
        "Preparation", "Published", "Closed", "Position Filled", "Position Vacant"}
    engine.close()


def test_container_topology_is_static():
    engine = make_engine("recruitment", seed=2)
    jo = setup_published_offer(engine)
    graph = only_cp(engine).graph
    containers = set(graph.containers)
    transitions = set(graph.transition_instances)
    # a new in-scope instance must not change the scaffolding
    new_linked(engine, "Application", jo)
    assert set(graph.containers) == containers
    assert set(graph.transition_instances) == transitions
    engine.close()


def fig9(engine):
    jo = setup_published_offer(engine)
    a1 = new_linked(engine, "Application", jo)
    walk(engine, a1, "Creation", "Sent")
    a2 = new_linked(engine, "Application", jo)
    walk(engine, a2, "Creation", "Sent")
    r1 = new_linked(engine, "Review", a1)
    walk(engine, r1, "Creation", "Preparation")
    r2 = new_linked(engine, "Review", a1)
    walk(engine, r2, "Creation", "Preparation", "Applicant Assessment")
    invited = [add_decided_review(engine, a2, "Invite Proposed") for _ in range(3)]
    walk(engine, a2, "Sent", "Checked")
    interview = new_linked(engine, "Interview", a2)
    walk(engine, interview, "Creation", "Preparation")
    return jo, (a1, a2), [r1, r2, *invited], interview


def test_fig9_ten_application_step_instances():
    engine = make_engine("recruitment", seed=2)
    jo, apps, reviews, interview = fig9(engine)
    graph = only_cp(engine).graph
    app_steps = [s for s in graph.steps.values()
                 if s.container.step_type.process_type == "Application"]
    assert len(app_steps) == 10  # two instances across five containers
    per_container = {}
    for step in app_steps:
        per_container.setdefault(step.container.key, []).append(step)
    assert all(len(steps) == 2 for steps in per_container.values())
    engine.close()


def test_port_instances_match_port_containers():
    engine = make_engine("recruitment", seed=2)
    jo, apps, reviews, interview = fig9(engine)
    graph = only_cp(engine).graph
    for step in graph.steps.values():
        assert len(step.ports) == len(step.container.port_containers)
        for port in step.ports:
            assert port.step is step
    engine.close()


def test_transverse_membership_of_second_application():
    engine = make_engine("recruitment", seed=2)
    jo, (a1, a2), reviews, interview = fig9(engine)
    graph = only_cp(engine).graph
    transverse = [c for c in graph.components.values()
                  if c.sem_kind == "transverse" and c.anchor_instance == a2]
    assert len(transverse) == 1
    comp = transverse[0]
    assert {s.instance_id for s in comp.sources()} == set(reviews[2:])
    assert {p.instance_id for p in comp.target_ports()} == {interview}
    engine.close()


def test_components_with_isolated_anchor_have_empty_sets():
    engine = make_engine("recruitment", seed=2)
    jo = setup_published_offer(engine)
    app = new_linked(engine, "Application", jo)
    graph = only_cp(engine).graph
    transverse = [c for c in graph.components.values()
                  if c.sem_kind == "transverse" and c.anchor_instance == app]
    assert len(transverse) == 1  # instantiated before any members exist
    assert transverse[0].sources() == [] and transverse[0].target_ports() == []
    engine.close()


def test_self_component_endpoints_share_instance():
    engine = make_engine("recruitment", seed=2)
    jo, *_ = fig9(engine)
    graph = only_cp(engine).graph
    for comp in graph.components.values():
        if comp.sem_kind == "self":
            assert comp.src_step.instance_id == comp.tar_port.instance_id
        elif comp.sem_kind == "transverse":
            src_types = {graph.instance_types[s.instance_id] for s in comp.sources()}
            tar_types = {graph.instance_types[p.instance_id] for p in comp.target_ports()}
            assert not (src_types & tar_types)
        elif comp.sem_kind == "self-transverse":
            for s in comp.sources():
                for p in comp.target_ports():
                    assert graph.instance_types[s.instance_id] == \
                        graph.instance_types[p.instance_id]
    engine.close()


def test_uncovered_type_changes_nothing():
    engine = make_engine("phoodle", seed=2)
    exercise = engine.instantiate("Exercise")
    engine.quiesce()
    graph = only_cp(engine).graph
    before = graph.entity_count()
    # a submission without any relation is outside every scope
    engine.instantiate("Submission")
    engine.quiesce()
    assert graph.entity_count() == before
    engine.close()


def test_membership_shrinks_on_unlink_and_delete():
    engine = make_engine("recruitment", seed=2)
    jo, (a1, a2), reviews, interview = fig9(engine)
    graph = only_cp(engine).graph

    def members(anchor):
        comps = [c for c in graph.components.values()
                 if c.sem_kind == "bottom-up"
                 and c.transition.ttype.source_step == "Review:Invite Proposed"
                 and c.tar_port.step.container.key == "Application:Checked"
                 and c.tar_port.instance_id == anchor]
        assert len(comps) == 1
        return {s.instance_id for s in comps[0].sources()}

    assert members(a2) == set(reviews[2:])
    engine.delete(reviews[2])
    engine.quiesce()
    assert members(a2) == set(reviews[3:])
    # deleting an instance leaves no orphaned dynamic entity
    assert all(s.instance_id != reviews[2] for s in graph.steps.values())
    assert all(p.instance_id != reviews[2] for p in graph.ports.values())
    engine.close()


def test_scope_exit_on_unlink_prunes_entities():
    engine = make_engine("recruitment", seed=2)
    jo = setup_published_offer(engine)
    app = new_linked(engine, "Application", jo)
    relation_id = [r.id for r in engine.structure.relations.values()][0]
    graph = only_cp(engine).graph
    assert any(s.instance_id == app for s in graph.steps.values())
    engine.unlink(relation_id)
    engine.quiesce()
    assert all(s.instance_id != app for s in graph.steps.values())
    assert app not in graph.in_scope
    engine.close()


def test_membership_matches_oracle_after_random_mutations():
    engine = make_engine("recruitment", seed=11)
    rng = random.Random(11)
    jo = setup_published_offer(engine)
    apps, reviews = [], []
    for _ in range(60):
        roll = rng.random()
        try:
            if roll < 0.3 or not apps:
                app = new_linked(engine, "Application", jo)
                walk(engine, app, "Creation", "Sent")
                apps.append(app)
            elif roll < 0.7:
                reviews.append(add_decided_review(
                    engine, rng.choice(apps), rng.choice(["Invite Proposed", "Reject Proposed"])))
            elif reviews:
                victim = reviews.pop(rng.randrange(len(reviews)))
                engine.delete(victim)
                engine.quiesce()
        except Exception:
            engine.quiesce()
        problems = engine.check_invariants()
        assert problems == [], problems[:3]
    engine.close()


def test_dump_is_deterministic_and_complete():
    engine = make_engine("recruitment", seed=2)
    jo, *_ = fig9(engine)
    unit = sorted(engine.cp_units)[0]
    first = engine.cp_dump(unit)
    second = engine.cp_dump(unit)
    assert first == second
    kinds = {line.split()[0] for line in first}
    assert kinds == {"coordination-process", "step-container", "port-container",
                     "transition", "step", "port", "component"}
    engine.close()
