import pytest

from offline_dispatch import env
from offline_dispatch.errors import DataError, ParseError
from offline_dispatch.exact import (
    Schedule,
    parse_refs,
    parse_solution,
    schedule_from_state,
    schedule_to_actions,
    solve_exact,
    validate_schedule,
    write_refs,
    write_solution,
)
from offline_dispatch.instances import Instance, generate_instance
from oracles import enumerate_optimal_makespan


def test_single_op():
    inst = Instance(1, 1, ((0,),), ((7,),))
    sched = solve_exact(inst)
    assert sched.makespan == 7
    assert sched.optimal
    assert sched.source == "oracle"


def test_two_by_two_matches_enumeration():
    inst = Instance(2, 2, ((0, 1), (1, 0)), ((3, 2), (2, 4)))
    expected = enumerate_optimal_makespan(inst)
    assert solve_exact(inst).makespan == expected


@pytest.mark.parametrize("seed", range(25))
def test_matches_enumeration_small(seed):
    # all dispatch sequences enumerated through the environment
    nj = 2 + seed % 2
    nm = 3 if nj == 2 else 2
    inst = generate_instance(nj, nm, 3_000 + seed)
    assert solve_exact(inst).makespan == enumerate_optimal_makespan(inst)


@pytest.mark.parametrize("seed", range(10))
def test_matches_enumeration_3x3(seed):
    inst = generate_instance(3, 3, 4_000 + seed)
    assert solve_exact(inst).makespan == enumerate_optimal_makespan(inst)


def test_budget_exhaustion_flags_nonoptimal():
    inst = generate_instance(6, 6, 1)
    sched = solve_exact(inst, node_budget=5)
    assert not sched.optimal
    assert validate_schedule(inst, sched) is None  # greedy incumbent is feasible
    assert sched.makespan >= solve_exact(inst).makespan


def test_oracle_schedules_feasible():
    for seed in range(5):
        inst = generate_instance(5, 4, 5_000 + seed)
        sched = solve_exact(inst)
        assert validate_schedule(inst, sched) is None


def test_validate_detects_overlap():
    inst = Instance(2, 1, ((0,), (0,)), ((3,), (5,)))
    bad = Schedule(start=((0,), (2,)), makespan=7)
    assert "overlap" in validate_schedule(inst, bad)


def test_validate_detects_precedence():
    inst = Instance(1, 2, ((0, 1),), ((3, 2),))
    bad = Schedule(start=((0, 1),), makespan=3)
    assert "precedence" in validate_schedule(inst, bad)


def test_validate_detects_negative_start():
    inst = Instance(1, 1, ((0,),), ((3,),))
    assert "negative" in validate_schedule(inst, Schedule(start=((-1,),), makespan=2))


def test_validate_detects_makespan_mismatch():
    inst = Instance(1, 1, ((0,),), ((3,),))
    assert "makespan" in validate_schedule(inst, Schedule(start=((0,),), makespan=9))


def test_schedule_to_actions_single():
    inst = Instance(1, 1, ((0,),), ((7,),))
    sched = solve_exact(inst)
    assert schedule_to_actions(inst, sched) == [0]


def test_schedule_to_actions_two_jobs_one_machine():
    inst = Instance(2, 1, ((0,), (0,)), ((3,), (5,)))
    sched = Schedule(start=((0,), (3,)), makespan=8, source="external")
    actions = schedule_to_actions(inst, sched)
    assert actions == [0, 1]
    state, _ = env.replay(inst, actions)
    assert env.makespan(state) == 8


def test_schedule_to_actions_rejects_invalid():
    inst = Instance(2, 1, ((0,), (0,)), ((3,), (5,)))
    with pytest.raises(DataError):
        schedule_to_actions(inst, Schedule(start=((0,), (1,)), makespan=6))


@pytest.mark.parametrize("seed", range(8))
def test_replay_reproduces_oracle_makespan(seed):
    inst = generate_instance(4, 4, 6_000 + seed)
    sched = solve_exact(inst)
    state, _ = env.replay(inst, schedule_to_actions(inst, sched))
    assert env.makespan(state) == sched.makespan


def test_replay_never_exceeds_source_makespan():
    # delayed (non-semi-active) schedules replay to something at least as good
    inst = Instance(2, 2, ((0, 1), (1, 0)), ((3, 2), (2, 4)))
    delayed = Schedule(start=((10, 13), (0, 15)), makespan=19, source="external")
    assert validate_schedule(inst, delayed) is None
    state, _ = env.replay(inst, schedule_to_actions(inst, delayed))
    assert env.makespan(state) <= 19


def test_schedule_from_state_roundtrip():
    inst = generate_instance(3, 3, 123)
    state = env.reset(inst)
    while not state.terminal:
        state.apply(env.legal_actions(state)[0])
    sched = schedule_from_state(state)
    assert sched.makespan == env.makespan(state)
    assert validate_schedule(inst, sched) is None


def test_solution_file_roundtrip():
    inst = generate_instance(3, 3, 321)
    sched = solve_exact(inst)
    text = write_solution(inst, sched)
    parsed = parse_solution(text)
    assert parsed.start == sched.start
    assert parsed.makespan == sched.makespan
    assert write_solution(inst, parsed) == text


def test_solution_parse_errors():
    with pytest.raises(ParseError):
        parse_solution("nonsense 1 1 5\n0\n")
    with pytest.raises(ParseError):
        parse_solution("solution 2 1 5\n0\n")  # missing a job line


def test_refs_roundtrip():
    refs = {"inst_0001": 451, "inst_0000": 390}
    text = write_refs(refs)
    assert text == "inst_0000 390\ninst_0001 451\n"
    assert parse_refs(text) == refs
    with pytest.raises(ParseError):
        parse_refs("inst_0000\n")
