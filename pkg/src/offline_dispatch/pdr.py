"""Priority dispatching rule baselines.

SPT  - dispatch the legal job whose next operation is shortest
MOR  - dispatch the legal job with the most operations remaining
MWKR - dispatch the legal job with the most total work remaining

Ties break toward the lowest job index, so rollouts are deterministic.
"""

from __future__ import annotations

from . import env
from .errors import StateError
from .exact import Schedule, schedule_from_state
from .instances import Instance

RULES = ("spt", "mor", "mwkr")


def pdr_action(state: env.DispatchState, rule: str) -> int:
    rule = rule.lower()
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")
    legal = env.legal_actions(state)
    if not legal:
        raise StateError("no legal action in a terminal state")

    inst = state.inst
    if rule == "spt":
        return min(legal, key=lambda j: (inst.proc_times[j][state.next_pos[j]], j))
    if rule == "mor":
        return min(legal, key=lambda j: (-(inst.num_machines - state.next_pos[j]), j))
    # mwkr
    return min(
        legal,
        key=lambda j: (-sum(inst.proc_times[j][state.next_pos[j]:]), j),
    )


def pdr_rollout(inst: Instance, rule: str) -> tuple[Schedule, int]:
    state = env.reset(inst)
    while not state.terminal:
        state.apply(pdr_action(state, rule))
    sched = schedule_from_state(state)
    return sched, sched.makespan
