"""Dispatching environment over the disjunctive graph.

One episode schedules every operation of an instance, one dispatch per
step. An action is a job index; the job's first unscheduled operation is
placed on its machine at the earliest feasible time, inserting into idle
gaps when one fits. The per-step reward is the drop in the completion
lower bound:

    reward = max_O clb(O, before) - max_O clb(O, after)

where clb of a scheduled operation is its actual completion and clb of an
unscheduled operation chains its job predecessor's clb plus its own
processing time. All times and rewards are exact integers; rewards
telescope to ``max clb(s0) - makespan`` over a full episode.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidActionError, StateError
from .instances import Instance

DEFAULT_FEATURE_SCALE = 1000.0


class DispatchState:
    """Mutable partial-schedule state. Copy before sharing across episodes."""

    __slots__ = (
        "inst",
        "scheduled",
        "start_time",
        "machine_timeline",
        "clb",
        "next_pos",
        "step_count",
    )

    def __init__(self, inst: Instance):
        n = inst.num_ops
        self.inst = inst
        self.scheduled = [False] * n
        self.start_time = [-1] * n
        # per machine: time-sorted list of (start, end, op) intervals
        self.machine_timeline = [[] for _ in range(inst.num_machines)]
        self.clb = [0] * n
        self.next_pos = [0] * inst.num_jobs
        self.step_count = 0
        for j in range(inst.num_jobs):
            acc = 0
            for k, p in enumerate(inst.proc_times[j]):
                acc += p
                self.clb[inst.op_index(j, k)] = acc

    def copy(self) -> "DispatchState":
        dup = object.__new__(DispatchState)
        dup.inst = self.inst
        dup.scheduled = self.scheduled.copy()
        dup.start_time = self.start_time.copy()
        dup.machine_timeline = [tl.copy() for tl in self.machine_timeline]
        dup.clb = self.clb.copy()
        dup.next_pos = self.next_pos.copy()
        dup.step_count = self.step_count
        return dup

    @property
    def terminal(self) -> bool:
        return self.step_count == self.inst.num_ops

    def max_clb(self) -> int:
        # clb is non-decreasing along each job chain, so the last operation
        # of each job carries the job's maximum
        inst = self.inst
        last = inst.num_machines - 1
        return max(self.clb[inst.op_index(j, last)] for j in range(inst.num_jobs))

    def apply(self, action: int) -> int:
        """Dispatch ``action``'s next operation in place; returns the reward."""
        inst = self.inst
        if not 0 <= action < inst.num_jobs or self.next_pos[action] >= inst.num_machines:
            raise InvalidActionError(f"job {action} has no schedulable operation")

        pos = self.next_pos[action]
        op = inst.op_index(action, pos)
        machine = inst.routing[action][pos]
        p = inst.proc_times[action][pos]
        ready = 0
        if pos > 0:
            prev = inst.op_index(action, pos - 1)
            ready = self.start_time[prev] + inst.proc_times[action][pos - 1]

        before = self.max_clb()

        # earliest feasible start: first idle gap (in time order) that fits,
        # which is also the earliest feasible start time
        timeline = self.machine_timeline[machine]
        placed_at = len(timeline)
        gap_start = 0
        for i, (s, e, _op) in enumerate(timeline):
            candidate = max(ready, gap_start)
            if candidate + p <= s:
                start = candidate
                placed_at = i
                break
            gap_start = e
        else:
            start = max(ready, gap_start)
        timeline.insert(placed_at, (start, start + p, op))

        self.scheduled[op] = True
        self.start_time[op] = start
        self.step_count += 1

        # clb changes only along this job's chain
        self.clb[op] = start + p
        acc = start + p
        for k in range(pos + 1, inst.num_machines):
            acc += inst.proc_times[action][k]
            self.clb[inst.op_index(action, k)] = acc
        self.next_pos[action] = pos + 1

        return before - self.max_clb()


def reset(inst: Instance) -> DispatchState:
    return DispatchState(inst)


def legal_actions(state: DispatchState) -> list[int]:
    """Jobs that still have an unscheduled operation; empty iff terminal."""
    m = state.inst.num_machines
    return [j for j in range(state.inst.num_jobs) if state.next_pos[j] < m]


def step(state: DispatchState, action: int) -> tuple[DispatchState, int]:
    """Functional step: returns (successor state, reward). Argument unchanged."""
    nxt = state.copy()
    reward = nxt.apply(action)
    return nxt, reward


def compute_clb(state: DispatchState) -> list[int]:
    """From-scratch completion lower bounds (reference for the incremental ones)."""
    inst = state.inst
    clb = [0] * inst.num_ops
    for j in range(inst.num_jobs):
        acc = 0
        for k in range(inst.num_machines):
            op = inst.op_index(j, k)
            if state.scheduled[op]:
                acc = state.start_time[op] + inst.proc_times[j][k]
            else:
                acc += inst.proc_times[j][k]
            clb[op] = acc
    return clb


def makespan(state: DispatchState) -> int:
    if not state.terminal:
        raise StateError(
            f"makespan undefined: {state.step_count}/{state.inst.num_ops} "
            "operations scheduled"
        )
    inst = state.inst
    return max(
        state.start_time[inst.op_index(j, k)] + inst.proc_times[j][k]
        for j in range(inst.num_jobs)
        for k in range(inst.num_machines)
    )


class Observation:
    """Graph view of a state for the encoder.

    node_features: (num_ops, 2) float32 [scheduled flag, clb / feature_scale]
    conj_edges:    (E1, 2) int32, job-precedence edges (static)
    disj_edges:    (E2, 2) int32, machine orders fixed so far
    mask:          (num_jobs,) bool, job has an unscheduled operation
    candidates:    (num_jobs,) int32, node id of the job's first unscheduled
                   operation (0 where masked; consult ``mask``)
    """

    __slots__ = ("node_features", "conj_edges", "disj_edges", "mask", "candidates")

    def __init__(self, node_features, conj_edges, disj_edges, mask, candidates):
        self.node_features = node_features
        self.conj_edges = conj_edges
        self.disj_edges = disj_edges
        self.mask = mask
        self.candidates = candidates

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    def all_edges(self) -> np.ndarray:
        if self.disj_edges.shape[0] == 0:
            return self.conj_edges
        return np.concatenate([self.conj_edges, self.disj_edges], axis=0)


def conjunctive_edges(inst: Instance) -> np.ndarray:
    edges = [
        (inst.op_index(j, k), inst.op_index(j, k + 1))
        for j in range(inst.num_jobs)
        for k in range(inst.num_machines - 1)
    ]
    if not edges:
        return np.zeros((0, 2), dtype=np.int32)
    return np.asarray(edges, dtype=np.int32)


def observe(
    state: DispatchState, feature_scale: float = DEFAULT_FEATURE_SCALE
) -> Observation:
    inst = state.inst
    n = inst.num_ops
    feats = np.zeros((n, 2), dtype=np.float32)
    feats[:, 0] = state.scheduled
    feats[:, 1] = np.asarray(state.clb, dtype=np.float32) / feature_scale

    disj = [
        (tl[i][2], tl[i + 1][2])
        for tl in state.machine_timeline
        for i in range(len(tl) - 1)
    ]
    disj_edges = (
        np.asarray(disj, dtype=np.int32) if disj else np.zeros((0, 2), dtype=np.int32)
    )

    mask = np.zeros(inst.num_jobs, dtype=bool)
    candidates = np.zeros(inst.num_jobs, dtype=np.int32)
    for j in range(inst.num_jobs):
        if state.next_pos[j] < inst.num_machines:
            mask[j] = True
            candidates[j] = inst.op_index(j, state.next_pos[j])
    return Observation(feats, conjunctive_edges(inst), disj_edges, mask, candidates)


def replay(inst: Instance, actions) -> tuple[DispatchState, list[int]]:
    """Run an action sequence from reset; returns final state and rewards."""
    state = reset(inst)
    rewards = []
    for a in actions:
        rewards.append(state.apply(a))
    return state, rewards
