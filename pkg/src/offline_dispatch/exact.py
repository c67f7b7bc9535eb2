"""Exact branch-and-bound for small instances, plus schedule utilities.

The solver does depth-first search over dispatch decisions, building
schedules chronologically (each chosen operation starts at
max(job ready, machine release)). Branching is restricted to the classic
conflict set on the machine with the earliest possible completion; that
set generates exactly the active schedules, which always contain an
optimal one. A node is pruned when

    max(job-chain bound, machine release + remaining machine load) >= best.

Solution text format::

    solution num_jobs num_machines makespan
    <one line per job: start times in routing order>

Reference files are lines of "instance_name reference_makespan".
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import env
from .errors import DataError, ParseError
from .instances import Instance

DEFAULT_NODE_BUDGET = 5_000_000
ORACLE_SIZE_GUARD = 49  # |O| above this is out of desk scale for the solver


@dataclass(frozen=True)
class Schedule:
    """Start times per job in routing order, plus provenance."""

    start: tuple[tuple[int, ...], ...]
    makespan: int
    source: str = "rollout"  # oracle | external | rollout
    optimal: bool = False

    def start_of(self, job: int, pos: int) -> int:
        return self.start[job][pos]


def schedule_from_state(state: env.DispatchState, source: str = "rollout") -> Schedule:
    inst = state.inst
    start = tuple(
        tuple(state.start_time[inst.op_index(j, k)] for k in range(inst.num_machines))
        for j in range(inst.num_jobs)
    )
    return Schedule(start=start, makespan=env.makespan(state), source=source)


def validate_schedule(inst: Instance, sched: Schedule) -> str | None:
    """None when feasible, otherwise the first violation found."""
    if len(sched.start) != inst.num_jobs or any(
        len(row) != inst.num_machines for row in sched.start
    ):
        return "shape: start-time rows do not match the instance"

    for j in range(inst.num_jobs):
        for k in range(inst.num_machines):
            if sched.start[j][k] < 0:
                return f"negative start: O_{j},{k} starts at {sched.start[j][k]}"
        for k in range(1, inst.num_machines):
            prev_end = sched.start[j][k - 1] + inst.proc_times[j][k - 1]
            if sched.start[j][k] < prev_end:
                return (
                    f"precedence: O_{j},{k} starts at {sched.start[j][k]} "
                    f"before O_{j},{k - 1} completes at {prev_end}"
                )

    by_machine: list[list[tuple[int, int, int, int]]] = [
        [] for _ in range(inst.num_machines)
    ]
    for j in range(inst.num_jobs):
        for k in range(inst.num_machines):
            m = inst.routing[j][k]
            s = sched.start[j][k]
            by_machine[m].append((s, s + inst.proc_times[j][k], j, k))
    for m, intervals in enumerate(by_machine):
        intervals.sort()
        for (s1, e1, j1, k1), (s2, _e2, j2, k2) in zip(intervals, intervals[1:]):
            if s2 < e1:
                return (
                    f"machine overlap on M{m}: O_{j1},{k1} [{s1},{e1}) and "
                    f"O_{j2},{k2} starting at {s2}"
                )

    true_makespan = max(
        sched.start[j][k] + inst.proc_times[j][k]
        for j in range(inst.num_jobs)
        for k in range(inst.num_machines)
    )
    if true_makespan != sched.makespan:
        return f"makespan mismatch: recorded {sched.makespan}, actual {true_makespan}"
    return None


def schedule_to_actions(inst: Instance, sched: Schedule) -> list[int]:
    """Dispatch order that reproduces the schedule when it is semi-active.

    Operations sorted by (start time, machine, job); replaying the emitted
    job sequence through the environment never exceeds the schedule's
    makespan.
    """
    violation = validate_schedule(inst, sched)
    if violation is not None:
        raise DataError(f"invalid schedule: {violation}")
    ops = [
        (sched.start[j][k], inst.routing[j][k], j)
        for j in range(inst.num_jobs)
        for k in range(inst.num_machines)
    ]
    ops.sort()
    return [j for _s, _m, j in ops]


# ---------------------------------------------------------------------------
# branch and bound
# ---------------------------------------------------------------------------


@dataclass
class _Search:
    inst: Instance
    node_budget: int
    best_makespan: int = 2**62
    best_start: list[list[int]] = field(default_factory=list)
    nodes: int = 0
    budget_hit: bool = False


def _greedy_makespan(inst: Instance, key) -> tuple[int, list[list[int]]]:
    """Chronological rollout picking one conflict-set operation per step."""
    nj, nm = inst.num_jobs, inst.num_machines
    job_next = [0] * nj
    job_ready = [0] * nj
    release = [0] * nm
    start = [[0] * nm for _ in range(nj)]
    for _ in range(inst.num_ops):
        best = None
        for j in range(nj):
            k = job_next[j]
            if k >= nm:
                continue
            m = inst.routing[j][k]
            sigma = max(job_ready[j], release[m])
            phi = sigma + inst.proc_times[j][k]
            if best is None or (phi, m, j) < best:
                best = (phi, m, j)
        cstar, mstar, _ = best
        chosen = None
        for j in range(nj):
            k = job_next[j]
            if k >= nm or inst.routing[j][k] != mstar:
                continue
            sigma = max(job_ready[j], release[mstar])
            if sigma >= cstar:
                continue
            cand = (key(inst, j, k), j)
            if chosen is None or cand < chosen:
                chosen = cand
        j = chosen[1]
        k = job_next[j]
        sigma = max(job_ready[j], release[mstar])
        start[j][k] = sigma
        job_ready[j] = sigma + inst.proc_times[j][k]
        release[mstar] = job_ready[j]
        job_next[j] = k + 1
    return max(job_ready), start


def _dfs(
    search: _Search,
    job_next: list[int],
    job_ready: list[int],
    release: list[int],
    rem_work: list[int],
    rem_load: list[int],
    start: list[list[int]],
    scheduled: int,
) -> None:
    inst = search.inst
    nj, nm = inst.num_jobs, inst.num_machines

    search.nodes += 1
    if search.nodes > search.node_budget:
        search.budget_hit = True
        return

    if scheduled == inst.num_ops:
        cmax = max(job_ready)
        if cmax < search.best_makespan:
            search.best_makespan = cmax
            search.best_start = [row.copy() for row in start]
        return

    # conflict machine: the one completing an operation earliest
    cstar = None
    mstar = -1
    for j in range(nj):
        k = job_next[j]
        if k >= nm:
            continue
        m = inst.routing[j][k]
        phi = max(job_ready[j], release[m]) + inst.proc_times[j][k]
        if cstar is None or (phi, m) < (cstar, mstar):
            cstar, mstar = phi, m

    children = []
    for j in range(nj):
        k = job_next[j]
        if k >= nm or inst.routing[j][k] != mstar:
            continue
        sigma = max(job_ready[j], release[mstar])
        if sigma < cstar:
            children.append((sigma + inst.proc_times[j][k], j, k, sigma))
    children.sort()

    for _phi, j, k, sigma in children:
        p = inst.proc_times[j][k]
        end = sigma + p

        old_ready, old_release = job_ready[j], release[mstar]
        start[j][k] = sigma
        job_next[j] = k + 1
        job_ready[j] = end
        release[mstar] = end
        rem_work[j] -= p
        rem_load[mstar] -= p

        bound = 0
        for jj in range(nj):
            b = job_ready[jj] + rem_work[jj]
            if b > bound:
                bound = b
        for mm in range(nm):
            b = release[mm] + rem_load[mm]
            if b > bound:
                bound = b
        if bound < search.best_makespan and not search.budget_hit:
            _dfs(
                search, job_next, job_ready, release, rem_work, rem_load,
                start, scheduled + 1,
            )

        job_next[j] = k
        job_ready[j] = old_ready
        release[mstar] = old_release
        rem_work[j] += p
        rem_load[mstar] += p
        if search.budget_hit:
            return


def solve_exact(inst: Instance, node_budget: int = DEFAULT_NODE_BUDGET) -> Schedule:
    """Optimal schedule by branch and bound.

    When the node budget runs out the best schedule found so far is
    returned with ``optimal=False``. Intended for |O| <= 49.
    """
    nj, nm = inst.num_jobs, inst.num_machines
    search = _Search(inst=inst, node_budget=node_budget)

    # incumbents from cheap chronological rollouts
    heuristics = [
        lambda i, j, k: i.proc_times[j][k],         # shortest first
        lambda i, j, k: -sum(i.proc_times[j][k:]),  # most work first
        lambda i, j, k: 0,                          # lowest job index
    ]
    for key in heuristics:
        cmax, start = _greedy_makespan(inst, key)
        if cmax < search.best_makespan:
            search.best_makespan = cmax
            search.best_start = start

    _dfs(
        search,
        job_next=[0] * nj,
        job_ready=[0] * nj,
        release=[0] * nm,
        rem_work=[sum(row) for row in inst.proc_times],
        rem_load=[
            sum(
                inst.proc_times[j][k]
                for j in range(nj)
                for k in range(nm)
                if inst.routing[j][k] == m
            )
            for m in range(nm)
        ],
        start=[[0] * nm for _ in range(nj)],
        scheduled=0,
    )

    return Schedule(
        start=tuple(tuple(row) for row in search.best_start),
        makespan=search.best_makespan,
        source="oracle",
        optimal=not search.budget_hit,
    )


# ---------------------------------------------------------------------------
# solution / reference file formats
# ---------------------------------------------------------------------------


def write_solution(inst: Instance, sched: Schedule) -> str:
    lines = [f"solution {inst.num_jobs} {inst.num_machines} {sched.makespan}"]
    for row in sched.start:
        lines.append(" ".join(str(s) for s in row))
    return "\n".join(lines) + "\n"


def parse_solution(text: str | bytes, source: str = "external") -> Schedule:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = [
        ln.strip()
        for ln in text.splitlines()
        if ln.strip() and not ln.strip().startswith("#")
    ]
    if not lines or not lines[0].startswith("solution"):
        raise ParseError("line 1: expected 'solution num_jobs num_machines makespan'")
    head = lines[0].split()
    if len(head) != 4:
        raise ParseError("line 1: expected 'solution num_jobs num_machines makespan'")
    try:
        nj, nm, cmax = int(head[1]), int(head[2]), int(head[3])
    except ValueError:
        raise ParseError("line 1: non-integer header fields") from None
    if len(lines) - 1 != nj:
        raise ParseError(f"expected {nj} job lines, got {len(lines) - 1}")
    start = []
    for i, line in enumerate(lines[1:], start=2):
        try:
            row = tuple(int(f) for f in line.split())
        except ValueError:
            raise ParseError(f"line {i}: non-integer start time") from None
        if len(row) != nm:
            raise ParseError(f"line {i}: expected {nm} start times")
        start.append(row)
    return Schedule(start=tuple(start), makespan=cmax, source=source)


def write_refs(refs: dict[str, int]) -> str:
    return "".join(f"{name} {value}\n" for name, value in sorted(refs.items()))


def parse_refs(text: str | bytes) -> dict[str, int]:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    refs: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"line {lineno}: expected 'name makespan'")
        try:
            refs[parts[0]] = int(parts[1])
        except ValueError:
            raise ParseError(f"line {lineno}: non-integer makespan") from None
    return refs
