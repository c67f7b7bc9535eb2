"""Independent reference implementations used to freeze expected values.

Everything here recomputes results by brute force or direct definition,
deliberately sharing no code path with the implementations under test.
"""

from __future__ import annotations

import numpy as np

from offline_dispatch import env
from offline_dispatch.instances import Instance


def enumerate_optimal_makespan(inst: Instance) -> int:
    """Exhaustive search over every dispatch sequence through the env."""
    best = None

    def rec(state):
        nonlocal best
        if state.terminal:
            m = env.makespan(state)
            if best is None or m < best:
                best = m
            return
        for action in env.legal_actions(state):
            child = state.copy()
            child.apply(action)
            rec(child)

    rec(env.reset(inst))
    return best


def clb_by_definition(state) -> list[int]:
    """Per-operation completion lower bound straight from the recursion."""
    inst = state.inst
    out = [0] * inst.num_ops
    for j in range(inst.num_jobs):
        prev = 0
        for k in range(inst.num_machines):
            op = inst.op_index(j, k)
            if state.scheduled[op]:
                prev = state.start_time[op] + inst.proc_times[j][k]
            else:
                prev = prev + inst.proc_times[j][k]
            out[op] = prev
    return out


def schedule_is_feasible(inst: Instance, start) -> bool:
    """Direct feasibility check on a start-time table."""
    for j in range(inst.num_jobs):
        for k in range(inst.num_machines):
            if start[j][k] < 0:
                return False
            if k and start[j][k] < start[j][k - 1] + inst.proc_times[j][k - 1]:
                return False
    for m in range(inst.num_machines):
        spans = sorted(
            (start[j][k], start[j][k] + inst.proc_times[j][k])
            for j in range(inst.num_jobs)
            for k in range(inst.num_machines)
            if inst.routing[j][k] == m
        )
        for (s1, e1), (s2, _e2) in zip(spans, spans[1:]):
            if s2 < e1:
                return False
    return True


def oriented_graph_is_acyclic(state) -> bool:
    """Topological-sort check on conjunctive + chosen disjunctive edges."""
    inst = state.inst
    n = inst.num_ops
    adj = [[] for _ in range(n)]
    indeg = [0] * n
    for j in range(inst.num_jobs):
        for k in range(inst.num_machines - 1):
            u, v = inst.op_index(j, k), inst.op_index(j, k + 1)
            adj[u].append(v)
            indeg[v] += 1
    for timeline in state.machine_timeline:
        for (s1, e1, u), (s2, e2, v) in zip(timeline, timeline[1:]):
            adj[u].append(v)
            indeg[v] += 1
    frontier = [v for v in range(n) if indeg[v] == 0]
    seen = 0
    while frontier:
        u = frontier.pop()
        seen += 1
        for v in adj[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                frontier.append(v)
    return seen == n


def finite_difference_grad(build_loss, param_tensor, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of build_loss() w.r.t. one tensor."""
    grad = np.zeros_like(param_tensor.data)
    flat = param_tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(build_loss().data)
        flat[i] = orig - eps
        down = float(build_loss().data)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def assert_grad_close(build_loss, params, rel_tol: float = 1e-4,
                      eps: float = 1e-6) -> None:
    """Analytic gradient vs central finite differences for every tensor."""
    from offline_dispatch import autodiff as ad

    loss = build_loss()
    for p in params:
        p.grad = None
    ad.backward(loss)
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = finite_difference_grad(build_loss, p, eps)
        scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-8)
        err = np.abs(numeric - analytic).max() / scale
        assert err < rel_tol, f"gradient mismatch: rel err {err:.3e}"
