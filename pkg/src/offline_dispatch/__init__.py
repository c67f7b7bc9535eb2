"""Offline RL dispatching for the job shop scheduling problem.

A disjunctive-graph dispatching environment, priority-rule and exact
branch-and-bound baselines, offline dataset generation from (near-)optimal
schedules, and CQL-regularized offline trainers (maskable QRDQN and a
discrete maskable SAC) over a graph-network encoder.
"""

__version__ = "0.1.0"
