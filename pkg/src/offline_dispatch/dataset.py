"""Offline datasets: expert episodes, noisy-expert episodes, transitions.

Episodes are stored compactly as (instance, action sequence, noise flag,
expert makespan); transitions are a pure function of replaying the actions
through the environment, so graphs are never serialized.

Dataset text container (line-oriented, '#' comments allowed)::

    offline-dispatch-dataset v1
    [manifest]
    episodes <n>
    p_noisy <float>
    epsilon <float>
    noise_seed <int>
    [instance <i>]
    <taillard text>
    [episode <i>]
    instance <i>
    noisy <0|1>
    expert_makespan <int>
    actions <a0> <a1> ...
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import env
from .errors import DataError, ParseError
from .exact import Schedule, schedule_to_actions, validate_schedule
from .instances import Instance, parse_taillard, write_taillard
from .rng import SplitMix64

FORMAT_HEADER = "offline-dispatch-dataset v1"

REWARD_MODES = ("normalized", "scaled", "raw")


@dataclass(frozen=True)
class EpisodeRecord:
    instance: Instance
    actions: tuple[int, ...]
    noisy: bool
    expert_makespan: int
    # materialized per-step normalized rewards; None until normalize_rewards
    norm_rewards: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.expert_makespan <= 0:
            raise DataError(f"expert makespan must be positive, got {self.expert_makespan}")
        if len(self.actions) != self.instance.num_ops:
            raise DataError(
                f"episode has {len(self.actions)} actions for "
                f"{self.instance.num_ops} operations"
            )


@dataclass
class Transition:
    obs: env.Observation
    action: int
    reward: float
    next_obs: env.Observation
    next_mask: np.ndarray
    terminal: bool


def make_expert_dataset(
    pairs: list[tuple[Instance, Schedule]]
) -> list[EpisodeRecord]:
    """One episode per (instance, schedule), replaying the schedule's dispatch order."""
    records = []
    for idx, (inst, sched) in enumerate(pairs):
        violation = validate_schedule(inst, sched)
        if violation is not None:
            raise DataError(f"schedule {idx}: {violation}")
        actions = schedule_to_actions(inst, sched)
        records.append(
            EpisodeRecord(
                instance=inst,
                actions=tuple(actions),
                noisy=False,
                expert_makespan=sched.makespan,
            )
        )
    return records


def make_noisy_dataset(
    expert_records: list[EpisodeRecord],
    p_noisy: float,
    epsilon: float,
    rng_seed: int,
) -> list[EpisodeRecord]:
    """Expert episodes with epsilon-greedy deviations in a p_noisy fraction.

    A noisy episode follows the expert's dispatch order but replaces each
    action with a uniform random legal one with probability epsilon. The
    expert order is kept as a pointer over the original action list; entries
    consumed early by random actions are skipped, and if the pointer ever
    has no legal entry left a uniform random legal action is taken instead.
    Feasibility is preserved by construction. ``expert_makespan`` is copied
    from the source episode so reward normalization stays anchored to the
    expert solution.
    """
    if not 0.0 <= p_noisy <= 1.0 or not 0.0 <= epsilon <= 1.0:
        raise DataError("p_noisy and epsilon must be probabilities")
    rng = SplitMix64(rng_seed)
    out = []
    for rec in expert_records:
        if rng.random() >= p_noisy:
            out.append(rec)
            continue
        out.append(_noisy_episode(rec, epsilon, rng))
    return out


def _noisy_episode(rec: EpisodeRecord, epsilon: float, rng: SplitMix64) -> EpisodeRecord:
    inst = rec.instance
    state = env.reset(inst)
    consumed = [False] * len(rec.actions)
    pointer = 0
    taken = []
    for _ in range(inst.num_ops):
        legal = env.legal_actions(state)
        while pointer < len(rec.actions) and consumed[pointer]:
            pointer += 1
        if rng.random() < epsilon:
            action = legal[rng.randint(0, len(legal) - 1)]
        elif pointer < len(rec.actions) and rec.actions[pointer] in legal:
            action = rec.actions[pointer]
        else:
            # expert order exhausted or illegal here; fall back to random
            action = legal[rng.randint(0, len(legal) - 1)]
        # mark the earliest unconsumed occurrence of this job as used
        for i in range(pointer, len(rec.actions)):
            if not consumed[i] and rec.actions[i] == action:
                consumed[i] = True
                break
        state.apply(action)
        taken.append(action)
    return EpisodeRecord(
        instance=inst,
        actions=tuple(taken),
        noisy=True,
        expert_makespan=rec.expert_makespan,
    )


def normalize_rewards(records: list[EpisodeRecord]) -> list[EpisodeRecord]:
    """Attach per-step rewards divided by the episode's expert makespan."""
    out = []
    for rec in records:
        if rec.expert_makespan <= 0:
            raise DataError("expert makespan must be positive")
        _, rewards = env.replay(rec.instance, rec.actions)
        norm = tuple(r / rec.expert_makespan for r in rewards)
        out.append(replace(rec, norm_rewards=norm))
    return out


def materialize(
    records: list[EpisodeRecord],
    reward_mode: str = "normalized",
    scale: float = 0.01,
    feature_scale: float = env.DEFAULT_FEATURE_SCALE,
) -> list[Transition]:
    """Replay every episode into (obs, action, reward, next_obs) transitions."""
    if reward_mode not in REWARD_MODES:
        raise DataError(f"unknown reward mode {reward_mode!r}")
    transitions = []
    for idx, rec in enumerate(records):
        state = env.reset(rec.instance)
        obs = env.observe(state, feature_scale)
        for t, action in enumerate(rec.actions):
            if not obs.mask[action]:
                raise DataError(f"episode {idx}: illegal action {action} at step {t}")
            raw = state.apply(action)
            next_obs = env.observe(state, feature_scale)
            if reward_mode == "normalized":
                reward = raw / rec.expert_makespan
            elif reward_mode == "scaled":
                reward = raw * scale
            else:
                reward = float(raw)
            transitions.append(
                Transition(
                    obs=obs,
                    action=action,
                    reward=reward,
                    next_obs=next_obs,
                    next_mask=next_obs.mask,
                    terminal=t == len(rec.actions) - 1,
                )
            )
            obs = next_obs
        if not state.terminal:
            raise DataError(f"episode {idx}: replay left operations unscheduled")
    return transitions


def sample_batch(
    transitions: list[Transition], batch_size: int, rng: SplitMix64
) -> list[Transition]:
    """Uniform with replacement; the rng stream pins the batch sequence."""
    if not transitions:
        raise DataError("cannot sample from an empty dataset")
    if batch_size < 1:
        raise DataError("batch size must be positive")
    idx = rng.randint_array(0, len(transitions) - 1, batch_size)
    return [transitions[i] for i in idx]


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def write_dataset(
    records: list[EpisodeRecord],
    p_noisy: float = 0.0,
    epsilon: float = 0.0,
    noise_seed: int = 0,
    reward_mode: str = "normalized",
) -> str:
    if reward_mode not in REWARD_MODES:
        raise DataError(f"unknown reward mode {reward_mode!r}")
    # deduplicate instances while keeping first-seen order
    instances: list[Instance] = []
    index: dict[Instance, int] = {}
    for rec in records:
        if rec.instance not in index:
            index[rec.instance] = len(instances)
            instances.append(rec.instance)

    lines = [FORMAT_HEADER, "[manifest]"]
    lines.append(f"episodes {len(records)}")
    lines.append(f"reward_mode {reward_mode}")
    lines.append(f"p_noisy {p_noisy!r}")
    lines.append(f"epsilon {epsilon!r}")
    lines.append(f"noise_seed {noise_seed}")
    for i, inst in enumerate(instances):
        lines.append(f"[instance {i}]")
        lines.append(write_taillard(inst).rstrip("\n"))
    for i, rec in enumerate(records):
        lines.append(f"[episode {i}]")
        lines.append(f"instance {index[rec.instance]}")
        lines.append(f"noisy {int(rec.noisy)}")
        lines.append(f"expert_makespan {rec.expert_makespan}")
        lines.append("actions " + " ".join(str(a) for a in rec.actions))
    return "\n".join(lines) + "\n"


def read_dataset(text: str | bytes) -> tuple[list[EpisodeRecord], dict]:
    """Parse a dataset container; validates that every episode replays legally."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise ParseError(f"expected header {FORMAT_HEADER!r}")

    sections: list[tuple[str, list[str]]] = []
    current: list[str] | None = None
    for ln in lines[1:]:
        stripped = ln.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = []
            sections.append((stripped[1:-1], current))
        else:
            if current is None:
                raise ParseError(f"content before first section: {stripped!r}")
            current.append(stripped)

    manifest: dict = {}
    instances: dict[int, Instance] = {}
    episodes: list[dict] = []
    for name, body in sections:
        if name == "manifest":
            for ln in body:
                key, _, value = ln.partition(" ")
                manifest[key] = value
        elif name.startswith("instance"):
            idx = int(name.split()[1])
            instances[idx] = parse_taillard("\n".join(body))
        elif name.startswith("episode"):
            fields: dict = {}
            for ln in body:
                key, _, value = ln.partition(" ")
                fields[key] = value
            episodes.append(fields)
        else:
            raise ParseError(f"unknown section [{name}]")

    if "episodes" in manifest and int(manifest["episodes"]) != len(episodes):
        raise ParseError(
            f"manifest says {manifest['episodes']} episodes, found {len(episodes)}"
        )

    records = []
    for i, fields in enumerate(episodes):
        try:
            inst = instances[int(fields["instance"])]
            noisy = bool(int(fields["noisy"]))
            expert_makespan = int(fields["expert_makespan"])
            actions = tuple(int(a) for a in fields["actions"].split())
        except (KeyError, ValueError) as exc:
            raise ParseError(f"episode {i}: {exc}") from None
        rec = EpisodeRecord(inst, actions, noisy, expert_makespan)
        state, _ = env.replay(inst, rec.actions)  # raises on illegal actions
        if not state.terminal:
            raise DataError(f"episode {i}: incomplete action sequence")
        records.append(rec)
    return records, manifest
