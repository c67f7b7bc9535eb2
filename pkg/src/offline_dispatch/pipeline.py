"""Offline training loop, greedy evaluation, and report generation.

Each training step samples a transition batch, computes the method's
losses (conservative regularizer + TD loss for the critics, plus policy
and temperature losses for the actor-critic), takes one Adam step per
parameter group, and hard-syncs the target network on its cadence. The
whole run is deterministic given the seed: every random draw (parameter
init, batch sampling, dropout, noise) comes from named splitmix64 streams.

Log format (CSV): step,loss_total,loss_td,loss_cql,loss_policy,alpha,eval_gap
Evaluation format (CSV): instance,C,C_star,gap_pct,millis
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import agents, autodiff as ad, env, model
from .agents import AgentConfig
from .dataset import EpisodeRecord, Transition, materialize
from .errors import DataError
from .instances import Instance
from .model import GraphBatch, ModelConfig, ModelParams, build_batch
from .pdr import pdr_rollout
from .rng import SplitMix64

METHODS = ("mqrdqn", "dmsac", "bc")

LOG_COLUMNS = ("step", "loss_total", "loss_td", "loss_cql",
               "loss_policy", "alpha", "eval_gap")


@dataclass
class TrainConfig:
    method: str = "mqrdqn"
    steps: int = 50_000
    lr: float = 2e-5
    batch_size: int = 64
    seed: int = 600
    dropout: float = 0.4
    feature_scale: float = 1000.0
    eval_every: int = 2500
    agent: AgentConfig = field(default_factory=AgentConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise DataError(f"unknown method {self.method!r}; expected {METHODS}")
        if self.steps < 1:
            raise DataError("steps must be >= 1")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            method=self.method,
            n_quantiles=self.agent.n_quantiles,
            dropout=self.dropout,
            feature_scale=self.feature_scale,
        )


def gap_percent(makespan: int, reference: int) -> float:
    return (makespan - reference) / reference * 100.0


# ---------------------------------------------------------------------------
# greedy policy rollouts
# ---------------------------------------------------------------------------

_EVAL_HEAD = {"mqrdqn": "q", "dmsac": "policy", "bc": "policy"}


def greedy_actions(params: ModelParams, batch: GraphBatch) -> np.ndarray:
    """Argmax over unmasked job scores; never selects a masked action."""
    scores = model.job_scores(params, _EVAL_HEAD[params.config.method], batch)
    masked_scores = np.where(batch.mask, scores.data, -np.inf)
    actions = masked_scores.argmax(axis=1)
    if not batch.mask[np.arange(len(actions)), actions].all():
        raise DataError("greedy evaluation selected a masked action")
    return actions


def greedy_rollout(params: ModelParams, inst: Instance) -> int:
    state = env.reset(inst)
    lower_bound = state.max_clb()
    earned = 0
    while not state.terminal:
        batch = build_batch([env.observe(state, params.config.feature_scale)])
        earned += state.apply(int(greedy_actions(params, batch)[0]))
    cmax = env.makespan(state)
    assert earned == lower_bound - cmax, "reward telescoping violated in eval"
    return cmax


def greedy_rollout_batch(params: ModelParams, instances: list[Instance]) -> list[int]:
    """Lock-step rollout over same-size instances (one batched forward per step)."""
    states = [env.reset(inst) for inst in instances]
    bounds = [s.max_clb() for s in states]
    earned = [0] * len(states)
    for _ in range(instances[0].num_ops):
        batch = build_batch(
            [env.observe(s, params.config.feature_scale) for s in states]
        )
        for i, (state, action) in enumerate(zip(states, greedy_actions(params, batch))):
            earned[i] += state.apply(int(action))
    makespans = [env.makespan(s) for s in states]
    assert all(
        e == lb - c for e, lb, c in zip(earned, bounds, makespans)
    ), "reward telescoping violated in eval"
    return makespans


# ---------------------------------------------------------------------------
# loss computation per method
# ---------------------------------------------------------------------------


def _batch_arrays(batch: list[Transition]):
    actions = np.array([t.action for t in batch], dtype=np.int64)
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    terminal = np.array([t.terminal for t in batch], dtype=bool)
    return actions, rewards, terminal


def _np_masked_probs(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Detached masked softmax; rows with no legal action come back all zero."""
    probs = np.zeros_like(logits)
    live = mask.any(axis=1)
    if live.any():
        x = np.where(mask[live], logits[live], -np.inf)
        x = x - x.max(axis=1, keepdims=True)
        e = np.exp(x) * mask[live]
        probs[live] = e / e.sum(axis=1, keepdims=True)
    return probs


class _Trainer:
    def __init__(self, config: TrainConfig, transitions: list[Transition]):
        self.config = config
        self.transitions = transitions
        root = SplitMix64(config.seed)
        self.init_rng = root.spawn()
        self.batch_rng = root.spawn()
        self.dropout_rng = root.spawn()
        self.params = model.init_params(config.model_config(), self.init_rng)
        self.target = self.params.copy(requires_grad=False)
        main = {k: p for k, p in self.params.params.items() if k != "log_alpha"}
        self.opt = ad.Adam(main, lr=config.lr)
        self.alpha_opt = None
        if "log_alpha" in self.params.params:
            self.alpha_opt = ad.Adam(
                {"log_alpha": self.params.params["log_alpha"]}, lr=config.lr
            )
        # per-transition values from the target network; stale only when the
        # target syncs, so they are recomputed exactly then
        self._target_cache: np.ndarray | None = None
        self._obs_batches: dict[tuple[int, ...], GraphBatch] = {}

    def train_step(self, step: int) -> dict:
        cfg = self.config
        if self._needs_target_cache():
            self._refresh_target_cache()
        idx = self.batch_rng.randint_array(0, len(self.transitions) - 1,
                                           cfg.batch_size)
        batch = [self.transitions[i] for i in idx]
        self.params.zero_grad()
        if cfg.method == "mqrdqn":
            row = self._mqrdqn_losses(batch, idx)
        elif cfg.method == "dmsac":
            row = self._dmsac_losses(batch, idx)
        else:
            row = self._bc_losses(batch)
        self.opt.step()
        if self.alpha_opt is not None:
            self.alpha_opt.step()
        if step % cfg.agent.target_update_every == 0:
            agents.sync_target(self.params, self.target, step,
                               cfg.agent.target_update_every)
            self._target_cache = None
        return row

    def _forward_scores(self, params: ModelParams, head: str, batch: GraphBatch,
                        train: bool):
        node_emb, graph_emb = model.encode(params, batch)
        rng = self.dropout_rng if train else None
        return model.score_actions(params, head, node_emb, graph_emb, batch,
                                   train=train, rng=rng)

    def _needs_target_cache(self) -> bool:
        return self.config.method in ("mqrdqn", "dmsac") and self._target_cache is None

    def _target_next_scores(self, head: str, chunk: list[Transition]) -> np.ndarray:
        batch = build_batch([t.next_obs for t in chunk])
        raw = self._forward_scores(self.target, head, batch, train=False)
        return raw.data.reshape(batch.num_graphs, batch.num_jobs, -1)

    def _refresh_target_cache(self) -> None:
        """Recompute target-network values on every next state.

        Per-graph outputs are identical whether states are batched here or
        per training step (block-diagonal batches keep graphs independent),
        so caching changes nothing numerically.
        """
        cfg = self.config
        chunks = range(0, len(self.transitions), 256)
        rows = []
        for lo in chunks:
            chunk = self.transitions[lo:lo + 256]
            if cfg.method == "mqrdqn":
                quant = self._target_next_scores("q", chunk)  # (b, J, N)
                mask = np.stack([t.next_mask for t in chunk])
                mean_q = np.where(mask, quant.mean(axis=2), -np.inf)
                boot = np.zeros((len(chunk), quant.shape[2]))
                live = mask.any(axis=1)
                if live.any():
                    a_max = mean_q[live].argmax(axis=1)
                    boot[live] = quant[live, a_max, :]
                rows.append(boot)
            else:  # dmsac: min over target critics, per next action
                nq1 = self._target_next_scores("q1", chunk)[:, :, 0]
                nq2 = self._target_next_scores("q2", chunk)[:, :, 0]
                rows.append(np.minimum(nq1, nq2))
        self._target_cache = np.concatenate(rows, axis=0)

    def _mqrdqn_losses(self, batch: list[Transition], idx: np.ndarray) -> dict:
        cfg = self.config
        actions, rewards, terminal = _batch_arrays(batch)
        obs_batch = build_batch([t.obs for t in batch])
        b, j = obs_batch.num_graphs, obs_batch.num_jobs

        quant = self._forward_scores(self.params, "q", obs_batch, train=True)
        q_mean = model.scores_to_job_values(quant, obs_batch)
        cql = agents.cql_term(q_mean, obs_batch.mask, actions, cfg.agent.alpha_cql)

        boot = self._target_cache[idx]
        target = rewards[:, None] + np.where(
            terminal[:, None], 0.0, cfg.agent.gamma * boot
        )
        pred = ad.gather_rows(quant, np.arange(b) * j + actions)
        td = agents.qrdqn_loss(pred, target, cfg.agent.kappa)

        loss = cql + td * 0.5
        ad.backward(loss)
        return {
            "loss_total": float(loss.data),
            "loss_td": float(td.data),
            "loss_cql": float(cql.data),
        }

    def _dmsac_losses(self, batch: list[Transition], idx: np.ndarray) -> dict:
        cfg = self.config
        actions, rewards, terminal = _batch_arrays(batch)
        obs_batch = build_batch([t.obs for t in batch])
        nxt_batch = build_batch([t.next_obs for t in batch])
        b, j = obs_batch.num_graphs, obs_batch.num_jobs

        node_emb, graph_emb = model.encode(self.params, obs_batch)

        def head(name: str, train: bool):
            rng = self.dropout_rng if train else None
            raw = model.score_actions(self.params, name, node_emb, graph_emb,
                                      obs_batch, train=train, rng=rng)
            return ad.reshape(raw, (b, j))

        q1 = head("q1", train=True)
        q2 = head("q2", train=True)
        logits = head("policy", train=False)

        probs = ad.softmax_masked(logits, obs_batch.mask)
        log_probs = ad.log_softmax_masked(logits, obs_batch.mask)
        alpha = float(np.exp(self.params["log_alpha"].data))

        # critic targets: online policy on s', cached target critics on s'
        nxt_logits = self._forward_scores(self.params, "policy", nxt_batch,
                                          train=False)
        next_probs = _np_masked_probs(
            nxt_logits.data.reshape(b, j), nxt_batch.mask
        )
        min_next_q = self._target_cache[idx]
        y = agents.sac_q_target(rewards, next_probs, min_next_q, min_next_q,
                                terminal, cfg.agent.gamma)
        y = y.astype(q1.data.dtype)

        def critic_loss(q):
            cql = agents.cql_term(q, obs_batch.mask, actions, cfg.agent.alpha_cql)
            diff = ad.take_per_row(q, actions) - ad.Tensor(y)
            return cql, ad.mean(ad.mul(diff, diff))

        cql1, td1 = critic_loss(q1)
        cql2, td2 = critic_loss(q2)
        policy_loss = agents.sac_policy_loss(
            probs, log_probs, q1.detach(), q2.detach(), alpha, obs_batch.mask
        )
        temp_loss = agents.temperature_loss(
            probs.data, log_probs.data, obs_batch.mask.sum(axis=1),
            cfg.agent.c_entropy, self.params["log_alpha"],
        )

        loss = (cql1 + td1 * 0.5) + (cql2 + td2 * 0.5) + policy_loss + temp_loss
        ad.backward(loss)
        return {
            "loss_total": float(loss.data),
            "loss_td": float(td1.data + td2.data),
            "loss_cql": float(cql1.data + cql2.data),
            "loss_policy": float(policy_loss.data),
            "alpha": alpha,
        }

    def _bc_losses(self, batch: list[Transition]) -> dict:
        actions, _rewards, _terminal = _batch_arrays(batch)
        obs_batch = build_batch([t.obs for t in batch])
        logits = self._forward_scores(self.params, "policy", obs_batch, train=False)
        logits = ad.reshape(logits, (obs_batch.num_graphs, obs_batch.num_jobs))
        loss = agents.bc_loss(logits, obs_batch.mask, actions)
        ad.backward(loss)
        return {"loss_total": float(loss.data), "loss_policy": float(loss.data)}


def train_offline(
    records: list[EpisodeRecord],
    config: TrainConfig,
    eval_instances: list[Instance] | None = None,
    eval_refs: list[int] | None = None,
    log_path=None,
    checkpoint_path=None,
    progress=None,
) -> tuple[ModelParams, list[dict]]:
    """Run the offline loop; returns trained parameters and the log rows."""
    transitions = materialize(
        records,
        reward_mode=config.agent.reward_mode,
        feature_scale=config.feature_scale,
    )
    if config.batch_size > len(transitions):
        raise DataError(
            f"batch size {config.batch_size} exceeds dataset size {len(transitions)}"
        )
    trainer = _Trainer(config, transitions)

    rows: list[dict] = []
    log_file = open(log_path, "w") if log_path else None
    try:
        if log_file:
            log_file.write(",".join(LOG_COLUMNS) + "\n")
        for step in range(1, config.steps + 1):
            row = trainer.train_step(step)
            row["step"] = step
            is_eval_step = (
                eval_instances
                and (step % config.eval_every == 0 or step == config.steps)
            )
            if is_eval_step:
                makespans = greedy_rollout_batch(trainer.params, eval_instances)
                gaps = [gap_percent(c, r) for c, r in zip(makespans, eval_refs)]
                row["eval_gap"] = float(np.mean(gaps))
            rows.append(row)
            if log_file:
                log_file.write(_format_log_row(row) + "\n")
            if progress and (step % 500 == 0 or step == config.steps):
                progress(step, row)
    finally:
        if log_file:
            log_file.close()

    if checkpoint_path:
        model.save_checkpoint(trainer.params, checkpoint_path)
    return trainer.params, rows


def _format_log_row(row: dict) -> str:
    out = []
    for col in LOG_COLUMNS:
        value = row.get(col)
        if value is None:
            out.append("")
        elif col == "step":
            out.append(str(value))
        else:
            out.append(repr(float(value)))
    return ",".join(out)


# ---------------------------------------------------------------------------
# evaluation and reporting
# ---------------------------------------------------------------------------


@dataclass
class EvalRow:
    instance: str
    makespan: int
    reference: int
    gap_pct: float
    millis: float


@dataclass
class EvalReport:
    method: str
    rows: list[EvalRow]
    skipped: int = 0

    @property
    def mean_gap(self) -> float:
        return float(np.mean([r.gap_pct for r in self.rows]))

    @property
    def std_gap(self) -> float:
        if len(self.rows) < 2:
            return 0.0
        return float(np.std([r.gap_pct for r in self.rows], ddof=1))

    @property
    def mean_millis(self) -> float:
        return float(np.mean([r.millis for r in self.rows]))

    def to_csv(self) -> str:
        lines = ["instance,C,C_star,gap_pct,millis"]
        for r in self.rows:
            lines.append(
                f"{r.instance},{r.makespan},{r.reference},{r.gap_pct!r},{r.millis!r}"
            )
        return "\n".join(lines) + "\n"


def evaluate(
    named_instances: list[tuple[str, Instance]],
    references: dict[str, int],
    params: ModelParams | None = None,
    rule: str | None = None,
    method_tag: str | None = None,
    warn=print,
) -> EvalReport:
    """Greedy rollout (or PDR rollout) per instance, gap vs its reference."""
    if (params is None) == (rule is None):
        raise DataError("pass exactly one of params or rule")
    tag = method_tag or (rule if rule else params.config.method)
    rows: list[EvalRow] = []
    skipped = 0
    for name, inst in named_instances:
        if name not in references:
            warn(f"warning: no reference makespan for {name}, skipping")
            skipped += 1
            continue
        t0 = time.perf_counter()
        if rule is not None:
            _, cmax = pdr_rollout(inst, rule)
        else:
            cmax = greedy_rollout(params, inst)
        millis = (time.perf_counter() - t0) * 1000.0
        ref = references[name]
        rows.append(EvalRow(name, cmax, ref, gap_percent(cmax, ref), millis))
    return EvalReport(method=tag, rows=rows, skipped=skipped)


def report_table(reports: list[EvalReport]) -> str:
    """Aligned comparison sorted by mean gap ascending."""
    if not reports:
        raise DataError("need at least one evaluation report")
    ordered = sorted(reports, key=lambda r: r.mean_gap)
    header = f"{'method':<20} {'gap mean':>10} {'gap std':>10} {'ms/inst':>10} {'n':>5}"
    lines = [header, "-" * len(header)]
    for rep in ordered:
        lines.append(
            f"{rep.method:<20} {rep.mean_gap:>9.2f}% {rep.std_gap:>9.2f}% "
            f"{rep.mean_millis:>10.2f} {len(rep.rows):>5}"
        )
    return "\n".join(lines) + "\n"


def report_csv(reports: list[EvalReport]) -> str:
    ordered = sorted(reports, key=lambda r: r.mean_gap)
    lines = ["method,mean_gap_pct,std_gap_pct,mean_millis,instances"]
    for rep in ordered:
        lines.append(
            f"{rep.method},{rep.mean_gap!r},{rep.std_gap!r},"
            f"{rep.mean_millis!r},{len(rep.rows)}"
        )
    return "\n".join(lines) + "\n"
