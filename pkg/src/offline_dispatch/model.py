"""Graph encoder and action-scoring heads.

Two GIN layers run over the simplified disjunctive graph (job-precedence
edges plus the machine orders fixed so far; messages flow along edge
direction, summed over in-neighbors, eps = 0). Each layer's update MLP is
[in -> 64 -> 64 -> 64] with ReLU between layers. The graph embedding is
the mean of the embeddings of the currently available operations (one per
unmasked job). A head scores a job from concat(candidate embedding, graph
embedding) through [128 -> 32 -> K]; quantile heads use K = number of
quantiles, policy / plain value heads use K = 1. Dropout (train mode
only) sits on the hidden layer of the Q heads.

Checkpoint format: one header line, one JSON manifest line (architecture
plus parameter names and shapes), then raw little-endian float32 blobs in
manifest order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .env import Observation
from .errors import CompatibilityError, ShapeError
from .rng import SplitMix64

CHECKPOINT_HEADER = "offline-dispatch-checkpoint v1"

EMBED_DIM = 64
HEAD_INPUT_DIM = 2 * EMBED_DIM
HEAD_HIDDEN_DIM = 32


@dataclass(frozen=True)
class ModelConfig:
    method: str = "mqrdqn"  # mqrdqn | dmsac | bc
    node_feature_dim: int = 2
    embed_dim: int = EMBED_DIM
    gin_layers: int = 2
    head_hidden: int = HEAD_HIDDEN_DIM
    n_quantiles: int = 32
    dropout: float = 0.4
    feature_scale: float = 1000.0

    def head_specs(self) -> list[tuple[str, int, bool]]:
        """(name, output width, has dropout) for every head of this method."""
        if self.method == "mqrdqn":
            return [("q", self.n_quantiles, True)]
        if self.method == "dmsac":
            return [("q1", 1, True), ("q2", 1, True), ("policy", 1, False)]
        if self.method == "bc":
            return [("policy", 1, False)]
        raise ValueError(f"unknown method {self.method!r}")


class ModelParams:
    """Named parameter tensors plus the architecture they belong to."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params.keys())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def copy(self, requires_grad: bool | None = None) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: ad.Tensor(
                p.data.copy(),
                requires_grad=p.requires_grad if requires_grad is None else requires_grad,
            ) for k, p in self.params.items()},
        )

    def copy_from(self, other: "ModelParams") -> None:
        if other.names() != self.names() or other.config != self.config:
            raise CompatibilityError("parameter manifests do not match")
        for k, p in self.params.items():
            np.copyto(p.data, other.params[k].data)


def _kaiming_uniform(rng: SplitMix64, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return ((rng.random_array((fan_in, fan_out)) * 2.0 - 1.0) * bound).astype(dtype)


def init_params(config: ModelConfig, rng: SplitMix64, dtype=None) -> ModelParams:
    dtype = dtype or ad.get_default_dtype()
    params: dict[str, Tensor] = {}

    def linear(name: str, n_in: int, n_out: int) -> None:
        params[f"{name}.w"] = ad.Tensor(
            _kaiming_uniform(rng, n_in, n_out, dtype), requires_grad=True
        )
        params[f"{name}.b"] = ad.Tensor(
            np.zeros(n_out, dtype=dtype), requires_grad=True
        )

    d = config.embed_dim
    for layer in range(config.gin_layers):
        n_in = config.node_feature_dim if layer == 0 else d
        linear(f"gin{layer}.l0", n_in, d)
        linear(f"gin{layer}.l1", d, d)
        linear(f"gin{layer}.l2", d, d)
    for head, width, _dropout in config.head_specs():
        linear(f"{head}.l0", 2 * d, config.head_hidden)
        linear(f"{head}.l1", config.head_hidden, width)
    if config.method == "dmsac":
        params["log_alpha"] = ad.Tensor(np.zeros((), dtype=dtype), requires_grad=True)
    return ModelParams(config, params)


# ---------------------------------------------------------------------------
# graph batching
# ---------------------------------------------------------------------------


class GraphBatch:
    """Block-diagonal stack of observations.

    candidates/mask are (B, J) with node ids offset into the stacked node
    array; graph_ids maps each (graph, job) slot to its graph index.
    """

    __slots__ = (
        "features", "edge_src", "edge_dst", "candidates", "mask",
        "graph_ids", "num_nodes", "num_graphs", "num_jobs", "adj", "adj_t",
    )

    def __init__(self, features, edge_src, edge_dst, candidates, mask,
                 num_nodes, num_graphs, num_jobs):
        self.features = features
        self.edge_src = edge_src
        self.edge_dst = edge_dst
        self.candidates = candidates
        self.mask = mask
        self.num_nodes = num_nodes
        self.num_graphs = num_graphs
        self.num_jobs = num_jobs
        self.graph_ids = np.repeat(np.arange(num_graphs), num_jobs)
        # in-neighbor aggregation as a sparse matmul: adj[v, u] = #edges u -> v
        if edge_src.size:
            ones = np.ones(edge_src.size, dtype=features.dtype)
            self.adj = sp.csr_matrix(
                (ones, (edge_dst, edge_src)), shape=(num_nodes, num_nodes)
            )
            self.adj_t = self.adj.T.tocsr()
        else:
            self.adj = None
            self.adj_t = None


def build_batch(observations: list[Observation], dtype=None) -> GraphBatch:
    dtype = dtype or ad.get_default_dtype()
    num_jobs = max(obs.mask.shape[0] for obs in observations)
    feats, srcs, dsts, cands, masks = [], [], [], [], []
    offset = 0
    for obs in observations:
        feats.append(obs.node_features)
        edges = obs.all_edges()
        srcs.append(edges[:, 0].astype(np.int64) + offset)
        dsts.append(edges[:, 1].astype(np.int64) + offset)
        j = obs.mask.shape[0]
        cand = np.zeros(num_jobs, dtype=np.int64)
        m = np.zeros(num_jobs, dtype=bool)
        cand[:j] = obs.candidates.astype(np.int64) + offset
        cand[:j][~obs.mask] = offset  # point masked slots at a real row
        m[:j] = obs.mask
        cands.append(cand)
        masks.append(m)
        offset += obs.num_nodes
    return GraphBatch(
        features=np.concatenate(feats, axis=0).astype(dtype),
        edge_src=np.concatenate(srcs),
        edge_dst=np.concatenate(dsts),
        candidates=np.stack(cands),
        mask=np.stack(masks),
        num_nodes=offset,
        num_graphs=len(observations),
        num_jobs=num_jobs,
    )


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _linear(params: ModelParams, name: str, x: Tensor) -> Tensor:
    return ad.affine(x, params[f"{name}.w"], params[f"{name}.b"])


def _gin_layer(params: ModelParams, layer: int, h: Tensor, batch: GraphBatch) -> Tensor:
    if batch.adj is not None:
        h = h + ad.spmm(batch.adj, batch.adj_t, h)
    x = ad.relu(_linear(params, f"gin{layer}.l0", h))
    x = ad.relu(_linear(params, f"gin{layer}.l1", x))
    return _linear(params, f"gin{layer}.l2", x)


def encode(params: ModelParams, batch: GraphBatch) -> tuple[Tensor, Tensor]:
    """Node embeddings (total_nodes, d) and graph embeddings (B, d)."""
    if batch.features.shape[1] != params.config.node_feature_dim:
        raise ShapeError(
            f"expected {params.config.node_feature_dim} node features, "
            f"got {batch.features.shape[1]}"
        )
    h = ad.Tensor(batch.features)
    for layer in range(params.config.gin_layers):
        h = _gin_layer(params, layer, h, batch)

    cand_emb = ad.gather_rows(h, batch.candidates.reshape(-1))
    weights = batch.mask.reshape(-1, 1).astype(h.data.dtype)
    weighted = ad.mul(cand_emb, ad.Tensor(weights))
    sums = ad.sum_segments(weighted, batch.graph_ids, batch.num_graphs)
    counts = np.maximum(batch.mask.sum(axis=1, keepdims=True), 1)
    h_graph = ad.mul(sums, ad.Tensor((1.0 / counts).astype(h.data.dtype)))
    return h, h_graph


def score_actions(
    params: ModelParams,
    head: str,
    node_emb: Tensor,
    graph_emb: Tensor,
    batch: GraphBatch,
    train: bool = False,
    rng: SplitMix64 | None = None,
) -> Tensor:
    """Per-(graph, job) scores, shape (B*J, K); mask masked slots downstream."""
    cand_emb = ad.gather_rows(node_emb, batch.candidates.reshape(-1))
    graph_rep = ad.gather_rows(graph_emb, batch.graph_ids)
    x = ad.concat([cand_emb, graph_rep], axis=1)
    hidden = ad.relu(_linear(params, f"{head}.l0", x))
    has_dropout = dict((n, dp) for n, _w, dp in params.config.head_specs())[head]
    if has_dropout and train and params.config.dropout > 0:
        if rng is None:
            raise ValueError("training-mode scoring needs an rng for dropout")
        hidden = ad.dropout(hidden, params.config.dropout, True, rng)
    return _linear(params, f"{head}.l1", hidden)


def scores_to_job_values(raw: Tensor, batch: GraphBatch) -> Tensor:
    """(B*J, K) head output -> (B, J) scalar scores; quantiles are averaged."""
    if raw.shape[1] == 1:
        return ad.reshape(raw, (batch.num_graphs, batch.num_jobs))
    q = ad.mean_axis(raw, axis=1)
    return ad.reshape(q, (batch.num_graphs, batch.num_jobs))


def job_scores(
    params: ModelParams,
    head: str,
    batch: GraphBatch,
    train: bool = False,
    rng: SplitMix64 | None = None,
) -> Tensor:
    """Scalar score per (graph, job): (B, J). Quantile heads are averaged."""
    node_emb, graph_emb = encode(params, batch)
    raw = score_actions(params, head, node_emb, graph_emb, batch, train, rng)
    return scores_to_job_values(raw, batch)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(params: ModelParams, path) -> None:
    manifest = {
        "config": asdict(params.config),
        "params": [
            {"name": k, "shape": list(p.shape)} for k, p in params.params.items()
        ],
    }
    with open(path, "wb") as f:
        f.write(CHECKPOINT_HEADER.encode() + b"\n")
        f.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        for p in params.params.values():
            f.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> ModelParams:
    with open(path, "rb") as f:
        blob = f.read()
    try:
        header_end = blob.index(b"\n")
        manifest_end = blob.index(b"\n", header_end + 1)
    except ValueError:
        raise CompatibilityError("truncated checkpoint") from None
    if blob[:header_end].decode() != CHECKPOINT_HEADER:
        raise CompatibilityError("not a checkpoint file (bad header)")
    manifest = json.loads(blob[header_end + 1:manifest_end].decode())
    config = ModelConfig(**manifest["config"])
    if expected_config is not None and config != expected_config:
        raise CompatibilityError(
            f"checkpoint architecture {config} != expected {expected_config}"
        )

    params: dict[str, Tensor] = {}
    offset = manifest_end + 1
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(blob):
            raise CompatibilityError(f"checkpoint blob too short at {entry['name']}")
        arr = np.frombuffer(blob[offset:offset + nbytes], dtype="<f4").reshape(shape)
        params[entry["name"]] = ad.Tensor(
            arr.astype(ad.get_default_dtype()), requires_grad=True
        )
        offset += nbytes
    if offset != len(blob):
        raise CompatibilityError("trailing bytes after last parameter blob")

    loaded = ModelParams(config, params)
    expected_names = init_params(config, SplitMix64(0)).names()
    if loaded.names() != expected_names:
        raise CompatibilityError("parameter names do not match the architecture")
    return loaded
