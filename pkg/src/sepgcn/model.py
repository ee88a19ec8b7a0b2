"""Forward computation: layer propagation over the bipartite graph,
interleaved with edge-pair context propagation and node updates, final
averaging, and dot-product scoring. Deliberately linear end to end.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, InputDataError, NumericalError
from .graph import BipartiteGraph, spmv
from .sep_graph import EdgeIndex, SepMatrix

CHECKPOINT_MAGIC = b"SEPCKPT1"


@dataclass
class ModelConfig:
    """Architecture and initialization knobs.

    alpha_user/beta_item weigh how much of a node's embedding survives the
    edge-context update (1.0 = update disabled). sep_update chooses whether
    that update runs after every propagation layer or only after the first.
    """

    dim: int = 64
    layers: int = 3
    alpha_user: float = 0.5
    beta_item: float = 0.5
    sep_enabled: bool = True
    sep_update: str = "every_layer"
    init_std: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        for name, w in (("alpha_user", self.alpha_user), ("beta_item", self.beta_item)):
            if not (0.0 <= w <= 1.0):
                raise ConfigError(f"{name} must lie in [0,1], got {w}")
        if self.init_std < 0:
            raise ConfigError(f"init_std must be >= 0, got {self.init_std}")
        if self.sep_update not in ("every_layer", "once"):
            raise ConfigError(f"unknown sep_update mode {self.sep_update!r}")

    @classmethod
    def from_gamma(cls, gamma: float, **kwargs) -> "ModelConfig":
        """Single-weight alias: gamma is the share taken from the edge context."""
        if not (0.0 <= gamma <= 1.0):
            raise ConfigError(f"gamma must lie in [0,1], got {gamma}")
        return cls(alpha_user=1.0 - gamma, beta_item=1.0 - gamma, **kwargs)


@dataclass
class EmbeddingState:
    """All tables produced by one forward pass."""

    e0: np.ndarray
    layers: list[np.ndarray]
    e_star: np.ndarray
    e_sep: np.ndarray | None = None


def init_embeddings(cfg: ModelConfig, n_nodes: int) -> np.ndarray:
    """Seeded normal(0, init_std^2) table of shape (n_nodes, dim)."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    return rng.normal(0.0, cfg.init_std, size=(n_nodes, cfg.dim))


def edge_embed(node_table: np.ndarray, index: EdgeIndex, n_users: int) -> np.ndarray:
    """Per-edge rows: the user's embedding concatenated with the item's."""
    return np.concatenate(
        [node_table[index.users], node_table[n_users + index.items]], axis=1
    )


def sep_propagate(edge_table: np.ndarray, sep: SepMatrix) -> np.ndarray:
    """One propagation step over the edge-pair graph: X_normalized @ table."""
    if edge_table.shape[0] != sep.n_edges:
        raise ConfigError(
            f"edge table has {edge_table.shape[0]} rows, matrix expects {sep.n_edges}"
        )
    return sep.to_csr() @ edge_table


class SepOperator:
    """Precompiled pieces of the edge-context update.

    Aggregation means run over *active* edges only — edges that actually
    carry at least one link in the matrix. Nodes whose incident edges are
    all isolated keep their embeddings, which is what lets an empty matrix
    degrade to the plain baseline exactly.
    """

    def __init__(
        self,
        sep: SepMatrix,
        index: EdgeIndex,
        n_users: int,
        n_items: int,
        alpha_user: float,
        beta_item: float,
        active: np.ndarray | None = None,
    ):
        if sep.normalization == "raw":
            raise ConfigError("normalize the edge-pair matrix before building the operator")
        n_edges = index.n_edges
        if sep.n_edges != n_edges:
            raise ConfigError(
                f"matrix is over {sep.n_edges} edges but the index holds {n_edges}"
            )
        self.n_users = n_users
        self.n_items = n_items
        self.alpha_user = alpha_user
        self.beta_item = beta_item
        self.index = index
        self.x = sep.to_csr()
        self.xt = self.x.T.tocsr()
        self.active = sep.active_edges() if active is None else np.asarray(active, bool)

        act = np.flatnonzero(self.active)
        au, ai = index.users[act], index.items[act]
        count_u = np.bincount(au, minlength=n_users).astype(np.float64)
        count_i = np.bincount(ai, minlength=n_items).astype(np.float64)
        with np.errstate(divide="ignore"):
            inv_u, inv_i = 1.0 / count_u, 1.0 / count_i
        inv_u[~np.isfinite(inv_u)] = 0.0
        inv_i[~np.isfinite(inv_i)] = 0.0
        # mean-aggregation maps: (node x edge), weight 1/count on active edges
        self.pu = sp.csr_matrix(
            (inv_u[au], (au, act)), shape=(n_users, n_edges)
        )
        self.pi = sp.csr_matrix(
            (inv_i[ai], (ai, act)), shape=(n_items, n_edges)
        )
        self.put = self.pu.T.tocsr()
        self.pit = self.pi.T.tocsr()
        # plain scatter maps for the backward pass (node x edge, ones everywhere)
        ones = np.ones(n_edges)
        self.gu = sp.csr_matrix((ones, (index.users, np.arange(n_edges))), shape=(n_users, n_edges))
        self.gi = sp.csr_matrix((ones, (index.items, np.arange(n_edges))), shape=(n_items, n_edges))
        # per-node retain weight: alpha/beta where the update applies, 1 elsewhere
        wu = np.where(count_u > 0, alpha_user, 1.0)
        wi = np.where(count_i > 0, beta_item, 1.0)
        self.node_weight = np.concatenate([wu, wi])

    def update(self, node_table: np.ndarray, propagated_edges: np.ndarray) -> np.ndarray:
        """Blend each live node with the mean of its active edges' segments."""
        d = node_table.shape[1]
        agg_u = self.pu @ propagated_edges[:, :d]
        agg_i = self.pi @ propagated_edges[:, d:]
        out = self.node_weight[:, None] * node_table
        out[: self.n_users] += (1.0 - self.alpha_user) * agg_u
        out[self.n_users :] += (1.0 - self.beta_item) * agg_i
        return out

    def update_adjoint(self, grad_out: np.ndarray, dim: int) -> np.ndarray:
        """Transpose of the full edge-context step (embed -> propagate -> update)."""
        n = self.n_users
        grad_edges = np.zeros((self.x.shape[0], 2 * dim))
        grad_edges[:, :dim] = self.put @ ((1.0 - self.alpha_user) * grad_out[:n])
        grad_edges[:, dim:] = self.pit @ ((1.0 - self.beta_item) * grad_out[n:])
        grad_s = self.xt @ grad_edges
        grad = self.node_weight[:, None] * grad_out
        grad[:n] += self.gu @ grad_s[:, :dim]
        grad[n:] += self.gi @ grad_s[:, dim:]
        return grad


def update_from_sep(
    node_table: np.ndarray,
    propagated_edges: np.ndarray,
    index: EdgeIndex,
    n_users: int,
    n_items: int,
    alpha_user: float,
    beta_item: float,
    sep: SepMatrix | None = None,
) -> np.ndarray:
    """Standalone edge-context update of a node table.

    When `sep` is given, its live edges define which edges aggregate;
    without it every indexed edge counts.
    """
    if propagated_edges.shape[0] != index.n_edges:
        raise ConfigError(
            f"edge table has {propagated_edges.shape[0]} rows, index holds {index.n_edges}"
        )
    if sep is None:
        fake = SepMatrix(
            n_edges=index.n_edges,
            rows=np.zeros(0, np.int64),
            cols=np.zeros(0, np.int64),
            values=np.zeros(0),
            normalization="sym_degree",
        )
        op = SepOperator(
            fake, index, n_users, n_items, alpha_user, beta_item,
            active=np.ones(index.n_edges, dtype=bool),
        )
        # bypass the matrix product: caller already supplies propagated rows
        return op.update(node_table, propagated_edges)
    op = SepOperator(sep, index, n_users, n_items, alpha_user, beta_item)
    return op.update(node_table, propagated_edges)


def _check_finite(table: np.ndarray, step: str) -> None:
    if not np.isfinite(table).all():
        raise NumericalError(f"non-finite values after {step}")


def build_operator(
    cfg: ModelConfig, graph: BipartiteGraph, sep: SepMatrix | None, index: EdgeIndex | None
) -> SepOperator | None:
    """Operator for the configured variant, or None when the update is off."""
    if not cfg.sep_enabled:
        return None
    if sep is None or index is None:
        raise ConfigError("sep_enabled requires an edge-pair matrix and an edge index")
    return SepOperator(
        sep, index, graph.n_users, graph.n_items, cfg.alpha_user, cfg.beta_item
    )


def forward(
    cfg: ModelConfig,
    graph: BipartiteGraph,
    sep: SepMatrix | None,
    index: EdgeIndex | None,
    e0: np.ndarray,
    operator: SepOperator | None = None,
) -> EmbeddingState:
    """Full forward pass; returns every layer table plus their average.

    Layer k propagates over the bipartite graph; with the edge update
    enabled, edge rows are rebuilt from the current layer, propagated over
    the edge-pair graph, and blended back into the nodes. The final table
    is the arithmetic mean of layers 0..K.
    """
    cfg.validate()
    if e0.shape != (graph.n_nodes, cfg.dim):
        raise ConfigError(
            f"embedding table must be {(graph.n_nodes, cfg.dim)}, got {e0.shape}"
        )
    _check_finite(e0, "initialization")
    if operator is None:
        operator = build_operator(cfg, graph, sep, index)

    tables = [e0]
    current = e0
    e_sep = None
    for k in range(1, cfg.layers + 1):
        current = spmv(graph, current)
        _check_finite(current, f"propagation at layer {k}")
        if operator is not None and (cfg.sep_update == "every_layer" or k == 1):
            edge_rows = edge_embed(current, operator.index, graph.n_users)
            e_sep = operator.x @ edge_rows
            current = operator.update(current, e_sep)
            _check_finite(current, f"edge update at layer {k}")
        tables.append(current)

    e_star = sum(tables[1:], tables[0].copy()) / (cfg.layers + 1)
    return EmbeddingState(e0=e0, layers=tables[1:], e_star=e_star, e_sep=e_sep)


def score(e_star: np.ndarray, n_users: int, user: int, item: int) -> float:
    """Preference score: dot product of the user's and item's final rows."""
    n_nodes = e_star.shape[0]
    if not (0 <= user < n_users and 0 <= item < n_nodes - n_users):
        raise ConfigError(
            f"user {user} / item {item} out of range for {n_users} users, "
            f"{n_nodes - n_users} items"
        )
    return float(e_star[user] @ e_star[n_users + item])


def save_checkpoint(e0: np.ndarray, config_echo: dict, path: str | Path) -> None:
    """Versioned binary checkpoint: magic, JSON config echo, raw table bytes."""
    path = Path(path)
    meta = dict(config_echo)
    meta["n_nodes"], meta["dim"] = int(e0.shape[0]), int(e0.shape[1])
    with path.open("wb") as f:
        f.write(CHECKPOINT_MAGIC + b"\n")
        f.write(json.dumps(meta, sort_keys=True).encode("utf-8") + b"\n")
        f.write(np.ascontiguousarray(e0, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    if not path.exists():
        raise InputDataError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    head, _, rest = blob.partition(b"\n")
    if head != CHECKPOINT_MAGIC:
        raise InputDataError(f"{path}: bad checkpoint magic {head[:16]!r}")
    meta_line, _, payload = rest.partition(b"\n")
    meta = json.loads(meta_line)
    n_nodes, dim = meta["n_nodes"], meta["dim"]
    expected = n_nodes * dim * 8
    if len(payload) != expected:
        raise InputDataError(
            f"{path}: payload holds {len(payload)} bytes, header promises {expected}"
        )
    e0 = np.frombuffer(payload, dtype="<f8").reshape(n_nodes, dim).copy()
    return e0, meta
