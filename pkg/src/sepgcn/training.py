"""Pairwise-ranking training of the initial embedding table.

The forward pass is a fixed linear map of E0, so gradients are exact
reverse-mode adjoints: transpose propagation, transpose edge-context
update, fan-out of the final mean — no autodiff framework involved.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ConfigError, InputDataError, NumericalError
from .graph import BipartiteGraph, spmv
from .model import ModelConfig, SepOperator, build_operator, forward, init_embeddings

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 0.001
    l2_lambda: float = 1e-5
    epochs_max: int = 100
    batch_size: int = 2048
    neg_per_pos: int = 1
    eval_every: int = 5  # epochs between evaluations; 0 disables them
    early_stop_patience: int = 10  # evaluations without Recall@20 improvement
    optimizer: str = "adam"
    seed: int = 0

    def validate(self) -> None:
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.l2_lambda < 0:
            raise ConfigError(f"l2_lambda must be >= 0, got {self.l2_lambda}")
        if self.epochs_max < 0:
            raise ConfigError(f"epochs_max must be >= 0, got {self.epochs_max}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.neg_per_pos < 1:
            raise ConfigError(f"neg_per_pos must be >= 1, got {self.neg_per_pos}")
        if self.eval_every < 0:
            raise ConfigError(f"eval_every must be >= 0, got {self.eval_every}")
        if self.early_stop_patience < 1:
            raise ConfigError(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TripletBatch:
    users: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __len__(self) -> int:
        return len(self.users)


class TripletSampler:
    """Uniform sampling over train interactions with rejection-sampled negatives."""

    def __init__(self, dataset):
        train = dataset.train_interactions()
        if not train:
            raise InputDataError("no train interactions to sample from")
        self.n_items = dataset.n_items
        self.item_sets: dict[int, set[int]] = {}
        for it in train:
            self.item_sets.setdefault(it.user, set()).add(it.item)
        saturated = {u for u, items in self.item_sets.items() if len(items) == self.n_items}
        if saturated:
            logger.warning(
                "skipping %d user(s) who interacted with every item; no negatives exist",
                len(saturated),
            )
        kept = [it for it in train if it.user not in saturated]
        if not kept:
            raise InputDataError("every user has interacted with every item")
        self.users = np.fromiter((it.user for it in kept), np.int64, len(kept))
        self.positives = np.fromiter((it.item for it in kept), np.int64, len(kept))

    def sample(self, batch_size: int, rng: np.random.Generator, neg_per_pos: int = 1) -> TripletBatch:
        idx = rng.integers(0, len(self.users), size=batch_size)
        users = np.repeat(self.users[idx], neg_per_pos)
        positives = np.repeat(self.positives[idx], neg_per_pos)
        negatives = rng.integers(0, self.n_items, size=len(users))
        pending = np.flatnonzero(
            [int(n) in self.item_sets[int(u)] for u, n in zip(users, negatives)]
        )
        while len(pending):
            negatives[pending] = rng.integers(0, self.n_items, size=len(pending))
            pending = pending[
                [int(negatives[k]) in self.item_sets[int(users[k])] for k in pending]
            ]
        return TripletBatch(users, positives, negatives)


def sample_triplets(dataset, batch_size: int, rng: np.random.Generator, neg_per_pos: int = 1) -> TripletBatch:
    """One-shot convenience wrapper around TripletSampler."""
    return TripletSampler(dataset).sample(batch_size, rng, neg_per_pos)


def bpr_loss(scores_pos, scores_neg, e0: np.ndarray, l2_lambda: float) -> float:
    """Sum of -ln logistic(pos - neg) over triples, plus the L2 penalty.

    The logistic log-loss is evaluated as softplus(neg - pos) via logaddexp,
    which stays finite for any finite scores.
    """
    scores_pos = np.asarray(scores_pos, dtype=np.float64)
    scores_neg = np.asarray(scores_neg, dtype=np.float64)
    if scores_pos.shape != scores_neg.shape:
        raise ConfigError("positive and negative score lists must have equal length")
    rank_term = np.logaddexp(0.0, scores_neg - scores_pos).sum()
    return float(rank_term + l2_lambda * np.sum(e0 * e0))


class SgdOptimizer:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, table: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return table - self.lr * grad


class AdamOptimizer:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None
        self.t = 0

    def step(self, table: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(table)
            self.v = np.zeros_like(table)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return table - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return AdamOptimizer(cfg.lr)
    if cfg.optimizer == "sgd":
        return SgdOptimizer(cfg.lr)
    raise ConfigError(f"unknown optimizer {cfg.optimizer!r}")


def _check_finite(arr: np.ndarray, stage: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericalError(f"non-finite gradient at {stage}")


def ranking_grad_estar(e_star: np.ndarray, n_users: int, batch: TripletBatch) -> tuple[np.ndarray, float]:
    """Gradient of the summed ranking loss with respect to the final table.

    Returns (gradient, loss_rank_term). Accumulation uses sequential
    scatter-adds, so repeated indices inside a batch combine deterministically.
    """
    su = e_star[batch.users]
    sp = e_star[n_users + batch.positives]
    sq = e_star[n_users + batch.negatives]
    diff = sp - sq
    with np.errstate(over="ignore", invalid="ignore"):
        s = np.einsum("ij,ij->i", su, diff)
        loss = float(np.logaddexp(0.0, -s).sum())
        g_s = expit(s) - 1.0
        grad = np.zeros_like(e_star)
        np.add.at(grad, batch.users, g_s[:, None] * diff)
        np.add.at(grad, n_users + batch.positives, g_s[:, None] * su)
        np.add.at(grad, n_users + batch.negatives, -(g_s[:, None] * su))
    _check_finite(grad, "the ranking-loss layer")
    return grad, loss


def backward(
    grad_estar: np.ndarray,
    model_cfg: ModelConfig,
    graph: BipartiteGraph,
    operator: SepOperator | None,
) -> np.ndarray:
    """Pull a gradient at the averaged table back to the initial table.

    Walks the layers in reverse: each layer contributes its share of the
    mean directly, then passes through the transposed edge update and the
    (symmetric) transposed propagation.
    """
    share = grad_estar / (model_cfg.layers + 1)
    grad = share.copy()
    for k in range(model_cfg.layers, 0, -1):
        if operator is not None and (model_cfg.sep_update == "every_layer" or k == 1):
            grad = operator.update_adjoint(grad, model_cfg.dim)
            _check_finite(grad, f"the edge-update adjoint of layer {k}")
        grad = spmv(graph, grad)
        _check_finite(grad, f"the propagation adjoint of layer {k}")
        grad += share
    return grad


def loss_gradient(
    e0: np.ndarray,
    batch: TripletBatch,
    model_cfg: ModelConfig,
    graph: BipartiteGraph,
    operator: SepOperator | None,
    l2_lambda: float,
) -> tuple[np.ndarray, float]:
    """Exact gradient of the full objective at e0, plus the loss value."""
    state = forward(model_cfg, graph, None, None, e0, operator=operator)
    g_star, rank_loss = ranking_grad_estar(state.e_star, graph.n_users, batch)
    grad = backward(g_star, model_cfg, graph, operator)
    grad += (2.0 * l2_lambda) * e0
    loss = rank_loss + l2_lambda * float(np.sum(e0 * e0))
    return grad, loss


def grad_step(
    e0: np.ndarray,
    batch: TripletBatch,
    model_cfg: ModelConfig,
    graph: BipartiteGraph,
    operator: SepOperator | None,
    train_cfg: TrainConfig,
    optimizer,
) -> tuple[np.ndarray, float]:
    """One optimizer update from one triplet batch; returns (new table, loss)."""
    grad, loss = loss_gradient(e0, batch, model_cfg, graph, operator, train_cfg.l2_lambda)
    return optimizer.step(e0, grad), loss


@dataclass
class TrainResult:
    e0: np.ndarray
    best_recall: float
    best_epoch: int
    epochs_run: int
    log_rows: list[tuple] = field(default_factory=list)
    diverged: bool = False
    divergence_reason: str | None = None


def write_training_log(rows, path: str | Path) -> None:
    """Tab-separated: epoch, loss, recall@20, ndcg@20, wallclock seconds."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as f:
        f.write("epoch\tloss\trecall@20\tndcg@20\twallclock_s\n")
        for epoch, loss, recall, ndcg, wallclock in rows:
            f.write(f"{epoch}\t{loss!r}\t{recall!r}\t{ndcg!r}\t{wallclock:.3f}\n")


def train(
    dataset,
    graph: BipartiteGraph,
    sep,
    index,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    eval_hook,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Optimize E0 with periodic evaluation and best-checkpoint tracking.

    eval_hook receives the averaged table and must return a mapping with at
    least "recall@20" (used for model selection) and "ndcg@20" (logged).
    Divergence aborts the loop and retains the best table seen so far.
    """
    model_cfg.validate()
    train_cfg.validate()
    operator = build_operator(model_cfg, graph, sep, index)
    e0 = init_embeddings(model_cfg, graph.n_nodes)
    optimizer = make_optimizer(train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    sampler = TripletSampler(dataset)
    batches_per_epoch = max(1, math.ceil(len(sampler.users) / train_cfg.batch_size))

    rows: list[tuple] = []
    best_e0: np.ndarray | None = None
    best_recall = -math.inf
    best_epoch = 0
    stale_evals = 0
    diverged = False
    reason: str | None = None
    epoch = 0
    t0 = time.perf_counter()

    for epoch in range(1, train_cfg.epochs_max + 1):
        epoch_loss = 0.0
        try:
            for _ in range(batches_per_epoch):
                batch = sampler.sample(train_cfg.batch_size, rng, train_cfg.neg_per_pos)
                e0, loss = grad_step(e0, batch, model_cfg, graph, operator, train_cfg, optimizer)
                epoch_loss += loss
        except NumericalError as exc:
            diverged, reason = True, str(exc)
            break
        if not math.isfinite(epoch_loss):
            diverged, reason = True, "non-finite loss"
            break
        if train_cfg.eval_every and epoch % train_cfg.eval_every == 0:
            state = forward(model_cfg, graph, None, None, e0, operator=operator)
            metrics = eval_hook(state.e_star)
            recall = float(metrics["recall@20"])
            ndcg = float(metrics.get("ndcg@20", math.nan))
            rows.append((epoch, epoch_loss, recall, ndcg, time.perf_counter() - t0))
            if recall > best_recall:
                best_recall, best_epoch, stale_evals = recall, epoch, 0
                best_e0 = e0.copy()
            else:
                stale_evals += 1
                if stale_evals >= train_cfg.early_stop_patience:
                    break

    result = TrainResult(
        e0=best_e0 if best_e0 is not None else e0,
        best_recall=best_recall,
        best_epoch=best_epoch,
        epochs_run=epoch,
        log_rows=rows,
        diverged=diverged,
        divergence_reason=reason,
    )
    if log_path is not None:
        write_training_log(rows, log_path)
    if diverged:
        logger.warning("training aborted (%s); keeping the last good table", reason)
    return result
