"""Bipartite user-item adjacency and its symmetric degree normalization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, InputDataError


@dataclass
class BipartiteGraph:
    """Normalized adjacency over n_users + n_items nodes.

    Users occupy rows 0..n-1 and items rows n..n+m-1, so the matrix has the
    block layout [[0, R], [R^T, L]] with L zero unless an item-item block
    was supplied. `a_norm` is D^{-1/2} A D^{-1/2}; isolated nodes keep
    all-zero rows and columns.
    """

    n_users: int
    n_items: int
    a_norm: sp.csr_matrix
    degrees: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items


def interaction_matrix(dataset) -> sp.csr_matrix:
    """Binary user-by-item matrix over the train split."""
    train = dataset.train_interactions()
    if not train:
        raise InputDataError("dataset has no train interactions")
    rows = np.fromiter((it.user for it in train), dtype=np.int64, count=len(train))
    cols = np.fromiter((it.item for it in train), dtype=np.int64, count=len(train))
    mat = sp.coo_matrix(
        (np.ones(len(train)), (rows, cols)), shape=(dataset.n_users, dataset.n_items)
    ).tocsr()
    mat.data[:] = 1.0  # collapse any duplicate edges to binary
    return mat


def sym_normalize(a: sp.spmatrix) -> tuple[sp.csr_matrix, np.ndarray]:
    """D^{-1/2} A D^{-1/2} with zero-degree rows left untouched (all zero)."""
    a = a.tocsr()
    deg = np.asarray(a.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        inv_sqrt = 1.0 / np.sqrt(deg)
    inv_sqrt[~np.isfinite(inv_sqrt)] = 0.0
    d = sp.diags(inv_sqrt)
    return (d @ a @ d).tocsr(), deg


def build_adjacency(dataset, item_item_block: sp.spmatrix | None = None) -> BipartiteGraph:
    """Assemble and normalize the (n+m)-node adjacency from train edges.

    `item_item_block` optionally fills the item-item corner (for the
    spatially augmented baseline); it must be square, symmetric, and hold
    no negative weights. Degrees count whatever ends up in the assembled
    matrix, train edges plus block weights.
    """
    r = interaction_matrix(dataset)
    n, m = r.shape
    if item_item_block is not None:
        block = item_item_block.tocsr()
        if block.shape != (m, m):
            raise ConfigError(
                f"item-item block must be {m}x{m} to match the item count, got {block.shape}"
            )
        diff = block - block.T
        if diff.nnz and abs(diff).max() > 1e-12:
            raise ConfigError("item-item block must be symmetric")
        if block.nnz and block.data.min() < 0:
            raise ConfigError("item-item block must be non-negative")
    else:
        block = None
    a = sp.bmat([[None, r], [r.T, block]], format="csr")
    a_norm, deg = sym_normalize(a)
    return BipartiteGraph(n_users=n, n_items=m, a_norm=a_norm, degrees=deg)


def spmv(graph: BipartiteGraph, embeddings: np.ndarray) -> np.ndarray:
    """One propagation step: the normalized adjacency times the embedding matrix.

    Single-threaded CSR row accumulation, so the summation order (and hence
    the result) is identical across runs.
    """
    if embeddings.shape[0] != graph.n_nodes:
        raise ConfigError(
            f"embedding matrix has {embeddings.shape[0]} rows, graph has {graph.n_nodes} nodes"
        )
    return graph.a_norm @ embeddings
