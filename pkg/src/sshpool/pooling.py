"""Separated-subgraph hierarchical pooling and the baseline pooling operators.

One pooling layer: project node features and row-softmax them into a soft
cluster assignment, harden it to a one-hot matrix (detached from the
gradient tape), split the graph into one induced subgraph per cluster with
all cross-cluster edges dropped, run an unshared local convolution
Z_j = (A_j + I) X_j W_j inside each subgraph, then compress every subgraph
to a single coarsened node: features are the column sums of Z_j, adjacency
is hard^T A hard with the diagonal zeroed (inter-cluster edge counts).

Because the subgraphs share no edges, perturbing one node's features can
only move embeddings inside its own cluster; every other cluster's output
is bit-identical. That locality is the point of the construction and is
certified in :mod:`sshpool.diagnostics`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import (
    Tensor,
    add,
    concat_rows,
    eye,
    matmul,
    mean_rows,
    row_softmax,
    sum_rows,
    take_cols,
    take_rows,
    transpose,
)


@dataclass
class AssignmentPair:
    """Row-stochastic soft assignment and its hardened one-hot counterpart."""

    soft: Tensor
    hard: Tensor


@dataclass
class SubgraphSlice:
    """The induced subgraph of one cluster.

    ``node_ids`` are the original node indices assigned to this cluster, in
    ascending order; ``sub_adjacency`` keeps only edges internal to the
    cluster. ``mapping`` is the all-ones column that compresses the slice
    to one coarsened node.
    """

    cluster_id: int
    node_ids: tuple[int, ...]
    sub_adjacency: Tensor
    sub_features: Tensor
    mapping: Tensor

    @property
    def size(self) -> int:
        return len(self.node_ids)


@dataclass
class LayerTrace:
    """Everything one pooling layer produced, for inspection and tests."""

    assignment: AssignmentPair
    slices: list[SubgraphSlice]
    local_embeddings: list[Tensor]
    coarse_features: Tensor
    coarse_adjacency: Tensor
    edges_in: int
    edges_kept: int

    @property
    def edges_dropped(self) -> int:
        return self.edges_in - self.edges_kept

    @property
    def cluster_sizes(self) -> list[int]:
        return [s.size for s in self.slices]


@dataclass
class CoarseningTrace:
    layers: list[LayerTrace]

    def hard_assignments(self) -> list[Tensor]:
        return [entry.assignment.hard for entry in self.layers]

    def feature_sequence(self, x0: Tensor | None = None) -> list[np.ndarray]:
        """Node-embedding matrices layer by layer, optionally led by ``x0``."""
        seq = [] if x0 is None else [x0.data]
        seq.extend(entry.coarse_features.data for entry in self.layers)
        return seq


@dataclass
class PoolLayerParams:
    """Trainable tensors of one pooling layer.

    ``assign`` projects features to cluster logits; ``local[j]`` is the
    convolution weight owned by cluster j. Local weights are distinct
    tensors per (layer, cluster) and are never shared.
    """

    assign: Tensor
    local: list[Tensor]


def soft_assign(x: Tensor, w_assign: Tensor) -> Tensor:
    """Row-stochastic cluster membership: row_softmax(x @ w_assign)."""
    if w_assign.cols < 1:
        raise ContractError("soft_assign needs at least one cluster column")
    return row_softmax(matmul(x, w_assign))


def harden(soft: Tensor) -> Tensor:
    """One-hot per row at the row argmax, ties to the lowest column index.

    The result is a constant: gradients do not flow through the argmax.
    """
    winners = soft.data.argmax(axis=1)
    hard = np.zeros_like(soft.data)
    hard[np.arange(soft.rows), winners] = 1.0
    return Tensor(hard)


def extract_subgraphs(adjacency: Tensor, x: Tensor, hard: Tensor) -> list[SubgraphSlice]:
    """Split the graph into one induced subgraph per cluster.

    Slice j holds exactly the nodes with a 1 in column j, in ascending
    original order; cross-cluster edges are dropped. Clusters that received
    no nodes yield empty slices, which downstream ops accept.
    """
    if hard.rows != x.rows or adjacency.rows != x.rows:
        raise ShapeError(
            f"extract_subgraphs: adjacency {adjacency.shape}, features {x.shape}, "
            f"assignment {hard.shape} disagree on node count"
        )
    slices = []
    for j in range(hard.cols):
        ids = np.nonzero(hard.data[:, j] > 0.5)[0]
        sub_a = adjacency.data[np.ix_(ids, ids)]
        slices.append(
            SubgraphSlice(
                cluster_id=j,
                node_ids=tuple(int(i) for i in ids),
                sub_adjacency=Tensor(sub_a),
                sub_features=take_rows(x, ids),
                mapping=Tensor(np.ones((len(ids), 1))),
            )
        )
    return slices


def local_conv(slice_: SubgraphSlice, w_local: Tensor) -> Tensor:
    """Unshared local convolution Z = (A_sub + I) X_sub W.

    No degree normalisation and no activation; an empty slice yields a
    0 x d embedding.
    """
    n = slice_.size
    a_tilde = Tensor(slice_.sub_adjacency.data + np.eye(n))
    return matmul(matmul(a_tilde, slice_.sub_features), w_local)


def coarsen(
    slices: list[SubgraphSlice],
    local_embeddings: list[Tensor],
    hard: Tensor,
    adjacency: Tensor,
    keep_self_loops: bool = False,
) -> tuple[Tensor, Tensor]:
    """Compress each subgraph to one coarsened node.

    Row j of the coarsened features is the column sum of Z_j (an empty
    cluster contributes a zero row). The coarsened adjacency is
    hard^T A hard; its diagonal (intra-cluster edge mass) is zeroed unless
    ``keep_self_loops`` is set, since the next layer re-adds self-loops
    itself. Off-diagonal entries count inter-cluster edges.
    """
    if len(slices) != len(local_embeddings):
        raise ContractError(
            f"{len(slices)} slices but {len(local_embeddings)} local embeddings"
        )
    width = local_embeddings[0].cols if local_embeddings else 0
    rows = []
    for slice_, z in zip(slices, local_embeddings):
        if slice_.size == 0:
            rows.append(Tensor(np.zeros((1, width))))
        else:
            rows.append(sum_rows(z))
    x_next = concat_rows(rows)

    a_next = hard.data.T @ adjacency.data @ hard.data
    if not keep_self_loops:
        np.fill_diagonal(a_next, 0.0)
    return x_next, Tensor(a_next)


def sshpool_layer(
    adjacency: Tensor,
    x: Tensor,
    params: PoolLayerParams,
    clusters: int,
    keep_self_loops: bool = False,
    frozen_hard: Tensor | None = None,
) -> tuple[tuple[Tensor, Tensor], LayerTrace]:
    """One full pooling layer: assign, harden, split, convolve, coarsen.

    The effective cluster count is min(clusters, node count), so coarsened
    graphs never grow. ``frozen_hard`` substitutes a fixed assignment
    (used by gradient checks and locality probes).
    """
    if clusters < 1:
        raise ContractError(f"cluster count must be >= 1, got {clusters}")
    n = x.rows
    c_eff = min(clusters, n)
    w_assign = params.assign
    if c_eff < w_assign.cols:
        w_assign = take_cols(w_assign, range(c_eff))
    soft = soft_assign(x, w_assign)
    hard = frozen_hard if frozen_hard is not None else harden(soft)
    if hard.shape != (n, c_eff):
        raise ShapeError(f"hard assignment {hard.shape} does not match ({n}, {c_eff})")

    slices = extract_subgraphs(adjacency, x, hard)
    locals_ = [local_conv(s, params.local[s.cluster_id]) for s in slices]
    x_next, a_next = coarsen(slices, locals_, hard, adjacency, keep_self_loops)

    edges_in = int(adjacency.data.sum()) // 2
    edges_kept = sum(int(s.sub_adjacency.data.sum()) // 2 for s in slices)
    trace = LayerTrace(
        assignment=AssignmentPair(soft=soft, hard=hard),
        slices=slices,
        local_embeddings=locals_,
        coarse_features=x_next,
        coarse_adjacency=a_next,
        edges_in=edges_in,
        edges_kept=edges_kept,
    )
    return (a_next, x_next), trace


def sshpool_stack(
    adjacency: Tensor,
    x: Tensor,
    layers: list[PoolLayerParams],
    layer_sizes: tuple[int, ...],
    keep_self_loops: bool = False,
    frozen: list[Tensor] | None = None,
) -> tuple[Tensor, CoarseningTrace]:
    """Apply the pooling layer once per entry of ``layer_sizes``.

    Sizes must be strictly decreasing. Returns the final coarsened feature
    matrix together with the full per-layer trace.
    """
    if len(layers) != len(layer_sizes):
        raise ContractError(
            f"{len(layers)} layer params for {len(layer_sizes)} layer sizes"
        )
    if any(b >= a for a, b in zip(layer_sizes, layer_sizes[1:])):
        raise ContractError(f"layer sizes must strictly decrease, got {layer_sizes}")
    if frozen is not None and len(frozen) != len(layers):
        raise ContractError("frozen assignments must cover every layer")

    a_cur, x_cur = adjacency, x
    entries = []
    for depth, (params, size) in enumerate(zip(layers, layer_sizes)):
        frozen_hard = frozen[depth] if frozen is not None else None
        (a_cur, x_cur), entry = sshpool_layer(
            a_cur, x_cur, params, size, keep_self_loops, frozen_hard
        )
        entries.append(entry)
    return x_cur, CoarseningTrace(layers=entries)


def baseline_global_pool(x: Tensor, mode: str) -> Tensor:
    """Whole-graph readout: column ``sum`` or ``mean`` as a single row."""
    if mode == "sum":
        return sum_rows(x)
    if mode == "mean":
        return mean_rows(x)
    raise ContractError(f"global pool mode must be 'sum' or 'mean', got {mode!r}")


def baseline_diffpool_layer(
    adjacency: Tensor, x: Tensor, w_assign: Tensor, w_embed: Tensor
) -> tuple[Tensor, Tensor]:
    """Soft-assignment coarsening baseline.

    S = row_softmax(X W_a) stays soft; X_next = S^T (A + I) X W_e and
    A_next = S^T A S, both differentiable through S. Comparison baseline
    only; the hard path above is the method under study.
    """
    s = soft_assign(x, w_assign)
    # (A + I); A may itself sit on the tape when stacking layers.
    a_self = add(adjacency, eye(adjacency.rows))
    st = transpose(s)
    x_next = matmul(st, matmul(matmul(a_self, x), w_embed))
    a_next = matmul(matmul(st, adjacency), s)
    return a_next, x_next
