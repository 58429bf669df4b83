"""Adaptive Top-K pooling, delta-distribute unpooling and masked fields."""
import csv
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import ConfigError, NumericError, UsageError
from .graph import Graph, sort_edges

P_NORM_MIN = 1e-12


@dataclass(frozen=True)
class ReductionPlan:
    """Per-level local reduction factors; ``L = len(factors)``."""

    factors: tuple = (16,)

    def __post_init__(self):
        f = tuple(int(x) for x in self.factors)
        object.__setattr__(self, "factors", f)
        if any(x < 1 for x in f):
            raise ConfigError(f"reduction factors must be >= 1, got {f}")

    @property
    def levels(self):
        return len(self.factors)

    @property
    def global_factor(self):
        return int(np.prod(self.factors)) if self.factors else 1

    def level_sizes(self, n0):
        """Node counts N_0..N_L under the floor rule (each at least 1)."""
        sizes = [int(n0)]
        for rf in self.factors:
            sizes.append(keep_count(sizes[-1], rf))
        return sizes


def keep_count(n, rf):
    return max(1, int(n) // int(rf))


@dataclass(frozen=True, eq=False)
class TopKResult:
    """Outcome of one pooling step.

    ``indices`` are sorted node ids into ``parent``; ``edge_index`` lists the
    parent edges surviving in the induced subgraph (synthesised 2-hop edges,
    if any, come after them in ``pooled`` and have no parent edge).
    """

    indices: np.ndarray
    edge_index: np.ndarray
    pooled: Graph
    y: object
    parent: Graph

    @property
    def k(self):
        return len(self.indices)


def select_topk(y, batch, k_per_graph):
    """Indices of the ``k`` largest scores per graph, ties to the lower node id,
    returned in ascending order."""
    y = np.asarray(y, dtype=np.float64).ravel()
    batch = np.asarray(batch, dtype=np.int64)
    idx = np.arange(len(y))
    order = np.lexsort((idx, -y, batch))
    gb = batch[order]
    starts = np.searchsorted(gb, gb, side="left")
    rank = np.arange(len(y)) - starts
    chosen = order[rank < np.asarray(k_per_graph)[gb]]
    return np.sort(chosen)


def induced_subgraph(graph, indices):
    """Edges with both ends in ``indices``, renumbered; keeps (receiver, sender) order."""
    new_id = np.full(graph.n_nodes, -1, dtype=np.int64)
    new_id[indices] = np.arange(len(indices))
    s, r = new_id[graph.senders], new_id[graph.receivers]
    keep = np.nonzero((s >= 0) & (r >= 0))[0]
    return s[keep], r[keep], keep


def _two_hop_edges(graph, indices, s, r):
    """Edges between selected nodes two hops apart, for selected nodes that
    would otherwise have no incoming edge."""
    k = len(indices)
    isolated = np.setdiff1d(np.arange(k), r)
    if len(isolated) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    new_id = np.full(graph.n_nodes, -1, dtype=np.int64)
    new_id[indices] = np.arange(k)
    rp = graph.row_ptr
    add_s, add_r = [], []
    for i in isolated:
        node = indices[i]
        mids = graph.senders[rp[node]:rp[node + 1]]
        for m in mids:
            for j in graph.senders[rp[m]:rp[m + 1]]:
                jj = new_id[j]
                if jj >= 0 and jj != i:
                    add_s += [jj, i]
                    add_r += [i, jj]
    return np.asarray(add_s, np.int64), np.asarray(add_r, np.int64)


def topk_pool(graph, p, k=None, rf=None, augment=False):
    """Keep the top-scoring nodes of each member graph.

    Scores are ``y = V p / |p|``. Kept node features are gated by
    ``sigmoid(y)`` so the projection stays trainable. Give either an explicit
    ``k`` (applied to every member graph) or a reduction factor ``rf``.
    """
    v = ag.as_tensor(graph.x)
    p = ag.as_tensor(p)
    pn = ag.norm(p)
    if float(pn.data) < P_NORM_MIN:
        raise NumericError(f"Top-K projection vector has vanishing norm {float(pn.data):.3e}")
    counts = np.bincount(graph.batch, minlength=graph.n_graphs)
    if k is not None:
        if k < 1 or k > counts.min():
            raise UsageError(f"K={k} outside [1, {counts.min()}]")
        k_per_graph = np.full(graph.n_graphs, int(k))
    elif rf is not None:
        k_per_graph = np.array([keep_count(c, rf) for c in counts])
    else:
        raise UsageError("topk_pool needs k or rf")
    if p.ndim != 2 or p.shape != (v.shape[1], 1):
        raise UsageError(f"projection must have shape ({v.shape[1]}, 1), got {p.shape}")
    y = ag.div(ag.matmul(v, p), pn)
    idx = select_topk(y.data, graph.batch, k_per_graph)

    gate = ag.sigmoid(ag.gather_rows(y, idx))
    x_new = ag.gather_rows(v, idx) * gate
    s, r, eidx = induced_subgraph(graph, idx)
    e_new = ag.gather_rows(ag.as_tensor(graph.edge_attr), eidx)
    if augment:
        es, er = _two_hop_edges(graph, idx, s, r)
        if len(es):
            # synthesised edges carry zero hidden attributes
            s_all = np.concatenate([s, es])
            r_all = np.concatenate([r, er])
            s2, r2, first = sort_edges(s_all, r_all, len(idx))
            e_all = ag.concat([e_new, np.zeros((len(es), e_new.shape[1]))], axis=0)
            e_new = ag.gather_rows(e_all, first)
            src = np.concatenate([eidx, np.full(len(es), -1)])[first]
            s, r, eidx = s2, r2, src
    pooled = Graph(x=x_new, edge_attr=e_new, senders=s, receivers=r,
                   pos=graph.pos[idx], level=graph.level + 1,
                   batch=graph.batch[idx], n_graphs=graph.n_graphs)
    return TopKResult(indices=idx, edge_index=eidx, pooled=pooled, y=y, parent=graph)


def distribute(values, indices, n):
    """Zero matrix of ``n`` rows with rows ``indices`` replaced by ``values``."""
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) != len(values):
        raise UsageError(f"{len(values)} rows for {len(indices)} indices")
    if len(indices) and (indices.min() < 0 or indices.max() >= n):
        raise UsageError(f"unpool index out of range for {n} rows")
    return ag.scatter_rows(ag.as_tensor(values), indices, n)


def unpool(pooled, result):
    """Scatter pooled node and edge attributes back onto the parent topology."""
    parent = result.parent
    x = distribute(pooled.x, result.indices, parent.n_nodes)
    e = ag.as_tensor(pooled.edge_attr)
    real = np.nonzero(result.edge_index >= 0)[0]
    if len(real) != len(result.edge_index):
        e = ag.gather_rows(e, real)
    e = distribute(e, result.edge_index[real], parent.n_edges)
    return parent.with_attrs(x=x, edge_attr=e)


def composed_indices(results):
    """Original (level-0) node ids retained at each level 1..L."""
    out, cur = [], None
    size = None
    for lvl, res in enumerate(results, start=1):
        idx = np.asarray(getattr(res, "indices", res), dtype=np.int64)
        if size is not None and len(idx) and (idx.min() < 0 or idx.max() >= size):
            raise UsageError(f"level {lvl} index outside level {lvl - 1} range")
        cur = idx if cur is None else cur[idx]
        size = len(idx)
        out.append(cur)
    return out


def masked_field(results, n0):
    """Per original node, the highest pooling level that still holds it (0 if none)."""
    mask = np.zeros(int(n0), dtype=np.int64)
    for lvl, idx in enumerate(composed_indices(results), start=1):
        if len(idx) and idx.max() >= n0:
            raise UsageError("level-1 indices exceed the input node count")
        mask[idx] = lvl
    return mask


def write_mask_csv(path, pos, mask):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "level"])
        for (x, y), lv in zip(pos, mask):
            w.writerow([repr(float(x)), repr(float(y)), int(lv)])

