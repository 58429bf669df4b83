"""Graph data model and input-graph construction from mesh centroids."""
from dataclasses import dataclass, field, replace

import numpy as np

from . import _accel
from .autograd import Tensor
from .errors import ConfigError, DimensionError, InputError

DEFAULT_RADIUS = 0.08
DUPLICATE_TOL = 1e-12


def _data(a):
    return a.data if isinstance(a, Tensor) else a


@dataclass(frozen=True, eq=False)
class Graph:
    """Directed graph with node/edge attributes and node positions.

    Edges are kept sorted by (receiver, sender), so the receiver CSR index is
    just the cumulative in-degree. ``batch`` labels each node with the id of
    the graph it came from when several graphs are concatenated.
    """

    x: object
    edge_attr: object
    senders: np.ndarray
    receivers: np.ndarray
    pos: np.ndarray
    level: int = 0
    batch: np.ndarray = None
    n_graphs: int = 1
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.batch is None:
            object.__setattr__(self, "batch", np.zeros(len(self.pos), dtype=np.int64))

    @property
    def n_nodes(self):
        return len(self.pos)

    @property
    def n_edges(self):
        return len(self.senders)

    @property
    def degree(self):
        if "degree" not in self._cache:
            self._cache["degree"] = np.bincount(self.receivers, minlength=self.n_nodes)
        return self._cache["degree"]

    @property
    def row_ptr(self):
        """CSR pointer: incoming edges of node i are rows row_ptr[i]:row_ptr[i+1]."""
        if "row_ptr" not in self._cache:
            self._cache["row_ptr"] = np.concatenate(([0], np.cumsum(self.degree)))
        return self._cache["row_ptr"]

    @property
    def graph_offsets(self):
        counts = np.bincount(self.batch, minlength=self.n_graphs)
        return np.concatenate(([0], np.cumsum(counts)[:-1]))

    def with_attrs(self, x=None, edge_attr=None):
        """Copy sharing topology, positions and the derived-index cache."""
        return replace(self,
                       x=self.x if x is None else x,
                       edge_attr=self.edge_attr if edge_attr is None else edge_attr,
                       _cache=self._cache)

    def topology_key(self):
        return id(self._cache)

    def validate(self):
        n = self.n_nodes
        s, r = self.senders, self.receivers
        if len(s) != len(r):
            raise DimensionError("sender/receiver length mismatch")
        if len(s):
            if s.min() < 0 or r.min() < 0 or s.max() >= n or r.max() >= n:
                raise InputError("edge index out of range")
            if np.any(s == r):
                raise InputError("self-loop present")
            key = r * n + s
            if np.any(np.diff(key) <= 0):
                raise InputError("edges not strictly sorted by (receiver, sender)")
        if self.edge_attr is not None and len(_data(self.edge_attr)) != len(s):
            raise DimensionError("edge attribute rows differ from edge count")
        if self.x is not None and len(_data(self.x)) != n:
            raise DimensionError("node attribute rows differ from node count")
        if np.any(self.batch[s] != self.batch[r]):
            raise InputError("edge crosses a graph boundary")
        if np.any(np.diff(self.batch) < 0):
            raise InputError("batched graphs must occupy contiguous node ranges")
        return True


@dataclass(frozen=True)
class MeshInput:
    centroids: np.ndarray
    face_pairs: np.ndarray
    radius: float = DEFAULT_RADIUS


def sort_edges(senders, receivers, n_nodes):
    """Deduplicated edge arrays sorted by (receiver, sender), plus the order
    mapping each kept edge back to its first occurrence in the input."""
    key = np.asarray(receivers, np.int64) * n_nodes + np.asarray(senders, np.int64)
    uniq, first = np.unique(key, return_index=True)
    return uniq % n_nodes, uniq // n_nodes, first


def build_input_graph(mesh, radius=None, append_norm=False, max_edges=None):
    """Face connectivity in both directions, unioned with radius connectivity.

    Edge features are ``pos[receiver] - pos[sender]`` (plus its norm when
    ``append_norm``). Node attributes are left empty until a snapshot is bound.
    """
    pos = np.asarray(mesh.centroids, dtype=np.float64)
    n = len(pos)
    radius = mesh.radius if radius is None else radius
    if n < 2:
        raise InputError("need at least two cell centroids")
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise DimensionError(f"centroids must be N x 2, got {pos.shape}")
    if not radius > 0:
        raise ConfigError(f"radius must be positive, got {radius}")
    if max_edges is None:
        max_edges = 100 * n
    faces = np.asarray(mesh.face_pairs, dtype=np.int64).reshape(-1, 2)
    if len(faces) and (faces.min() < 0 or faces.max() >= n):
        raise InputError("face pair index out of range")

    rs, rr, ok = _accel.radius_pairs(pos, max(radius, DUPLICATE_TOL), max_pairs=max_edges)
    if not ok:
        raise ConfigError(f"radius {radius} yields more than {max_edges} edges")
    d = pos[rs] - pos[rr]
    if np.any((d * d).sum(axis=1) <= DUPLICATE_TOL ** 2):
        i = int(np.nonzero((d * d).sum(axis=1) <= DUPLICATE_TOL ** 2)[0][0])
        raise InputError(f"duplicate centroids at cells {rs[i]} and {rr[i]}")
    faces = faces[faces[:, 0] != faces[:, 1]]
    senders = np.concatenate([faces[:, 0], faces[:, 1], rs])
    receivers = np.concatenate([faces[:, 1], faces[:, 0], rr])
    s, r, _ = sort_edges(senders, receivers, n)
    if len(s) > max_edges:
        raise ConfigError(f"graph has {len(s)} edges, more than the cap {max_edges}")
    e = pos[r] - pos[s]
    if append_norm:
        e = np.hstack([e, np.linalg.norm(e, axis=1, keepdims=True)])
    return Graph(x=np.zeros((n, 0)), edge_attr=e, senders=s, receivers=r, pos=pos, level=0)


def bind_snapshot(graph, snapshot):
    """Attach a field snapshot as node attributes; edges and topology are shared."""
    snap = snapshot
    rows = len(_data(snap))
    if _data(snap).ndim != 2 or rows != graph.n_nodes:
        raise DimensionError(f"snapshot has {rows} rows, graph has {graph.n_nodes} nodes")
    return graph.with_attrs(x=snap)


def batch_graphs(graphs):
    """Concatenate graphs into one disconnected graph with per-node graph ids."""
    if not graphs:
        raise InputError("cannot batch an empty list of graphs")
    fv = {_data(g.x).shape[1] for g in graphs}
    fe = {_data(g.edge_attr).shape[1] for g in graphs}
    if len(fv) > 1 or len(fe) > 1:
        raise DimensionError(f"feature widths differ across graphs: nodes {fv}, edges {fe}")
    counts = np.array([g.n_nodes for g in graphs])
    offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))
    senders = np.concatenate([g.senders + o for g, o in zip(graphs, offsets)])
    receivers = np.concatenate([g.receivers + o for g, o in zip(graphs, offsets)])
    batch = np.concatenate([np.full(g.n_nodes, k, dtype=np.int64) for k, g in enumerate(graphs)])
    return Graph(
        x=np.concatenate([_data(g.x) for g in graphs]),
        edge_attr=np.concatenate([_data(g.edge_attr) for g in graphs]),
        senders=senders, receivers=receivers,
        pos=np.concatenate([g.pos for g in graphs]),
        level=graphs[0].level, batch=batch, n_graphs=len(graphs))


def unbatch(graph):
    """Split a batched graph back into its members."""
    offsets = graph.graph_offsets
    counts = np.bincount(graph.batch, minlength=graph.n_graphs)
    ecounts = np.bincount(graph.batch[graph.receivers], minlength=graph.n_graphs)
    eoff = np.concatenate(([0], np.cumsum(ecounts)[:-1]))
    x, ea = _data(graph.x), _data(graph.edge_attr)
    out = []
    for k in range(graph.n_graphs):
        ns = slice(offsets[k], offsets[k] + counts[k])
        es = slice(eoff[k], eoff[k] + ecounts[k])
        out.append(Graph(x=x[ns], edge_attr=ea[es],
                         senders=graph.senders[es] - offsets[k],
                         receivers=graph.receivers[es] - offsets[k],
                         pos=graph.pos[ns], level=graph.level))
    return out
