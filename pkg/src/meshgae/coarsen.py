"""Voxel-grid clustering and learnable node transfer between fine and coarse graphs."""
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import ConfigError, DimensionError
from .graph import Graph, _data
from .nn import MlpSpec, init_mlp, mlp_apply


@dataclass(frozen=True, eq=False)
class CoarseMap:
    """Parent/child relation between a fine graph and its voxel-coarsened graph.

    ``stencil_disp[c]`` is ``pos[c] - parent_pos[parent_of[c]]``; the stencil
    has exactly one edge per child. ``fine_edge_to_coarse[k]`` is the coarse
    edge fed by fine edge ``k`` (or -1 when both ends share a voxel).
    """

    parent_of: np.ndarray
    parent_pos: np.ndarray
    coarse: Graph
    fine_edge_to_coarse: np.ndarray
    coarse_edge_count: np.ndarray
    stencil_disp: np.ndarray
    n_children: np.ndarray
    lengthscale: float

    @property
    def n_fine(self):
        return len(self.parent_of)

    @property
    def n_coarse(self):
        return len(self.parent_pos)


def _voxel_index(pos, batch, n_graphs, lengthscale, bbox):
    lo = np.zeros((n_graphs, 2))
    hi = np.zeros((n_graphs, 2))
    if bbox is not None:
        lo[:] = np.asarray(bbox[0], dtype=np.float64)
        hi[:] = np.asarray(bbox[1], dtype=np.float64)
    else:
        for g in range(n_graphs):
            p = pos[batch == g]
            lo[g], hi[g] = p.min(axis=0), p.max(axis=0)
    extent = hi - lo
    extent[extent <= 0] = lengthscale
    n_vox = np.maximum(1, np.ceil(extent / lengthscale)).astype(np.int64)
    rel = (pos - lo[batch]) / lengthscale
    # half-open voxels; points on the far bbox face fold into the last voxel
    ij = np.clip(np.floor(rel).astype(np.int64), 0, n_vox[batch] - 1)
    return ij, lo


def voxel_cluster(fine, lengthscale, bbox=None):
    """Coarsen ``fine`` by binning node positions on a voxel grid.

    Each occupied voxel becomes a parent located at the voxel centre. Parents
    u != v are joined when some fine edge links a child of u to a child of v;
    the coarse edge attribute is the mean of those fine edge attributes.
    Batched graphs are clustered per member graph, each on its own bbox.
    """
    if not lengthscale > 0:
        raise ConfigError(f"lengthscale must be positive, got {lengthscale}")
    pos, batch = fine.pos, fine.batch
    ij, lo = _voxel_index(pos, batch, fine.n_graphs, float(lengthscale), bbox)
    big = int(ij.max()) + 2
    key = (batch * big + ij[:, 0]) * big + ij[:, 1]
    uniq, parent_of = np.unique(key, return_inverse=True)
    parent_of = parent_of.astype(np.int64)
    n_c = len(uniq)
    pij = np.stack([(uniq // big) % big, uniq % big], axis=1)
    pbatch = uniq // (big * big)
    parent_pos = lo[pbatch] + (pij + 0.5) * lengthscale

    pu = parent_of[fine.senders]
    pv = parent_of[fine.receivers]
    cross = pu != pv
    ekey = pv[cross] * n_c + pu[cross]
    ukey, einv = np.unique(ekey, return_inverse=True)
    f2c = np.full(fine.n_edges, -1, dtype=np.int64)
    f2c[cross] = einv
    counts = np.bincount(einv, minlength=len(ukey))

    edge_attr = None
    if fine.edge_attr is not None and not isinstance(fine.edge_attr, ag.Tensor):
        ea = np.asarray(fine.edge_attr)
        edge_attr = np.zeros((len(ukey), ea.shape[1]))
        np.add.at(edge_attr, einv, ea[cross])
        edge_attr /= np.maximum(counts, 1)[:, None]

    coarse = Graph(x=None, edge_attr=edge_attr,
                   senders=ukey % n_c, receivers=ukey // n_c,
                   pos=parent_pos, level=fine.level,
                   batch=pbatch.astype(np.int64), n_graphs=fine.n_graphs)
    return CoarseMap(parent_of=parent_of, parent_pos=parent_pos, coarse=coarse,
                     fine_edge_to_coarse=f2c, coarse_edge_count=counts,
                     stencil_disp=pos - parent_pos[parent_of],
                     n_children=np.bincount(parent_of, minlength=n_c),
                     lengthscale=float(lengthscale))


def coarse_edge_attrs(cmap, fine_edge_attrs):
    """Average the current fine edge attributes onto coarse edges."""
    keep = cmap.fine_edge_to_coarse >= 0
    idx = np.nonzero(keep)[0]
    return ag.segment_mean(ag.gather_rows(fine_edge_attrs, idx),
                           cmap.fine_edge_to_coarse[idx],
                           cmap.coarse.n_edges, counts=cmap.coarse_edge_count)


def transfer_spec(width, layer_norm=True):
    return MlpSpec((width + 2, width, width), layer_norm)


def init_transfer(scope, width, rng, layer_norm=True):
    init_mlp(scope, transfer_spec(width, layer_norm), rng)


def transfer_fine_to_coarse(cmap, fine_attrs, scope, layer_norm=True):
    """Parent value = mean over children of MLP(child attrs | child - parent)."""
    fine_attrs = ag.as_tensor(fine_attrs)
    if fine_attrs.shape[0] != cmap.n_fine:
        raise DimensionError(f"fine attrs have {fine_attrs.shape[0]} rows, map has {cmap.n_fine} children")
    spec = transfer_spec(fine_attrs.shape[1], layer_norm)
    h = mlp_apply(spec, scope, ag.concat([fine_attrs, cmap.stencil_disp]))
    return ag.segment_mean(h, cmap.parent_of, cmap.n_coarse, counts=cmap.n_children)


def transfer_coarse_to_fine(cmap, coarse_attrs, fine_skip, scope, layer_norm=True):
    """Child value = MLP(parent attrs | parent - child) + skip from the downward pass."""
    coarse_attrs = ag.as_tensor(coarse_attrs)
    if coarse_attrs.shape[0] != cmap.n_coarse:
        raise DimensionError(f"coarse attrs have {coarse_attrs.shape[0]} rows, map has {cmap.n_coarse} parents")
    if _data(fine_skip).shape[0] != cmap.n_fine:
        raise DimensionError(f"skip has {_data(fine_skip).shape[0]} rows, map has {cmap.n_fine} children")
    spec = transfer_spec(coarse_attrs.shape[1], layer_norm)
    up = ag.concat([ag.gather_rows(coarse_attrs, cmap.parent_of), -cmap.stencil_disp])
    return mlp_apply(spec, scope, up) + fine_skip
