"""Single-scale message passing and the multiscale (U-net) MMP layer."""
from dataclasses import dataclass

from . import autograd as ag
from .coarsen import (coarse_edge_attrs, init_transfer, transfer_coarse_to_fine,
                      transfer_fine_to_coarse, voxel_cluster)
from .errors import ConfigError, DimensionError
from .nn import MlpSpec, init_mlp, mlp_apply, mlp_tail

DEFAULT_LENGTHSCALES = (0.16, 0.32, 0.64)


def edge_spec(width, layer_norm=True):
    return MlpSpec((3 * width, width, width), layer_norm)


def node_spec(width, layer_norm=True):
    return MlpSpec((2 * width, width, width), layer_norm)


def init_mp_layer(scope, width, rng, layer_norm=True):
    init_mlp(scope.scope("edge."), edge_spec(width, layer_norm), rng)
    init_mlp(scope.scope("node."), node_spec(width, layer_norm), rng)


def mp_layer(graph, scope, layer_norm=True):
    """One round of edge update, mean aggregation over incoming edges, node update.

    Returns the new ``(V, E)``; the graph's connectivity is untouched.
    """
    v = ag.as_tensor(graph.x)
    e = ag.as_tensor(graph.edge_attr)
    if v.shape[1] != e.shape[1]:
        raise DimensionError(f"node width {v.shape[1]} != edge width {e.shape[1]}")
    width = v.shape[1]
    esc = scope.scope("edge.")
    # equals the edge MLP applied to [e | v_sender | v_receiver]
    h = ag.message_linear(e, v, esc["lin0.w"], esc["lin0.b"], graph.senders, graph.receivers)
    e_new = mlp_tail(edge_spec(width, layer_norm), esc, h)
    agg = ag.segment_mean(e_new, graph.receivers, graph.n_nodes, counts=graph.degree)
    v_new = mlp_apply(node_spec(width, layer_norm), scope.scope("node."), ag.concat([v, agg]))
    return v_new, e_new


def mp_block(graph, scopes, layer_norm=True):
    """Apply a sequence of independently parameterised MP layers."""
    if not scopes:
        raise ConfigError("a message passing block needs at least one layer")
    v, e = graph.x, graph.edge_attr
    for sc in scopes:
        v, e = mp_layer(graph.with_attrs(x=v, edge_attr=e), sc, layer_norm)
    return v, e


@dataclass(frozen=True)
class MmpSpec:
    """Shape of one multiscale layer. Empty ``lengthscales`` means no coarsening,
    leaving ``2 * mp_per_fine_block`` plain MP layers."""

    lengthscales: tuple = DEFAULT_LENGTHSCALES
    mp_per_fine_block: int = 2
    mp_per_coarse_block: int = 1

    def __post_init__(self):
        ls = tuple(float(x) for x in self.lengthscales)
        object.__setattr__(self, "lengthscales", ls)
        if any(x <= 0 for x in ls):
            raise ConfigError("coarsening lengthscales must be positive")
        if any(b <= a for a, b in zip(ls, ls[1:])):
            raise ConfigError(f"coarsening lengthscales must be strictly increasing, got {ls}")
        if self.mp_per_fine_block < 1 or (ls and self.mp_per_coarse_block < 1):
            raise ConfigError("message passing blocks need at least one layer")

    @property
    def enabled(self):
        return bool(self.lengthscales)

    def n_layers(self):
        return 2 * self.mp_per_fine_block + 2 * len(self.lengthscales) * self.mp_per_coarse_block

    def n_params(self, width, layer_norm=True):
        mp = edge_spec(width, layer_norm).n_params() + node_spec(width, layer_norm).n_params()
        tr = 2 * len(self.lengthscales) * (MlpSpec((width + 2, width, width), layer_norm).n_params())
        return self.n_layers() * mp + tr


def _layer_scopes(scope, tag, n):
    return [scope.scope(f"{tag}.{i}.") for i in range(n)]


def init_mmp(scope, spec, width, rng, layer_norm=True):
    for sc in _layer_scopes(scope, "fine_down", spec.mp_per_fine_block):
        init_mp_layer(sc, width, rng, layer_norm)
    for k in range(1, len(spec.lengthscales) + 1):
        init_transfer(scope.scope(f"f2c{k}."), width, rng, layer_norm)
        for sc in _layer_scopes(scope, f"coarse{k}_down", spec.mp_per_coarse_block):
            init_mp_layer(sc, width, rng, layer_norm)
    for k in range(len(spec.lengthscales), 0, -1):
        for sc in _layer_scopes(scope, f"coarse{k}_up", spec.mp_per_coarse_block):
            init_mp_layer(sc, width, rng, layer_norm)
        init_transfer(scope.scope(f"c2f{k}."), width, rng, layer_norm)
    for sc in _layer_scopes(scope, "fine_up", spec.mp_per_fine_block):
        init_mp_layer(sc, width, rng, layer_norm)


def coarse_maps(graph, lengthscales):
    """Chain of voxel coarsenings; level k clusters level k-1. Cached per topology."""
    key = ("coarse_maps", tuple(lengthscales))
    if key not in graph._cache:
        maps, g = [], graph
        for ls in lengthscales:
            cm = voxel_cluster(g, ls)
            maps.append(cm)
            g = cm.coarse
        graph._cache[key] = maps
    return graph._cache[key]


def mmp_layer(graph, spec, scope, layer_norm=True):
    """U-net of MP blocks over successively coarser voxel graphs.

    Down: fine block, then per lengthscale a fine-to-coarse transfer and a
    coarse block. Up: coarse block, coarse-to-fine transfer with the
    downward node attributes as additive skip, and finally a fine block.
    Edge attributes on each level are carried over from the downward pass.
    """
    v, e = mp_block(graph, _layer_scopes(scope, "fine_down", spec.mp_per_fine_block), layer_norm)
    maps = coarse_maps(graph, spec.lengthscales)
    skips = [(graph, v, e)]
    g_prev, v_prev, e_prev = graph, v, e
    for k, cm in enumerate(maps, start=1):
        vc = transfer_fine_to_coarse(cm, v_prev, scope.scope(f"f2c{k}."), layer_norm)
        ec = coarse_edge_attrs(cm, e_prev)
        gc = cm.coarse.with_attrs(x=vc, edge_attr=ec)
        vc, ec = mp_block(gc, _layer_scopes(scope, f"coarse{k}_down", spec.mp_per_coarse_block), layer_norm)
        skips.append((gc, vc, ec))
        g_prev, v_prev, e_prev = gc, vc, ec
    v_up = v_prev
    for k in range(len(maps), 0, -1):
        gk, _, ek = skips[k]
        v_up, _ = mp_block(gk.with_attrs(x=v_up, edge_attr=ek),
                           _layer_scopes(scope, f"coarse{k}_up", spec.mp_per_coarse_block), layer_norm)
        _, v_skip, _ = skips[k - 1]
        v_up = transfer_coarse_to_fine(maps[k - 1], v_up, v_skip, scope.scope(f"c2f{k}."), layer_norm)
    if not maps:
        v_up = v
    return mp_block(graph.with_attrs(x=v_up, edge_attr=e),
                    _layer_scopes(scope, "fine_up", spec.mp_per_fine_block), layer_norm)
