"""The graph autoencoder: feature embedding, MMP + Top-K encoder, MMP + unpool decoder."""
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import UsageError
from .graph import _data, unbatch
from .mp import MmpSpec, init_mmp, mmp_layer
from .nn import MlpSpec, ParamStore, init_mlp, load_params, mlp_apply, save_params
from .pool import ReductionPlan, masked_field, topk_pool, unpool


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 32
    plan: ReductionPlan = field(default_factory=ReductionPlan)
    encoder_mmp: MmpSpec = field(default_factory=lambda: MmpSpec(()))
    decoder_mmp: MmpSpec = field(default_factory=MmpSpec)
    input_features: int = 2
    edge_features: int = 2
    layer_norm: bool = True
    augment_pooled_adjacency: bool = False

    def __post_init__(self):
        if self.hidden < 1:
            raise UsageError("hidden channel count must be >= 1")

    @property
    def levels(self):
        return self.plan.levels

    def node_embed_spec(self):
        h = self.hidden
        return MlpSpec((self.input_features, h, h, h), self.layer_norm)

    def edge_embed_spec(self):
        h = self.hidden
        return MlpSpec((self.edge_features, h, h, h), self.layer_norm)

    def node_decode_spec(self):
        # no normalisation on the output: it must reach arbitrary field values
        h = self.hidden
        return MlpSpec((h, h, h, self.input_features), False)

    def n_params(self):
        """Scalar parameter count implied by this configuration."""
        h, L = self.hidden, self.levels
        return (self.node_embed_spec().n_params() + self.edge_embed_spec().n_params()
                + (L + 1) * self.encoder_mmp.n_params(h, self.layer_norm)
                + L * h
                + (L + 1) * self.decoder_mmp.n_params(h, self.layer_norm)
                + self.node_decode_spec().n_params())


@dataclass(frozen=True, eq=False)
class LatentGraph:
    graph: object
    chain: tuple

    @property
    def n_nodes(self):
        return self.graph.n_nodes


class GraphAutoencoder:
    """Parameter registry plus the encode/decode recursions.

    Encoder parameters live under ``enc.``, decoder parameters under ``dec.``.
    """

    def __init__(self, config, seed=0, params=None):
        self.config = config
        if params is None:
            params = ParamStore()
            self._init_params(params, np.random.default_rng(seed))
        self.params = params

    def _init_params(self, ps, rng):
        c, h = self.config, self.config.hidden
        init_mlp(ps.scope("enc.node_embed."), c.node_embed_spec(), rng)
        init_mlp(ps.scope("enc.edge_embed."), c.edge_embed_spec(), rng)
        for lvl in range(c.levels + 1):
            init_mmp(ps.scope(f"enc.mmp{lvl}."), c.encoder_mmp, h, rng, c.layer_norm)
            if lvl < c.levels:
                p = rng.standard_normal(h)
                ps.add(f"enc.topk{lvl}.p", (p / np.linalg.norm(p))[:, None])
        for lvl in range(c.levels, -1, -1):
            init_mmp(ps.scope(f"dec.mmp{lvl}."), c.decoder_mmp, h, rng, c.layer_norm)
        init_mlp(ps.scope("dec.node_decode."), c.node_decode_spec(), rng)

    def encode(self, g0):
        c, ps = self.config, self.params
        x = g0.x
        if _data(x).shape[1] != c.input_features:
            raise UsageError(f"graph carries {_data(x).shape[1]} node features, model expects {c.input_features}")
        v = mlp_apply(c.node_embed_spec(), ps.scope("enc.node_embed."), x)
        e = mlp_apply(c.edge_embed_spec(), ps.scope("enc.edge_embed."), g0.edge_attr)
        g = g0.with_attrs(x=v, edge_attr=e)
        chain = []
        for lvl in range(c.levels):
            v, e = mmp_layer(g, c.encoder_mmp, ps.scope(f"enc.mmp{lvl}."), c.layer_norm)
            res = topk_pool(g.with_attrs(x=v, edge_attr=e), ps[f"enc.topk{lvl}.p"],
                            rf=c.plan.factors[lvl], augment=c.augment_pooled_adjacency)
            chain.append(res)
            g = res.pooled
        v, e = mmp_layer(g, c.encoder_mmp, ps.scope(f"enc.mmp{c.levels}."), c.layer_norm)
        return LatentGraph(graph=g.with_attrs(x=v, edge_attr=e), chain=tuple(chain))

    def decode(self, latent):
        c, ps = self.config, self.params
        if len(latent.chain) != c.levels:
            raise UsageError(f"latent graph has {len(latent.chain)} pooling levels, model has {c.levels}")
        g = latent.graph
        for lvl in range(c.levels, 0, -1):
            v, e = mmp_layer(g, c.decoder_mmp, ps.scope(f"dec.mmp{lvl}."), c.layer_norm)
            g = unpool(g.with_attrs(x=v, edge_attr=e), latent.chain[lvl - 1])
        v, _ = mmp_layer(g, c.decoder_mmp, ps.scope("dec.mmp0."), c.layer_norm)
        return mlp_apply(c.node_decode_spec(), ps.scope("dec.node_decode."), v)

    def autoencode(self, g0):
        """Return ``(reconstruction, masked_field)`` for one (possibly batched) graph."""
        latent = self.encode(g0)
        recon = self.decode(latent)
        return recon, masked_field(latent.chain, g0.n_nodes)

    def reconstruct(self, g0):
        """Inference without taping; returns numpy arrays."""
        with ag.no_grad():
            recon, mask = self.autoencode(g0)
        return recon.data, mask

    def save(self, path):
        save_params(self.params, path)

    def load(self, path):
        load_params(path, into=self.params)
        return self


def split_batched(batched, array):
    """Slice a per-node array of a batched graph into per-graph pieces."""
    offs = list(batched.graph_offsets) + [batched.n_nodes]
    return [array[a:b] for a, b in zip(offs[:-1], offs[1:])]


__all__ = ["ModelConfig", "LatentGraph", "GraphAutoencoder", "split_batched", "unbatch"]
