import numpy as np
import pytest

from meshgae.coarsen import (coarse_edge_attrs, init_transfer, transfer_coarse_to_fine,
                             transfer_fine_to_coarse, voxel_cluster)
from meshgae.errors import ConfigError, DimensionError
from meshgae.graph import Graph, sort_edges
from meshgae.nn import ParamStore

from conftest import random_graph


def points_graph(pos, pairs=()):
    pos = np.asarray(pos, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    s, r, _ = sort_edges(np.r_[pairs[:, 0], pairs[:, 1]], np.r_[pairs[:, 1], pairs[:, 0]], len(pos))
    return Graph(x=np.zeros((len(pos), 1)), edge_attr=pos[r] - pos[s], senders=s, receivers=r, pos=pos)


def identity_transfer(width, shift=10.0):
    """Parameters making the transfer MLP return its first ``width`` inputs (ELU is
    the identity on the shifted, positive hidden values)."""
    ps = ParamStore()
    init_transfer(ps.scope("t."), width, np.random.default_rng(0), layer_norm=False)
    ps["t.lin0.w"].data = np.vstack([np.eye(width), np.zeros((2, width))])
    ps["t.lin0.b"].data = np.full(width, shift)
    ps["t.lin1.w"].data = np.eye(width)
    ps["t.lin1.b"].data = np.full(width, -shift)
    return ps.scope("t.")


def test_voxel_example():
    g = points_graph([(0.1, 0.1), (0.2, 0.15), (0.9, 0.9)])
    m = voxel_cluster(g, 0.5, bbox=((0.0, 0.0), (1.0, 1.0)))
    assert m.n_coarse == 2
    assert np.allclose(m.parent_pos, [(0.25, 0.25), (0.75, 0.75)], rtol=0, atol=1e-15)
    assert m.parent_of[0] == m.parent_of[1] != m.parent_of[2]


def test_huge_lengthscale_gives_one_parent(rng):
    g = random_graph(rng, 12, 2)
    m = voxel_cluster(g, 10.0)
    assert m.n_coarse == 1 and m.coarse.n_edges == 0
    assert np.all(m.parent_of == 0)


def test_tiny_lengthscale_is_isomorphic(rng):
    g = random_graph(rng, 20, 2)
    m = voxel_cluster(g, 1e-6)
    assert m.n_coarse == 20 and np.all(m.n_children == 1)
    relabel = m.parent_of
    fine = set(zip(relabel[g.senders].tolist(), relabel[g.receivers].tolist()))
    assert fine == set(zip(m.coarse.senders.tolist(), m.coarse.receivers.tolist()))
    # single-edge bundles keep the fine edge attribute unchanged
    assert np.allclose(coarse_edge_attrs(m, g.edge_attr).data[m.fine_edge_to_coarse], g.edge_attr)


def test_partition_and_coarse_edge_rule(rng):
    g = random_graph(rng, 30, 3, p_edge=0.2)
    m = voxel_cluster(g, 0.3)
    assert m.n_children.sum() == 30 and np.all(m.n_children >= 1)
    want = {}
    for k, (s, r) in enumerate(zip(g.senders, g.receivers)):
        u, v = m.parent_of[s], m.parent_of[r]
        if u != v:
            want.setdefault((u, v), []).append(g.edge_attr[k])
    got = {(s, r): e for s, r, e in zip(m.coarse.senders.tolist(), m.coarse.receivers.tolist(),
                                        m.coarse.edge_attr)}
    assert set(got) == set(want)
    for key, rows in want.items():
        assert np.allclose(got[key], np.mean(rows, axis=0), atol=1e-14)
    m.coarse.validate()


def test_translation_by_lengthscale_keeps_partition(rng):
    g = random_graph(rng, 25, 2)
    ls = 0.25
    m1 = voxel_cluster(g, ls, bbox=((0, 0), (1, 1)))
    moved = Graph(x=g.x, edge_attr=g.edge_attr, senders=g.senders, receivers=g.receivers,
                  pos=g.pos + np.array([3 * ls, -2 * ls]))
    m2 = voxel_cluster(moved, ls, bbox=((3 * ls, -2 * ls), (1 + 3 * ls, 1 - 2 * ls)))
    assert np.array_equal(m1.parent_of, m2.parent_of)


def test_degenerate_bbox_and_bad_lengthscale():
    g = points_graph([(0.0, 0.5), (1.0, 0.5), (2.0, 0.5)], [(0, 1), (1, 2)])
    m = voxel_cluster(g, 1.5)
    assert m.n_coarse == 2
    with pytest.raises(ConfigError):
        voxel_cluster(g, 0.0)


def test_fine_to_coarse_identity_is_mean_pool(rng):
    g = random_graph(rng, 15, 3)
    m = voxel_cluster(g, 0.4)
    x = rng.standard_normal((15, 3))
    out = transfer_fine_to_coarse(m, x, identity_transfer(3), layer_norm=False).data
    for p in range(m.n_coarse):
        assert np.allclose(out[p], x[m.parent_of == p].mean(axis=0), atol=1e-13)


def test_transfer_loop_oracles(rng):
    g = random_graph(rng, 5, 2)
    m = voxel_cluster(g, 0.5)
    ps = ParamStore()
    init_transfer(ps.scope("a."), 2, rng)
    init_transfer(ps.scope("b."), 2, rng)

    def mlp(prefix, v):
        h = v @ ps[prefix + "lin0.w"].data + ps[prefix + "lin0.b"].data
        h = np.where(h > 0, h, np.expm1(h))
        h = h @ ps[prefix + "lin1.w"].data + ps[prefix + "lin1.b"].data
        mu, var = h.mean(), h.var()
        return (h - mu) / np.sqrt(var + 1e-5) * ps[prefix + "ln.g"].data + ps[prefix + "ln.b"].data

    x = rng.standard_normal((5, 2))
    down = transfer_fine_to_coarse(m, x, ps.scope("a.")).data
    for p in range(m.n_coarse):
        kids = [c for c in range(5) if m.parent_of[c] == p]
        rows = [mlp("a.", np.r_[x[c], g.pos[c] - m.parent_pos[p]]) for c in kids]
        assert np.allclose(down[p], np.mean(rows, axis=0), atol=1e-12)

    skip = rng.standard_normal((5, 2))
    up = transfer_coarse_to_fine(m, down, skip, ps.scope("b.")).data
    for c in range(5):
        p = m.parent_of[c]
        want = mlp("b.", np.r_[down[p], m.parent_pos[p] - g.pos[c]]) + skip[c]
        assert np.allclose(up[c], want, atol=1e-12)


def test_coarse_to_fine_skip_and_broadcast(rng):
    g = random_graph(rng, 6, 2)
    m = voxel_cluster(g, 10.0)
    ps = ParamStore()
    init_transfer(ps.scope("t."), 2, rng, layer_norm=False)
    for _, p in ps.items():
        p.data[...] = 0.0
    skip = rng.standard_normal((6, 2))
    out = transfer_coarse_to_fine(m, np.zeros((1, 2)), skip, ps.scope("t."), layer_norm=False)
    assert np.array_equal(out.data, skip)
    out = transfer_coarse_to_fine(m, np.array([[0.3, -0.7]]), np.zeros((6, 2)),
                                  identity_transfer(2), layer_norm=False).data
    assert np.allclose(out, [[0.3, -0.7]] * 6, atol=1e-14)


def test_constant_field_round_trip(rng):
    g = random_graph(rng, 20, 2)
    m = voxel_cluster(g, 0.3)
    c = np.tile([[1.25, -0.5]], (20, 1))
    t = identity_transfer(2)
    down = transfer_fine_to_coarse(m, c, t, layer_norm=False)
    back = transfer_coarse_to_fine(m, down, np.zeros((20, 2)), t, layer_norm=False).data
    assert np.allclose(back, c, atol=1e-13)


def test_transfer_dimension_errors(rng):
    g = random_graph(rng, 6, 2)
    m = voxel_cluster(g, 0.5)
    t = identity_transfer(2)
    with pytest.raises(DimensionError):
        transfer_fine_to_coarse(m, np.zeros((5, 2)), t, layer_norm=False)
    with pytest.raises(DimensionError):
        transfer_coarse_to_fine(m, np.zeros((m.n_coarse + 1, 2)), np.zeros((6, 2)), t, layer_norm=False)
    with pytest.raises(DimensionError):
        transfer_coarse_to_fine(m, np.zeros((m.n_coarse, 2)), np.zeros((4, 2)), t, layer_norm=False)
