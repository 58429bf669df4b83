import numpy as np
import pytest

from meshgae.errors import ConfigError, DimensionError, InputError
from meshgae.graph import (Graph, MeshInput, batch_graphs, bind_snapshot, build_input_graph,
                           unbatch)

from conftest import random_graph


def edge_set(g):
    return set(zip(g.senders.tolist(), g.receivers.tolist()))


def test_two_cells_one_face():
    g = build_input_graph(MeshInput(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[0, 1]]), 0.5))
    assert g.n_edges == 2
    feats = {(s, r): tuple(e) for s, r, e in zip(g.senders, g.receivers, g.edge_attr)}
    assert feats == {(0, 1): (1.0, 0.0), (1, 0): (-1.0, 0.0)}
    assert g.x.shape == (2, 0)


def test_collinear_cells_connect_neighbours_only():
    pos = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    g = build_input_graph(MeshInput(pos, np.zeros((0, 2), int), 1.5))
    assert edge_set(g) == {(0, 1), (1, 0), (1, 2), (2, 1)}


def test_face_union_radius_matches_brute_force(rng):
    pos = rng.uniform(0, 1, (400, 2))
    faces = rng.integers(0, 400, (300, 2))
    faces = faces[faces[:, 0] != faces[:, 1]]
    g = build_input_graph(MeshInput(pos, faces, 0.06))
    d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    r, s = np.nonzero((d <= 0.06) & ~np.eye(400, dtype=bool))
    want = set(zip(s.tolist(), r.tolist()))
    want |= {(int(a), int(b)) for a, b in faces} | {(int(b), int(a)) for a, b in faces}
    assert edge_set(g) == want
    assert np.array_equal(g.edge_attr, pos[g.receivers] - pos[g.senders])
    g.validate()


def test_radius_edges_are_symmetric_with_negated_features(rng):
    g = build_input_graph(MeshInput(rng.uniform(0, 1, (200, 2)), np.zeros((0, 2), int), 0.1))
    feats = {(s, r): e for s, r, e in zip(g.senders.tolist(), g.receivers.tolist(), g.edge_attr)}
    for (s, r), e in feats.items():
        assert np.array_equal(feats[(r, s)], -e)


def test_csr_index_reconstructs_edge_list(rng):
    g = random_graph(rng, 9, 2)
    rebuilt = np.repeat(np.arange(g.n_nodes), np.diff(g.row_ptr))
    assert np.array_equal(rebuilt, g.receivers)
    assert np.array_equal(g.degree, np.bincount(g.receivers, minlength=9))


def test_append_norm_flag():
    pos = np.array([[0.0, 0.0], [3.0, 4.0]])
    g = build_input_graph(MeshInput(pos, np.array([[0, 1]]), 0.1), append_norm=True)
    assert g.edge_attr.shape == (2, 3)
    assert np.allclose(g.edge_attr[:, 2], 5.0)


def test_construction_errors():
    pos = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    with pytest.raises(InputError, match="duplicate"):
        build_input_graph(MeshInput(pos, np.zeros((0, 2), int), 0.1))
    with pytest.raises(InputError):
        build_input_graph(MeshInput(np.zeros((1, 2)), np.zeros((0, 2), int), 0.1))
    ok = np.array([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ConfigError):
        build_input_graph(MeshInput(ok, np.zeros((0, 2), int), 0.0))
    with pytest.raises(InputError):
        build_input_graph(MeshInput(ok, np.array([[0, 5]]), 0.1))
    dense = np.random.default_rng(0).uniform(0, 1, (100, 2))
    with pytest.raises(ConfigError):
        build_input_graph(MeshInput(dense, np.zeros((0, 2), int), 5.0), max_edges=500)


def test_bind_snapshot_shares_topology():
    g = build_input_graph(MeshInput(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[0, 1]]), 0.5))
    a = bind_snapshot(g, np.zeros((2, 2)))
    b = bind_snapshot(g, np.ones((2, 2)))
    assert np.array_equal(a.x, np.zeros((2, 2))) and a.x.shape[1] == 2
    assert a.edge_attr is b.edge_attr and a.senders is b.senders and a.receivers is b.receivers
    with pytest.raises(DimensionError):
        bind_snapshot(g, np.zeros((3, 2)))


def test_batch_offsets_and_round_trip(rng):
    g1, g2 = random_graph(rng, 3, 2), random_graph(rng, 4, 2)
    b = batch_graphs([g1, g2])
    assert b.n_nodes == 7 and list(b.graph_offsets) == [0, 3]
    b.validate()
    assert np.array_equal(b.degree, np.concatenate([g1.degree, g2.degree]))
    for orig, back in zip([g1, g2], unbatch(b)):
        for f in ("x", "edge_attr", "senders", "receivers", "pos"):
            assert getattr(orig, f).tobytes() == getattr(back, f).tobytes()


def test_batch_rejects_width_mismatch(rng):
    with pytest.raises(DimensionError):
        batch_graphs([random_graph(rng, 3, 2), random_graph(rng, 3, 3)])


def test_validate_catches_bad_edges():
    g = Graph(x=np.zeros((2, 1)), edge_attr=np.zeros((1, 1)), senders=np.array([0]),
              receivers=np.array([0]), pos=np.zeros((2, 2)))
    with pytest.raises(InputError):
        g.validate()
