import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from meshgae import autograd as ag
from meshgae.errors import CheckpointError, ConfigError, DimensionError
from meshgae.nn import (MAGIC, MlpSpec, ParamStore, adam_update, clip_grad_norm, dumps_params,
                        init_mlp, layer_norm_apply, load_params, loads_params, mlp_apply,
                        save_params)


def store_with_mlp(widths, layer_norm=True, seed=0):
    ps = ParamStore()
    spec = MlpSpec(tuple(widths), layer_norm)
    init_mlp(ps.scope("m."), spec, np.random.default_rng(seed))
    return ps, spec


def test_zero_mlp_is_zero_map():
    ps, spec = store_with_mlp((3, 5, 4), layer_norm=False)
    for _, p in ps.items():
        p.data[...] = 0.0
    out = mlp_apply(spec, ps.scope("m."), np.random.default_rng(1).standard_normal((6, 3)))
    assert np.array_equal(out.data, np.zeros((6, 4)))


def test_shape_contract():
    ps, spec = store_with_mlp((8, 32, 32))
    assert mlp_apply(spec, ps.scope("m."), np.ones((5, 8))).shape == (5, 32)


def test_two_layer_mlp_matches_straight_line_oracle():
    ps, spec = store_with_mlp((2, 4, 3), layer_norm=False, seed=4)
    x = np.array([[1.0, 2.0]])
    w0, b0 = ps["m.lin0.w"].data, ps["m.lin0.b"].data
    w1, b1 = ps["m.lin1.w"].data, ps["m.lin1.b"].data
    expect = []
    for j in range(3):
        acc = b1[j]
        for k in range(4):
            z = b0[k] + x[0, 0] * w0[0, k] + x[0, 1] * w0[1, k]
            acc += (z if z > 0 else np.expm1(z)) * w1[k, j]
        expect.append(acc)
    assert np.allclose(mlp_apply(spec, ps.scope("m."), x).data[0], expect, rtol=0, atol=1e-14)


def test_residual_added_only_for_equal_widths():
    ps, spec = store_with_mlp((4, 6, 4), layer_norm=False)
    x = np.random.default_rng(2).standard_normal((3, 4))
    for _, p in ps.items():
        p.data[...] = 0.0
    assert np.array_equal(mlp_apply(spec, ps.scope("m."), x).data, x)
    assert spec.residual and not MlpSpec((3, 4)).residual


def test_mlp_rejects_wrong_width():
    ps, spec = store_with_mlp((3, 4))
    with pytest.raises(DimensionError):
        mlp_apply(spec, ps.scope("m."), np.ones((2, 5)))


def test_mlp_is_bitwise_deterministic():
    ps, spec = store_with_mlp((3, 7, 7, 2))
    x = np.random.default_rng(5).standard_normal((9, 3))
    a = mlp_apply(spec, ps.scope("m."), x).data
    b = mlp_apply(spec, ps.scope("m."), x).data
    assert a.tobytes() == b.tobytes()


def test_layer_norm_hand_values():
    out = layer_norm_apply(np.array([[1.0, 3.0]]), np.ones(2), np.zeros(2), eps=1e-300).data
    assert np.allclose(out, [[-1.0, 1.0]], atol=1e-15)
    out = layer_norm_apply(np.full((1, 3), 7.0), np.ones(3), np.zeros(3)).data
    assert np.array_equal(out, np.zeros((1, 3)))


def test_layer_norm_affine_contract():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 5))
    g, b = rng.standard_normal(5), rng.standard_normal(5)
    r = layer_norm_apply(x, np.ones(5), np.zeros(5)).data
    assert np.allclose(layer_norm_apply(x, g, b).data, g * r + b, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 9)),
              elements=st.floats(-1e3, 1e3)))
def test_layer_norm_rows_have_zero_mean(x):
    out = layer_norm_apply(x, np.ones(x.shape[1]), np.zeros(x.shape[1])).data
    # centring leaves roundoff of order n*ulp(max|x|), then divided by sqrt(var + eps)
    scale = np.sqrt(x.var(axis=1) + 1e-5)
    bound = 1e-12 + 4 * x.shape[1] * np.finfo(float).eps * np.abs(x).max(axis=1) / scale
    assert np.all(np.abs(out.mean(axis=1)) <= bound)


def test_layer_norm_rejects_empty_feature_axis():
    with pytest.raises(DimensionError):
        layer_norm_apply(np.ones((2, 0)), np.ones(0), np.zeros(0))


def test_mlp_spec_needs_two_widths():
    with pytest.raises(ConfigError):
        MlpSpec((4,))


# ---------------------------------------------------------------------------


def adam_store(value, grad):
    ps = ParamStore()
    p = ps.add("p", value)
    p.grad = np.array(grad, dtype=np.float64)
    return ps


def test_first_adam_step_is_minus_lr_sign_grad():
    g = np.array([3.0, -0.02, 1e-3, -50.0])
    ps = adam_store(np.zeros(4), g)
    adam_update(ps, 0.1, eps=1e-300)
    assert np.allclose(ps["p"].data, -0.1 * np.sign(g), rtol=1e-12)
    assert ps.step == 1


def test_adam_zero_gradient_leaves_parameter():
    ps = adam_store([1.5, -2.0], [0.0, 0.0])
    adam_update(ps, 0.1)
    assert np.array_equal(ps["p"].data, [1.5, -2.0])


def test_adam_equal_gradients_equal_deltas():
    ps = adam_store([0.0, 5.0], [0.7, 0.7])
    for _ in range(3):
        adam_update(ps, 0.01)
    d = ps["p"].data - np.array([0.0, 5.0])
    # the subtraction from 5.0 costs a few ulps of 5.0
    assert abs(d[0] - d[1]) < 8 * np.spacing(5.0)


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(1)
    ps = adam_store(np.zeros(3), np.zeros(3))
    theta, m, v = np.zeros(3), np.zeros(3), np.zeros(3)
    for t in range(1, 6):
        g = rng.standard_normal(3)
        ps["p"].grad = g.copy()
        adam_update(ps, 1e-2)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta = theta - 1e-2 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(ps["p"].data, theta, rtol=1e-13, atol=1e-16)


def test_adam_lr_zero_is_identity_and_negative_rejected():
    ps = adam_store([0.25, 4.0], [1.0, -3.0])
    adam_update(ps, 0.0)
    assert np.array_equal(ps["p"].data, [0.25, 4.0])
    with pytest.raises(ConfigError):
        adam_update(ps, -1e-3)


def test_clip_grad_norm():
    ps = adam_store(np.zeros(2), [3.0, 4.0])
    total = clip_grad_norm(ps, 1.0)
    assert total == 5.0
    assert np.allclose(ps["p"].grad, [0.6, 0.8])


# ---------------------------------------------------------------------------


def test_checkpoint_layout_and_round_trip(tmp_path):
    ps, _ = store_with_mlp((3, 4, 2))
    ps.add("scalar", np.array(2.5))
    buf = dumps_params(ps)
    assert buf[:4] == MAGIC
    assert int.from_bytes(buf[4:8], "little") == len(ps)
    back = loads_params(buf)
    assert list(back) == ps.names()
    for k in back:
        assert back[k].tobytes() == ps[k].data.tobytes()
    path = tmp_path / "a.ckpt"
    save_params(ps, path)
    save_params(load_params(path), tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_errors(tmp_path):
    ps, _ = store_with_mlp((3, 4, 2))
    buf = dumps_params(ps)
    with pytest.raises(CheckpointError):
        loads_params(b"XXXX" + buf[4:])
    with pytest.raises(CheckpointError):
        loads_params(buf[:-3])
    with pytest.raises(CheckpointError):
        loads_params(buf + b"\0")
    path = tmp_path / "c.ckpt"
    save_params(ps, path)
    other, _ = store_with_mlp((3, 5, 2))
    with pytest.raises(CheckpointError, match="m.lin0.w"):
        load_params(path, into=other)


def test_duplicate_parameter_name_rejected():
    ps = ParamStore()
    ps.add("a", np.zeros(2))
    with pytest.raises(KeyError):
        ps.add("a", np.zeros(2))


def test_parameter_and_gradient_shapes_match():
    ps, _ = store_with_mlp((3, 4, 2))
    for _, p in ps.items():
        assert p.grad.shape == p.data.shape
    loss = ag.sum(mlp_apply(MlpSpec((3, 4, 2)), ps.scope("m."), np.ones((2, 3))))
    ag.backward(loss)
    for _, p in ps.items():
        assert p.grad.shape == p.data.shape
