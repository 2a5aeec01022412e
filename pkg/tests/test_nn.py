import math

import numpy as np
import pytest

from emocues.nn import tensor as T
from emocues.nn.checkpoint import load_into, round_to_float32, save_checkpoint
from emocues.nn.gradcheck import grad_check
from emocues.nn.layers import (LayerNorm, Linear, MultiHeadAttention, TransformerEncoder,
                               TransformerLayer, sinusoidal_positions)
from emocues.nn.optim import Adam, AdamState, NonFiniteGradient, adam_step
from emocues.nn.tensor import Tensor, no_grad, parameter


def _loop_matmul(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(4, 6)), rng.normal(size=(6, 3))
    np.testing.assert_allclose((Tensor(a) @ Tensor(b)).data, _loop_matmul(a, b), atol=1e-12)


def test_batched_matmul_broadcast_gradients(rng):
    a = parameter(rng.normal(size=(2, 3, 4)))
    b = parameter(rng.normal(size=(4, 5)))
    probe = rng.normal(size=(2, 3, 5))
    assert grad_check(lambda: ((a @ b) * Tensor(probe)).sum(), [a, b]) < 1e-6


@pytest.mark.parametrize("op", [
    lambda x: T.exp(x), lambda x: T.tanh(x), lambda x: T.gelu(x), lambda x: x * x - x / 3.0,
    lambda x: T.softmax(x, axis=-1), lambda x: T.log_softmax(x, axis=0),
    lambda x: T.normalize_rows(x), lambda x: T.concat([x, x[1:]], axis=0),
    lambda x: x[np.array([0, 0, 2])], lambda x: x.transpose(1, 0).reshape(-1),
    lambda x: x.mean(axis=1, keepdims=True), lambda x: T.sqrt(x * x + 1.0),
])
def test_elementary_gradients(rng, op):
    x = parameter(rng.normal(size=(3, 4)))
    probe_shape = op(x).shape
    probe = rng.normal(size=probe_shape)
    assert grad_check(lambda: (op(x) * Tensor(probe)).sum(), [x]) < 1e-6


def test_grad_check_of_square():
    theta = parameter(np.array([0.3, -1.7, 2.0]))
    assert grad_check(lambda: (theta * theta).sum(), [theta]) < 1e-9
    (theta * theta).sum().backward()
    np.testing.assert_array_equal(theta.grad, 2 * theta.data)


def test_grad_check_flags_a_wrong_gradient():
    x = parameter(np.array([1.0, 2.0]))

    def bad():
        return T.Tensor._make(x.data ** 2, (x,), lambda g: (g * x.data,)).sum()

    assert grad_check(bad, [x]) > 0.3


def test_cross_entropy_value(rng):
    z = rng.normal(size=5)
    ref = -(z[2] - math.log(np.exp(z).sum()))
    assert T.cross_entropy(Tensor(z), 2).item() == pytest.approx(ref, abs=1e-12)
    assert np.isfinite(T.cross_entropy(Tensor(np.array([1000.0, -1000.0])), 1).item())


def test_fancy_index_accumulates():
    x = parameter(np.arange(3.0))
    x[np.array([1, 1, 2])].sum().backward()
    np.testing.assert_array_equal(x.grad, [0, 2, 1])


def test_no_grad_builds_no_graph():
    x = parameter(np.ones(3))
    with no_grad():
        y = (x * 2).sum()
    assert not y.requires_grad


def test_layer_norm_moments(rng):
    x = rng.normal(3.0, 5.0, size=(6, 16))
    y = LayerNorm(16)(Tensor(x)).data
    np.testing.assert_allclose(y.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=1), x.var(axis=1) / (x.var(axis=1) + 1e-5), atol=1e-12)


def _attention_oracle(mha, q, k, v):
    def proj(lin, x):
        return x @ lin.weight.data + (lin.bias.data if lin.bias is not None else 0)
    Q, K, V = proj(mha.q_proj, q), proj(mha.k_proj, k), proj(mha.v_proj, v)
    dh = mha.dim // mha.n_heads
    heads = []
    for h in range(mha.n_heads):
        s = slice(h * dh, (h + 1) * dh)
        scores = Q[:, s] @ K[:, s].T / math.sqrt(dh)
        w = np.exp(scores - scores.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        heads.append(w @ V[:, s])
    return proj(mha.out_proj, np.concatenate(heads, axis=1))


def test_attention_matches_per_head_oracle(rng):
    mha = MultiHeadAttention(12, 3, rng)
    q, kv = rng.normal(size=(4, 12)), rng.normal(size=(7, 12))
    out = mha(Tensor(q), Tensor(kv), Tensor(kv)).data
    np.testing.assert_allclose(out, _attention_oracle(mha, q, kv, kv), atol=1e-10)
    np.testing.assert_allclose(mha.last_weights.sum(axis=-1), 1.0, atol=1e-12)
    assert mha.last_weights.shape == (3, 4, 7)


def test_attention_single_and_identical_keys(rng):
    mha = MultiHeadAttention(8, 2, rng)
    q = rng.normal(size=(3, 8))
    k = rng.normal(size=(1, 8))
    out = mha(Tensor(q), Tensor(k), Tensor(k)).data
    v = k @ mha.v_proj.weight.data + mha.v_proj.bias.data
    expect = v @ mha.out_proj.weight.data + mha.out_proj.bias.data
    np.testing.assert_allclose(out, np.repeat(expect, 3, axis=0), atol=1e-12)
    same = np.repeat(k, 5, axis=0)
    mha(Tensor(q), Tensor(same), Tensor(same))
    np.testing.assert_allclose(mha.last_weights, 0.2, atol=1e-12)
    with pytest.raises(ValueError):
        mha(Tensor(q), Tensor(np.zeros((0, 8))), Tensor(np.zeros((0, 8))))
    with pytest.raises(ValueError):
        mha(Tensor(q), Tensor(np.zeros((2, 6))), Tensor(np.zeros((2, 6))))


def test_zeroed_layer_is_identity(rng):
    layer = TransformerLayer(8, 2, rng)
    layer.zero_()
    x = rng.normal(size=(5, 8))
    np.testing.assert_array_equal(layer(Tensor(x)).data, x)
    enc = TransformerEncoder(8, 2, 0, rng)
    np.testing.assert_array_equal(enc(Tensor(x)).data, x)


def test_sinusoid_table():
    p = sinusoidal_positions(10, 6)
    assert p[3, 0] == pytest.approx(math.sin(3))
    assert p[3, 1] == pytest.approx(math.cos(3))
    assert p[3, 4] == pytest.approx(math.sin(3 / 10000 ** (4 / 6)))
    assert not p.flags.writeable


def test_adam_lr_zero_keeps_parameters():
    p = np.array([1.0, -2.0])
    adam_step([p], [np.array([3.0, 4.0])], AdamState(lr=0.0))
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_first_step_is_signed_lr():
    p = np.array([0.0, 0.0, 0.0])
    adam_step([p], [np.array([2.0, -1e-3, 5.0])], AdamState(lr=0.01))
    np.testing.assert_allclose(p, [-0.01, 0.01, -0.01], rtol=1e-4)


def test_adam_two_steps_by_hand():
    p = np.array([1.0])
    state = AdamState(lr=0.1)
    adam_step([p], [np.array([0.5])], state)
    adam_step([p], [np.array([-0.25])], state)
    m1, v1 = 0.1 * 0.5, 0.001 * 0.25
    x1 = 1.0 - 0.1 * (m1 / 0.1) / (math.sqrt(v1 / 0.001) + 1e-8)
    m2 = 0.9 * m1 + 0.1 * -0.25
    v2 = 0.999 * v1 + 0.001 * 0.0625
    x2 = x1 - 0.1 * (m2 / (1 - 0.9 ** 2)) / (math.sqrt(v2 / (1 - 0.999 ** 2)) + 1e-8)
    assert p[0] == pytest.approx(x2, abs=1e-12)
    assert state.t == 2


def test_adam_rejects_non_finite():
    opt = Adam([parameter(np.ones(2))])
    opt.params[0].grad = np.array([np.nan, 0.0])
    with pytest.raises(NonFiniteGradient):
        opt.step()


def test_checkpoint_round_trip(tmp_path, rng):
    a = Linear(3, 2, rng)
    round_to_float32(a)
    save_checkpoint(tmp_path / "a", a, {"k": 1})
    b = Linear(3, 2, np.random.default_rng(99))
    assert load_into(tmp_path / "a", b) == {"k": 1}
    np.testing.assert_array_equal(a.weight.data, b.weight.data)
    save_checkpoint(tmp_path / "b.json", b, {"k": 1})
    assert (tmp_path / "a" / "model.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_checkpoint_shape_mismatch(tmp_path, rng):
    save_checkpoint(tmp_path / "a", Linear(3, 2, rng))
    with pytest.raises(ValueError):
        load_into(tmp_path / "a", Linear(4, 2, rng))


def test_linear_examples(rng):
    lin = Linear(3, 3, rng)
    lin.weight.data[...] = np.eye(3)
    lin.bias.data[...] = 0
    x = rng.normal(size=(2, 3))
    np.testing.assert_array_equal(lin(Tensor(x)).data, x)
    lin.bias.data[...] = [1.0, 2.0, 3.0]
    np.testing.assert_array_equal(lin(Tensor(np.zeros((2, 3)))).data, [[1, 2, 3], [1, 2, 3]])
    with pytest.raises(ValueError):
        lin(Tensor(np.zeros((2, 4))))


def test_layer_norm_constant_rows():
    ln = LayerNorm(4)
    x = Tensor(np.full((2, 4), 7.0))
    np.testing.assert_array_equal(ln(x).data, 0.0)
    ln.beta.data[:] = 0.3
    np.testing.assert_array_equal(ln(x).data, 0.3)


def test_layer_norm_sum_gradient(rng):
    ln = LayerNorm(5)
    ln.gamma.data[:] = rng.normal(size=5)
    x = parameter(rng.normal(size=(3, 5)))
    assert grad_check(lambda: (ln(x) * ln(x)).sum() + ln(x).sum(), [x, ln.gamma, ln.beta]) <= 1e-3


def test_single_position_layer_uses_value_path(rng):
    layer = TransformerLayer(8, 2, rng)
    x = rng.normal(size=(1, 8))
    h = layer.ln1(Tensor(x)).data
    attn = (h @ layer.attn.v_proj.weight.data + layer.attn.v_proj.bias.data) @ \
        layer.attn.out_proj.weight.data + layer.attn.out_proj.bias.data
    mid = x + attn
    expect = mid + layer.ffn(layer.ln2(Tensor(mid))).data
    np.testing.assert_allclose(layer(Tensor(x)).data, expect, atol=1e-12)


def test_square_at_three():
    theta = parameter(np.array([3.0]))
    (theta * theta).sum().backward()
    assert theta.grad[0] == 6.0
    assert grad_check(lambda: (theta * theta).sum(), [theta]) < 1e-9


def test_forward_is_deterministic():
    def run():
        rng = np.random.default_rng(8)
        enc = TransformerEncoder(8, 2, 2, rng)
        return enc(Tensor(rng.normal(size=(5, 8)))).data
    assert np.array_equal(run(), run())
