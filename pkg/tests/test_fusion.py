import numpy as np
import pytest

from emocues import audio as A
from emocues.config import TrainConfig
from emocues.fusion import InitialFusion, MfmBlock, classify, classify_single, mfm_forward
from emocues.gradsuite import toy_config, toy_epc_input
from emocues.knowledge import KnowledgeBase, RelationKind
from emocues.model import EmotionModel
from emocues.nn.layers import Linear
from emocues.nn.tensor import Tensor


def test_initial_fusion_is_audio_queried_residual(rng):
    fus = InitialFusion(8, 2, rng)
    f_t, f_a = rng.normal(size=(3, 8)), rng.normal(size=(5, 8))
    out = fus(Tensor(f_t), Tensor(f_a)).data
    r = f_a + fus.attn(Tensor(f_a), Tensor(f_t), Tensor(f_t)).data
    ref = (r - r.mean(axis=1, keepdims=True)) / np.sqrt(r.var(axis=1, keepdims=True) + 1e-5)
    np.testing.assert_allclose(out, ref, atol=1e-12)
    assert fus.attn.last_weights.shape == (2, 5, 3)


@pytest.mark.parametrize("L", [1, 4, 7])
def test_bridge_lengths(rng, L):
    block = MfmBlock(8, 6, 2, rng, bridge_len=L)
    out = block(Tensor(rng.normal(size=(5, 8))), Tensor(rng.normal(size=(9, 6))))
    assert out.concat_lengths == (5 + L, 9 + L)
    assert out.bridge_hat_v.shape == (L, 6) and out.bridge_hat_l.shape == (L, 8)
    assert out.f_hat_m.shape == (9, 6) and out.f_hat_ta.shape == (5, 8)


def test_zeroed_bridges_cut_both_directions(rng):
    blocks = [MfmBlock(8, 8, 2, rng) for _ in range(3)]
    for b in blocks:
        b.mlp_v2l.zero_()
        b.mlp_l2v.zero_()
    f_ta, f_m = rng.normal(size=(4, 8)), rng.normal(size=(6, 8))
    base = mfm_forward(Tensor(f_ta), Tensor(f_m), blocks)
    moved_m = mfm_forward(Tensor(f_ta), Tensor(f_m * 3 - 1), blocks)
    moved_ta = mfm_forward(Tensor(f_ta + 2), Tensor(f_m), blocks)
    assert np.array_equal(base.f_m_to_ta.data, moved_m.f_m_to_ta.data)
    assert np.array_equal(base.f_ta_to_m.data, moved_ta.f_ta_to_m.data)


def test_full_model_mel_reaches_head_only_through_bridges(rng):
    cfg = toy_config()
    audio_cfg = A.AudioConfig(n_mels=10)
    kb = KnowledgeBase.from_triples([("asleep", RelationKind.HAS_CONTEXT, "kangaroo")])
    inp, vocab = toy_epc_input(rng, cfg, audio_cfg, kb)
    model = EmotionModel(cfg, len(vocab), 10, 3, rng)
    for b in model.blocks:
        b.mlp_v2l.zero_()
    a = model(inp).head_a.data
    model.mel_branch.weight.data += 1.0
    assert np.array_equal(model(inp).head_a.data, a)


def test_classify_averages_heads(rng):
    ha, hb = Linear(8, 3, rng), Linear(6, 3, rng)
    x1, x2 = rng.normal(size=(4, 8)), rng.normal(size=(7, 6))
    out = classify(Tensor(x1), Tensor(x2), ha, hb)
    la = x1.mean(axis=0) @ ha.weight.data + ha.bias.data
    lb = x2.mean(axis=0) @ hb.weight.data + hb.bias.data
    np.testing.assert_allclose(out.head_a.data, la, atol=1e-12)
    np.testing.assert_allclose(out.averaged.data, (la + lb) / 2, atol=1e-12)
    assert out.predicted() == int(np.argmax((la + lb) / 2))
    single = classify_single(Tensor(x1), ha)
    assert single.head_b is None and np.array_equal(single.averaged.data, single.head_a.data)


@pytest.mark.parametrize("overrides", [
    {"modality": "T"}, {"modality": "S"}, {"no_tmf": True}, {"no_kwrt": True}, {"no_pe": True},
    {"mel_mode": "patch", "patch_frames": 3}, {"mlp_depth": 2},
])
def test_variants_run_and_differ_in_size(rng, overrides):
    audio_cfg = A.AudioConfig(n_mels=10)
    kb = KnowledgeBase.from_triples([])
    full_cfg = toy_config()
    cfg = toy_config(**overrides)
    inp, vocab = toy_epc_input(rng, cfg, audio_cfg, kb)
    model = EmotionModel(cfg, len(vocab), 10, 2, np.random.default_rng(0))
    full = EmotionModel(full_cfg, len(vocab), 10, 2, np.random.default_rng(0))
    loss, logits = model.loss(inp)
    assert np.isfinite(loss.item()) and logits.averaged.shape == (2,)
    assert model.num_parameters() != full.num_parameters()


def test_kwrt_gate_receives_gradient(rng):
    cfg = toy_config()
    kb = KnowledgeBase.from_triples([("asleep", RelationKind.HAS_CONTEXT, "kangaroo")])
    inp, vocab = toy_epc_input(rng, cfg, A.AudioConfig(n_mels=10), kb)
    assert inp.scores.max() > 0
    model = EmotionModel(cfg, len(vocab), 10, 2, rng)
    model.loss(inp)[0].backward()
    assert model.kwrt_weight.grad[0] != 0 and model.kwrt_bias.grad[0] != 0
    assert isinstance(cfg, TrainConfig)


def test_initial_fusion_single_text_position(rng):
    fus = InitialFusion(8, 2, rng)
    fus(Tensor(rng.normal(size=(1, 8))), Tensor(rng.normal(size=(6, 8))))
    np.testing.assert_array_equal(fus.attn.last_weights, 1.0)
    for k in (1, 3, 9):
        out = fus(Tensor(rng.normal(size=(k, 8))), Tensor(rng.normal(size=(6, 8))))
        assert out.shape == (6, 8)
    with pytest.raises(ValueError):
        fus(Tensor(np.zeros((0, 8))), Tensor(rng.normal(size=(6, 8))))


def test_zeroed_block_passes_inputs_through(rng):
    block = MfmBlock(8, 8, 2, rng)
    block.trans_l.zero_()
    block.trans_v.zero_()
    f_ta, f_m = rng.normal(size=(3, 8)), rng.normal(size=(5, 8))
    out = block(Tensor(f_ta), Tensor(f_m))
    np.testing.assert_array_equal(out.f_m_to_ta.data, f_ta)
    np.testing.assert_array_equal(out.f_ta_to_m.data, f_m)
    np.testing.assert_array_equal(out.bridge_hat_v.data, block.bridge_v.data)


def test_classify_degenerate_heads(rng):
    ha = Linear(8, 4, rng)
    x = Tensor(rng.normal(size=(5, 8)))
    same = classify(x, x, ha, ha)
    np.testing.assert_array_equal(same.averaged.data, same.head_a.data)
    hb = Linear(8, 4, rng)
    hb.zero_()
    half = classify(x, x, ha, hb)
    np.testing.assert_allclose(half.averaged.data, half.head_a.data / 2, atol=1e-15)
    assert half.predicted() == int(np.argmax(half.head_a.data))
