"""Finite-difference gradient checks for every differentiable stage of the network.

Everything is built in memory at toy sizes (model dim 8, two heads) so the
suite runs in seconds and touches no files.
"""
from __future__ import annotations

import numpy as np

from emocues import audio as A
from emocues.config import TrainConfig
from emocues.corpus import EpcInstance, Utterance
from emocues.fusion import InitialFusion, MfmBlock, mfm_forward
from emocues.knowledge import KnowledgeBase, RelationKind
from emocues.kwrt import importance_matrices, scale_text_features, squeeze_importance, token_scores
from emocues.model import EmotionModel, ModelInput, Vocab, render_instance
from emocues.nn import tensor as T
from emocues.nn.gradcheck import grad_check
from emocues.nn.layers import LayerNorm, Linear, MultiHeadAttention, TransformerLayer
from emocues.nn.tensor import Tensor, parameter
from emocues.synth import tone

TOLERANCE = 1e-3
DIM = 8
HEADS = 2


def _probe(rng, shape) -> np.ndarray:
    # fixed random projection turning a tensor into a scalar objective
    return rng.normal(size=shape)


def _objective(out: Tensor, probe: np.ndarray) -> Tensor:
    return (out * Tensor(probe)).sum()


def check_linear(rng) -> float:
    lin = Linear(5, 3, rng)
    x = parameter(rng.normal(size=(4, 5)))
    probe = _probe(rng, (4, 3))
    return grad_check(lambda: _objective(lin(x), probe), [x] + lin.parameters())


def check_layer_norm(rng) -> float:
    ln = LayerNorm(6)
    ln.gamma.data[:] = rng.normal(size=6)
    ln.beta.data[:] = rng.normal(size=6)
    x = parameter(rng.normal(size=(3, 6)))
    probe = _probe(rng, (3, 6))
    return grad_check(lambda: _objective(ln(x), probe), [x] + ln.parameters())


def check_attention(rng) -> float:
    mha = MultiHeadAttention(DIM, HEADS, rng)
    q = parameter(rng.normal(size=(3, DIM)))
    kv = parameter(rng.normal(size=(5, DIM)))
    probe = _probe(rng, (3, DIM))
    return grad_check(lambda: _objective(mha(q, kv, kv), probe), [q, kv] + mha.parameters())


def check_transformer_layer(rng) -> float:
    layer = TransformerLayer(DIM, HEADS, rng)
    x = parameter(rng.normal(size=(4, DIM)))
    probe = _probe(rng, (4, DIM))
    return grad_check(lambda: _objective(layer(x), probe), [x] + layer.parameters())


def check_word_scaling(rng) -> float:
    h = parameter(rng.normal(size=(6, DIM)))
    w = parameter(rng.normal(size=1))
    b = parameter(rng.normal(size=1))
    scores = rng.uniform(0, 2, size=6)
    probe = _probe(rng, (6, DIM))
    return grad_check(lambda: _objective(scale_text_features(h, scores, w, b), probe), [h, w, b])


def check_prosody_enhance(rng) -> float:
    enh = A.ProsodyEnhancer(DIM, HEADS, rng)
    enh.norm.gamma.data[:] = rng.normal(size=DIM)
    enh.norm.beta.data[:] = rng.normal(size=DIM)
    h_a = parameter(rng.normal(size=(5, DIM)))
    prosody = rng.uniform(0, 1, size=(5, 2))
    probe = _probe(rng, (5, DIM))
    return grad_check(lambda: _objective(enh(h_a, prosody), probe), [h_a] + enh.parameters())


def check_initial_fusion(rng) -> float:
    fus = InitialFusion(DIM, HEADS, rng)
    f_t = parameter(rng.normal(size=(4, DIM)))
    f_a = parameter(rng.normal(size=(6, DIM)))
    probe = _probe(rng, (6, DIM))
    return grad_check(lambda: _objective(fus(f_t, f_a), probe), [f_t, f_a] + fus.parameters())


def check_mfm_stack(rng) -> float:
    blocks = [MfmBlock(DIM, DIM, HEADS, rng, bridge_len=4) for _ in range(2)]
    f_ta = parameter(rng.normal(size=(5, DIM)))
    f_m = parameter(rng.normal(size=(7, DIM)))
    p1, p2 = _probe(rng, (5, DIM)), _probe(rng, (7, DIM))

    def f():
        out = mfm_forward(f_ta, f_m, blocks)
        return _objective(out.f_m_to_ta, p1) + _objective(out.f_ta_to_m, p2)

    params = [f_ta, f_m] + [p for b in blocks for p in b.parameters()]
    return grad_check(f, params)


def toy_epc_input(rng, cfg: TrainConfig, audio_cfg: A.AudioConfig, kb: KnowledgeBase,
                  lexicon=frozenset({"the", "a", "i"})) -> tuple[ModelInput, Vocab]:
    """A 2-utterance conversation turned into one EPC input, audio synthesised in memory."""
    u1 = Utterance(0, "The kangaroo was asleep, asleep!", 0, None, "A")
    u2 = Utterance(1, "I saw a kangaroo", 1, None, "B")
    inst = EpcInstance("toy", (u1,), 1, u2.speaker, u2.emotion, cfg.window)
    tokens = render_instance(inst)
    vocab = Vocab.build([tokens])
    mats = importance_matrices(tokens, lexicon, kb)
    scores = token_scores(len(tokens), mats.words, squeeze_importance(mats))
    w = A.Waveform(tone(180.0, 0.5, 0.06, audio_cfg.sample_rate, rng), audio_cfg.sample_rate)
    mel = A.normalize_frames(A.mel_spectrogram(w, audio_cfg).frames)
    pros = A.prosody_channels(A.prosody_features(w, audio_cfg), audio_cfg)
    return ModelInput(inst.instance_id, inst.target_label, tokens, vocab.encode(tokens), scores,
                      mel, pros), vocab


def toy_config(**overrides) -> TrainConfig:
    base = dict(model_dim=DIM, spectral_dim=DIM, n_heads=HEADS, n_layers=2, bridge_len=4,
                mfm_blocks=2, ff_mult=2)
    base.update(overrides)
    return TrainConfig(**base)


def check_full_epc(rng, max_coords: int = 3) -> float:
    audio_cfg = A.AudioConfig(n_mels=10)
    cfg = toy_config()
    kb = KnowledgeBase.from_triples([("asleep", RelationKind.HAS_CONTEXT, "kangaroo")])
    inp, vocab = toy_epc_input(rng, cfg, audio_cfg, kb)
    model = EmotionModel(cfg, len(vocab), audio_cfg.n_mels, 2, rng)
    return grad_check(lambda: model.loss(inp)[0], model.parameters(), max_coords=max_coords,
                      rng=np.random.default_rng(1))


CHECKS = {
    "linear": check_linear,
    "layer_norm": check_layer_norm,
    "attention": check_attention,
    "transformer_layer": check_transformer_layer,
    "kwrt_scaling": check_word_scaling,
    "prosody_enhance": check_prosody_enhance,
    "initial_fusion": check_initial_fusion,
    "mfm_stack": check_mfm_stack,
    "full_epc": check_full_epc,
}


def run_gradient_suite(seed: int = 0, names=None) -> dict[str, float]:
    results = {}
    for name, fn in CHECKS.items():
        if names is not None and name not in names:
            continue
        results[name] = fn(np.random.default_rng([seed, len(results)]))
    return results
