"""End-to-end network and the featurisation that feeds it."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from emocues import audio as A
from emocues.config import TrainConfig
from emocues.corpus import EpcInstance, ErcInstance, Utterance, render_speaker_sequence
from emocues.errors import ValidationError
from emocues.fusion import InitialFusion, Logits, MfmBlock, classify, classify_single, mfm_forward
from emocues.knowledge import KnowledgeBase
from emocues.kwrt import importance_matrices, scale_text_features, squeeze_importance, token_scores
from emocues.nn import tensor as T
from emocues.nn.layers import Linear, Module, TransformerEncoder, sinusoidal_positions
from emocues.nn.tensor import Tensor

UNK = "[unk]"
N_RESERVED_SPEAKERS = 8

Instance = EpcInstance | ErcInstance


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, token_lists) -> "Vocab":
        reserved = [UNK] + [f"[s{i}]" for i in range(1, N_RESERVED_SPEAKERS + 1)]
        seen = set(reserved)
        extra = sorted({t for tl in token_lists for t in tl} - seen)
        return cls(reserved + extra)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        unk = self.index[UNK]
        return np.array([self.index.get(t, unk) for t in tokens], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class ModelInput:
    instance_id: str
    label: int
    tokens: list[str]
    token_ids: np.ndarray
    scores: np.ndarray          # per token; speaker tokens 0
    mel: np.ndarray | None      # (T, n_mels), per-utterance normalised
    prosody: np.ndarray | None  # (T, 2)


def instance_utterances(inst: Instance) -> tuple[Utterance, ...]:
    return inst.history if isinstance(inst, EpcInstance) else inst.context


def render_instance(inst: Instance) -> list[str]:
    if isinstance(inst, EpcInstance):
        return render_speaker_sequence(inst.history, next_speaker=inst.target_speaker)
    return render_speaker_sequence(inst.context)


class Featurizer:
    """Turns corpus instances into model inputs, caching per-file audio features."""

    def __init__(self, cfg: TrainConfig, audio_cfg: A.AudioConfig, kb: KnowledgeBase,
                 lexicon: frozenset[str], vocab: Vocab | None = None):
        self.cfg = cfg
        self.audio_cfg = audio_cfg
        self.kb = kb
        self.lexicon = lexicon
        self.vocab = vocab
        self._audio_cache: dict[Path, tuple[np.ndarray, np.ndarray]] = {}

    def audio_features(self, path: Path) -> tuple[np.ndarray, np.ndarray]:
        if path not in self._audio_cache:
            mel, pros = A.featurize_file(path, self.audio_cfg)
            self._audio_cache[path] = (A.normalize_frames(mel.frames),
                                       A.prosody_channels(pros, self.audio_cfg))
        return self._audio_cache[path]

    def __call__(self, inst: Instance) -> ModelInput:
        if self.vocab is None:
            raise RuntimeError("featurizer has no vocabulary")
        tokens = render_instance(inst)
        mats = importance_matrices(tokens, self.lexicon, self.kb)
        scores = token_scores(len(tokens), mats.words, squeeze_importance(mats))
        mel = pros = None
        if self.cfg.uses_audio:
            feats = [self.audio_features(u.audio) for u in instance_utterances(inst) if u.audio]
            if not feats:
                raise ValidationError(f"instance {inst.instance_id}: no audio for an audio modality")
            mel = np.concatenate([m for m, _ in feats])
            pros = np.concatenate([p for _, p in feats])
        return ModelInput(inst.instance_id, inst.target_label, tokens, self.vocab.encode(tokens),
                          scores, mel, pros)


class EmotionModel(Module):
    """Text encoder + word-importance gate, audio encoder + prosody residual, two-step fusion."""

    def __init__(self, cfg: TrainConfig, vocab_size: int, n_mels: int, n_classes: int,
                 rng: np.random.Generator):
        self.cfg = cfg
        d, dv, h = cfg.model_dim, cfg.spectral_dim, cfg.n_heads
        if cfg.uses_text:
            self.embedding = T.parameter(rng.normal(0.0, 1.0, size=(vocab_size, d)))
            self.text_encoder = TransformerEncoder(d, h, cfg.n_layers, rng, cfg.ff_mult, cfg.dropout)
            if not cfg.no_kwrt:
                # gate starts at 1 + score so the text path is open at initialisation
                self.kwrt_weight = T.parameter(np.ones(1))
                self.kwrt_bias = T.parameter(np.ones(1))
        if cfg.uses_audio:
            self.mel_proj = Linear(n_mels, d, rng)
            self.audio_encoder = TransformerEncoder(d, h, cfg.n_layers, rng, cfg.ff_mult, cfg.dropout)
            if not cfg.no_pe:
                self.enhancer = A.ProsodyEnhancer(d, h, rng, cfg.ff_mult, cfg.dropout)
        multimodal = cfg.modality == "T+S"
        if multimodal:
            self.initial = InitialFusion(d, h, rng)
        if multimodal and not cfg.no_tmf:
            width = n_mels * (cfg.patch_frames if cfg.mel_mode == "patch" else 1)
            self.mel_branch = Linear(width, dv, rng)
            self.blocks = [MfmBlock(d, dv, h, rng, cfg.bridge_len, cfg.mlp_depth, cfg.ff_mult,
                                    cfg.dropout) for _ in range(cfg.mfm_blocks)]
            self.head_a = Linear(d, n_classes, rng)
            self.head_b = Linear(dv, n_classes, rng)
        else:
            self.head_a = Linear(d, n_classes, rng)

    # -- branches ---------------------------------------------------------
    def text_features(self, inp: ModelInput, rng=None) -> Tensor:
        x = self.embedding[inp.token_ids]
        x = x + Tensor(sinusoidal_positions(x.shape[0], x.shape[1]))
        h_t = self.text_encoder(x, rng)
        if self.cfg.no_kwrt:
            return h_t
        return scale_text_features(h_t, inp.scores, self.kwrt_weight, self.kwrt_bias)

    def audio_features(self, inp: ModelInput, rng=None) -> Tensor:
        x = self.mel_proj(Tensor(inp.mel))
        x = x + Tensor(sinusoidal_positions(x.shape[0], x.shape[1]))
        h_a = self.audio_encoder(x, rng)
        if self.cfg.no_pe:
            return h_a
        return self.enhancer(h_a, inp.prosody, rng)

    def mel_tokens(self, mel: np.ndarray) -> Tensor:
        if self.cfg.mel_mode == "patch":
            p = self.cfg.patch_frames
            n = -(-mel.shape[0] // p)
            padded = np.zeros((n * p, mel.shape[1]))
            padded[:mel.shape[0]] = mel
            mel = padded.reshape(n, p * mel.shape[1])
        x = self.mel_branch(Tensor(mel))
        return x + Tensor(sinusoidal_positions(x.shape[0], x.shape[1]))

    def forward(self, inp: ModelInput, rng=None) -> Logits:
        cfg = self.cfg
        if cfg.modality == "T":
            return classify_single(self.text_features(inp, rng), self.head_a)
        if cfg.modality == "S":
            return classify_single(self.audio_features(inp, rng), self.head_a)
        f_t = self.text_features(inp, rng)
        f_a = self.audio_features(inp, rng)
        f_ta = self.initial(f_t, f_a)
        if cfg.no_tmf:
            return classify_single(f_ta, self.head_a)
        fused = mfm_forward(f_ta, self.mel_tokens(inp.mel), self.blocks, rng)
        return classify(fused.f_m_to_ta, fused.f_ta_to_m, self.head_a, self.head_b)

    def loss(self, inp: ModelInput, rng=None) -> tuple[Tensor, Logits]:
        logits = self(inp, rng)
        return T.cross_entropy(logits.averaged, inp.label), logits
