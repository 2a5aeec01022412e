"""Synthetic conversations with matching WAV files, for smoke tests and demos.

Each conversation carries one dominant emotion expressed both in the words
(a per-emotion lexicon, much of it covered by the bundled sample KB) and in
the audio (a harmonic tone whose pitch and loudness depend on the emotion).
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from emocues.audio import Waveform, write_wav
from emocues.corpus import Conversation, Utterance, dump_conversations

LEXICON = {
    "hap": ["happy", "joy", "smile", "laugh", "party", "gift", "sunshine", "birthday"],
    "sad": ["sad", "tears", "lonely", "grief", "loss", "rain", "cry", "funeral"],
    "ang": ["anger", "furious", "insult", "unfair", "rage", "shout", "traffic", "stress"],
    "neu": ["lunch", "weather", "work", "coffee", "dinner", "meeting", "table", "movie"],
    "sur": ["wow", "sudden", "unexpected", "shock", "gasp", "news", "whoa", "amazing"],
    "fea": ["afraid", "dark", "scared", "danger", "panic", "alone", "noise", "threat"],
    "dis": ["gross", "rotten", "dirty", "smell", "yuck", "mold", "filth", "sick"],
}
PITCH = {"hap": 260.0, "sad": 150.0, "ang": 330.0, "neu": 200.0, "sur": 400.0, "fea": 290.0,
         "dis": 120.0}
LOUDNESS = {"hap": 0.5, "sad": 0.2, "ang": 0.8, "neu": 0.4, "sur": 0.6, "fea": 0.3, "dis": 0.35}
FILLERS = ["the", "a", "i", "you", "it", "is", "was", "and", "so", "we"]


def tone(freq: float, amp: float, duration: float, sr: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(int(round(duration * sr))) / sr
    x = sum(np.sin(2 * np.pi * k * freq * t) / k for k in (1, 2, 3))
    x = amp * x / np.max(np.abs(x))
    return np.clip(x + rng.normal(0.0, 0.01, size=x.shape), -1.0, 1.0)


def make_corpus(out_dir: str | Path, n_conversations: int = 8, n_utterances: int = 5,
                labels: tuple[str, ...] = ("hap", "sad", "ang", "neu"), seed: int = 0,
                duration: float = 0.2, sample_rate: int = 16000, with_audio: bool = True,
                label_noise: float = 0.0, name: str = "corpus.jsonl") -> Path:
    """Write ``name`` (and WAVs under ``wav/``) to ``out_dir``; returns the JSONL path."""
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    convs = []
    for c in range(n_conversations):
        dominant = c % len(labels)
        utts = []
        for u in range(n_utterances):
            emo = dominant
            if label_noise > 0 and rng.random() < label_noise:
                emo = int(rng.integers(len(labels)))
            name_ = labels[emo]
            words = list(rng.choice(LEXICON[name_], size=3, replace=False))
            words += list(rng.choice(FILLERS, size=2, replace=False))
            rng.shuffle(words)
            text = " ".join(words).capitalize() + "."
            audio = None
            if with_audio:
                audio = wav_dir / f"c{c:03d}_u{u:02d}.wav"
                pitch = PITCH[name_] * (1.0 + rng.uniform(-0.03, 0.03))
                write_wav(audio, Waveform(tone(pitch, LOUDNESS[name_], duration, sample_rate, rng),
                                          sample_rate))
            utts.append(Utterance(u % 2, text, emo, audio, "AB"[u % 2]))
        convs.append(Conversation(f"conv{c:03d}", tuple(utts), tuple(labels)))
    path = out_dir / name
    dump_conversations(path, convs)
    return path
