"""Waveform I/O, log-mel spectrograms, frame-level prosody, and prosody enhancement."""
from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from emocues.errors import ParseError, ValidationError
from emocues.nn import tensor as T
from emocues.nn.layers import LayerNorm, Linear, Module, TransformerLayer, sinusoidal_positions
from emocues.nn.tensor import Tensor


@dataclass(frozen=True)
class AudioConfig:
    sample_rate: int = 16000
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 80
    n_fft: int = 512
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10
    f0_min: float = 50.0
    f0_max: float = 600.0
    voicing_threshold: float = 0.3

    @property
    def win_length(self) -> int:
        return int(round(self.win_ms * self.sample_rate / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000))


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        if self.samples.size == 0:
            raise ValidationError("empty waveform")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class MelSpectrogram:
    frames: np.ndarray  # (T, n_mels) log-mel energies
    frame_hop: float
    window: float

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class ProsodyFrames:
    f0: np.ndarray
    energy: np.ndarray

    def __len__(self) -> int:
        return len(self.f0)


class TooShortError(ValidationError):
    pass


# -- I/O ------------------------------------------------------------------

def read_wav(path: str | Path, target_rate: int = 16000) -> Waveform:
    """Read a mono 16-bit PCM or 32-bit float WAV, normalised to [-1, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except (ValueError, EOFError, struct.error) as exc:
        raise ParseError(f"unreadable WAV ({exc})", path) from None
    if data.ndim != 1:
        raise ParseError(f"unsupported format: {data.shape[1]} channels (mono required)", path)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        x = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise ParseError(f"unsupported sample type {data.dtype}", path)
    if rate != target_rate:
        x = resample_linear(x, rate, target_rate)
    return Waveform(x, target_rate)


def write_wav(path: str | Path, w: Waveform) -> None:
    pcm = np.round(np.clip(w.samples, -1.0, 32767 / 32768) * 32768.0).astype(np.int16)
    wavfile.write(path, w.sample_rate, pcm)


def resample_linear(x: np.ndarray, rate: int, target_rate: int) -> np.ndarray:
    n_out = int(round(len(x) * target_rate / rate))
    t_out = np.arange(n_out) / target_rate
    t_in = np.arange(len(x)) / rate
    return np.interp(t_out, t_in, x)


# -- framing and spectra --------------------------------------------------

def n_frames(n_samples: int, cfg: AudioConfig) -> int:
    if n_samples < cfg.win_length:
        return 0
    return 1 + (n_samples - cfg.win_length) // cfg.hop_length


def frame_signal(x: np.ndarray, cfg: AudioConfig) -> np.ndarray:
    t = n_frames(len(x), cfg)
    if t == 0:
        raise TooShortError(
            f"waveform of {len(x)} samples is shorter than one {cfg.win_length}-sample window")
    idx = np.arange(cfg.win_length)[None, :] + cfg.hop_length * np.arange(t)[:, None]
    return x[idx]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: AudioConfig) -> np.ndarray:
    """n_mels + 2 frequencies (Hz): filter k spans edges[k]..edges[k+2], peaking at edges[k+1]."""
    return mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))


def mel_center_frequencies(cfg: AudioConfig) -> np.ndarray:
    return mel_band_edges(cfg)[1:-1]


def mel_filterbank(cfg: AudioConfig) -> np.ndarray:
    """Triangular HTK-scale filters, shape (n_mels, n_fft // 2 + 1), peak weight 1."""
    edges = mel_band_edges(cfg)
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def _hann(n: int) -> np.ndarray:
    # periodic Hann
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def mel_spectrogram(w: Waveform, cfg: AudioConfig = AudioConfig()) -> MelSpectrogram:
    frames = frame_signal(w.samples, cfg) * _hann(cfg.win_length)
    power = np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=1)) ** 2
    mel = power @ mel_filterbank(cfg).T
    return MelSpectrogram(np.log(np.maximum(mel, cfg.log_floor)),
                          cfg.hop_length / cfg.sample_rate, cfg.win_length / cfg.sample_rate)


# -- prosody --------------------------------------------------------------

def normalized_autocorrelation(frames: np.ndarray, min_lag: int, max_lag: int) -> np.ndarray:
    """Per-frame normalised cross-correlation for lags min_lag..max_lag, shape (T, n_lags)."""
    x = frames - frames.mean(axis=1, keepdims=True)
    n = x.shape[1]
    sq = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(x * x, axis=1)], axis=1)
    out = np.zeros((x.shape[0], max_lag - min_lag + 1))
    for j, lag in enumerate(range(min_lag, max_lag + 1)):
        num = np.einsum("ij,ij->i", x[:, :n - lag], x[:, lag:])
        e_head = sq[:, n - lag]
        e_tail = sq[:, n] - sq[:, lag]
        den = np.sqrt(e_head * e_tail)
        out[:, j] = np.divide(num, den, out=np.zeros_like(num), where=den > 1e-12)
    return out


def prosody_features(w: Waveform, cfg: AudioConfig = AudioConfig()) -> ProsodyFrames:
    """Autocorrelation F0 (0 when unvoiced) and RMS energy per analysis frame."""
    frames = frame_signal(w.samples, cfg)
    energy = np.sqrt((frames * frames).mean(axis=1))
    sr = cfg.sample_rate
    min_lag = int(math.ceil(sr / cfg.f0_max))
    max_lag = min(int(math.floor(sr / cfg.f0_min)), cfg.win_length - 2)
    r = normalized_autocorrelation(frames, min_lag, max_lag)
    f0 = np.zeros(len(frames))
    for t, row in enumerate(r):
        peak = row.max()
        if peak < cfg.voicing_threshold:
            continue
        # first local maximum close to the global one avoids picking a multiple of the period
        j = int(row.argmax())
        for i in range(1, len(row) - 1):
            if row[i] >= row[i - 1] and row[i] >= row[i + 1] and row[i] >= 0.9 * peak:
                j = i
                break
        offset = 0.0
        if 0 < j < len(row) - 1:
            a, b, c = row[j - 1], row[j], row[j + 1]
            denom = a - 2 * b + c
            if denom < 0:
                offset = 0.5 * (a - c) / denom
        freq = sr / (min_lag + j + offset)
        if cfg.f0_min <= freq <= cfg.f0_max:
            f0[t] = freq
    return ProsodyFrames(f0, energy)


def prosody_channels(p: ProsodyFrames, cfg: AudioConfig = AudioConfig()) -> np.ndarray:
    """(T, 2) model input: F0 scaled by the top of the search range, and RMS energy."""
    return np.stack([p.f0 / cfg.f0_max, p.energy], axis=1)


def normalize_frames(frames: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Per-utterance mean/variance normalisation of each feature column."""
    mu = frames.mean(axis=0, keepdims=True)
    sd = frames.std(axis=0, keepdims=True)
    return (frames - mu) / np.sqrt(sd * sd + eps)


def featurize_file(path: str | Path, cfg: AudioConfig = AudioConfig()):
    w = read_wav(path, cfg.sample_rate)
    return mel_spectrogram(w, cfg), prosody_features(w, cfg)


def write_feature_files(manifest_path: Path, source: str, mel: MelSpectrogram,
                        pros: ProsodyFrames, cfg: AudioConfig) -> Path:
    """Write a JSON manifest and a little-endian float32 blob (mel, then f0, then energy)."""
    blob_path = manifest_path.with_suffix(".bin")
    arrays = [("mel", mel.frames), ("f0", pros.f0), ("energy", pros.energy)]
    entries, chunks, offset = [], [], 0
    for name, arr in arrays:
        raw = arr.astype("<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32",
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {"source": source, "blob": blob_path.name, "frame_hop": mel.frame_hop,
                "window": mel.window, "n_frames": mel.n_frames, "n_mels": mel.n_mels,
                "config": asdict(cfg), "arrays": entries}
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    blob_path.write_bytes(b"".join(chunks))
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def read_feature_files(manifest_path: str | Path) -> dict[str, np.ndarray]:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    blob = (manifest_path.parent / manifest["blob"]).read_bytes()
    out = {}
    for e in manifest["arrays"]:
        count = int(np.prod(e["shape"], dtype=int))
        out[e["name"]] = np.frombuffer(blob, "<f4", count, e["offset"]).reshape(e["shape"])
    return out


# -- prosody enhancement --------------------------------------------------

class ProsodyEncoder(Module):
    """Stand-in prosody encoder: frames of h_a joined with (F0, energy), one transformer layer."""

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator, n_prosody: int = 2,
                 ff_mult: int = 4, dropout: float = 0.0):
        self.in_proj = Linear(dim + n_prosody, dim, rng)
        self.layer = TransformerLayer(dim, n_heads, rng, ff_mult, dropout)
        self.out_proj = Linear(dim, dim, rng)

    def forward(self, h_a: Tensor, prosody: np.ndarray, rng=None) -> Tensor:
        if prosody.shape[0] != h_a.shape[0]:
            raise ValueError(f"{h_a.shape[0]} audio frames but {prosody.shape[0]} prosody frames")
        x = self.in_proj(T.concat([h_a, Tensor(prosody)], axis=1))
        x = x + Tensor(sinusoidal_positions(x.shape[0], x.shape[1]))
        return self.out_proj(self.layer(x, rng))


class ProsodyEnhancer(Module):
    """``F_a = h_a + LN(Enc(h_a))``."""

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator, ff_mult: int = 4,
                 dropout: float = 0.0):
        self.encoder = ProsodyEncoder(dim, n_heads, rng, ff_mult=ff_mult, dropout=dropout)
        self.norm = LayerNorm(dim)

    def forward(self, h_a: Tensor, prosody: np.ndarray, rng=None) -> Tensor:
        return h_a + self.norm(self.encoder(h_a, prosody, rng))


def prosody_enhance(h_a: Tensor, enhancer: ProsodyEnhancer, prosody: np.ndarray) -> Tensor:
    return enhancer(h_a, prosody)
