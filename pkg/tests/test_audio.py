import numpy as np
import pytest
from scipy.io import wavfile

from emocues import audio as A
from emocues.errors import ParseError
from emocues.nn.tensor import Tensor

CFG = A.AudioConfig()
SR = CFG.sample_rate


def _sine(freq, seconds=0.5, amp=0.5, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


def test_frame_count_closed_form():
    for n in (399, 400, 401, 559, 560, 16000):
        assert A.n_frames(n, CFG) == (0 if n < 400 else 1 + (n - 400) // 160)
    with pytest.raises(A.TooShortError):
        A.mel_spectrogram(A.Waveform(np.zeros(399), SR))


def test_filterbank_matches_triangle_formula():
    fb = A.mel_filterbank(CFG)
    assert fb.shape == (80, 257)
    edges = 700 * (10 ** (np.linspace(0, 2595 * np.log10(1 + 8000 / 700), 82) / 2595) - 1)
    freqs = np.arange(257) * SR / 512
    k = 20
    lo, mid, hi = edges[k], edges[k + 1], edges[k + 2]
    for j, f in enumerate(freqs):
        expect = (f - lo) / (mid - lo) if lo <= f <= mid else (hi - f) / (hi - mid) if mid < f <= hi else 0
        assert fb[k, j] == pytest.approx(expect, abs=1e-12)


def test_time_shift_moves_frames(rng):
    x = rng.normal(size=SR // 2) * 0.1
    shifted = np.concatenate([np.zeros(CFG.hop_length), x])
    a = A.mel_spectrogram(A.Waveform(x, SR)).frames
    b = A.mel_spectrogram(A.Waveform(shifted, SR)).frames
    np.testing.assert_allclose(b[1:], a[:len(b) - 1], atol=1e-9)


def test_silence_is_log_floor_and_unvoiced():
    w = A.Waveform(np.zeros(SR // 4), SR)
    assert np.all(A.mel_spectrogram(w).frames == np.log(1e-10))
    p = A.prosody_features(w)
    assert np.all(p.f0 == 0) and np.all(p.energy == 0)


@pytest.mark.parametrize("freq", [100.0, 150.0, 333.0, 550.0])
def test_f0_of_pure_tones(freq):
    f0 = A.prosody_features(A.Waveform(_sine(freq), SR)).f0
    assert np.all(f0 > 0)
    assert abs(np.median(f0) - freq) < 2.0


def test_energy_doubles_with_amplitude():
    a = A.prosody_features(A.Waveform(_sine(220, amp=0.2), SR)).energy
    b = A.prosody_features(A.Waveform(_sine(220, amp=0.4), SR)).energy
    np.testing.assert_allclose(b, 2 * a, rtol=1e-12)
    # RMS of a full-period sine is amp / sqrt(2)
    assert np.median(a) == pytest.approx(0.2 / np.sqrt(2), rel=1e-2)


def test_resample_8k_to_16k(tmp_path):
    x = _sine(200, seconds=0.5, sr=8000)
    wavfile.write(tmp_path / "a.wav", 8000, x.astype(np.float32))
    w = A.read_wav(tmp_path / "a.wav", 16000)
    assert w.sample_rate == 16000 and len(w.samples) == 8000
    ref = _sine(200, seconds=0.5, sr=16000)
    assert np.max(np.abs(w.samples[:-2] - ref[:-2])) <= 1e-2


def test_wav_round_trip_and_stereo_rejected(tmp_path):
    x = _sine(300, seconds=0.1)
    A.write_wav(tmp_path / "m.wav", A.Waveform(x, SR))
    w = A.read_wav(tmp_path / "m.wav")
    assert np.max(np.abs(w.samples - x)) <= 1 / 32768
    wavfile.write(tmp_path / "s.wav", SR, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(ParseError, match="mono"):
        A.read_wav(tmp_path / "s.wav")
    with pytest.raises(FileNotFoundError):
        A.read_wav(tmp_path / "missing.wav")


def test_feature_files_round_trip(tmp_path):
    w = A.Waveform(_sine(250, seconds=0.2), SR)
    mel, pros = A.mel_spectrogram(w), A.prosody_features(w)
    m = A.write_feature_files(tmp_path / "f.json", "x.wav", mel, pros, CFG)
    back = A.read_feature_files(m)
    np.testing.assert_array_equal(back["mel"], mel.frames.astype("<f4"))
    np.testing.assert_array_equal(back["f0"], pros.f0.astype("<f4"))
    assert (tmp_path / "f.bin").stat().st_size == 4 * (mel.frames.size + 2 * len(pros.f0))


def test_enhancer_with_zero_gain_is_identity(rng):
    enh = A.ProsodyEnhancer(8, 2, rng)
    enh.norm.gamma.data[:] = 0.0
    h = rng.normal(size=(6, 8))
    pros = rng.uniform(size=(6, 2))
    np.testing.assert_array_equal(enh(Tensor(h), pros).data, h)
    enh.norm.beta.data[:] = 0.75
    np.testing.assert_allclose(enh(Tensor(h), pros).data, h + 0.75, atol=1e-15)


def test_enhancer_residual_is_normalised(rng):
    enh = A.ProsodyEnhancer(8, 2, rng)
    h = rng.normal(size=(5, 8))
    delta = enh(Tensor(h), rng.uniform(size=(5, 2))).data - h
    np.testing.assert_allclose(delta.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(delta.var(axis=1), 1, atol=1e-3)


def test_one_second_has_98_frames():
    assert A.mel_spectrogram(A.Waveform(_sine(440, seconds=1.0), SR)).n_frames == 98


def test_read_sixteen_bit_and_zero_files(tmp_path):
    wavfile.write(tmp_path / "z.wav", SR, np.zeros(SR, dtype=np.int16))
    w = A.read_wav(tmp_path / "z.wav")
    assert len(w.samples) == 16000 and not w.samples.any()
    (tmp_path / "bad.wav").write_bytes(b"RIFF\x00\x00")
    with pytest.raises(ParseError):
        A.read_wav(tmp_path / "bad.wav")


def test_amplitude_leaves_f0_unchanged():
    a = A.prosody_features(A.Waveform(_sine(180, amp=0.2), SR)).f0
    b = A.prosody_features(A.Waveform(_sine(180, amp=0.4), SR)).f0
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_enhancer_with_silent_encoder(rng):
    enh = A.ProsodyEnhancer(8, 2, rng)
    enh.encoder.out_proj.zero_()
    h = rng.normal(size=(4, 8))
    pros = rng.uniform(size=(4, 2))
    np.testing.assert_array_equal(enh(Tensor(h), pros).data, h)
    enh.norm.beta.data[:] = -1.25
    np.testing.assert_array_equal(enh(Tensor(h), pros).data, h - 1.25)
    with pytest.raises(ValueError):
        enh(Tensor(h), pros[:3])
