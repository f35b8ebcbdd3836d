"""Spectral analysis/synthesis: round trips, compression, WAV I/O."""

import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bridgecm.spectral import (
    ComplexSpectrogram,
    SpectralConfig,
    SpectralError,
    Waveform,
    analyze,
    read_wav,
    synthesize,
    write_wav,
    _compress,
    _decompress,
)

CFG = SpectralConfig()


def random_waveform(rng, n, sr=8000):
    return Waveform(samples=rng.uniform(-0.9, 0.9, size=n), sample_rate=sr)


class TestConfig:
    def test_defaults_are_cola_valid(self):
        assert CFG.n_bins == 129

    def test_rejects_hop_above_n_fft(self):
        with pytest.raises(SpectralError):
            SpectralConfig(n_fft=256, hop=300)

    def test_rejects_non_cola_hop(self):
        # hann at hop 100 of 256 does not tile to a constant
        with pytest.raises(SpectralError):
            SpectralConfig(n_fft=256, hop=100)

    def test_rejects_bad_compression(self):
        with pytest.raises(SpectralError):
            SpectralConfig(compress_exponent=0.0)
        with pytest.raises(SpectralError):
            SpectralConfig(compress_exponent=1.5)
        with pytest.raises(SpectralError):
            SpectralConfig(compress_scale=0.0)


class TestWaveform:
    def test_rejects_non_finite(self):
        with pytest.raises(SpectralError):
            Waveform(samples=np.array([0.0, np.nan]), sample_rate=8000)

    def test_rejects_stereo_shape(self):
        with pytest.raises(SpectralError):
            Waveform(samples=np.zeros((2, 100)), sample_rate=8000)


class TestAnalyze:
    def test_zero_input_gives_zero_spectrogram(self):
        w = Waveform(np.zeros(4096), 8000)
        s = analyze(w, CFG)
        assert np.all(s.planes == 0.0)

    def test_too_short_raises(self):
        with pytest.raises(SpectralError):
            analyze(Waveform(np.zeros(CFG.n_fft - 1), 8000), CFG)

    def test_bin_centered_sine_hits_exactly_one_bin(self):
        # rectangular window, no compression: DFT orthogonality puts all
        # energy of a bin-centered sinusoid into that one bin per frame
        cfg = SpectralConfig(
            n_fft=256, hop=256, window="boxcar",
            compress_exponent=1.0, compress_scale=1.0,
        )
        k = 12
        sr = 8000
        n = 16 * cfg.n_fft
        t = np.arange(n)
        w = Waveform(0.5 * np.sin(2 * np.pi * k * t / cfg.n_fft), sr)
        s = analyze(w, cfg)
        mags = np.abs(s.bins())
        # frames touching the reflection padding are piecewise sinusoids
        interior = mags[:, 2:-2]
        peak = interior[k]
        others = np.delete(interior, k, axis=0)
        assert np.all(peak > 0)
        assert np.max(others / peak[None, :]) <= 1e-10

    def test_dc_and_nyquist_have_zero_imaginary_part(self):
        rng = np.random.default_rng(0)
        s = analyze(random_waveform(rng, 4096), CFG)
        assert np.all(s.planes[1, 0, :] == 0.0)
        assert np.all(s.planes[1, -1, :] == 0.0)

    def test_linearity_without_compression(self):
        cfg = SpectralConfig(compress_exponent=1.0, compress_scale=1.0)
        rng = np.random.default_rng(1)
        w1 = random_waveform(rng, 2048)
        w2 = random_waveform(rng, 2048)
        s1 = analyze(w1, cfg).planes
        s2 = analyze(w2, cfg).planes
        s12 = analyze(Waveform(w1.samples + w2.samples, 8000), cfg).planes
        np.testing.assert_allclose(s12, s1 + s2, atol=1e-9)


class TestSynthesize:
    def test_zero_spectrogram_gives_zero_waveform(self):
        s = ComplexSpectrogram(np.zeros((2, CFG.n_bins, 10)), CFG)
        w = synthesize(s, CFG)
        assert np.all(w.samples == 0.0)

    def test_mismatched_config_raises(self):
        other = SpectralConfig(compress_scale=0.2)
        s = ComplexSpectrogram(np.zeros((2, CFG.n_bins, 10)), CFG)
        with pytest.raises(SpectralError):
            synthesize(s, other)

    def test_round_trip_interior(self):
        rng = np.random.default_rng(2)
        w = random_waveform(rng, 8192)
        back = synthesize(analyze(w, CFG), CFG)
        assert len(back) == len(w)
        lo, hi = CFG.n_fft, len(w) - CFG.n_fft
        err = np.linalg.norm(back.samples[lo:hi] - w.samples[lo:hi])
        assert err / np.linalg.norm(w.samples[lo:hi]) <= 1e-6

    @settings(max_examples=20, deadline=None)
    @given(
        seed=st.integers(0, 2**32 - 1),
        n_hops=st.integers(16, 64),
    )
    def test_round_trip_property(self, seed, n_hops):
        rng = np.random.default_rng(seed)
        w = random_waveform(rng, n_hops * CFG.hop)
        back = synthesize(analyze(w, CFG), CFG)
        lo, hi = CFG.n_fft, len(w) - CFG.n_fft
        rel = np.linalg.norm(back.samples[lo:hi] - w.samples[lo:hi]) / max(
            np.linalg.norm(w.samples[lo:hi]), 1e-30
        )
        assert rel <= 1e-6


class TestCompression:
    def test_inverse_is_exact(self):
        mags = np.geomspace(1e-8, 1e3, 200)
        a, beta = CFG.compress_exponent, CFG.compress_scale
        back = np.abs(_decompress(_compress(mags.astype(complex), a, beta), a, beta))
        np.testing.assert_allclose(back, mags, rtol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(
        m1=st.floats(0, 1e6, allow_nan=False),
        m2=st.floats(0, 1e6, allow_nan=False),
    )
    def test_order_preserved(self, m1, m2):
        a, beta = 0.5, 0.15
        c1 = np.abs(_compress(np.complex128(m1), a, beta))
        c2 = np.abs(_compress(np.complex128(m2), a, beta))
        if m1 <= m2:
            assert c1 <= c2
        else:
            assert c1 >= c2


class TestWavIO:
    def test_pcm16_round_trip_error_bound(self, tmp_path):
        rng = np.random.default_rng(3)
        w = random_waveform(rng, 4000)
        path = tmp_path / "x.wav"
        write_wav(path, w)
        back = read_wav(path)
        assert back.sample_rate == w.sample_rate
        assert len(back) == len(w)
        assert np.max(np.abs(back.samples - w.samples)) <= 1.0 / 32768.0

    def test_rejects_stereo(self, tmp_path):
        path = tmp_path / "stereo.wav"
        with wave.open(str(path), "wb") as f:
            f.setnchannels(2)
            f.setsampwidth(2)
            f.setframerate(8000)
            f.writeframes(b"\x00\x00" * 200)
        with pytest.raises(SpectralError, match="mono"):
            read_wav(path)

    def test_rejects_wrong_sample_width(self, tmp_path):
        path = tmp_path / "w8.wav"
        with wave.open(str(path), "wb") as f:
            f.setnchannels(1)
            f.setsampwidth(1)
            f.setframerate(8000)
            f.writeframes(b"\x00" * 100)
        with pytest.raises(SpectralError, match="16-bit"):
            read_wav(path)

    def test_rejects_non_pcm(self, tmp_path):
        # hand-build a float-format WAV header (format tag 3)
        path = tmp_path / "f32.wav"
        data = np.zeros(64, dtype="<f4").tobytes()
        hdr = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
        hdr += b"fmt " + struct.pack("<IHHIIHH", 16, 3, 1, 8000, 32000, 4, 32)
        hdr += b"data" + struct.pack("<I", len(data))
        path.write_bytes(hdr + data)
        with pytest.raises(SpectralError):
            read_wav(path)
