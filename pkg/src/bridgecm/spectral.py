"""Waveform to compressed complex spectrogram conversion and back.

The model operates on one-sided STFTs whose bin magnitudes are power-law
compressed, stored as two stacked real planes (real part, imaginary part)
of shape (2, F, L). Analysis centers each frame with reflection padding;
synthesis uses weighted overlap-add with per-sample window-square
normalization, so the round trip is exact (up to FFT rounding) away from
the padded edges.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import check_COLA, get_window


class SpectralError(ValueError):
    """Raised for invalid waveforms, configs, or WAV files."""


@dataclass(frozen=True)
class SpectralConfig:
    """STFT geometry plus magnitude-compression constants.

    compress_exponent is the power-law exponent applied to bin magnitudes
    (in (0, 1]); compress_scale is the multiplicative factor applied after
    compression. The window must satisfy constant overlap-add at the
    chosen hop so synthesis can invert analysis.
    """

    n_fft: int = 256
    hop: int = 64
    window: str = "hann"
    compress_exponent: float = 0.5
    compress_scale: float = 0.15
    sample_rate: int = 8000

    def __post_init__(self):
        if self.n_fft < 2:
            raise SpectralError(f"n_fft must be >= 2, got {self.n_fft}")
        if not 0 < self.hop <= self.n_fft:
            raise SpectralError(
                f"hop must be in [1, n_fft={self.n_fft}], got {self.hop}"
            )
        if not 0.0 < self.compress_exponent <= 1.0:
            raise SpectralError(
                f"compress_exponent must be in (0, 1], got {self.compress_exponent}"
            )
        if self.compress_scale <= 0.0:
            raise SpectralError(
                f"compress_scale must be > 0, got {self.compress_scale}"
            )
        if self.sample_rate <= 0:
            raise SpectralError(f"sample_rate must be > 0, got {self.sample_rate}")
        if not check_COLA(self.window, self.n_fft, self.n_fft - self.hop):
            raise SpectralError(
                f"window {self.window!r} does not satisfy COLA at hop {self.hop}"
            )

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def window_array(self) -> np.ndarray:
        # periodic (DFT-even) window, as required by the COLA check above
        return get_window(self.window, self.n_fft, fftbins=True).astype(np.float64)

    def frames_for(self, n_samples: int) -> int:
        """Number of analysis frames for a centered STFT of n_samples."""
        return 1 + n_samples // self.hop


@dataclass
class Waveform:
    """Mono time-domain signal with samples nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise SpectralError(f"expected mono 1-D samples, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise SpectralError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise SpectralError(f"sample_rate must be > 0, got {self.sample_rate}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class ComplexSpectrogram:
    """Compressed one-sided STFT as stacked real/imaginary planes (2, F, L)."""

    planes: np.ndarray
    config: SpectralConfig = field(repr=False)

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float64)
        if self.planes.ndim != 3 or self.planes.shape[0] != 2:
            raise SpectralError(
                f"planes must have shape (2, F, L), got {self.planes.shape}"
            )
        if self.planes.shape[1] != self.config.n_bins:
            raise SpectralError(
                f"expected {self.config.n_bins} frequency bins (n_fft/2 + 1), "
                f"got {self.planes.shape[1]}"
            )
        if not np.all(np.isfinite(self.planes)):
            raise SpectralError("spectrogram contains non-finite entries")

    @property
    def n_frames(self) -> int:
        return self.planes.shape[2]

    def bins(self) -> np.ndarray:
        """Complex view (F, L) of the stacked planes."""
        return self.planes[0] + 1j * self.planes[1]


def _compress(bins: np.ndarray, a: float, beta: float) -> np.ndarray:
    # s -> beta * |s|^a * exp(i*angle(s)), computed as s * beta * |s|^(a-1)
    # so bins that are exactly real (DC, Nyquist) stay exactly real.
    mag = np.abs(bins)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > 0.0, beta * mag ** (a - 1.0), 0.0)
    return bins * scale


def _decompress(bins: np.ndarray, a: float, beta: float) -> np.ndarray:
    mag = np.abs(bins)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > 0.0, (mag / beta) ** (1.0 / a) / mag, 0.0)
    return bins * scale


def analyze(w: Waveform, cfg: SpectralConfig) -> ComplexSpectrogram:
    """Centered one-sided STFT with per-bin magnitude compression.

    Args:
        w: input waveform, at least n_fft samples long.
        cfg: STFT geometry and compression constants.

    Returns:
        ComplexSpectrogram with planes of shape (2, n_fft/2 + 1, L) where
        L = 1 + len(w) // hop.
    """
    if len(w) < cfg.n_fft:
        raise SpectralError(
            f"waveform too short: {len(w)} samples, need >= n_fft = {cfg.n_fft}"
        )
    pad = cfg.n_fft // 2
    x = np.pad(w.samples, pad, mode="reflect")
    n_frames = cfg.frames_for(len(w))
    win = cfg.window_array()
    offsets = np.arange(n_frames) * cfg.hop
    frames = np.stack([x[o : o + cfg.n_fft] for o in offsets])
    spec = np.fft.rfft(frames * win, axis=1).T  # (F, L)
    spec = _compress(spec, cfg.compress_exponent, cfg.compress_scale)
    return ComplexSpectrogram(
        planes=np.stack([spec.real, spec.imag]), config=cfg
    )


def synthesize(s: ComplexSpectrogram, cfg: SpectralConfig) -> Waveform:
    """Invert the compression, then weighted overlap-add inverse STFT.

    The returned waveform has (L - 1) * hop samples: the centering pad is
    trimmed, so inputs whose length is a hop multiple round-trip to their
    exact length.
    """
    if cfg.compress_scale <= 0.0:
        raise SpectralError("compress_scale must be > 0")
    if s.config != cfg:
        raise SpectralError("spectrogram was produced with a different config")
    bins = _decompress(s.bins(), cfg.compress_exponent, cfg.compress_scale)
    frames = np.fft.irfft(bins.T, n=cfg.n_fft, axis=1)  # (L, n_fft)
    win = cfg.window_array()
    frames = frames * win

    n_frames = s.n_frames
    total = cfg.n_fft + (n_frames - 1) * cfg.hop
    out = np.zeros(total)
    wsq = np.zeros(total)
    for m in range(n_frames):
        o = m * cfg.hop
        out[o : o + cfg.n_fft] += frames[m]
        wsq[o : o + cfg.n_fft] += win * win
    # per-sample normalization; positions the window never covers stay zero
    nz = wsq > 1e-11
    out[nz] /= wsq[nz]

    pad = cfg.n_fft // 2
    out = out[pad : total - pad]
    return Waveform(samples=out, sample_rate=cfg.sample_rate)


def read_wav(path: str | Path) -> Waveform:
    """Read a PCM16 little-endian mono WAV file.

    Multi-channel and non-PCM files are rejected with a diagnostic.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as f:
            n_channels = f.getnchannels()
            sampwidth = f.getsampwidth()
            comptype = f.getcomptype()
            if n_channels != 1:
                raise SpectralError(
                    f"{path}: expected mono, got {n_channels} channels"
                )
            if comptype != "NONE":
                raise SpectralError(f"{path}: expected PCM, got {comptype}")
            if sampwidth != 2:
                raise SpectralError(
                    f"{path}: expected 16-bit PCM, got {8 * sampwidth}-bit"
                )
            rate = f.getframerate()
            raw = f.readframes(f.getnframes())
    except wave.Error as e:
        raise SpectralError(f"{path}: not a readable PCM WAV file ({e})") from e
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples=samples, sample_rate=rate)


def write_wav(path: str | Path, w: Waveform) -> None:
    """Write a waveform as PCM16 little-endian mono."""
    quantized = np.clip(np.rint(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(quantized.tobytes())
