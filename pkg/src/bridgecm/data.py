"""Desk-scale synthetic corpus: pseudo-speech, noise mixing at exact SNR.

Clean signals are harmonic-plus-noise pseudo-speech (time-varying
fundamental, a handful of enveloped harmonics, faint band-limited breath
noise). Noisy counterparts add white, pink, or babble-like noise scaled
so the requested SNR holds exactly before PCM quantization. Every entry's
randomness derives from (master seed, split, index), so corpora are
byte-reproducible and generation can be parallelized per entry.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter

from .spectral import SpectralConfig, Waveform, analyze, read_wav, write_wav

NOISE_KINDS = ("white", "pink", "babble")
_SPLIT_IDS = {"train": 0, "valid": 1, "test": 2}


class DataError(ValueError):
    """Raised for invalid corpus configs or mix parameters."""


@dataclass(frozen=True)
class MixSpec:
    snr_low: float = 0.0
    snr_high: float = 20.0
    noise_kinds: tuple[str, ...] = NOISE_KINDS

    def __post_init__(self):
        if self.snr_low > self.snr_high:
            raise DataError(f"snr range inverted: [{self.snr_low}, {self.snr_high}]")
        for kind in self.noise_kinds:
            if kind not in NOISE_KINDS:
                raise DataError(f"unknown noise kind {kind!r}")


@dataclass(frozen=True)
class CorpusConfig:
    out_dir: str = "corpus"
    n_train: int = 200
    n_valid: int = 20
    n_test: int = 20
    duration_s: float = 1.0
    sample_rate: int = 8000
    seed: int = 0
    mix: MixSpec = MixSpec()

    def __post_init__(self):
        if self.duration_s < 0.5:
            raise DataError(f"duration_s must be >= 0.5, got {self.duration_s}")
        if min(self.n_train, self.n_valid, self.n_test) < 0:
            raise DataError("split sizes must be >= 0")


@dataclass
class ManifestEntry:
    clean_path: str
    noisy_path: str
    snr_db: float
    noise_kind: str
    duration_s: float
    split: str


@dataclass
class Manifest:
    entries: list[ManifestEntry]

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            for e in self.entries:
                f.write(json.dumps(asdict(e), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        entries = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if line:
                    entries.append(ManifestEntry(**json.loads(line)))
        return cls(entries=entries)


def gen_clean(seed, duration_s: float, sample_rate: int) -> Waveform:
    """Harmonic-plus-noise pseudo-speech, peak-normalized to 0.9.

    A slowly wandering fundamental in [80, 300] Hz drives 3-8 harmonics
    with smooth random amplitude envelopes, plus band-limited breath noise
    25 dB below the harmonic part.

    `seed` may be an int or a numpy SeedSequence.
    """
    if duration_s < 0.5:
        raise DataError(f"duration must be >= 0.5 s, got {duration_s}")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate

    base = rng.uniform(110.0, 240.0)
    f0 = base
    for depth, (lo, hi) in ((35.0, (0.5, 2.0)), (20.0, (2.0, 5.0))):
        f0 = f0 + depth * np.sin(
            2.0 * np.pi * rng.uniform(lo, hi) * t + rng.uniform(0, 2 * np.pi)
        )
    f0 = np.clip(f0, 80.0, 300.0)
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate

    n_harmonics = int(rng.integers(3, 9))
    voiced = np.zeros(n)
    for k in range(1, n_harmonics + 1):
        env = 0.3 + 0.7 * (
            0.5 + 0.5 * np.sin(
                2.0 * np.pi * rng.uniform(1.0, 4.0) * t + rng.uniform(0, 2 * np.pi)
            )
        )
        voiced += (env / k) * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    breath = rng.standard_normal(n)
    b, a = butter(4, [300.0, 3000.0], btype="band", fs=sample_rate)
    breath = lfilter(b, a, breath)
    gain = _rms(voiced) * 10.0 ** (-25.0 / 20.0) / max(_rms(breath), 1e-12)
    samples = voiced + gain * breath
    samples *= 0.9 / np.max(np.abs(samples))
    return Waveform(samples=samples, sample_rate=sample_rate)


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def gen_noise(rng: np.random.Generator, kind: str, n: int, sample_rate: int) -> np.ndarray:
    """Unit-RMS noise of the given kind."""
    if kind == "white":
        out = rng.standard_normal(n)
    elif kind == "pink":
        spec = np.fft.rfft(rng.standard_normal(n))
        freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
        shape = np.ones_like(freqs)
        shape[1:] = 1.0 / np.sqrt(freqs[1:] / freqs[1])
        shape[0] = 0.0
        out = np.fft.irfft(spec * shape, n=n)
    elif kind == "babble":
        # a few enveloped band-passed noise streams talking over each other
        out = np.zeros(n)
        t = np.arange(n) / sample_rate
        for _ in range(6):
            lo = rng.uniform(150.0, 1200.0)
            hi = lo + rng.uniform(300.0, 1300.0)
            b, a = butter(2, [lo, hi], btype="band", fs=sample_rate)
            stream = lfilter(b, a, rng.standard_normal(n))
            env = 0.15 + 0.85 * (
                0.5 + 0.5 * np.sin(
                    2.0 * np.pi * rng.uniform(0.8, 3.0) * t + rng.uniform(0, 2 * np.pi)
                )
            )
            out += env * stream
    else:
        raise DataError(f"unknown noise kind {kind!r}")
    return out / max(_rms(out), 1e-12)


def fit_noise(noise: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Crop (random offset) or loop noise to exactly n samples."""
    if len(noise) >= n:
        off = int(rng.integers(0, len(noise) - n + 1))
        return noise[off : off + n]
    reps = int(np.ceil(n / len(noise))) + 1
    tiled = np.tile(noise, reps)
    off = int(rng.integers(0, len(noise)))
    return tiled[off : off + n]


def noise_gain(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    """Gain g so that 10*log10(P_clean / P_{g*noise}) equals snr_db exactly."""
    p_clean = float(np.mean(clean * clean))
    p_noise = float(np.mean(noise * noise))
    if p_clean <= 0.0:
        raise DataError("clean signal is silent; SNR undefined")
    if p_noise <= 0.0:
        raise DataError("noise signal is silent")
    return float(np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0))))


def mix(clean: Waveform, noise: np.ndarray, snr_db: float) -> Waveform:
    """clean + g*noise with g chosen for the exact requested SNR."""
    noise = np.asarray(noise, dtype=np.float64)
    if len(noise) != len(clean):
        raise DataError(
            f"length mismatch: clean {len(clean)}, noise {len(noise)} "
            "(fit_noise crops or loops)"
        )
    g = noise_gain(clean.samples, noise, snr_db)
    return Waveform(samples=clean.samples + g * noise, sample_rate=clean.sample_rate)


def entry_params(master_seed: int, split: str, index: int, mix_spec: MixSpec):
    """Deterministic per-entry draw: (seed sequence, noise kind, snr_db)."""
    ss = np.random.SeedSequence([master_seed, _SPLIT_IDS[split], index])
    rng = np.random.default_rng(ss)
    kind = mix_spec.noise_kinds[int(rng.integers(0, len(mix_spec.noise_kinds)))]
    snr_db = float(rng.uniform(mix_spec.snr_low, mix_spec.snr_high))
    return rng, kind, snr_db


def build_corpus(cfg: CorpusConfig) -> tuple[Manifest, Path]:
    """Generate all splits on disk; returns (manifest, manifest_path).

    Layout: out_dir/{train,valid,test}/{clean,noisy}/NNNN.wav plus
    out_dir/manifest.jsonl. Pairs are jointly rescaled when the noisy
    peak would clip, which preserves both the SNR and the purely
    additive relation between the two files.
    """
    out = Path(cfg.out_dir)
    entries = []
    for split, count in (
        ("train", cfg.n_train), ("valid", cfg.n_valid), ("test", cfg.n_test)
    ):
        clean_dir = out / split / "clean"
        noisy_dir = out / split / "noisy"
        clean_dir.mkdir(parents=True, exist_ok=True)
        noisy_dir.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            rng, kind, snr_db = entry_params(cfg.seed, split, i, cfg.mix)
            clean = gen_clean(rng, cfg.duration_s, cfg.sample_rate)
            noise = gen_noise(rng, kind, len(clean), cfg.sample_rate)
            noisy = mix(clean, noise, snr_db)

            peak = float(np.max(np.abs(noisy.samples)))
            if peak > 0.98:
                scale = 0.98 / peak
                clean = Waveform(clean.samples * scale, cfg.sample_rate)
                noisy = Waveform(noisy.samples * scale, cfg.sample_rate)

            clean_path = clean_dir / f"{i:04d}.wav"
            noisy_path = noisy_dir / f"{i:04d}.wav"
            write_wav(clean_path, clean)
            write_wav(noisy_path, noisy)
            entries.append(
                ManifestEntry(
                    clean_path=str(clean_path),
                    noisy_path=str(noisy_path),
                    snr_db=snr_db,
                    noise_kind=kind,
                    duration_s=cfg.duration_s,
                    split=split,
                )
            )
    manifest = Manifest(entries=entries)
    manifest_path = out / "manifest.jsonl"
    manifest.save(manifest_path)
    return manifest, manifest_path


def load_spectrogram_pairs(
    entries: list[ManifestEntry], spectral_cfg: SpectralConfig
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Read WAV pairs and convert both sides to compressed spectrograms."""
    pairs = []
    for e in entries:
        clean = analyze(read_wav(e.clean_path), spectral_cfg)
        noisy = analyze(read_wav(e.noisy_path), spectral_cfg)
        pairs.append((clean.planes, noisy.planes))
    return pairs
