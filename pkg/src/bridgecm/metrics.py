"""Objective enhancement-quality metrics: SI-SDR and segmental SNR."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MetricError(ValueError):
    """Raised for degenerate metric inputs."""


def si_sdr(
    reference: np.ndarray,
    estimate: np.ndarray,
    cap_db: float = 60.0,
) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    Projects the estimate onto the reference, then compares the projected
    target energy to the residual energy. Capped to [-cap_db, +cap_db] so
    perfect or absurd estimates stay finite.
    """
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if reference.shape != estimate.shape:
        raise MetricError(
            f"length mismatch: {reference.shape} vs {estimate.shape}"
        )
    ref_energy = float(np.dot(reference, reference))
    if ref_energy <= 0.0:
        raise MetricError("silent reference; SI-SDR undefined")
    alpha = float(np.dot(estimate, reference)) / ref_energy
    target = alpha * reference
    residual = estimate - target
    num = float(np.dot(target, target))
    den = float(np.dot(residual, residual))
    if den == 0.0:
        return cap_db
    if num == 0.0:
        return -cap_db
    return float(np.clip(10.0 * np.log10(num / den), -cap_db, cap_db))


def seg_snr(
    reference: np.ndarray,
    estimate: np.ndarray,
    frame: int = 256,
    hop: int = 128,
    clamp_db: tuple[float, float] = (-10.0, 35.0),
    silence_dbfs: float = -40.0,
) -> float:
    """Mean per-frame SNR in dB, each frame clamped to clamp_db.

    Frames whose reference power falls below silence_dbfs (relative to
    full scale) are skipped.
    """
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if reference.shape != estimate.shape:
        raise MetricError(
            f"length mismatch: {reference.shape} vs {estimate.shape}"
        )
    if len(reference) < frame:
        raise MetricError(f"signal shorter than one frame ({frame})")
    lo, hi = clamp_db
    silent_power = 10.0 ** (silence_dbfs / 10.0)
    values = []
    for start in range(0, len(reference) - frame + 1, hop):
        r = reference[start : start + frame]
        e = estimate[start : start + frame]
        p_ref = float(np.mean(r * r))
        if p_ref < silent_power:
            continue
        p_err = float(np.mean((e - r) ** 2))
        if p_err == 0.0:
            values.append(hi)
        else:
            values.append(float(np.clip(10.0 * np.log10(p_ref / p_err), lo, hi)))
    if not values:
        raise MetricError("no frames above the silence threshold")
    return float(np.mean(values))


@dataclass
class EvalRow:
    """Per-file metrics of one (clean, noisy, enhanced) triple."""

    file: str
    snr_db: float
    si_sdr_noisy: float
    si_sdr_enhanced: float
    seg_snr_noisy: float
    seg_snr_enhanced: float
    rtf: float


_EVAL_COLUMNS = (
    "file", "snr_db", "si_sdr_noisy", "si_sdr_enhanced",
    "seg_snr_noisy", "seg_snr_enhanced", "rtf",
)


def write_eval_csv(path: str | Path, rows: list[EvalRow]) -> dict[str, float]:
    """Write per-file rows plus a summary row of means; returns the means."""
    if not rows:
        raise MetricError("no evaluation rows")
    means = {
        col: float(np.mean([getattr(r, col) for r in rows]))
        for col in _EVAL_COLUMNS[1:]
    }
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_EVAL_COLUMNS)
        for r in rows:
            w.writerow([getattr(r, c) for c in _EVAL_COLUMNS])
        w.writerow(["mean"] + [means[c] for c in _EVAL_COLUMNS[1:]])
    return means
