"""Per-part credibility labels from joint confidences, plus curation tools.

A part is credible in a frame when the mean confidence of its own chain
joints exceeds the threshold tau (strictly). The shared root/spine joints
are excluded from the average: they belong to every part's feature set,
and counting them would let one part's visibility mask another's.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import MotionRecord
from .skeleton import PartPartition

DEFAULT_TAU = 0.5


@dataclass
class CredibilityMask:
    credible: np.ndarray  # (N, 5) bool
    tau: float

    @property
    def noise_ratio(self) -> float:
        return sequence_noise_ratio(self)


def part_confidence(values: np.ndarray, partition: PartPartition) -> np.ndarray:
    """Mean chain-joint confidence per (frame, part): (N, J) -> (N, P)."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError(f"confidence track must be (N, J), got {values.shape}")
    all_joints = set()
    for part in partition.parts:
        all_joints.update(partition.joints_of[part])
    if values.shape[1] != len(all_joints):
        raise ValueError(
            f"track has {values.shape[1]} joints, partition covers {len(all_joints)}"
        )
    out = np.empty((values.shape[0], partition.num_parts))
    for pid, part in enumerate(partition.parts):
        chain = list(partition.chain_of[part])
        out[:, pid] = values[:, chain].mean(axis=1)
    return out


def classify_parts(confidences: np.ndarray, tau: float = DEFAULT_TAU) -> CredibilityMask:
    """Label each (frame, part) cell credible iff its confidence exceeds tau."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    confidences = np.asarray(confidences, dtype=float)
    return CredibilityMask(credible=confidences > tau, tau=tau)


def sequence_noise_ratio(mask: CredibilityMask) -> float:
    """Fraction of (frame, part) cells labeled noisy."""
    return float(1.0 - mask.credible.mean())


def record_credibility(
    record: MotionRecord, partition: PartPartition, tau: float = DEFAULT_TAU
) -> CredibilityMask:
    return classify_parts(part_confidence(record.confidences, partition), tau)


# ---------------------------------------------------------------------------
# Low-pass smoothing


def _butter2_coeffs(cutoff_hz: float, fps: float) -> tuple[np.ndarray, np.ndarray]:
    """Second-order Butterworth low-pass, bilinear transform with prewarping."""
    k = np.tan(np.pi * cutoff_hz / fps)
    q = 1.0 / np.sqrt(2.0)
    norm = 1.0 / (1.0 + k / q + k * k)
    b = np.array([k * k * norm, 2.0 * k * k * norm, k * k * norm])
    a = np.array([1.0, 2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm])
    return b, a


def _biquad(x: np.ndarray, b: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Apply the difference equation along axis 0 (direct form II transposed).

    State starts at the constant-input steady state of x[0], so DC passes
    exactly.
    """
    y = np.empty_like(x)
    s0 = (b[1] - a[1] + b[2] - a[2]) * x[0]
    s1 = (b[2] - a[2]) * x[0]
    for i in range(len(x)):
        y[i] = b[0] * x[i] + s0
        s0 = b[1] * x[i] - a[1] * y[i] + s1
        s1 = b[2] * x[i] - a[2] * y[i]
    return y


def butter2_response(freq_hz: float, cutoff_hz: float, fps: float) -> float:
    """Numeric magnitude response of the zero-phase (two-pass) filter."""
    b, a = _butter2_coeffs(cutoff_hz, fps)
    w = 2.0 * np.pi * freq_hz / fps
    z = np.exp(-1j * w)
    h = (b[0] + b[1] * z + b[2] * z * z) / (a[0] + a[1] * z + a[2] * z * z)
    return float(np.abs(h) ** 2)


def smooth_positions(positions: np.ndarray, cutoff_hz: float, fps: float) -> np.ndarray:
    """Zero-phase low-pass along frames: forward and backward biquad passes
    over an odd-reflection padded signal."""
    if not 0.0 < cutoff_hz < fps / 2.0:
        raise ValueError(f"cutoff must lie in (0, fps/2), got {cutoff_hz} at {fps} fps")
    n = positions.shape[0]
    flat = positions.reshape(n, -1)
    b, a = _butter2_coeffs(cutoff_hz, fps)

    pad = min(n - 1, int(np.ceil(2.0 * fps / cutoff_hz)))
    if pad > 0:
        head = 2.0 * flat[0] - flat[pad:0:-1]
        tail = 2.0 * flat[-1] - flat[-2 : -pad - 2 : -1]
        ext = np.concatenate([head, flat, tail], axis=0)
    else:
        ext = flat

    y = _biquad(ext, b, a)
    y = _biquad(y[::-1], b, a)[::-1]
    if pad > 0:
        y = y[pad : pad + n]
    return y.reshape(positions.shape)


def lowpass_smooth(record: MotionRecord, cutoff_hz: float, fps: float | None = None) -> MotionRecord:
    """Smooth joint trajectories; confidences and prompt pass through."""
    fps = record.fps if fps is None else fps
    return MotionRecord(
        id=record.id,
        prompt=record.prompt,
        fps=record.fps,
        positions=smooth_positions(record.positions, cutoff_hz, fps),
        confidences=record.confidences.copy(),
        meta=dict(record.meta),
    )


# ---------------------------------------------------------------------------
# Corpus statistics


def corpus_stats(
    records: list[MotionRecord],
    partition: PartPartition,
    tau: float = DEFAULT_TAU,
    histogram_bins: int = 10,
) -> dict:
    """Credibility statistics over a corpus, as a JSON-ready report."""
    per_part_credible = np.zeros(partition.num_parts)
    full_body_frames = 0
    total_frames = 0
    ratios = []
    for record in records:
        mask = record_credibility(record, partition, tau)
        total_frames += mask.credible.shape[0]
        full_body_frames += int(mask.credible.all(axis=1).sum())
        per_part_credible += mask.credible.sum(axis=0)
        ratios.append(sequence_noise_ratio(mask))

    edges = np.linspace(0.0, 1.0, histogram_bins + 1)
    hist, _ = np.histogram(ratios, bins=edges)
    return {
        "tau": tau,
        "num_sequences": len(records),
        "num_frames": total_frames,
        "full_body_fraction": full_body_frames / total_frames if total_frames else 0.0,
        "per_part_credible_fraction": {
            part: per_part_credible[pid] / total_frames if total_frames else 0.0
            for pid, part in enumerate(partition.parts)
        },
        "noise_ratio_histogram": {
            "bin_edges": edges.tolist(),
            "counts": hist.tolist(),
        },
    }
