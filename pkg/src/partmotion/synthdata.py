"""Procedural prompt-labeled motion corpus with controlled part corruption.

Clean motions are forward-kinematics programs over the rest skeleton
(sinusoidal joint-angle tracks plus root translation), so bone lengths are
exact and every prompt has a measurable kinematic signature. Corruption
injects jitter / freeze / drift episodes into the chain joints of chosen
parts over contiguous windows, drops those joints' confidences, and keeps
the planted mask next to the record.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .features import MotionRecord
from .seeding import rng_for, substream_seed
from .skeleton import PartPartition, SkeletonSpec, build_default_skeleton

GRAMMAR_VERSION = "grammar-v1"

MIN_LENGTH = 16

_LOWER = {
    "stand": "stands still",
    "walk": "walks forward",
    "step": "steps in place",
    "kick_left": "kicks with the left leg",
    "kick_right": "kicks with the right leg",
}

_LOWER_GERUND = {
    "walk": "walking forward",
    "step": "stepping in place",
    "kick_left": "kicking with the left leg",
    "kick_right": "kicking with the right leg",
}

_UPPER = {
    "wave_left": "waves the left arm",
    "wave_right": "waves the right arm",
    "raise_left": "raises the left arm",
    "raise_right": "raises the right arm",
    "wave_both": "waves both arms",
    "raise_both": "raises both arms",
    "twist": "twists the torso",
}


class PromptGrammar:
    """The closed prompt set and its mapping to kinematic programs."""

    def __init__(self):
        self._programs: dict[str, tuple[str | None, str]] = {}
        for lower, phrase in _LOWER.items():
            self._programs[f"a person {phrase}"] = (None, lower)
        for upper, phrase in _UPPER.items():
            self._programs[f"a person {phrase}"] = (upper, "stand")
            for lower, gerund in _LOWER_GERUND.items():
                self._programs[f"a person {phrase} while {gerund}"] = (upper, lower)

    def productions(self) -> list[str]:
        return sorted(self._programs)

    def program_of(self, prompt: str) -> tuple[str | None, str]:
        if prompt not in self._programs:
            raise ValueError(f"unknown prompt: {prompt!r}")
        return self._programs[prompt]

    def vocabulary(self) -> list[str]:
        tokens = set()
        for prompt in self._programs:
            tokens.update(prompt.split())
        return sorted(tokens)


GRAMMAR = PromptGrammar()


# ---------------------------------------------------------------------------
# Forward kinematics


def _rot_x(a: np.ndarray) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = c
    out[..., 1, 2] = -s
    out[..., 2, 1] = s
    out[..., 2, 2] = c
    return out


def _rot_y(a: np.ndarray) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 2] = s
    out[..., 1, 1] = 1.0
    out[..., 2, 0] = -s
    out[..., 2, 2] = c
    return out


def _rot_z(a: np.ndarray) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    out[..., 2, 2] = 1.0
    return out


def _fk(
    skeleton: SkeletonSpec,
    local_rot: dict[str, np.ndarray],
    root_path: np.ndarray,
    n: int,
) -> np.ndarray:
    """Accumulate local joint rotations down the tree; (N, J, 3)."""
    names = skeleton.joint_names
    eye = np.tile(np.eye(3), (n, 1, 1))
    global_rot = np.empty((n, skeleton.num_joints, 3, 3))
    pos = np.empty((n, skeleton.num_joints, 3))
    for j, parent in enumerate(skeleton.parent_index):
        rot_j = local_rot.get(names[j], eye)
        if parent < 0:
            global_rot[:, j] = rot_j
            pos[:, j] = root_path
        else:
            global_rot[:, j] = global_rot[:, parent] @ rot_j
            pos[:, j] = pos[:, parent] + np.einsum(
                "nab,b->na", global_rot[:, parent], skeleton.rest_offsets[j]
            )
    return pos


def _hump(s: np.ndarray) -> np.ndarray:
    """Smooth one-sided bump: squared positive lobe of a sinusoid."""
    return np.maximum(s, 0.0) ** 2


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def generate_clean(
    prompt: str,
    length: int,
    seed: int,
    fps: float = 20.0,
    skeleton: SkeletonSpec | None = None,
    record_id: str | None = None,
) -> MotionRecord:
    """Deterministic clean motion for a grammar prompt; confidences all 1."""
    if length < MIN_LENGTH:
        raise ValueError(f"length must be >= {MIN_LENGTH}, got {length}")
    upper, lower = GRAMMAR.program_of(prompt)
    if skeleton is None:
        skeleton, _ = build_default_skeleton()

    rng = rng_for(seed, "clean", prompt, length)
    t = np.arange(length) / fps
    local_rot: dict[str, np.ndarray] = {}
    root_path = np.tile(skeleton.rest_positions()[0], (length, 1))

    def jittered(base_freq: float, base_amp: float):
        freq = base_freq * rng.uniform(0.9, 1.1)
        amp = base_amp * rng.uniform(0.9, 1.1)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        return 2.0 * np.pi * freq * t + phase, amp

    # Lower-body program
    if lower == "walk":
        w, amp = jittered(1.2, 0.45)
        # Narrow speed spread: unexplained forward velocity integrates into
        # linear position drift, unlike limb phase/amplitude variation.
        speed = 1.1 * rng.uniform(0.97, 1.03) / fps
        root_path = root_path + np.outer(np.arange(length) * speed, [0.0, 0.0, 1.0])
        local_rot["left_hip"] = _rot_x(amp * np.sin(w))
        local_rot["right_hip"] = _rot_x(-amp * np.sin(w))
        local_rot["left_knee"] = _rot_x(-0.5 * amp * _hump(np.sin(w + np.pi)))
        local_rot["right_knee"] = _rot_x(-0.5 * amp * _hump(np.sin(w)))
    elif lower == "step":
        w, amp = jittered(1.4, 0.7)
        local_rot["left_hip"] = _rot_x(amp * _hump(np.sin(w)))
        local_rot["right_hip"] = _rot_x(amp * _hump(np.sin(w + np.pi)))
        local_rot["left_knee"] = _rot_x(-1.6 * amp * _hump(np.sin(w)))
        local_rot["right_knee"] = _rot_x(-1.6 * amp * _hump(np.sin(w + np.pi)))
    elif lower in ("kick_left", "kick_right"):
        side = "left" if lower == "kick_left" else "right"
        w, amp = jittered(0.9, 0.95)
        kick = _hump(np.sin(w))
        local_rot[f"{side}_hip"] = _rot_x(amp * kick)
        local_rot[f"{side}_knee"] = _rot_x(0.35 * amp * kick)

    # Upper-body program
    def wave(side: str):
        w, amp = jittered(1.8, 0.75)
        sign = 1.0 if side == "left" else -1.0
        local_rot[f"{side}_elbow"] = _rot_z(sign * amp * np.sin(w))

    def raise_arm(side: str):
        _, amp = jittered(0.0, 1.15)
        sign = 1.0 if side == "left" else -1.0
        ramp = _smoothstep(t / min(1.5, length / fps * 0.5))
        local_rot[f"{side}_shoulder"] = _rot_z(sign * amp * ramp)

    if upper == "wave_left":
        wave("left")
    elif upper == "wave_right":
        wave("right")
    elif upper == "wave_both":
        wave("left")
        wave("right")
    elif upper == "raise_left":
        raise_arm("left")
    elif upper == "raise_right":
        raise_arm("right")
    elif upper == "raise_both":
        raise_arm("left")
        raise_arm("right")
    elif upper == "twist":
        w, amp = jittered(0.8, 0.28)
        twist = amp * np.sin(w)
        for name in ("spine1", "spine2", "spine3"):
            local_rot[name] = _rot_y(twist)

    positions = _fk(skeleton, local_rot, root_path, length)
    if record_id is None:
        record_id = f"synth-{substream_seed(seed, prompt, length) % 10**8:08d}"
    record = MotionRecord(
        id=record_id,
        prompt=prompt,
        fps=fps,
        positions=positions,
        confidences=np.ones((length, skeleton.num_joints)),
    )
    record.validate()
    return record


# ---------------------------------------------------------------------------
# Corruption


@dataclass
class NoiseSpec:
    """How much part-level corruption to plant and what it looks like."""

    target_full_body_fraction: float | None = None
    target_cell_noise: float | None = None
    kinds: tuple[str, ...] = ("jitter", "freeze", "drift")
    part_probability: float = 0.5
    jitter_sigma: float = 0.08
    drift_sigma: float = 0.025
    confidence_low: float = 0.3
    confidence_floor: float = 0.05
    min_window: int = 8
    seed: int = 0

    def validate(self) -> None:
        if self.target_full_body_fraction is not None and self.target_cell_noise is not None:
            raise ValueError("set at most one of the corruption targets")
        for name in ("target_full_body_fraction", "target_cell_noise"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        unknown = set(self.kinds) - {"jitter", "freeze", "drift"}
        if unknown:
            raise ValueError(f"unknown corruption kinds: {sorted(unknown)}")
        if not 0.0 <= self.confidence_floor <= self.confidence_low < 0.9:
            raise ValueError("need 0 <= confidence_floor <= confidence_low < 0.9")
        if self.min_window < 1:
            raise ValueError("min_window must be positive")

    @property
    def is_clean(self) -> bool:
        return (not self.target_full_body_fraction or self.target_full_body_fraction >= 1.0) \
            if self.target_cell_noise is None else self.target_cell_noise <= 0.0


@dataclass
class CorruptionWindow:
    start: int
    end: int
    parts: tuple[int, ...]
    kinds: tuple[str, ...]


def _usable_frames(free: list[tuple[int, int]], min_window: int) -> int:
    return sum(b - a for a, b in free if b - a >= min_window)


def _take_interval(
    free: list[tuple[int, int]], length: int, min_window: int, rng
) -> tuple[int, int] | None:
    """Claim a random span of the given length from the free intervals.

    The span snaps to an interval edge whenever the leftover piece would be
    shorter than min_window, to keep fragments usable.
    """
    candidates = [i for i, (a, b) in enumerate(free) if b - a >= length]
    if not candidates:
        return None
    weights = np.array([free[i][1] - free[i][0] for i in candidates], dtype=float)
    idx = candidates[rng.choice(len(candidates), p=weights / weights.sum())]
    a, b = free.pop(idx)
    start = int(rng.integers(a, b - length + 1))
    if start - a < min_window and start != a:
        start = a
    elif b - (start + length) < min_window and start + length != b:
        start = b - length
    if start > a:
        free.append((a, start))
    if start + length < b:
        free.append((start + length, b))
    return start, start + length


def _choose_parts(num_parts: int, probability: float, rng) -> list[int]:
    chosen = [p for p in range(num_parts) if rng.random() < probability]
    if not chosen:
        chosen = [int(rng.integers(num_parts))]
    return chosen


def plan_corruption(
    n_frames: int, num_parts: int, spec: NoiseSpec, rng
) -> list[CorruptionWindow]:
    """Lay out non-overlapping corruption windows matching the spec's target.

    Budgets use randomized rounding so the corpus-level realized fraction is
    unbiased even though windows are quantized to >= min_window frames.
    """
    spec.validate()
    if spec.is_clean:
        return []
    mw = spec.min_window

    if spec.target_cell_noise is not None:
        budget = spec.target_cell_noise * n_frames * num_parts
    else:
        budget = (1.0 - spec.target_full_body_fraction) * n_frames
    budget = int(np.floor(budget + rng.uniform()))

    free: list[tuple[int, int]] = [(0, n_frames)]
    windows: list[CorruptionWindow] = []
    by_cells = spec.target_cell_noise is not None

    while budget > 0:
        usable = _usable_frames(free, mw)
        if usable < mw:
            break
        if by_cells:
            # Enough density to consume the remaining budget on usable frames.
            min_parts = min(num_parts, int(np.ceil(budget / usable)))
            parts = _choose_parts(num_parts, spec.part_probability, rng)
            while len(parts) < min_parts:
                extra = [p for p in range(num_parts) if p not in parts]
                parts.append(int(extra[rng.integers(len(extra))]))
            per_frame = len(parts)
        else:
            parts = _choose_parts(num_parts, spec.part_probability, rng)
            per_frame = 1
        want = int(round(budget / per_frame))
        if want < mw:
            # Residual too small for a full window: promote with matching odds.
            if rng.uniform() >= want / mw:
                break
            want = mw
        cap = 3 * mw if (not by_cells or min_parts < num_parts) else usable
        length = min(want, int(rng.integers(mw, cap + 1)) if cap > mw else mw)
        span = _take_interval(free, length, mw, rng)
        if span is None:
            longest = max(b - a for a, b in free)
            if longest < mw:
                break
            span = _take_interval(free, longest, mw, rng)
        start, end = span
        kinds = tuple(str(rng.choice(spec.kinds)) for _ in parts)
        windows.append(CorruptionWindow(start, end, tuple(sorted(parts)), kinds))
        budget -= (end - start) * per_frame

    return windows


def inject_noise(
    record: MotionRecord,
    spec: NoiseSpec,
    partition: PartPartition | None = None,
) -> MotionRecord:
    """Corrupt chain joints of selected parts over planned windows.

    Returns a new record whose untouched joints are bit-identical to the
    input; the planted (frame, part) mask rides along in ``meta``.
    """
    if partition is None:
        _, partition = build_default_skeleton()
    rng = rng_for(spec.seed, "noise", record.id)
    n = record.num_frames
    positions = record.positions.copy()
    confidences = record.confidences.copy()
    corrupt = np.zeros((n, partition.num_parts), dtype=bool)

    windows = plan_corruption(n, partition.num_parts, spec, rng)
    for window in windows:
        span = slice(window.start, window.end)
        span_len = window.end - window.start
        for part_id, kind in zip(window.parts, window.kinds):
            chain = list(partition.chain_of[partition.parts[part_id]])
            if kind == "jitter":
                positions[span, chain] = positions[span, chain] + rng.normal(
                    0.0, spec.jitter_sigma, (span_len, len(chain), 3)
                )
            elif kind == "freeze":
                positions[span, chain] = record.positions[window.start, chain]
            elif kind == "drift":
                offsets = np.cumsum(
                    rng.normal(0.0, spec.drift_sigma, (span_len, 3)), axis=0
                )
                positions[span, chain] = positions[span, chain] + offsets[:, None, :]
            confidences[span, chain] = rng.uniform(
                spec.confidence_floor, spec.confidence_low, (span_len, len(chain))
            )
            corrupt[span, part_id] = True

    meta = dict(record.meta)
    meta["corrupt_mask"] = corrupt.astype(int).tolist()
    return MotionRecord(
        id=record.id,
        prompt=record.prompt,
        fps=record.fps,
        positions=positions,
        confidences=confidences,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# Corpus building


@dataclass
class CorpusConfig:
    size: int = 200
    length_min: int = 64
    length_max: int = 64
    fps: float = 20.0
    seed: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def validate(self) -> None:
        if self.size < 1:
            raise ValueError("corpus size must be positive")
        if not MIN_LENGTH <= self.length_min <= self.length_max:
            raise ValueError("need MIN_LENGTH <= length_min <= length_max")
        self.noise.validate()


def make_corpus(config: CorpusConfig) -> tuple[list[MotionRecord], dict]:
    """Build a corpus plus its manifest (seed, grammar version, realized stats)."""
    from .credibility import DEFAULT_TAU, corpus_stats  # local import avoids cycle

    config.validate()
    skeleton, partition = build_default_skeleton()
    prompts = GRAMMAR.productions()
    order_rng = rng_for(config.seed, "prompt-order")
    length_rng = rng_for(config.seed, "lengths")

    records = []
    noise = replace(config.noise, seed=substream_seed(config.seed, "noise-root", config.noise.seed))
    for i in range(config.size):
        if i % len(prompts) == 0:
            shuffled = list(prompts)
            order_rng.shuffle(shuffled)
        prompt = shuffled[i % len(prompts)]
        length = int(length_rng.integers(config.length_min, config.length_max + 1))
        clean = generate_clean(
            prompt,
            length,
            seed=substream_seed(config.seed, "record", i),
            fps=config.fps,
            skeleton=skeleton,
            record_id=f"r{i:05d}",
        )
        records.append(inject_noise(clean, noise, partition))

    stats = corpus_stats(records, partition, DEFAULT_TAU)
    planted = [np.asarray(r.meta["corrupt_mask"], dtype=bool) for r in records]
    total_cells = sum(m.size for m in planted)
    total_frames = sum(m.shape[0] for m in planted)
    manifest = {
        "grammar_version": GRAMMAR_VERSION,
        "size": config.size,
        "seed": config.seed,
        "fps": config.fps,
        "length_range": [config.length_min, config.length_max],
        "noise": {
            "target_full_body_fraction": config.noise.target_full_body_fraction,
            "target_cell_noise": config.noise.target_cell_noise,
            "kinds": list(config.noise.kinds),
            "part_probability": config.noise.part_probability,
            "confidence_low": config.noise.confidence_low,
            "min_window": config.noise.min_window,
        },
        "realized_full_body_fraction": stats["full_body_fraction"],
        "realized_cell_noise": float(sum(m.sum() for m in planted) / total_cells),
        "planted_noisy_frame_fraction": float(
            sum(m.any(axis=1).sum() for m in planted) / total_frames
        ),
        "num_prompts": len(prompts),
    }
    return records, manifest
