import numpy as np
import pytest

from partmotion.credibility import classify_parts, part_confidence
from partmotion.features import record_to_json
from partmotion.skeleton import build_default_skeleton
from partmotion.synthdata import (
    GRAMMAR,
    CorpusConfig,
    NoiseSpec,
    generate_clean,
    inject_noise,
    make_corpus,
)


def test_grammar_size_and_vocabulary():
    productions = GRAMMAR.productions()
    assert len(productions) >= 32  # enough distinct prompts for retrieval batches
    assert len(GRAMMAR.vocabulary()) <= 64
    for prompt in productions:
        assert GRAMMAR.program_of(prompt)


def test_unknown_prompt_rejected():
    with pytest.raises(ValueError):
        generate_clean("a person does a backflip", 32, seed=0)


def test_short_length_rejected():
    with pytest.raises(ValueError):
        generate_clean("a person stands still", 8, seed=0)


def test_determinism_bit_identical():
    a = generate_clean("a person walks forward", 48, seed=11)
    b = generate_clean("a person walks forward", 48, seed=11)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.confidences, b.confidences)
    c = generate_clean("a person walks forward", 48, seed=12)
    assert not np.array_equal(a.positions, c.positions)


def test_bone_lengths_constant():
    skeleton, _ = build_default_skeleton()
    for prompt in ("a person walks forward", "a person twists the torso",
                   "a person raises both arms while kicking with the left leg"):
        record = generate_clean(prompt, 64, seed=4)
        for j, parent in enumerate(skeleton.parent_index):
            if parent < 0:
                continue
            lengths = np.linalg.norm(
                record.positions[:, j] - record.positions[:, parent], axis=-1
            )
            assert lengths.max() - lengths.min() < 1e-6


def test_clean_confidences_all_one():
    record = generate_clean("a person stands still", 32, seed=7)
    assert np.array_equal(record.confidences, np.ones_like(record.confidences))


def test_standing_still_is_static():
    record = generate_clean("a person stands still", 32, seed=7)
    assert np.abs(record.positions - record.positions[0]).max() < 1e-12


def test_wave_left_arm_amplitudes():
    skeleton, _ = build_default_skeleton()
    lw = skeleton.joint_names.index("left_wrist")
    rw = skeleton.joint_names.index("right_wrist")
    record = generate_clean("a person waves the left arm", 64, seed=9)
    left_amp = (record.positions[:, lw, 1].max() - record.positions[:, lw, 1].min()) / 2
    right_amp = (record.positions[:, rw, 1].max() - record.positions[:, rw, 1].min()) / 2
    assert left_amp > 0.1
    assert right_amp < 0.01


def test_prompt_motion_statistics():
    skeleton, _ = build_default_skeleton()
    names = list(skeleton.joint_names)
    # walking advances the root
    walk = generate_clean("a person walks forward", 64, seed=1)
    assert walk.positions[-1, 0, 2] - walk.positions[0, 0, 2] > 1.0
    # kicking swings the left foot forward
    kick = generate_clean("a person kicks with the left leg", 64, seed=2)
    foot = names.index("left_foot")
    assert kick.positions[:, foot, 2].max() - kick.positions[:, foot, 2].min() > 0.15
    # raising lifts the right wrist and holds it
    raise_r = generate_clean("a person raises the right arm", 64, seed=3)
    wrist = names.index("right_wrist")
    assert raise_r.positions[-1, wrist, 1] - raise_r.positions[0, wrist, 1] > 0.2
    # twisting rotates the shoulder line
    twist = generate_clean("a person twists the torso", 64, seed=4)
    ls, rs = names.index("left_shoulder"), names.index("right_shoulder")
    line = twist.positions[:, ls] - twist.positions[:, rs]
    yaw = np.arctan2(line[:, 2], line[:, 0])
    assert yaw.max() - yaw.min() > 0.5
    # stepping oscillates a foot vertically without advancing the root
    step = generate_clean("a person steps in place", 64, seed=5)
    lfoot = names.index("left_foot")
    assert step.positions[:, lfoot, 1].max() - step.positions[:, lfoot, 1].min() > 0.1
    assert np.abs(step.positions[:, 0, 2] - step.positions[0, 0, 2]).max() < 1e-9


# ---------------------------------------------------------------------------
# Noise injection


@pytest.fixture(scope="module")
def corrupted():
    _, partition = build_default_skeleton()
    record = generate_clean("a person waves both arms while walking forward", 72, seed=21)
    spec = NoiseSpec(target_cell_noise=0.35, seed=5)
    noisy = inject_noise(record, spec, partition)
    return record, noisy, partition


def test_zero_probability_bit_identical():
    _, partition = build_default_skeleton()
    record = generate_clean("a person walks forward", 48, seed=2)
    out = inject_noise(record, NoiseSpec(target_cell_noise=0.0), partition)
    assert np.array_equal(out.positions, record.positions)
    assert np.array_equal(out.confidences, record.confidences)
    assert not np.asarray(out.meta["corrupt_mask"]).any()


def test_noise_is_deterministic(corrupted):
    record, noisy, partition = corrupted
    again = inject_noise(record, NoiseSpec(target_cell_noise=0.35, seed=5), partition)
    assert record_to_json(again) == record_to_json(noisy)


def test_untouched_joints_bit_identical(corrupted):
    record, noisy, partition = corrupted
    planted = np.asarray(noisy.meta["corrupt_mask"], dtype=bool)
    touched = np.zeros(record.positions.shape[:2], dtype=bool)
    for pid, part in enumerate(partition.parts):
        touched[np.ix_(planted[:, pid], list(partition.chain_of[part]))] = True
    assert np.array_equal(record.positions[~touched], noisy.positions[~touched])
    assert np.array_equal(record.confidences[~touched], noisy.confidences[~touched])
    assert (noisy.confidences[touched] <= 0.3).all()


def test_classification_recovers_planted_mask(corrupted):
    _, noisy, partition = corrupted
    planted = np.asarray(noisy.meta["corrupt_mask"], dtype=bool)
    for tau in (0.35, 0.5, 0.75, 0.89):
        mask = classify_parts(part_confidence(noisy.confidences, partition), tau)
        assert np.array_equal(~mask.credible, planted), f"tau={tau}"


def test_freeze_holds_positions():
    _, partition = build_default_skeleton()
    record = generate_clean("a person waves the left arm", 64, seed=31)
    spec = NoiseSpec(target_cell_noise=0.3, kinds=("freeze",), seed=2)
    noisy = inject_noise(record, spec, partition)
    planted = np.asarray(noisy.meta["corrupt_mask"], dtype=bool)
    assert planted.any()
    for pid, part in enumerate(partition.parts):
        frames = np.flatnonzero(planted[:, pid])
        if len(frames) == 0:
            continue
        # within each contiguous window, chain joints stay constant
        splits = np.split(frames, np.flatnonzero(np.diff(frames) > 1) + 1)
        for window in splits:
            chunk = noisy.positions[np.ix_(window, list(partition.chain_of[part]))]
            assert np.abs(chunk - chunk[0]).max() < 1e-12


def test_windows_are_contiguous_and_long(corrupted):
    _, noisy, _ = corrupted
    planted = np.asarray(noisy.meta["corrupt_mask"], dtype=bool)
    for pid in range(planted.shape[1]):
        frames = np.flatnonzero(planted[:, pid])
        if len(frames) == 0:
            continue
        for window in np.split(frames, np.flatnonzero(np.diff(frames) > 1) + 1):
            assert len(window) >= 8


# ---------------------------------------------------------------------------
# Corpus


def test_corpus_no_noise_full_body_one(small_clean_corpus):
    _, manifest = small_clean_corpus
    assert manifest["realized_full_body_fraction"] == 1.0
    assert manifest["realized_cell_noise"] == 0.0


def test_corpus_target_full_body_fraction():
    config = CorpusConfig(
        size=120, length_min=48, length_max=72, seed=13,
        noise=NoiseSpec(target_full_body_fraction=0.24),
    )
    _, manifest = make_corpus(config)
    assert abs(manifest["realized_full_body_fraction"] - 0.24) <= 0.02


def test_corpus_cell_noise_targets():
    for beta in (0.2, 0.5):
        config = CorpusConfig(
            size=60, length_min=64, length_max=64, seed=3,
            noise=NoiseSpec(target_cell_noise=beta),
        )
        _, manifest = make_corpus(config)
        assert abs(manifest["realized_cell_noise"] - beta) <= 0.03


def test_corpus_deterministic(tmp_path):
    from partmotion.features import save_corpus

    config = CorpusConfig(
        size=12, length_min=48, length_max=64, seed=4,
        noise=NoiseSpec(target_cell_noise=0.3),
    )
    r1, m1 = make_corpus(config)
    r2, m2 = make_corpus(config)
    assert m1 == m2
    p1, p2 = tmp_path / "c1.jsonl", tmp_path / "c2.jsonl"
    save_corpus(r1, p1)
    save_corpus(r2, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(target_cell_noise=0.3, target_full_body_fraction=0.5).validate()
    with pytest.raises(ValueError):
        NoiseSpec(kinds=("sparkle",)).validate()
    with pytest.raises(ValueError):
        NoiseSpec(target_cell_noise=1.4).validate()
