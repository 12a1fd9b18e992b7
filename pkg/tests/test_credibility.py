import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partmotion.credibility import (
    butter2_response,
    classify_parts,
    corpus_stats,
    lowpass_smooth,
    part_confidence,
    sequence_noise_ratio,
    smooth_positions,
)
from partmotion.features import MotionRecord
from partmotion.synthdata import CorpusConfig, NoiseSpec, make_corpus


def test_part_confidence_all_ones(skeleton_partition):
    _, partition = skeleton_partition
    track = np.ones((6, 22))
    conf = part_confidence(track, partition)
    assert conf.shape == (6, 5)
    assert np.allclose(conf, 1.0)


def test_part_confidence_four_joint_chain(skeleton_partition):
    _, partition = skeleton_partition
    track = np.ones((1, 22))
    chain = partition.chain_of["left_arm"]
    assert len(chain) == 4
    track[0, list(chain)] = [0.9, 0.2, 0.1, 0.4]
    conf = part_confidence(track, partition)
    assert conf[0, partition.part_index("left_arm")] == pytest.approx(0.4)


def test_part_confidence_matches_bruteforce_loop(skeleton_partition):
    _, partition = skeleton_partition
    rng = np.random.default_rng(3)
    track = rng.random((17, 22))
    conf = part_confidence(track, partition)
    # independent per-part mean over the partition's joint lists
    for i in range(17):
        for pid, part in enumerate(partition.parts):
            total = 0.0
            for j in partition.chain_of[part]:
                total += track[i, j]
            assert conf[i, pid] == pytest.approx(total / len(partition.chain_of[part]), abs=1e-12)


def test_part_confidence_permutation_invariant(skeleton_partition):
    _, partition = skeleton_partition
    rng = np.random.default_rng(4)
    track = rng.random((5, 22))
    permuted = track.copy()
    chain = list(partition.chain_of["right_leg"])
    permuted[:, chain] = permuted[:, chain[::-1]]
    a = part_confidence(track, partition)
    b = part_confidence(permuted, partition)
    pid = partition.part_index("right_leg")
    assert np.allclose(a[:, pid], b[:, pid])


def test_part_confidence_dimension_mismatch(skeleton_partition):
    _, partition = skeleton_partition
    with pytest.raises(ValueError):
        part_confidence(np.ones((4, 21)), partition)


def test_classify_basic_and_boundary():
    conf = np.array([[0.9, 0.5]])
    mask = classify_parts(conf, tau=0.5)
    assert mask.credible[0, 0]
    assert not mask.credible[0, 1]  # strict: exceeds means >


def test_classify_matches_elementwise_oracle():
    rng = np.random.default_rng(5)
    conf = rng.random((30, 5))
    tau = 0.42
    mask = classify_parts(conf, tau)
    for i in range(30):
        for p in range(5):
            assert mask.credible[i, p] == (conf[i, p] > tau)


def test_classify_rejects_bad_tau():
    with pytest.raises(ValueError):
        classify_parts(np.ones((1, 5)), tau=1.5)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_classify_monotone_in_tau(tau_lo, tau_hi, seed):
    if tau_lo > tau_hi:
        tau_lo, tau_hi = tau_hi, tau_lo
    conf = np.random.default_rng(seed).random((8, 5))
    lo = classify_parts(conf, tau_lo).credible
    hi = classify_parts(conf, tau_hi).credible
    # raising tau never turns a noisy cell credible
    assert not (hi & ~lo).any()


def test_noise_ratio_counts():
    mask = classify_parts(np.array([[1.0, 1.0], [1.0, 1.0]]), 0.5)
    assert sequence_noise_ratio(mask) == 0.0
    mask = classify_parts(np.zeros((3, 5)), 0.5)
    assert sequence_noise_ratio(mask) == 1.0
    credible = np.ones((2, 5), dtype=bool)
    credible[0, :3] = False
    mask.credible = credible
    assert sequence_noise_ratio(mask) == pytest.approx(0.3)


def test_noise_ratio_zero_tau_all_positive():
    conf = np.random.default_rng(0).uniform(0.01, 1.0, (10, 5))
    assert sequence_noise_ratio(classify_parts(conf, 0.0)) == 0.0


# ---------------------------------------------------------------------------
# Low-pass smoothing


def _record_with_positions(positions, fps=20.0):
    n, j = positions.shape[:2]
    return MotionRecord(
        id="t", prompt="a person stands still", fps=fps,
        positions=positions, confidences=np.ones((n, j)),
    )


def test_lowpass_constant_unchanged():
    positions = np.tile(np.arange(22 * 3).reshape(1, 22, 3) * 0.01, (64, 1, 1))
    out = lowpass_smooth(_record_with_positions(positions), cutoff_hz=6.0)
    assert np.abs(out.positions - positions).max() < 1e-9


def test_lowpass_attenuates_high_frequency():
    fps, cutoff, freq = 20.0, 4.0, 8.0
    t = np.arange(128) / fps
    sig = np.sin(2 * np.pi * freq * t)
    positions = np.zeros((128, 22, 3))
    positions[:, 5, 1] = sig
    out = smooth_positions(positions, cutoff, fps)
    # oracle: the filter's numerically computed frequency response
    expected = butter2_response(freq, cutoff, fps)
    middle = slice(30, 98)
    ratio = out[middle, 5, 1].std() / sig[middle].std()
    assert ratio <= 0.5
    assert ratio == pytest.approx(expected, rel=0.15)


def test_lowpass_preserves_low_frequency():
    fps, cutoff, freq = 20.0, 6.0, 0.4
    t = np.arange(256) / fps
    sig = np.sin(2 * np.pi * freq * t)
    positions = np.zeros((256, 22, 3))
    positions[:, 3, 2] = sig
    out = smooth_positions(positions, cutoff, fps)
    expected = butter2_response(freq, cutoff, fps)
    middle = slice(40, 216)
    ratio = out[middle, 3, 2].std() / sig[middle].std()
    assert abs(ratio - 1.0) < 0.05
    assert ratio == pytest.approx(expected, rel=0.02)


def test_lowpass_approximately_idempotent_in_band():
    # One pass leaves mostly in-band content, so a second pass changes little.
    fps, cutoff = 20.0, 6.0
    rng = np.random.default_rng(9)
    positions = rng.normal(0, 0.2, (96, 22, 3)).cumsum(axis=0) * 0.05
    once = smooth_positions(positions, cutoff, fps)
    twice = smooth_positions(once, cutoff, fps)
    scale = max(np.abs(once).max(), 1.0)
    assert np.abs(twice - once).max() / scale < 5e-3

    t = np.arange(96) / fps
    inband = np.zeros((96, 22, 3))
    inband[:, 3, 1] = np.sin(2 * np.pi * 0.8 * t)
    once = smooth_positions(inband, cutoff, fps)
    twice = smooth_positions(once, cutoff, fps)
    assert np.abs(twice - once).max() / np.abs(once).max() < 2e-3


def test_lowpass_preserves_confidences_prompt_length():
    rng = np.random.default_rng(11)
    positions = rng.normal(size=(40, 22, 3))
    record = _record_with_positions(positions)
    record.confidences = rng.random((40, 22))
    out = lowpass_smooth(record, cutoff_hz=6.0)
    assert out.num_frames == 40
    assert np.array_equal(out.confidences, record.confidences)
    assert out.prompt == record.prompt


def test_lowpass_invalid_cutoff():
    record = _record_with_positions(np.zeros((16, 22, 3)))
    with pytest.raises(ValueError):
        lowpass_smooth(record, cutoff_hz=10.0, fps=20.0)
    with pytest.raises(ValueError):
        lowpass_smooth(record, cutoff_hz=0.0)


# ---------------------------------------------------------------------------
# Corpus statistics


def test_corpus_stats_all_clean(skeleton_partition, small_clean_corpus):
    _, partition = skeleton_partition
    records, _ = small_clean_corpus
    stats = corpus_stats(records, partition, 0.5)
    assert stats["full_body_fraction"] == 1.0
    assert all(v == 1.0 for v in stats["per_part_credible_fraction"].values())


def test_corpus_stats_left_arm_always_noisy(skeleton_partition):
    _, partition = skeleton_partition
    rng = np.random.default_rng(2)
    records = []
    for i in range(4):
        conf = rng.uniform(0.91, 1.0, (20, 22))
        conf[:, list(partition.chain_of["left_arm"])] = 0.1
        records.append(
            MotionRecord(
                id=f"r{i}", prompt="a person stands still", fps=20.0,
                positions=np.zeros((20, 22, 3)), confidences=conf,
            )
        )
    stats = corpus_stats(records, partition, 0.5)
    assert stats["per_part_credible_fraction"]["left_arm"] == 0.0
    assert stats["full_body_fraction"] == 0.0


def test_corpus_stats_reproduces_planted_24_percent():
    config = CorpusConfig(
        size=150, length_min=48, length_max=72, seed=77,
        noise=NoiseSpec(target_full_body_fraction=0.24),
    )
    records, manifest = make_corpus(config)
    assert abs(manifest["realized_full_body_fraction"] - 0.24) <= 0.01
