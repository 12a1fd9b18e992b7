import numpy as np
import pytest

from partmotion.features import (
    MotionRecord,
    decode_features,
    decode_fullbody,
    encode_features,
    encode_fullbody,
    feature_dim,
    load_corpus,
    record_from_json,
    record_to_json,
    root_init_of,
    rotation_6d_to_matrix,
    save_corpus,
)
from partmotion.synthdata import generate_clean


def _yaw(phi):
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


@pytest.fixture(scope="module")
def walk_record():
    return generate_clean("a person waves the left arm while walking forward", 64, seed=5)


def test_feature_dims_exact(skeleton_partition, walk_record):
    _, partition = skeleton_partition
    seqs = encode_features(walk_record, *skeleton_partition)
    dims = {s.part_name: s.dim for s in seqs}
    assert dims == {
        "torso": 75, "left_arm": 99, "right_arm": 99, "left_leg": 99, "right_leg": 99,
    }
    for s in seqs:
        assert s.dim == feature_dim(len(s.joints))
        assert s.num_frames == walk_record.num_frames - 1


def test_static_pose_zero_velocities(skeleton_partition):
    record = generate_clean("a person stands still", 32, seed=7)
    seqs = encode_features(record, *skeleton_partition)
    for s in seqs:
        nj = len(s.joints)
        root_block = s.frames[:, :3]
        jv = s.frames[:, 3 + 3 * nj : 3 + 6 * nj]
        assert np.abs(root_block).max() < 1e-12
        assert np.abs(jv).max() < 1e-12


def test_translation_invariance(skeleton_partition, walk_record):
    base = encode_features(walk_record, *skeleton_partition)
    shifted = MotionRecord(
        id="t", prompt=walk_record.prompt, fps=walk_record.fps,
        positions=walk_record.positions + np.array([2.5, 0.7, -4.0]),
        confidences=walk_record.confidences,
    )
    moved = encode_features(shifted, *skeleton_partition)
    for a, b in zip(base, moved):
        assert np.abs(a.frames - b.frames).max() < 1e-9


def test_vertical_rotation_invariance(skeleton_partition, walk_record):
    base = encode_features(walk_record, *skeleton_partition)
    rotated = MotionRecord(
        id="t", prompt=walk_record.prompt, fps=walk_record.fps,
        positions=walk_record.positions @ _yaw(1.1).T,
        confidences=walk_record.confidences,
    )
    moved = encode_features(rotated, *skeleton_partition)
    for a, b in zip(base, moved):
        assert np.abs(a.frames - b.frames).max() < 1e-6


def test_round_trip_many_programs(skeleton_partition):
    skeleton, partition = skeleton_partition
    prompts = [
        "a person stands still",
        "a person walks forward",
        "a person kicks with the right leg",
        "a person twists the torso while stepping in place",
        "a person raises both arms while walking forward",
    ]
    for i, prompt in enumerate(prompts):
        record = generate_clean(prompt, 96, seed=20 + i)
        seqs = encode_features(record, skeleton, partition)
        decoded = decode_features(seqs, skeleton, partition, root_init_of(record, skeleton))
        err = np.linalg.norm(decoded - record.positions[:-1], axis=-1).max()
        assert err < 1e-4, f"{prompt}: {err}"


def test_round_trip_fullbody(skeleton_partition, walk_record):
    skeleton, _ = skeleton_partition
    seq = encode_fullbody(walk_record, skeleton)
    assert seq.dim == 3 + 12 * 22
    decoded = decode_fullbody(seq, skeleton, root_init_of(walk_record, skeleton))
    assert np.linalg.norm(decoded - walk_record.positions[:-1], axis=-1).max() < 1e-4


def test_zero_velocity_features_decode_static(skeleton_partition):
    skeleton, partition = skeleton_partition
    record = generate_clean("a person stands still", 24, seed=3)
    seqs = encode_features(record, skeleton, partition)
    decoded = decode_features(seqs, skeleton, partition, (record.positions[0, 0], 0.0))
    assert np.abs(decoded - decoded[0]).max() < 1e-9


def test_shared_joint_disagreement_averages(skeleton_partition):
    skeleton, partition = skeleton_partition
    record = generate_clean("a person stands still", 24, seed=3)
    seqs = encode_features(record, skeleton, partition)
    init = root_init_of(record, skeleton)
    base = decode_features(seqs, skeleton, partition, init)

    # nudge one part's copy of spine1 by delta
    delta = 0.05
    spine1 = skeleton.joint_names.index("spine1")
    seq = seqs[partition.part_index("left_arm")]
    slot = seq.joints.index(spine1)
    nj = len(seq.joints)
    seq.frames[:, 3 + 3 * slot + 1] += delta  # y component of that joint's position

    moved = decode_features(seqs, skeleton, partition, init)
    shift = moved[:, spine1, 1] - base[:, spine1, 1]
    assert np.allclose(shift, delta / 5.0, atol=1e-9)  # mean of 5 copies


def test_rotation_blocks_are_orthonormal(skeleton_partition, walk_record):
    seqs = encode_features(walk_record, *skeleton_partition)
    for s in seqs:
        nj = len(s.joints)
        r6 = s.frames[:, 3 + 6 * nj :].reshape(s.num_frames, nj, 6)
        mats = rotation_6d_to_matrix(r6)
        eye = np.eye(3)
        prod = mats @ np.swapaxes(mats, -1, -2)
        assert np.abs(prod - eye).max() < 1e-5
        det = np.linalg.det(mats)
        assert np.abs(det - 1.0).max() < 1e-5


def test_inconsistent_part_lengths_raise(skeleton_partition, walk_record):
    skeleton, partition = skeleton_partition
    seqs = encode_features(walk_record, skeleton, partition)
    seqs[2].frames = seqs[2].frames[:-3]
    with pytest.raises(ValueError):
        decode_features(seqs, skeleton, partition)


def test_record_validation():
    with pytest.raises(ValueError):
        MotionRecord(
            id="x", prompt="p", fps=20.0,
            positions=np.full((4, 22, 3), np.nan), confidences=np.ones((4, 22)),
        ).validate()
    with pytest.raises(ValueError):
        MotionRecord(
            id="x", prompt="p", fps=20.0,
            positions=np.zeros((1, 22, 3)), confidences=np.ones((1, 22)),
        ).validate()


def test_jsonl_round_trip(tmp_path, walk_record):
    walk_record.meta["corrupt_mask"] = np.zeros((4, 5), dtype=int).tolist()
    line = record_to_json(walk_record)
    back = record_from_json(line)
    assert back.id == walk_record.id
    assert back.prompt == walk_record.prompt
    assert np.array_equal(back.positions, walk_record.positions)
    assert np.array_equal(back.confidences, walk_record.confidences)
    assert back.meta["corrupt_mask"] == walk_record.meta["corrupt_mask"]

    path = tmp_path / "corpus.jsonl"
    save_corpus([walk_record, back], path)
    loaded = load_corpus(path)
    assert len(loaded) == 2
    assert np.array_equal(loaded[1].positions, walk_record.positions)


def test_jsonl_bytes_deterministic(tmp_path, walk_record):
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_corpus([walk_record], p1)
    save_corpus([walk_record], p2)
    assert p1.read_bytes() == p2.read_bytes()
