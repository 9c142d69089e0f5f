import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ganhec.datagen import (PoseSet, SimConfig, StreamConfig, add_noise, generate_dataset,
                            generate_pairs, generate_streams, load_pose, load_poseset,
                            merge_pairs, sample_ground_truth, save_pose, save_poseset,
                            save_poseset_json, simulate_time_offset)
from ganhec.errors import PoseParseError
from ganhec.se3 import Pose, is_rotation, rotation_angle, sample_uniform_rotation, so3_log


def loop_residual(a: PoseSet, b: PoseSet, x: Pose) -> float:
    return float(np.max(np.linalg.norm(a.matrices() @ x.matrix - x.matrix @ b.matrices(),
                                       axis=(1, 2))))


def random_set(rng, k, scale=50.0):
    return PoseSet(sample_uniform_rotation(rng, k), scale * rng.normal(size=(k, 3)))


# ------------------------------------------------------------------ ground truth

def test_ground_truth_scale(rng):
    x = sample_ground_truth(125.31, rng)
    assert np.linalg.norm(x.p) == pytest.approx(125.31, abs=1e-12)
    assert is_rotation(x.r)
    assert np.array_equal(sample_ground_truth(0.0, rng).p, np.zeros(3))


def test_ground_truth_direction_uniform():
    rng = np.random.default_rng(0)
    dirs = np.array([sample_ground_truth(2.0, rng).p / 2.0 for _ in range(10_000)])
    assert np.max(np.abs(dirs.mean(axis=0))) < 0.03
    assert abs(np.mean(dirs[:, 2] ** 2) - 1 / 3) < 0.015


# ------------------------------------------------------------------ generation

def test_dataset_sizes():
    a, b, x = generate_dataset(SimConfig(n=6000, m=4000, seed=1))
    assert (len(a), len(b)) == (6000, 4000)
    assert a.scale_hint == b.scale_hint == 125.31


def test_pairs_loop_closure():
    for seed in range(5):
        pairs = generate_pairs(SimConfig(n=300, m=200, seed=seed))
        assert loop_residual(pairs.a, pairs.b, pairs.x_true) < 1e-9


def test_identity_transform_keeps_pairs_equal(monkeypatch):
    import ganhec.datagen as dg
    monkeypatch.setattr(dg, "sample_ground_truth", lambda d, rng: Pose.identity())
    pairs = dg.generate_pairs(SimConfig(n=20, m=10, seed=3))
    np.testing.assert_allclose(pairs.a.matrices(), pairs.b.matrices(), atol=1e-9)


def test_split_has_no_shared_pairs():
    cfg = SimConfig(n=50, m=30, seed=2)
    pairs = generate_pairs(cfg, np.random.default_rng(cfg.seed))
    a, b, x = generate_dataset(cfg)
    np.testing.assert_array_equal(a.matrices(), pairs.a.matrices()[:50])
    np.testing.assert_array_equal(b.matrices(), pairs.b.matrices()[50:])
    np.testing.assert_array_equal(x.matrix, pairs.x_true.matrix)


def test_generation_structure():
    pairs = generate_pairs(SimConfig(d=10.0, n=2000, m=1, sigma_w=(0.5, 0.2, 0.1),
                                     sigma_p=(1.0, 0.0, 0.3), seed=4))
    local = pairs.b.left(pairs.b0.inv())
    w = np.array([so3_log(r) for r in local.r])
    np.testing.assert_allclose(w.std(axis=0), [0.5, 0.2, 0.1], rtol=0.05)
    np.testing.assert_allclose(local.p.std(axis=0) / 10.0, [1.0, 0.0, 0.3], atol=0.05)
    assert np.linalg.norm(pairs.b0.p) > 0
    assert all(is_rotation(r, 1e-9) for r in pairs.a.r[:50])


def test_deterministic_for_seed():
    a1, b1, x1 = generate_dataset(SimConfig(n=10, m=10, seed=7))
    a2, b2, x2 = generate_dataset(SimConfig(n=10, m=10, seed=7))
    assert np.array_equal(a1.matrices(), a2.matrices()) and np.array_equal(x1.matrix, x2.matrix)


@pytest.mark.parametrize("kwargs", [dict(n=0), dict(m=0), dict(noise_std=-1.0),
                                    dict(sigma_w=(0.5, 1.5, 0.1)), dict(sigma_p=(-0.1, 0, 0))])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SimConfig(**kwargs)


# ------------------------------------------------------------------ noise

def test_zero_noise_is_identity(rng):
    s = random_set(rng, 5)
    assert add_noise(s, 0.0, rng) is s


def test_noise_angle_statistics():
    rng = np.random.default_rng(5)
    s = PoseSet(np.repeat(np.eye(3)[None], 20_000, axis=0), np.zeros((20_000, 3)), 2.0)
    noisy = add_noise(s, 0.01, rng)
    angles = rotation_angle(noisy.r)
    # |eps_w| is chi-distributed with 3 dof: mean sigma sqrt(8/pi)
    assert np.mean(angles) == pytest.approx(0.01 * math.sqrt(8 / math.pi), rel=0.02)
    assert np.std(noisy.p) == pytest.approx(0.01 * 2.0, rel=0.03)


def test_noise_is_right_translated(rng):
    base = random_set(rng, 3)
    noisy = add_noise(base, 0.05, np.random.default_rng(0), d=1.0)
    for t, tn in zip(base, noisy):
        delta = t.inv() @ tn
        assert rotation_angle(delta.r) < 0.5
    assert all(is_rotation(r, 1e-9) for r in noisy.r)


def test_noisy_dataset_breaks_loop_closure():
    a, b, x = generate_dataset(SimConfig(n=20, m=20, noise_std=0.01, seed=1))
    assert len(a) == 20 and all(is_rotation(r, 1e-9) for r in b.r)


# ------------------------------------------------------------------ merging

def test_merge_counts():
    rng = np.random.default_rng(0)
    assert len(merge_pairs(random_set(rng, 2))) == 1
    assert len(merge_pairs(random_set(rng, 626))) == 195_625
    with pytest.raises(ValueError):
        merge_pairs(random_set(rng, 1))


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 40))
def test_merge_count_is_binomial(n):
    assert len(merge_pairs(random_set(np.random.default_rng(n), n))) == math.comb(n, 2)


def test_merge_values(rng):
    s = random_set(rng, 5)
    merged = merge_pairs(s)
    i, j = np.triu_indices(5, 1)
    for k in range(len(merged)):
        expected = s[int(i[k])].inv() @ s[int(j[k])]
        np.testing.assert_allclose(merged[k].matrix, expected.matrix, atol=1e-9)


def test_merge_identical_poses_gives_identity(rng):
    t = random_set(rng, 1)
    s = PoseSet(np.repeat(t.r, 4, axis=0), np.repeat(t.p, 4, axis=0))
    np.testing.assert_allclose(merge_pairs(s).matrices(), np.broadcast_to(np.eye(4), (6, 4, 4)),
                               atol=1e-12)


def test_time_offset_sizes(rng):
    a, b = random_set(rng, 100), random_set(rng, 100)
    a2, b2 = simulate_time_offset(a, b, 0.05)
    assert (len(a2), len(b2)) == (95, 95)
    np.testing.assert_array_equal(a2.p, a.p[5:])
    np.testing.assert_array_equal(b2.p, b.p[:95])
    a3, b3 = simulate_time_offset(random_set(rng, 10), random_set(rng, 10), 0.05)
    assert (len(a3), len(b3)) == (10, 10)
    a0, b0 = simulate_time_offset(a, b, 0.0)
    assert np.array_equal(a0.p, a.p) and np.array_equal(b0.p, b.p)
    for bad in (-0.1, 0.5, 0.7):
        with pytest.raises(ValueError):
            simulate_time_offset(a, b, bad)


def test_stream_sizes():
    robot, cam, x = generate_streams(StreamConfig(n_robot=30, n_camera=25, seed=3))
    assert (len(robot), len(cam)) == (30, 25)
    assert np.linalg.norm(x.p) == pytest.approx(125.31)
    assert all(is_rotation(r, 1e-9) for r in merge_pairs(cam).r)


def test_streams_share_trajectory_when_clocks_coincide():
    # camera poses are G E(t) X, so merging on a common clock closes the loop
    import ganhec.datagen as dg

    class SameClock:
        def __init__(self, rng):
            self.rng = rng
            self.times = None

        def __getattr__(self, name):
            return getattr(self.rng, name)

        def uniform(self, lo, hi, size=None):
            if size in (20,):
                if self.times is None:
                    self.times = self.rng.uniform(lo, hi, size)
                return self.times
            return self.rng.uniform(lo, hi, size)

    rng = SameClock(np.random.default_rng(1))
    robot, cam, x = dg.generate_streams(StreamConfig(n_robot=20, n_camera=20), rng)
    a, b = merge_pairs(robot), merge_pairs(cam)
    assert loop_residual(a, b, x) < 1e-6


# ------------------------------------------------------------------ files

def test_save_load_bitwise(tmp_path, rng):
    s = random_set(rng, 20)
    s.scale_hint = 125.31
    save_poseset(s, tmp_path / "s.poses")
    back = load_poseset(tmp_path / "s.poses")
    assert np.array_equal(back.r, s.r) and np.array_equal(back.p, s.p)
    assert back.scale_hint == 125.31


def test_json_roundtrip(tmp_path, rng):
    s = random_set(rng, 4)
    save_poseset_json(s, tmp_path / "s.json")
    back = load_poseset(tmp_path / "s.json")
    assert np.array_equal(back.r, s.r) and np.array_equal(back.p, s.p)


def test_single_pose_file(tmp_path, rng):
    x = random_set(rng, 1)[0]
    save_pose(x, tmp_path / "x.pose")
    assert np.array_equal(load_pose(tmp_path / "x.pose").matrix, x.matrix)
    save_poseset(random_set(rng, 2), tmp_path / "two.pose")
    with pytest.raises(PoseParseError):
        load_pose(tmp_path / "two.pose")


def _write_rows(path, rows):
    path.write_text("\n".join(" ".join(repr(float(v)) for v in r) for r in rows) + "\n")


def test_short_row_names_line(tmp_path):
    good = np.eye(4).ravel()
    _write_rows(tmp_path / "bad.poses", [good, good[:15]])
    with pytest.raises(PoseParseError, match="line 2"):
        load_poseset(tmp_path / "bad.poses")


def test_non_numeric_and_bad_last_row(tmp_path):
    (tmp_path / "a.poses").write_text("# header\n" + " ".join(["1"] * 15) + " x\n")
    with pytest.raises(PoseParseError, match="line 2"):
        load_poseset(tmp_path / "a.poses")
    m = np.eye(4)
    m[3, 0] = 1.0
    _write_rows(tmp_path / "b.poses", [m.ravel()])
    with pytest.raises(PoseParseError, match="0 0 0 1"):
        load_poseset(tmp_path / "b.poses")


def test_reflection_rejected(tmp_path):
    m = np.diag([1.0, 1.0, -1.0, 1.0])
    _write_rows(tmp_path / "r.poses", [np.eye(4).ravel(), m.ravel()])
    with pytest.raises(PoseParseError, match="re-orthogonalize") as info:
        load_poseset(tmp_path / "r.poses")
    assert info.value.line == 2


def test_slightly_off_rotation_rejected(tmp_path):
    m = np.eye(4)
    m[0, 1] = 1e-4
    _write_rows(tmp_path / "o.poses", [m.ravel()])
    with pytest.raises(PoseParseError):
        load_poseset(tmp_path / "o.poses")


def test_poseset_indexing(rng):
    s = random_set(rng, 6)
    assert isinstance(s[2], Pose) and len(s[1:4]) == 3
    assert len(list(s)) == 6
    assert np.array_equal(PoseSet.from_poses(list(s)).matrices(), s.matrices())
    c = random_set(rng, 1)[0]
    np.testing.assert_allclose(s.conjugate(c)[0].matrix, (c @ s[0] @ c.inv()).matrix, atol=1e-9)
    with pytest.raises(ValueError):
        PoseSet(np.zeros((2, 3, 3)), np.zeros((3, 3)))
