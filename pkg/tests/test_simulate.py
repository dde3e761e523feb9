import numpy as np
import pytest

from mlrecon.errors import InvalidInputError, NoObservationError
from mlrecon.se3 import Pose, quat_to_matrix
from mlrecon.simulate import (
    CameraIntrinsics,
    FrameGeometry,
    Lesion,
    NoiseConfig,
    Phantom,
    TrajectoryConfig,
    Vessel,
    default_phantom,
    generate_trajectory,
    inject_noise,
    load_scan_bundle,
    observe_depth_centroid,
    read_pgm,
    render_frame,
    sample_phantom,
    simulate_scan,
    write_pgm,
)


class _Probe:
    centroid_offset = np.array([0.0, -60.0, 0.0])


def autocorr_lag1(x):
    x = x - x.mean()
    return float(np.dot(x[:-1], x[1:]) / np.dot(x, x))


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def test_linear_sweep_frame_count_and_length():
    cfg = TrajectoryConfig("linear", total_distance=250.0, duration=12.5, seed=1)
    seq = generate_trajectory(cfg)
    assert len(seq) == 375
    td = seq.path_length()
    assert abs(td - 250.0) / 250.0 < 0.02


@pytest.mark.parametrize("mode,dist,dur", [
    ("linear", 250.0, 12.5),
    ("back_and_forth", 560.0, 25.0),
    ("spiral", 480.0, 22.0),
    ("free", 450.0, 40.0),
])
def test_path_length_within_two_percent(mode, dist, dur):
    cfg = TrajectoryConfig(mode, total_distance=dist, duration=dur, seed=3)
    seq = generate_trajectory(cfg)
    assert abs(seq.path_length() - dist) / dist < 0.02


@pytest.mark.parametrize("mode", ["linear", "back_and_forth", "spiral", "free"])
def test_zero_rotation_amplitude_gives_identical_rotations(mode):
    cfg = TrajectoryConfig(mode, 300.0, 15.0, rotation_amplitude=0.0, seed=5)
    seq = generate_trajectory(cfg)
    q0 = seq[0].quat
    for p in seq:
        assert np.max(np.abs(p.quat - q0)) < 1e-15


def test_trajectory_deterministic_under_seed():
    cfg = TrajectoryConfig("free", 400.0, 30.0, seed=11)
    a = generate_trajectory(cfg)
    b = generate_trajectory(cfg)
    assert np.array_equal(a.translations, b.translations)
    assert np.array_equal(a.quaternions, b.quaternions)
    c = generate_trajectory(TrajectoryConfig("free", 400.0, 30.0, seed=12))
    assert not np.array_equal(a.translations, c.translations)


def test_linear_constant_interframe_distance():
    cfg = TrajectoryConfig("linear", 250.0, 12.5, seed=1)
    seq = generate_trajectory(cfg)
    d = np.linalg.norm(np.diff(seq.translations, axis=0), axis=1)
    assert np.max(np.abs(d - d[0])) < 1e-6


@pytest.mark.parametrize("mode", ["linear", "back_and_forth", "spiral", "free"])
def test_position_is_smooth(mode):
    # C1 proxy: the discrete acceleration stays small at 30 Hz
    cfg = TrajectoryConfig(mode, 400.0, 25.0, seed=7)
    pos = generate_trajectory(cfg).translations
    second_diff = np.linalg.norm(pos[2:] - 2 * pos[1:-1] + pos[:-2], axis=1)
    assert np.max(second_diff) < 0.5


def test_trajectory_config_validation():
    with pytest.raises(InvalidInputError):
        TrajectoryConfig("zigzag", 100.0, 10.0)
    with pytest.raises(InvalidInputError):
        TrajectoryConfig("linear", -1.0, 10.0)


# ---------------------------------------------------------------------------
# noise injection
# ---------------------------------------------------------------------------

def _gt(n_frames=600, seed=2):
    return generate_trajectory(
        TrajectoryConfig("linear", 250.0, n_frames / 30.0, seed=seed)
    )


def test_zero_noise_is_bit_exact_identity():
    gt = _gt(200)
    out = inject_noise(gt, NoiseConfig.zero(seed=9))
    for a, b in zip(gt, out):
        assert a.t == b.t
        assert np.array_equal(a.quat, b.quat)
        assert np.array_equal(a.trans, b.trans)


def test_noise_preserves_timestamps_and_length():
    gt = _gt(300)
    out = inject_noise(gt, NoiseConfig(seed=4))
    assert len(out) == len(gt)
    assert np.array_equal(out.timestamps, gt.timestamps)
    assert np.all(out.valid_mask)


def test_jitter_only_residuals_are_white():
    gt = _gt(10_000)
    cfg = NoiseConfig(
        jitter_sigma_pos=1.0,
        jitter_sigma_rot=0.002,
        bias_step_sigma_pos=0.0,
        bias_step_sigma_rot=0.0,
        glitch_rate=0.0,
        seed=21,
    )
    noisy = inject_noise(gt, cfg)
    resid = noisy.translations - gt.translations
    for axis in range(3):
        assert abs(autocorr_lag1(resid[:, axis])) < 0.2


def test_bias_only_residuals_are_strongly_correlated():
    gt = _gt(10_000)
    cfg = NoiseConfig(
        jitter_sigma_pos=0.0,
        jitter_sigma_rot=0.0,
        bias_step_sigma_pos=0.5,
        bias_step_sigma_rot=0.0,
        bias_ar_coefficient=0.99,
        glitch_rate=0.0,
        seed=22,
    )
    noisy = inject_noise(gt, cfg)
    resid = noisy.translations - gt.translations
    for axis in range(3):
        assert autocorr_lag1(resid[:, axis]) > 0.9


def test_noise_deterministic_and_rotations_valid():
    gt = _gt(400)
    cfg = NoiseConfig(seed=31)
    a = inject_noise(gt, cfg)
    b = inject_noise(gt, cfg)
    assert np.array_equal(a.translations, b.translations)
    assert np.array_equal(a.quaternions, b.quaternions)
    for p in a:
        m = quat_to_matrix(p.quat)
        assert np.max(np.abs(m.T @ m - np.eye(3))) < 1e-9


def test_noise_requires_all_valid_input():
    gt = _gt(10)
    poses = list(gt.poses)
    poses[3] = Pose(poses[3].t, poses[3].quat, poses[3].trans, valid=False)
    from mlrecon.se3 import PoseSequence

    with pytest.raises(InvalidInputError):
        inject_noise(PoseSequence(tuple(poses)), NoiseConfig(seed=1))


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _single_lesion_phantom():
    return Phantom(
        extent=(100.0, 100.0, 100.0),
        background_intensity=50,
        lesions=(Lesion((0.0, 0.0, 0.0), 10.0, 200),),
        vessels=(),
        center=(0.0, 0.0, 0.0),
    )


def test_render_lesion_slice_is_analytic_disc():
    ph = _single_lesion_phantom()
    su = sv = 0.5
    w = h = 80
    # image plane z=0 through the lesion center, lesion at pixel (40, 40)
    m = np.eye(4)
    m[:3, 3] = [-40 * su, -40 * sv, 0.0]
    frame = render_frame(ph, m, w, h, (su, sv))
    uu, vv = np.meshgrid(np.arange(w), np.arange(h))
    dist2 = ((uu - 40) * su) ** 2 + ((vv - 40) * sv) ** 2
    expected = np.where(dist2 <= 10.0**2, 200, 50).astype(np.uint8)
    assert np.array_equal(frame.data, expected)
    # disc radius in pixels = radius / spacing
    n_disc = int(np.sum(frame.data == 200))
    assert abs(n_disc - np.pi * (10.0 / su) ** 2) / (np.pi * (10.0 / su) ** 2) < 0.05


def test_render_outside_extent_is_zero():
    ph = _single_lesion_phantom()
    m = np.eye(4)
    m[:3, 3] = [0.0, 0.0, 500.0]  # plane far outside the phantom
    frame = render_frame(ph, m, 32, 32, (0.5, 0.5))
    assert np.array_equal(frame.data, np.zeros((32, 32), dtype=np.uint8))


def test_render_background_only_is_constant():
    ph = Phantom(extent=(100.0,) * 3, background_intensity=77, center=(0.0, 0.0, 0.0))
    m = np.eye(4)
    m[:3, 3] = [-10.0, -10.0, 0.0]
    frame = render_frame(ph, m, 16, 16, (0.5, 0.5))
    assert np.array_equal(frame.data, np.full((16, 16), 77, dtype=np.uint8))


def test_speckle_is_seeded_and_optional():
    ph = _single_lesion_phantom()
    m = np.eye(4)
    a = render_frame(ph, m, 32, 32, (0.5, 0.5), speckle_amplitude=0.2, seed=3)
    b = render_frame(ph, m, 32, 32, (0.5, 0.5), speckle_amplitude=0.2, seed=3)
    c = render_frame(ph, m, 32, 32, (0.5, 0.5))
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_vessel_capsule_membership():
    ph = Phantom(
        extent=(100.0,) * 3,
        background_intensity=50,
        vessels=(Vessel((-30.0, 0.0, 0.0), (30.0, 0.0, 0.0), 5.0, 10),),
        center=(0.0, 0.0, 0.0),
    )
    pts = np.array([[0.0, 0.0, 0.0], [0.0, 4.9, 0.0], [0.0, 5.1, 0.0], [35.1, 0.0, 0.0]])
    vals = sample_phantom(ph, pts)
    assert list(vals) == [10.0, 10.0, 50.0, 50.0]


# ---------------------------------------------------------------------------
# depth observation
# ---------------------------------------------------------------------------

def test_observation_zero_noise_is_exact():
    pose = Pose(0.0, [1.0, 0, 0, 0], [20.0, -10.0, 500.0])
    obs = observe_depth_centroid(pose, _Probe(), CameraIntrinsics(), 0.0)
    expected = pose.apply(_Probe.centroid_offset)
    assert np.array_equal(obs.centroid, expected)
    # the synthesized patch back-projects to the centroid
    intr = CameraIntrinsics()
    rays = np.stack(
        [
            (obs.pixels[:, 0] - intr.cx) / intr.fx,
            (obs.pixels[:, 1] - intr.cy) / intr.fy,
            np.ones(len(obs.pixels)),
        ],
        axis=1,
    )
    mean_bp = (obs.depths[:, None] * rays).mean(axis=0)
    assert np.max(np.abs(mean_bp - expected)) < 1e-9


def test_observation_behind_camera_raises():
    pose = Pose(0.0, [1.0, 0, 0, 0], [0.0, 60.0, -300.0])
    with pytest.raises(NoObservationError):
        observe_depth_centroid(pose, _Probe(), CameraIntrinsics(), 0.0)


def test_observation_outside_frustum_raises():
    pose = Pose(0.0, [1.0, 0, 0, 0], [5000.0, 60.0, 400.0])
    with pytest.raises(NoObservationError):
        observe_depth_centroid(pose, _Probe(), CameraIntrinsics(), 0.0)


def test_observation_noise_rms_matches_isotropic_gaussian():
    pose = Pose(0.0, [1.0, 0, 0, 0], [0.0, 50.0, 600.0])
    rng = np.random.default_rng(17)
    gt_c = pose.apply(_Probe.centroid_offset)
    errs = []
    for _ in range(1000):
        obs = observe_depth_centroid(pose, _Probe(), CameraIntrinsics(), 2.0, rng=rng)
        errs.append(np.sum((obs.centroid - gt_c) ** 2))
    rms = np.sqrt(np.mean(errs))
    assert abs(rms - 2.0 * np.sqrt(3)) / (2.0 * np.sqrt(3)) < 0.10


# ---------------------------------------------------------------------------
# scan bundles
# ---------------------------------------------------------------------------

def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(23)
    data = rng.integers(0, 256, size=(24, 32), dtype=np.uint8)
    write_pgm(tmp_path / "f.pgm", data)
    raw = (tmp_path / "f.pgm").read_bytes()
    assert raw.startswith(b"P5\n32 24\n255\n")
    assert np.array_equal(read_pgm(tmp_path / "f.pgm"), data)


def test_scan_bundle_round_trip(tmp_path):
    traj = TrajectoryConfig("linear", 60.0, 2.0, seed=3)
    bundle = simulate_scan(
        tmp_path / "scan",
        traj,
        NoiseConfig(seed=4),
        frame_geometry=FrameGeometry(width=64, height=48, pixel_spacing=(0.5, 0.5)),
        frame_time_offset=0.125,
    )
    loaded = load_scan_bundle(tmp_path / "scan")
    assert loaded.n_frames == 60
    assert loaded.has_frames()
    gt = loaded.gt()
    raw = loaded.raw()
    assert len(gt) == len(raw) == 60
    frame = loaded.frame(10)
    assert frame.data.shape == (48, 64)
    assert abs(frame.t - (gt[10].t + 0.125)) < 1e-8
    assert loaded.noise_config() == NoiseConfig(seed=4)
    assert loaded.trajectory_config() == traj
    np.testing.assert_allclose(
        loaded.calibration_matrix(),
        bundle.calibration_matrix(),
        atol=0,
    )


def test_scan_bundle_byte_identical_for_same_seed(tmp_path):
    traj = TrajectoryConfig("linear", 60.0, 2.0, seed=5)
    kwargs = dict(
        trajectory=traj,
        noise=NoiseConfig(seed=6),
        frame_geometry=FrameGeometry(width=48, height=32, pixel_spacing=(0.6, 0.6)),
    )
    simulate_scan(tmp_path / "a", **kwargs)
    simulate_scan(tmp_path / "b", **kwargs)
    for name in ["manifest.json", "gt.csv", "raw.csv", "frames/000017.pgm"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_default_phantom_valid():
    ph = default_phantom()
    assert ph.lesions and ph.vessels
