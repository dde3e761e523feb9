import numpy as np
import pytest
from sklearn.base import clone

from mlrecon.errors import InvalidInputError
from mlrecon.refiner import (
    KalmanSmoother,
    MedianSmoother,
    MovingAverageSmoother,
    PoseRefiner,
    RefinerArchitecture,
    RefinerModel,
    baseline_filters,
    refine,
)
from mlrecon.se3 import (
    Pose,
    PoseSequence,
    matrices_to_sixd,
    quats_to_matrices,
)
from mlrecon.simulate import NoiseConfig, TrajectoryConfig, generate_trajectory, inject_noise


def channels_of(seq):
    r6 = matrices_to_sixd(quats_to_matrices(seq.quaternions))
    return np.concatenate([r6, seq.translations], axis=1).T


def random_sequence(rng, n, scale=300.0):
    poses = []
    for i in range(n):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        poses.append(Pose(i / 30.0, q, rng.normal(scale=scale, size=3)))
    return PoseSequence(tuple(poses))


def constant_sequence(n, trans=(10.0, -5.0, 250.0)):
    poses = [Pose(i / 30.0, [1.0, 0, 0, 0], trans) for i in range(n)]
    return PoseSequence(tuple(poses))


# ---------------------------------------------------------------------------
# refine()
# ---------------------------------------------------------------------------

def test_zero_model_refine_is_identity_on_long_sequence():
    rng = np.random.default_rng(1)
    seq = random_sequence(rng, 1000)
    model = RefinerModel.zeros(RefinerArchitecture(hidden_channels=2))
    out = refine(seq, model)
    a = channels_of(seq)
    b = channels_of(out)
    assert np.max(np.abs(a - b)) < 1e-9
    assert np.array_equal(out.timestamps, seq.timestamps)


def test_refine_preserves_invalid_frames():
    rng = np.random.default_rng(3)
    base = random_sequence(rng, 50)
    poses = list(base.poses)
    for i in (10, 11, 12, 30):
        p = poses[i]
        poses[i] = Pose(p.t, p.quat, p.trans, valid=False)
    seq = PoseSequence(tuple(poses))
    model = RefinerModel.zeros(RefinerArchitecture(hidden_channels=2))
    out = refine(seq, model)
    assert np.array_equal(out.valid_mask, seq.valid_mask)
    for i in (10, 11, 12, 30):
        assert np.array_equal(out[i].trans, seq[i].trans)
    valid = np.where(seq.valid_mask)[0]
    assert np.max(np.abs(channels_of(out)[:, valid] - channels_of(seq)[:, valid])) < 1e-9


def test_refine_rejects_all_invalid():
    poses = tuple(
        Pose(i / 30.0, [1.0, 0, 0, 0], [0, 0, 0], valid=False) for i in range(5)
    )
    model = RefinerModel.zeros(RefinerArchitecture(hidden_channels=2))
    with pytest.raises(InvalidInputError):
        refine(PoseSequence(poses), model)


def test_trained_refiner_reduces_noise():
    # small but real training run; checked against the raw error level
    noise = NoiseConfig(
        jitter_sigma_pos=1.2,
        jitter_sigma_rot=0.005,
        bias_step_sigma_pos=0.0,
        bias_step_sigma_rot=0.0,
        glitch_rate=0.0,
        seed=5,
    )
    est = PoseRefiner(
        hidden_channels=8,
        epochs=60,
        batch_size=4,
        steps_per_epoch=2,
        window=64,
        noise=noise,
        seed=13,
    )
    est.fit()
    gt = generate_trajectory(TrajectoryConfig("free", 400.0, 30.0, seed=31))
    noisy = inject_noise(gt, NoiseConfig(**{**noise.__dict__, "seed": 77}))
    refined = est.transform(noisy)
    raw_err = np.linalg.norm(noisy.translations - gt.translations, axis=1).mean()
    ref_err = np.linalg.norm(refined.translations - gt.translations, axis=1).mean()
    assert ref_err < 0.7 * raw_err


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["kalman", "mean", "median"])
def test_constant_sequence_is_fixed_point(kind):
    seq = constant_sequence(41)
    out = baseline_filters(seq, kind, window=5)
    assert np.max(np.abs(out.translations - seq.translations)) < 1e-9
    assert np.max(np.abs(out.quaternions - seq.quaternions)) < 1e-9


def test_median_removes_impulse_entirely():
    seq = constant_sequence(31)
    poses = list(seq.poses)
    p = poses[15]
    poses[15] = Pose(p.t, p.quat, p.trans + np.array([10.0, 0, 0]))
    spiked = PoseSequence(tuple(poses))
    out = baseline_filters(spiked, "median", window=5)
    assert np.max(np.abs(out.translations - seq.translations)) < 1e-9


def test_mean_filter_reduces_white_noise_variance():
    rng = np.random.default_rng(7)
    n, w = 4000, 9
    base = constant_sequence(n, trans=(0.0, 0.0, 100.0))
    poses = [
        Pose(p.t, p.quat, p.trans + rng.normal(scale=1.0, size=3)) for p in base.poses
    ]
    noisy = PoseSequence(tuple(poses))
    out = baseline_filters(noisy, "mean", window=w)
    interior = slice(w, n - w)
    var_in = np.var(noisy.translations[interior] - base.translations[interior], axis=0)
    var_out = np.var(out.translations[interior] - base.translations[interior], axis=0)
    ratio = var_out / var_in
    assert np.all(ratio > 0.8 / w)
    assert np.all(ratio < 1.3 / w)


def test_even_window_rejected_and_long_window_clamped():
    seq = constant_sequence(9)
    with pytest.raises(InvalidInputError):
        baseline_filters(seq, "mean", window=4)
    out = baseline_filters(seq, "median", window=101)  # clamps to 9
    assert np.max(np.abs(out.translations - seq.translations)) < 1e-9


def test_unknown_kind_rejected():
    with pytest.raises(InvalidInputError):
        baseline_filters(constant_sequence(5), "butterworth")


def test_baselines_preserve_invalid_frames():
    rng = np.random.default_rng(11)
    base = random_sequence(rng, 40, scale=50.0)
    poses = list(base.poses)
    p = poses[7]
    poses[7] = Pose(p.t, p.quat, p.trans, valid=False)
    seq = PoseSequence(tuple(poses))
    out = baseline_filters(seq, "median", window=5)
    assert not out[7].valid
    assert np.array_equal(out[7].trans, seq[7].trans)


# ---------------------------------------------------------------------------
# estimator API
# ---------------------------------------------------------------------------

def test_estimators_expose_sklearn_params():
    est = PoseRefiner(hidden_channels=16, epochs=3)
    params = est.get_params()
    assert params["hidden_channels"] == 16
    cloned = clone(est)
    assert cloned.get_params() == params
    smoother = MedianSmoother(window=7)
    assert clone(smoother).get_params() == {"window": 7}
    smoother.set_params(window=9)
    assert smoother.window == 9


def test_unfitted_refiner_raises():
    with pytest.raises(InvalidInputError):
        PoseRefiner().transform(constant_sequence(5))


def test_smoothers_transform_lists():
    seqs = [constant_sequence(21), constant_sequence(15, trans=(1.0, 2.0, 3.0))]
    for smoother in (KalmanSmoother(), MovingAverageSmoother(5), MedianSmoother(5)):
        out = smoother.fit(seqs).transform(seqs)
        assert isinstance(out, list) and len(out) == 2
        single = smoother.transform(seqs[0])
        assert isinstance(single, PoseSequence)


def test_refiner_fit_on_explicit_pairs_and_model_io(tmp_path):
    rng = np.random.default_rng(13)
    gt = generate_trajectory(TrajectoryConfig("linear", 200.0, 10.0, seed=17))
    noisy = inject_noise(gt, NoiseConfig(glitch_rate=0.0, seed=19))
    est = PoseRefiner(
        hidden_channels=4, epochs=2, batch_size=2, steps_per_epoch=1, window=64, seed=3
    )
    est.fit([noisy], [gt])
    path = tmp_path / "model.mlrf"
    est.save(path)
    loaded = PoseRefiner.from_file(path)
    out = loaded.transform(noisy)
    assert len(out) == len(noisy)
