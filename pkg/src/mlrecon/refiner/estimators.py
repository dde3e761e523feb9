"""scikit-learn style estimator wrappers around the refiner and baselines.

These follow the fit/transform convention (with ``get_params`` /
``set_params`` from ``sklearn.base``) so the denoisers compose with
pipelines and grid search. ``X`` is a PoseSequence or a list of them.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ..errors import InvalidInputError
from ..se3 import PoseSequence, S_P_DEFAULT, NormalizationParams
from ..simulate import NoiseConfig
from .baselines import baseline_filters
from .infer import refine
from .loss import LossWeights
from .model_file import load_model, save_model
from .network import RefinerArchitecture, RefinerModel
from .training import (
    PairGeneratorConfig,
    SyntheticPairStream,
    TrainConfig,
    train,
    write_training_log,
)


def _as_sequences(x):
    if isinstance(x, PoseSequence):
        return [x], True
    return list(x), False


class PoseRefiner(BaseEstimator):
    """Dual-stage temporal-convolution pose denoiser.

    ``fit(X, y)`` trains on aligned (noisy, clean) PoseSequence lists by
    sampling random training crops from them; ``fit()`` without data trains
    on the built-in synthetic pair generator (`noise` configures it).
    ``transform`` refines sequences with the trained model.
    """

    def __init__(
        self,
        hidden_channels: int = 64,
        kernel_size: int = 3,
        learning_rate: float = 1e-3,
        epochs: int = 100,
        batch_size: int = 32,
        steps_per_epoch: int = 8,
        window: int = 256,
        weight_decay: float = 1e-4,
        lambda_g: float = 1.0,
        lambda_l: float = 5.0,
        lambda_v: float = 3.0,
        lambda_f: float = 0.1,
        noise: Optional[NoiseConfig] = None,
        seed: int = 0,
    ):
        self.hidden_channels = hidden_channels
        self.kernel_size = kernel_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.steps_per_epoch = steps_per_epoch
        self.window = window
        self.weight_decay = weight_decay
        self.lambda_g = lambda_g
        self.lambda_l = lambda_l
        self.lambda_v = lambda_v
        self.lambda_f = lambda_f
        self.noise = noise
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            steps_per_epoch=self.steps_per_epoch,
            window=self.window,
            weight_decay=self.weight_decay,
            seed=self.seed,
        )

    def _weights(self) -> LossWeights:
        return LossWeights(self.lambda_g, self.lambda_l, self.lambda_v, self.lambda_f)

    def fit(self, X=None, y=None, log_path=None, log_callback=None):
        arch = RefinerArchitecture(
            hidden_channels=self.hidden_channels, kernel_size=self.kernel_size
        )
        cfg = self._train_config()
        if X is None:
            gen_cfg = PairGeneratorConfig(
                noise=self.noise if self.noise is not None else NoiseConfig(),
                seed=self.seed,
            )
            make_batch = SyntheticPairStream(gen_cfg)
        else:
            make_batch = _SequencePairSampler(X, y)
        self.model_, self.history_ = train(
            make_batch, cfg, architecture=arch, weights=self._weights(),
            log_callback=log_callback,
        )
        if log_path is not None:
            write_training_log(self.history_, log_path)
        return self

    def transform(self, X):
        if not hasattr(self, "model_"):
            raise InvalidInputError("PoseRefiner is not fitted; call fit() or load()")
        seqs, single = _as_sequences(X)
        out = [refine(s, self.model_, window=self.window) for s in seqs]
        return out[0] if single else out

    def save(self, path) -> None:
        save_model(self.model_, path)

    def load(self, path) -> "PoseRefiner":
        self.model_ = load_model(path)
        return self

    @staticmethod
    def from_file(path, window: int = 256) -> "PoseRefiner":
        model = load_model(path)
        est = PoseRefiner(
            hidden_channels=model.architecture.hidden_channels,
            kernel_size=model.architecture.kernel_size,
            window=window,
        )
        est.model_ = model
        return est


def _channels_at(seq: PoseSequence, idx: np.ndarray) -> np.ndarray:
    from ..se3 import matrices_to_sixd, quats_to_matrices

    r6 = matrices_to_sixd(quats_to_matrices(seq.quaternions[idx]))
    return np.concatenate([r6, seq.translations[idx]], axis=1).T


class _SequencePairSampler:
    """Batch factory drawing random crops from explicit (noisy, clean)
    PoseSequence pairs, using the frames valid in both."""

    def __init__(self, noisy_seqs, clean_seqs):
        if clean_seqs is None:
            raise InvalidInputError("fit(X, y) needs clean target sequences in y")
        noisy, _ = _as_sequences(noisy_seqs)
        clean, _ = _as_sequences(clean_seqs)
        if len(noisy) != len(clean):
            raise InvalidInputError("X and y must hold the same number of sequences")
        self.pairs = []
        for ns, cs in zip(noisy, clean):
            if len(ns) != len(cs):
                raise InvalidInputError("paired sequences must have equal length")
            idx = np.where(ns.valid_mask & cs.valid_mask)[0]
            if idx.size == 0:
                raise InvalidInputError("a training pair has no mutually valid frames")
            self.pairs.append((_channels_at(ns, idx), _channels_at(cs, idx)))

    def __call__(self, rng, batch_size: int, window: int):
        noisy = np.empty((batch_size, 9, window))
        clean = np.empty((batch_size, 9, window))
        for b in range(batch_size):
            xn, xc = self.pairs[int(rng.integers(0, len(self.pairs)))]
            max_start = xn.shape[1] - window
            if max_start < 0:
                raise InvalidInputError("training sequences shorter than the window")
            s = int(rng.integers(0, max_start + 1))
            p_ref = xn[6:9, s].copy()
            for dst, src in ((noisy, xn), (clean, xc)):
                dst[b, 0:6] = src[0:6, s : s + window]
                dst[b, 6:9] = (src[6:9, s : s + window] - p_ref[:, None]) / S_P_DEFAULT
        return noisy, clean, None


class KalmanSmoother(BaseEstimator, TransformerMixin):
    """Constant-velocity Kalman baseline (stateless transformer)."""

    def __init__(self, process_noise: float = 1e-4, measurement_noise: float = 1e-4):
        self.process_noise = process_noise
        self.measurement_noise = measurement_noise

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        seqs, single = _as_sequences(X)
        out = [
            baseline_filters(
                s,
                "kalman",
                process_noise=self.process_noise,
                measurement_noise=self.measurement_noise,
            )
            for s in seqs
        ]
        return out[0] if single else out


class MovingAverageSmoother(BaseEstimator, TransformerMixin):
    """Sliding-mean baseline (window must be odd)."""

    def __init__(self, window: int = 5):
        self.window = window

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        seqs, single = _as_sequences(X)
        out = [baseline_filters(s, "mean", window=self.window) for s in seqs]
        return out[0] if single else out


class MedianSmoother(BaseEstimator, TransformerMixin):
    """Sliding-median baseline (window must be odd)."""

    def __init__(self, window: int = 5):
        self.window = window

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        seqs, single = _as_sequences(X)
        out = [baseline_filters(s, "median", window=self.window) for s in seqs]
        return out[0] if single else out