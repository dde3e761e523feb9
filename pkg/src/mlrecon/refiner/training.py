"""From-scratch training loop: AdamW with decoupled weight decay and a
cosine-annealed learning rate, plus the synthetic (noisy, clean) pair
generator that replaces a clinical training corpus.

The composite loss jointly supervises the refined output (against the clean
sequence) and the stage-1 de-jittered intermediate (against clean plus the
regenerated low-frequency bias, which the synthetic generator exposes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import InvalidInputError, NumericError
from ..se3 import S_P_DEFAULT, matrices_to_sixd, sequence_to_array, sixd_to_matrices
from ..simulate import NoiseConfig, TrajectoryConfig, generate_trajectory, sample_noise_split
from ..validation import check_positive
from .loss import LossWeights, composite_loss_with_grad
from .network import RefinerArchitecture, RefinerModel, refiner_backward, refiner_forward


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale defaults; the reference configuration used 1000 epochs at
    batch size 32 with learning rate 1e-3 and cosine annealing."""

    learning_rate: float = 1e-3
    lr_floor_ratio: float = 0.01  # cosine anneals to learning_rate * ratio
    epochs: int = 100
    batch_size: int = 32
    steps_per_epoch: int = 8
    window: int = 256  # training crop length L
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    warmup_steps: int = 16  # linear lr ramp; tames Adam's sign-like first steps
    clip_norm: float = 5.0  # global gradient-norm clip, 0 disables
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidInputError("learning_rate must be >= 0")
        check_positive(self.epochs, "epochs")
        check_positive(self.batch_size, "batch_size")
        check_positive(self.steps_per_epoch, "steps_per_epoch")
        check_positive(self.window, "window")


@dataclass
class EpochLog:
    epoch: int
    loss: float
    geo: float
    l1: float
    vel: float
    freq: float
    lr: float


class AdamW:
    """Decoupled weight-decay Adam over the named parameter dict."""

    def __init__(self, model: RefinerModel, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {n: np.zeros(s) for n, s in model.architecture.param_layout()}
        self.v = {n: np.zeros(s) for n, s in model.architecture.param_layout()}
        self.t = 0

    def step(self, model: RefinerModel, grads: dict, lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for name, _ in model.architecture.param_layout():
            g = grads[name]
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p = model.params[name]
            p -= lr * (m_hat / (np.sqrt(v_hat) + cfg.adam_eps) + cfg.weight_decay * p)


def cosine_lr(cfg: TrainConfig, epoch: int) -> float:
    floor = cfg.learning_rate * cfg.lr_floor_ratio
    frac = 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
    return floor + (cfg.learning_rate - floor) * frac


def loss_and_gradients(
    model: RefinerModel,
    x_noisy: np.ndarray,
    target_clean: np.ndarray,
    weights: LossWeights,
    stage1_target: Optional[np.ndarray] = None,
):
    """Forward + reverse pass of the jointly supervised composite loss.

    Returns (total, terms, grads) where grads maps parameter names to exact
    reverse-mode gradients. When no stage-1 target is available the
    intermediate is supervised against the clean sequence as well.
    """
    target_clean = np.asarray(target_clean, dtype=np.float64)
    if target_clean.ndim == 2:
        target_clean = target_clean[np.newaxis]
    if stage1_target is not None:
        stage1_target = np.asarray(stage1_target, dtype=np.float64)
        if stage1_target.ndim == 2:
            stage1_target = stage1_target[np.newaxis]
    state = refiner_forward(x_noisy, model)
    total_s, terms_s, g_star = composite_loss_with_grad(state.xstar, target_clean, weights)
    t1 = target_clean if stage1_target is None else stage1_target
    total_1, terms_1, g_x1 = composite_loss_with_grad(state.x1, t1, weights)
    grads = refiner_backward(state, model, g_star, g_x1)
    terms = {k: terms_s[k] + terms_1[k] for k in terms_s}
    return total_s + total_1, terms, grads


# ---------------------------------------------------------------------------
# synthetic pair generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairGeneratorConfig:
    """Pool of seeded free-mode trajectories; each training sample is a
    random crop with freshly drawn noise."""

    noise: NoiseConfig = field(default_factory=NoiseConfig)
    n_pool: int = 16
    pool_frames: int = 1800
    distance_range: tuple = (350.0, 600.0)
    frame_rate: float = 30.0
    seed: int = 0
    s_p: float = S_P_DEFAULT


class SyntheticPairStream:
    """Callable batch factory: (rng, batch_size, window) -> training triples
    (noisy, clean, stage1_target), all (B, 9, window), normalized per crop
    with p_ref taken from the noisy crop's first frame."""

    def __init__(self, cfg: PairGeneratorConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.pool = []
        for _ in range(cfg.n_pool):
            dist = float(rng.uniform(*cfg.distance_range))
            duration = cfg.pool_frames / cfg.frame_rate
            traj = TrajectoryConfig(
                "free",
                total_distance=dist,
                duration=duration,
                frame_rate=cfg.frame_rate,
                seed=int(rng.integers(0, 2**63 - 1)),
            )
            seq = generate_trajectory(traj)
            self.pool.append(sequence_to_array(seq))

    def __call__(self, rng, batch_size: int, window: int):
        cfg = self.cfg
        s_p = cfg.s_p
        noisy = np.empty((batch_size, 9, window))
        clean = np.empty((batch_size, 9, window))
        stage1 = np.empty((batch_size, 9, window))
        for b in range(batch_size):
            arr = self.pool[int(rng.integers(0, len(self.pool)))]
            max_start = arr.shape[1] - window
            if max_start < 0:
                raise InvalidInputError("pool trajectories shorter than the training window")
            start = int(rng.integers(0, max_start + 1))
            gt = arr[:, start : start + window]
            hf, lf = sample_noise_split(window, cfg.noise, rng, s_p=s_p)
            noisy_raw = gt.copy()
            noisy_raw[0:6] += hf[0:6] + lf[0:6]
            noisy_raw[6:9] += (hf[6:9] + lf[6:9]) * s_p
            # project rotation channels like the pose-level injector does
            noisy_raw[0:6] = matrices_to_sixd(sixd_to_matrices(noisy_raw[0:6].T)).T
            p_ref = noisy_raw[6:9, 0].copy()
            for dst, src_rot, src_tr in (
                (noisy, noisy_raw[0:6], noisy_raw[6:9]),
                (clean, gt[0:6], gt[6:9]),
            ):
                dst[b, 0:6] = src_rot
                dst[b, 6:9] = (src_tr - p_ref[:, None]) / s_p
            stage1[b, 0:6] = gt[0:6] + lf[0:6]
            stage1[b, 6:9] = (gt[6:9] + lf[6:9] * s_p - p_ref[:, None]) / s_p
        return noisy, clean, stage1


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------

def train(
    make_batch: Callable,
    cfg: TrainConfig,
    architecture: Optional[RefinerArchitecture] = None,
    model: Optional[RefinerModel] = None,
    weights: LossWeights = LossWeights(),
    log_callback: Optional[Callable] = None,
):
    """Train a refiner on a stream of (noisy, clean[, stage1]) batches.

    ``make_batch(rng, batch_size, window)`` must return the batch triple
    (the third element may be None). Training is deterministic under a fixed
    config seed: batch b of epoch e always sees the rng spawned from
    (seed, epoch, step). Returns (model, per-epoch log rows).
    Raises NumericError if the loss stops being finite.
    """
    if model is None:
        if architecture is None:
            architecture = RefinerArchitecture()
        model = RefinerModel.initialize(architecture, seed=cfg.seed)
    else:
        model = model.copy()
    opt = AdamW(model, cfg)
    log = []
    global_step = 0
    for epoch in range(cfg.epochs):
        lr_epoch = cosine_lr(cfg, epoch)
        acc = {"loss": 0.0, "geo": 0.0, "l1": 0.0, "vel": 0.0, "freq": 0.0}
        for step in range(cfg.steps_per_epoch):
            rng = np.random.default_rng(
                np.random.SeedSequence([cfg.seed & 0x7FFFFFFF, epoch, step])
            )
            batch = make_batch(rng, cfg.batch_size, cfg.window)
            noisy, clean = batch[0], batch[1]
            stage1 = batch[2] if len(batch) > 2 else None
            total, terms, grads = loss_and_gradients(model, noisy, clean, weights, stage1)
            if not math.isfinite(total):
                raise NumericError(f"non-finite loss at epoch {epoch}, step {step}")
            if cfg.clip_norm > 0:
                gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if gnorm > cfg.clip_norm:
                    scale = cfg.clip_norm / gnorm
                    grads = {k: g * scale for k, g in grads.items()}
            lr = lr_epoch
            if cfg.warmup_steps > 0:
                lr *= min(1.0, (global_step + 1) / cfg.warmup_steps)
            global_step += 1
            opt.step(model, grads, lr)
            acc["loss"] += total
            for k in ("geo", "l1", "vel", "freq"):
                acc[k] += terms[k]
        n = cfg.steps_per_epoch
        row = EpochLog(epoch, acc["loss"] / n, acc["geo"] / n, acc["l1"] / n,
                       acc["vel"] / n, acc["freq"] / n, lr)
        log.append(row)
        if log_callback is not None:
            log_callback(row)
    return model, log


def write_training_log(log, path) -> None:
    """CSV with columns epoch,loss,geo,l1,vel,freq,lr."""
    with open(path, "w") as f:
        f.write("epoch,loss,geo,l1,vel,freq,lr\n")
        for r in log:
            f.write(
                f"{r.epoch},{r.loss:.10g},{r.geo:.10g},{r.l1:.10g},"
                f"{r.vel:.10g},{r.freq:.10g},{r.lr:.10g}\n"
            )
