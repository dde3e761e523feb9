"""Dual-stage dilated temporal-convolution denoiser: forward and backward.

Architecture (all convolutions temporally centered with symmetric zero
padding, so output length equals input length):

- each stage is an encoder: pointwise input projection to the hidden width,
  one residual block per dilation (conv(k, d) -> ReLU -> pointwise conv ->
  additive residual), and a zero-initialized pointwise head back to the
  9 pose channels
- stage 1 uses dilations (1, 2, 4, 8, 16) and predicts the high-frequency
  residual; its output is subtracted from the input
- a fusion tensor concatenates the input, the de-jittered signal and the
  stage-1 hidden features along channels
- stage 2 uses dilations (1, 2, ..., 128) on the fusion tensor and predicts
  the remaining low-frequency residual

Gradients are computed by explicit layer-wise reverse mode in float64; the
test suite checks them against central finite differences.

Parameter layout (canonical flat order, used by the model file):
for each stage prefix ``e1``, ``e2``:
``<p>.in.W``, ``<p>.in.b``, then per block ``<p>.block<i>.conv.W``,
``<p>.block<i>.conv.b``, ``<p>.block<i>.pw.W``, ``<p>.block<i>.pw.b``,
then ``<p>.head.W``, ``<p>.head.b``. Conv kernels have shape
(out, in, k), biases (out,); arrays are raveled in C order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import InvalidInputError
from ..validation import check_odd, check_positive

STAGE1_DILATIONS = (1, 2, 4, 8, 16)
STAGE2_DILATIONS = (1, 2, 4, 8, 16, 32, 64, 128)


@dataclass(frozen=True)
class RefinerArchitecture:
    in_channels: int = 9
    hidden_channels: int = 64
    kernel_size: int = 3
    stage1_dilations: tuple = STAGE1_DILATIONS
    stage2_dilations: tuple = STAGE2_DILATIONS

    def __post_init__(self):
        check_positive(self.hidden_channels, "hidden_channels")
        check_odd(self.kernel_size, "kernel_size")
        if self.in_channels != 9:
            raise InvalidInputError("refiner operates on 9 pose channels")
        if tuple(self.stage1_dilations) != STAGE1_DILATIONS:
            raise InvalidInputError(f"stage-1 dilations are fixed to {STAGE1_DILATIONS}")
        if tuple(self.stage2_dilations) != STAGE2_DILATIONS:
            raise InvalidInputError(f"stage-2 dilations are fixed to {STAGE2_DILATIONS}")
        object.__setattr__(self, "stage1_dilations", tuple(self.stage1_dilations))
        object.__setattr__(self, "stage2_dilations", tuple(self.stage2_dilations))

    @property
    def fusion_channels(self) -> int:
        return 2 * self.in_channels + self.hidden_channels

    def param_layout(self) -> list:
        """Ordered (name, shape) pairs defining the flat parameter vector."""
        h, k, c = self.hidden_channels, self.kernel_size, self.in_channels
        layout = []
        for prefix, c_in, dilations in (
            ("e1", c, self.stage1_dilations),
            ("e2", self.fusion_channels, self.stage2_dilations),
        ):
            layout.append((f"{prefix}.in.W", (h, c_in, 1)))
            layout.append((f"{prefix}.in.b", (h,)))
            for i in range(len(dilations)):
                layout.append((f"{prefix}.block{i}.conv.W", (h, h, k)))
                layout.append((f"{prefix}.block{i}.conv.b", (h,)))
                layout.append((f"{prefix}.block{i}.pw.W", (h, h, 1)))
                layout.append((f"{prefix}.block{i}.pw.b", (h,)))
            layout.append((f"{prefix}.head.W", (c, h, 1)))
            layout.append((f"{prefix}.head.b", (c,)))
        return layout

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.param_layout())


@dataclass
class RefinerModel:
    """Architecture plus a named parameter dictionary."""

    architecture: RefinerArchitecture
    params: dict

    def __post_init__(self):
        layout = self.architecture.param_layout()
        names = [n for n, _ in layout]
        if list(self.params.keys()) != names:
            missing = set(names) - set(self.params)
            extra = set(self.params) - set(names)
            raise InvalidInputError(
                f"parameter names do not match the layout (missing={missing}, extra={extra})"
            )
        for name, shape in layout:
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise InvalidInputError(f"{name} must have shape {shape}, got {arr.shape}")
            self.params[name] = arr

    @staticmethod
    def zeros(arch: RefinerArchitecture) -> "RefinerModel":
        return RefinerModel(arch, {n: np.zeros(s) for n, s in arch.param_layout()})

    @staticmethod
    def initialize(arch: RefinerArchitecture, seed: int = 0) -> "RefinerModel":
        """He-scaled random convolutions, zero biases, zero heads.

        Zero heads make the whole refiner exactly the identity map at
        initialization, which the residual subtraction relies on.
        """
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in arch.param_layout():
            if name.endswith(".b") or name.startswith(("e1.head", "e2.head")):
                params[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:]))
                params[name] = rng.normal(scale=np.sqrt(2.0 / fan_in), size=shape)
        return RefinerModel(arch, params)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n, _ in self.architecture.param_layout()])

    @staticmethod
    def from_flat(arch: RefinerArchitecture, vec: np.ndarray) -> "RefinerModel":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (arch.n_params,):
            raise InvalidInputError(f"expected {arch.n_params} parameters, got {vec.shape}")
        params = {}
        pos = 0
        for name, shape in arch.param_layout():
            size = int(np.prod(shape))
            params[name] = vec[pos : pos + size].reshape(shape).copy()
            pos += size
        return RefinerModel(arch, params)

    def copy(self) -> "RefinerModel":
        return RefinerModel(self.architecture, {k: v.copy() for k, v in self.params.items()})

    @property
    def n_params(self) -> int:
        return self.architecture.n_params


# ---------------------------------------------------------------------------
# primitive layers
# ---------------------------------------------------------------------------

def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, dilation: int):
    """Centered dilated conv; x (B, Cin, L) -> y (B, Cout, L). Returns the
    zero-padded input for the backward pass."""
    k = w.shape[2]
    pad = dilation * (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    length = x.shape[2]
    y = np.broadcast_to(b[:, None], (x.shape[0], w.shape[0], length)).copy()
    for j in range(k):
        y += np.matmul(w[:, :, j], xp[:, :, j * dilation : j * dilation + length])
    return y, xp


def conv1d_backward(g: np.ndarray, xp: np.ndarray, w: np.ndarray, dilation: int):
    """Gradients of a conv1d_forward call; g is dL/dy (B, Cout, L)."""
    k = w.shape[2]
    pad = dilation * (k - 1) // 2
    length = g.shape[2]
    c_out, c_in = w.shape[0], w.shape[1]
    dw = np.empty_like(w)
    g2 = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(c_out, -1)
    for j in range(k):
        xs = xp[:, :, j * dilation : j * dilation + length]
        x2 = np.ascontiguousarray(xs.transpose(1, 0, 2)).reshape(c_in, -1)
        dw[:, :, j] = g2 @ x2.T
    db = g.sum(axis=(0, 2))
    dxp = np.zeros_like(xp)
    for j in range(k):
        dxp[:, :, j * dilation : j * dilation + length] += np.matmul(w[:, :, j].T, g)
    dx = dxp[:, :, pad : pad + length] if pad else dxp
    return dw, db, dx


# ---------------------------------------------------------------------------
# encoder stages
# ---------------------------------------------------------------------------

def _encoder_forward(x: np.ndarray, model: RefinerModel, prefix: str, dilations):
    p = model.params
    cache = {"blocks": []}
    h, cache["in_xp"] = conv1d_forward(x, p[f"{prefix}.in.W"], p[f"{prefix}.in.b"], 1)
    for i, d in enumerate(dilations):
        z, xp = conv1d_forward(h, p[f"{prefix}.block{i}.conv.W"], p[f"{prefix}.block{i}.conv.b"], d)
        mask = z > 0
        a = np.where(mask, z, 0.0)
        r, ap = conv1d_forward(a, p[f"{prefix}.block{i}.pw.W"], p[f"{prefix}.block{i}.pw.b"], 1)
        h = h + r
        cache["blocks"].append((xp, mask, ap))
    cache["feats"] = h
    out, _ = conv1d_forward(h, p[f"{prefix}.head.W"], p[f"{prefix}.head.b"], 1)
    return out, h, cache


def _encoder_backward(
    g_out: np.ndarray,
    g_feats: Optional[np.ndarray],
    model: RefinerModel,
    prefix: str,
    dilations,
    cache: dict,
    grads: dict,
):
    p = model.params
    dw, db, gh = conv1d_backward(g_out, cache["feats"], p[f"{prefix}.head.W"], 1)
    grads[f"{prefix}.head.W"] += dw
    grads[f"{prefix}.head.b"] += db
    if g_feats is not None:
        gh = gh + g_feats
    for i in reversed(range(len(dilations))):
        d = dilations[i]
        xp, mask, ap = cache["blocks"][i]
        dw, db, da = conv1d_backward(gh, ap, p[f"{prefix}.block{i}.pw.W"], 1)
        grads[f"{prefix}.block{i}.pw.W"] += dw
        grads[f"{prefix}.block{i}.pw.b"] += db
        dz = np.where(mask, da, 0.0)
        dw, db, dh = conv1d_backward(dz, xp, p[f"{prefix}.block{i}.conv.W"], d)
        grads[f"{prefix}.block{i}.conv.W"] += dw
        grads[f"{prefix}.block{i}.conv.b"] += db
        gh = gh + dh  # residual connection
    dw, db, gx = conv1d_backward(gh, cache["in_xp"], p[f"{prefix}.in.W"], 1)
    grads[f"{prefix}.in.W"] += dw
    grads[f"{prefix}.in.b"] += db
    return gx


# ---------------------------------------------------------------------------
# full refiner
# ---------------------------------------------------------------------------

@dataclass
class ForwardState:
    """Recorded forward pass of the full refiner (batched)."""

    x: np.ndarray  # (B, 9, L) input
    n_hf: np.ndarray
    x1: np.ndarray
    feats1: np.ndarray
    fuse: np.ndarray
    n_lf: np.ndarray
    xstar: np.ndarray
    cache1: dict = field(repr=False, default=None)
    cache2: dict = field(repr=False, default=None)


def _as_batch(x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[np.newaxis], True
    if x.ndim == 3:
        return x, False
    raise InvalidInputError(f"expected (9, L) or (B, 9, L), got shape {x.shape}")


def refiner_forward(x: np.ndarray, model: RefinerModel) -> ForwardState:
    """Full two-stage forward pass on a normalized (B, 9, L) batch."""
    xb, _ = _as_batch(x)
    if xb.shape[1] != model.architecture.in_channels:
        raise InvalidInputError(f"expected {model.architecture.in_channels} channels")
    arch = model.architecture
    n_hf, feats1, cache1 = _encoder_forward(xb, model, "e1", arch.stage1_dilations)
    x1 = xb - n_hf
    fuse = np.concatenate([xb, x1, feats1], axis=1)
    n_lf, _, cache2 = _encoder_forward(fuse, model, "e2", arch.stage2_dilations)
    xstar = x1 - n_lf
    return ForwardState(xb, n_hf, x1, feats1, fuse, n_lf, xstar, cache1, cache2)


def refiner_backward(
    state: ForwardState,
    model: RefinerModel,
    g_xstar: np.ndarray,
    g_x1: Optional[np.ndarray] = None,
) -> dict:
    """Reverse-mode gradients of the recorded forward pass.

    `g_xstar` and optional `g_x1` are the loss gradients with respect to the
    refined output and the de-jittered intermediate. Returns a dict of
    per-parameter gradients in the canonical layout.
    """
    arch = model.architecture
    grads = {n: np.zeros(s) for n, s in arch.param_layout()}
    g_xstar, _ = _as_batch(g_xstar)

    g_nlf = -g_xstar
    g_fuse = _encoder_backward(g_nlf, None, model, "e2", arch.stage2_dilations, state.cache2, grads)
    c = arch.in_channels
    g_x1_total = g_xstar + g_fuse[:, c : 2 * c]
    if g_x1 is not None:
        g_x1b, _ = _as_batch(g_x1)
        g_x1_total = g_x1_total + g_x1b
    g_feats1 = g_fuse[:, 2 * c :]
    g_nhf = -g_x1_total
    _encoder_backward(g_nhf, g_feats1, model, "e1", arch.stage1_dilations, state.cache1, grads)
    return grads


# ---------------------------------------------------------------------------
# spec-level stage operations (single sequences)
# ---------------------------------------------------------------------------

def stage1_forward(x: np.ndarray, model: RefinerModel):
    """(n_hf, x1, features) for a normalized (9, L) sequence."""
    xb, squeeze = _as_batch(x)
    n_hf, feats, _ = _encoder_forward(xb, model, "e1", model.architecture.stage1_dilations)
    x1 = xb - n_hf
    if squeeze:
        return n_hf[0], x1[0], feats[0]
    return n_hf, x1, feats


def build_fusion(x: np.ndarray, x1: np.ndarray, feats: np.ndarray) -> np.ndarray:
    """Concatenate input, de-jittered signal, and stage-1 features."""
    return np.concatenate([x, x1, feats], axis=-2)


def stage2_forward(fuse: np.ndarray, x1: np.ndarray, model: RefinerModel):
    """Refined sequence from the fusion tensor and the de-jittered signal."""
    fuse = np.asarray(fuse, dtype=np.float64)
    squeeze = fuse.ndim == 2
    fb = fuse[np.newaxis] if squeeze else fuse
    x1b, _ = _as_batch(x1)
    if fb.shape[1] != model.architecture.fusion_channels:
        raise InvalidInputError(
            f"fusion tensor must have {model.architecture.fusion_channels} channels"
        )
    n_lf, _, _ = _encoder_forward(fb, model, "e2", model.architecture.stage2_dilations)
    xstar = x1b - n_lf
    return xstar[0] if squeeze else xstar
