"""The noise-prediction network.

A 1-D temporal encoder-decoder over (L, C) motion matrices: each level
runs convolution blocks whose activations are modulated per channel by a
learned scale-and-shift of the fused time+text embedding; the encoder
halves the time axis between levels, the decoder upsamples and
concatenates skip connections, and a zero-initialized linear head maps
back to C channels (so an untrained model predicts zero noise).

Parameters live in a plain dict of named float64 arrays; forward and
backward run on the internal autodiff tape, so gradients are exact
reverse-mode derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericsError, ShapeMismatchError, ValidationError
from .text import TextEmbedding

GN_EPS = 1e-5

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class DenoiserConfig:
    length: int
    channels: int
    embed_dim: int = 64
    hidden: tuple[int, ...] = (64, 128)
    levels: int = 2
    text_dim: int = 64

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.levels < 1:
            raise ValidationError("levels must be >= 1")
        if len(self.hidden) != self.levels:
            raise ValidationError(
                f"hidden widths {self.hidden} must list one width per level ({self.levels})"
            )
        if any(h < 1 for h in self.hidden):
            raise ValidationError("all hidden widths must be >= 1")
        if self.length < 1 or self.length % (1 << (self.levels - 1)) != 0:
            raise ValidationError(
                f"length {self.length} must be divisible by 2^(levels-1) = {1 << (self.levels - 1)}"
            )
        if self.channels < 1:
            raise ValidationError("channels must be >= 1")
        if self.embed_dim < 2 or self.embed_dim % 2 != 0:
            raise ValidationError("embed_dim must be even and >= 2")
        if self.text_dim < 1:
            raise ValidationError("text_dim must be >= 1")

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "channels": self.channels,
            "embed_dim": self.embed_dim,
            "hidden": list(self.hidden),
            "levels": self.levels,
            "text_dim": self.text_dim,
        }

    @staticmethod
    def from_dict(doc: dict) -> "DenoiserConfig":
        try:
            return DenoiserConfig(
                length=int(doc["length"]),
                channels=int(doc["channels"]),
                embed_dim=int(doc["embed_dim"]),
                hidden=tuple(doc["hidden"]),
                levels=int(doc["levels"]),
                text_dim=int(doc["text_dim"]),
            )
        except KeyError as exc:
            raise ValidationError(f"denoiser config is missing key {exc}") from exc


def time_embed(t: int, T: int, embed_dim: int) -> np.ndarray:
    """Sinusoidal code for step t: (sin, cos) pairs at geometric frequencies."""
    if embed_dim % 2 != 0 or embed_dim < 2:
        raise ValidationError("embed_dim must be even and >= 2")
    if not (1 <= t <= T):
        raise ValidationError(f"step index {t} out of range [1, {T}]")
    half = embed_dim // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = np.exp(-math.log(10000.0) * np.arange(half) / (half - 1))
    angles = float(t) * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])


def fuse(params: Params, t_emb: np.ndarray, z: TextEmbedding | np.ndarray) -> np.ndarray:
    """Fused conditioning: t_emb + z @ fuse.w + fuse.b.

    The null text token is the zero vector, so at zero bias the fusion
    reduces to the time embedding alone.
    """
    zv = z.values if isinstance(z, TextEmbedding) else np.asarray(z, dtype=np.float64)
    w, b = params["fuse.w"], params["fuse.b"]
    if zv.shape[-1] != w.shape[0]:
        raise ShapeMismatchError(f"text width {zv.shape[-1]} != fusion input width {w.shape[0]}")
    if t_emb.shape[-1] != w.shape[1]:
        raise ShapeMismatchError(f"time width {t_emb.shape[-1]} != embed width {w.shape[1]}")
    return t_emb + zv @ w + b


def _norm_groups(channels: int) -> int:
    g = min(8, channels)
    while channels % g:
        g -= 1
    return g


def _conv3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded width-3 temporal convolution as one windowed matmul."""
    n = x.shape[1]
    xp = ad.pad_time(x, 1, 1)
    windows = ad.concat([ad.slice_axis(xp, 1, k, k + n) for k in range(3)], axis=2)
    return ad.matmul(windows, w) + b


def _groupnorm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int) -> Tensor:
    bsz, n, c = x.shape
    xg = ad.reshape(x, (bsz, n, groups, c // groups))
    mu = ad.mean_axes(xg, (1, 3))
    d = xg - mu
    var = ad.mean_axes(ad.mul(d, d), (1, 3))
    normed = ad.mul(d, (var + GN_EPS) ** -0.5)
    return ad.reshape(normed, (bsz, n, c)) * gamma + beta


def _film(h: Tensor, emb: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-channel scale-and-shift of h from the fused embedding."""
    c = h.shape[2]
    both = ad.matmul(emb, w) + b  # (B, 2c)
    scale = ad.reshape(ad.slice_axis(both, 1, 0, c), (emb.shape[0], 1, c))
    shift = ad.reshape(ad.slice_axis(both, 1, c, 2 * c), (emb.shape[0], 1, c))
    return h * (1.0 + scale) + shift


def _avgpool2(x: Tensor) -> Tensor:
    bsz, n, c = x.shape
    xg = ad.reshape(x, (bsz, n // 2, 2, c))
    return ad.reshape(ad.mean_axes(xg, (2,)), (bsz, n // 2, c))


@dataclass
class DenoiserState:
    """Forward tape handles needed to run a backward sweep."""

    output: Tensor
    x_leaf: Tensor
    param_leaves: dict[str, Tensor]
    squeeze: bool


class Denoiser:
    def __init__(self, config: DenoiserConfig):
        self.config = config
        self._shapes = self._param_shapes()

    # -- parameter layout ---------------------------------------------------

    def _block_shapes(self, prefix: str, c_in: int, c_out: int) -> dict[str, tuple]:
        e = self.config.embed_dim
        shapes = {
            f"{prefix}.conv1.w": (3 * c_in, c_out),
            f"{prefix}.conv1.b": (c_out,),
            f"{prefix}.gn1.gamma": (c_out,),
            f"{prefix}.gn1.beta": (c_out,),
            f"{prefix}.film1.w": (e, 2 * c_out),
            f"{prefix}.film1.b": (2 * c_out,),
            f"{prefix}.conv2.w": (3 * c_out, c_out),
            f"{prefix}.conv2.b": (c_out,),
            f"{prefix}.gn2.gamma": (c_out,),
            f"{prefix}.gn2.beta": (c_out,),
        }
        if c_in != c_out:
            shapes[f"{prefix}.proj.w"] = (c_in, c_out)
        return shapes

    def _param_shapes(self) -> dict[str, tuple]:
        cfg = self.config
        h = cfg.hidden
        shapes: dict[str, tuple] = {
            "fuse.w": (cfg.text_dim, cfg.embed_dim),
            "fuse.b": (cfg.embed_dim,),
            "stem.w": (3 * cfg.channels, h[0]),
            "stem.b": (h[0],),
        }
        for i in range(cfg.levels):
            shapes.update(self._block_shapes(f"enc{i}", h[i], h[i]))
            if i < cfg.levels - 1:
                shapes[f"down{i}.w"] = (h[i], h[i + 1])
                shapes[f"down{i}.b"] = (h[i + 1],)
        for i in range(cfg.levels - 2, -1, -1):
            shapes.update(self._block_shapes(f"dec{i}", h[i + 1] + h[i], h[i]))
        shapes["head.w"] = (h[0], cfg.channels)
        shapes["head.b"] = (cfg.channels,)
        return shapes

    def param_shapes(self) -> dict[str, tuple]:
        return dict(self._shapes)

    def init_params(self, seed: int) -> Params:
        """Fan-in-scaled weights, zero biases, identity norms, zero head."""
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        params: Params = {}
        for name, shape in self._shapes.items():
            if name.startswith("head.") or name.endswith((".b", ".beta")):
                params[name] = np.zeros(shape)
            elif name.endswith(".gamma"):
                params[name] = np.ones(shape)
            else:
                fan_in = shape[0]
                params[name] = rng.standard_normal(shape) / math.sqrt(fan_in)
        return params

    def validate_params(self, params: Params) -> None:
        missing = set(self._shapes) - set(params)
        extra = set(params) - set(self._shapes)
        if missing or extra:
            raise ShapeMismatchError(
                f"parameter names do not match config (missing {sorted(missing)}, extra {sorted(extra)})"
            )
        for name, shape in self._shapes.items():
            if tuple(params[name].shape) != shape:
                raise ShapeMismatchError(
                    f"parameter {name} has shape {params[name].shape}, expected {shape}"
                )

    # -- tape construction ---------------------------------------------------

    def _block(self, leaves, prefix: str, x: Tensor, emb: Tensor, c_in: int, c_out: int) -> Tensor:
        h = _conv3(x, leaves[f"{prefix}.conv1.w"], leaves[f"{prefix}.conv1.b"])
        h = _groupnorm(h, leaves[f"{prefix}.gn1.gamma"], leaves[f"{prefix}.gn1.beta"], _norm_groups(c_out))
        h = _film(h, emb, leaves[f"{prefix}.film1.w"], leaves[f"{prefix}.film1.b"])
        h = ad.silu(h)
        h = _conv3(h, leaves[f"{prefix}.conv2.w"], leaves[f"{prefix}.conv2.b"])
        h = _groupnorm(h, leaves[f"{prefix}.gn2.gamma"], leaves[f"{prefix}.gn2.beta"], _norm_groups(c_out))
        h = ad.silu(h)
        shortcut = x if c_in == c_out else ad.matmul(x, leaves[f"{prefix}.proj.w"])
        return h + shortcut

    def apply_tape(self, leaves: dict[str, Tensor], x: Tensor, emb: Tensor) -> Tensor:
        """Build the network graph on tape tensors; shared with the loss."""
        cfg = self.config
        hid = cfg.hidden
        h = _conv3(x, leaves["stem.w"], leaves["stem.b"])
        skips: list[Tensor] = []
        for i in range(cfg.levels):
            h = self._block(leaves, f"enc{i}", h, emb, hid[i], hid[i])
            if i < cfg.levels - 1:
                skips.append(h)
                h = _avgpool2(h)
                h = ad.matmul(h, leaves[f"down{i}.w"]) + leaves[f"down{i}.b"]
        for i in range(cfg.levels - 2, -1, -1):
            h = ad.repeat2_time(h)
            h = ad.concat([h, skips[i]], axis=2)
            h = self._block(leaves, f"dec{i}", h, emb, hid[i + 1] + hid[i], hid[i])
        return ad.matmul(h, leaves["head.w"]) + leaves["head.b"]

    def _check_io(self, x: np.ndarray, emb: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
        cfg = self.config
        squeeze = x.ndim == 2
        if squeeze:
            if emb.ndim != 1:
                raise ShapeMismatchError("single-sample input needs a 1-D embedding")
            x, emb = x[None], emb[None]
        if x.ndim != 3 or x.shape[1:] != (cfg.length, cfg.channels):
            raise ShapeMismatchError(
                f"input shape {x.shape} does not match (L, C) = ({cfg.length}, {cfg.channels})"
            )
        if emb.ndim != 2 or emb.shape != (x.shape[0], cfg.embed_dim):
            raise ShapeMismatchError(
                f"embedding shape {emb.shape} does not match (batch, {cfg.embed_dim})"
            )
        return x, emb, squeeze

    # -- public ops ----------------------------------------------------------

    def forward(self, params: Params, x: np.ndarray, emb: np.ndarray) -> np.ndarray:
        y, _ = self.forward_with_state(params, x, emb, need_state=False)
        return y

    def forward_with_state(
        self, params: Params, x: np.ndarray, emb: np.ndarray, need_state: bool = True
    ) -> tuple[np.ndarray, DenoiserState | None]:
        self.validate_params(params)
        x = np.asarray(x, dtype=np.float64)
        emb = np.asarray(emb, dtype=np.float64)
        x, emb, squeeze = self._check_io(x, emb)
        leaves = {name: Tensor(v, requires_grad=need_state) for name, v in params.items()}
        x_leaf = Tensor(x, requires_grad=need_state)
        out = self.apply_tape(leaves, x_leaf, Tensor(emb))
        if not np.isfinite(out.value).all():
            raise NumericsError("denoiser produced non-finite activations")
        y = out.value[0] if squeeze else out.value
        state = DenoiserState(out, x_leaf, leaves, squeeze) if need_state else None
        return y, state

    def backward(
        self, state: DenoiserState | None, upstream: np.ndarray
    ) -> tuple[Params, np.ndarray]:
        """Exact gradients of sum(upstream * output) w.r.t. params and input."""
        if state is None:
            raise ValidationError("backward called without a forward state")
        upstream = np.asarray(upstream, dtype=np.float64)
        if state.squeeze:
            upstream = upstream[None]
        if upstream.shape != state.output.value.shape:
            raise ShapeMismatchError(
                f"upstream gradient shape {upstream.shape} != output shape {state.output.value.shape}"
            )
        state.x_leaf.grad = None
        for leaf in state.param_leaves.values():
            leaf.grad = None
        ad.backward(state.output, upstream)
        grads = {
            name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
            for name, leaf in state.param_leaves.items()
        }
        x_grad = state.x_leaf.grad
        if x_grad is None:
            x_grad = np.zeros_like(state.x_leaf.value)
        return grads, (x_grad[0] if state.squeeze else x_grad)
