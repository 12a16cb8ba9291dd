"""Forward corruption, the noise-prediction objective, training, and
classifier-free-guided ancestral sampling.

Conventions: step indices are 1-based (1 <= t <= T); motions entering the
loss are already normalized; every stochastic routine takes an explicit
numpy Generator and is a pure function of its inputs plus that stream.

The guided prediction combines the conditional and unconditional branches

    eps~ = (1 + w) * eps(x_t, z) - w * eps(x_t, null)

and each reverse step draws

    x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps~) / sqrt(alpha_t)
              + sqrt(beta_t) * xi          (no noise at the final step).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import checkpointing
from .autodiff import Tensor, backward as tape_backward, mean_axes
from .denoiser import Denoiser, DenoiserConfig, Params, fuse, time_embed
from .errors import NumericsError, ShapeMismatchError, ValidationError
from .motion import (
    DatasetEntry,
    Motion,
    NormStats,
    compute_norm_stats,
    crop_to_length,
    denormalize,
    normalize,
)
from .schedule import NoiseSchedule, coeffs_at
from .text import HashedBowEncoder, TextEmbedding, encoder_from_descriptor, null_embedding

#: eps_model(x_t, t, z) -> predicted noise, same shape as x_t.
EpsModelFn = Callable[[np.ndarray, int, TextEmbedding], np.ndarray]


@dataclass(frozen=True)
class NoisySample:
    x_t: np.ndarray
    t: int
    eps: np.ndarray

    def __post_init__(self):
        if self.x_t.shape != self.eps.shape:
            raise ShapeMismatchError("x_t and eps must have identical shapes")
        if self.t < 1:
            raise ValidationError("step index must be >= 1")


@dataclass(frozen=True)
class GuidanceConfig:
    w: float = 2.0
    p_uncond: float = 0.1

    def __post_init__(self):
        if not (self.w >= 0 and math.isfinite(self.w)):
            raise ValidationError(f"guidance weight must be >= 0, got {self.w}")
        if not (0.0 <= self.p_uncond < 1.0):
            raise ValidationError(f"p_uncond must be in [0, 1), got {self.p_uncond}")


# ---------------------------------------------------------------------------
# Forward process
# ---------------------------------------------------------------------------


def q_sample(
    x0: np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    eps: np.ndarray | None = None,
) -> NoisySample:
    """Jump straight to step t: x_t = sqrt(ab_t) x0 + sqrt(1-ab_t) eps.

    `eps` is an injection hook for tests; by default it is drawn from rng.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    c = coeffs_at(schedule, t)
    if eps is None:
        eps = rng.standard_normal(x0.shape)
    elif eps.shape != x0.shape:
        raise ShapeMismatchError("injected eps shape must match x0")
    return NoisySample(c.sqrt_alpha_bar_t * x0 + c.sqrt_one_minus_alpha_bar_t * eps, t, eps)


def q_chain_sample(
    x0: np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    n: int | None = None,
) -> np.ndarray:
    """Reach step t by iterating the per-step transition
    x_s = sqrt(1-beta_s) x_{s-1} + sqrt(beta_s) eps_s.

    Statistical oracle for q_sample.  With `n` set, returns n independent
    chain draws stacked on a new leading axis (the transitions are
    elementwise, so vectorizing over draws changes nothing).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if not (1 <= t <= schedule.T):
        raise ValidationError(f"step index {t} out of range [1, {schedule.T}]")
    x = x0 if n is None else np.broadcast_to(x0, (n, *x0.shape)).copy()
    for s in range(1, t + 1):
        beta_s = schedule.beta[s - 1]
        x = math.sqrt(1.0 - beta_s) * x + math.sqrt(beta_s) * rng.standard_normal(x.shape)
    return x


# ---------------------------------------------------------------------------
# Training objective
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingDraws:
    """One minibatch worth of corruption draws, shared by value and grad paths."""

    x_t: np.ndarray  # (B, L, C)
    t: np.ndarray  # (B,) ints
    z: tuple[TextEmbedding, ...]  # after condition dropout
    eps: np.ndarray  # (B, L, C)
    T: int


def draw_training_batch(
    batch: Sequence[tuple[np.ndarray, TextEmbedding]],
    schedule: NoiseSchedule,
    guidance: GuidanceConfig,
    rng: np.random.Generator,
) -> TrainingDraws:
    """Per element: t ~ Uniform{1..T}, drop z to null with prob p_uncond,
    eps ~ N(0, I), and the closed-form corruption to x_t."""
    if not batch:
        raise ValidationError("training batch must be nonempty")
    xs, ts, zs, epss = [], [], [], []
    for x0, z in batch:
        x0 = np.asarray(x0, dtype=np.float64)
        if x0.shape != np.asarray(batch[0][0]).shape:
            raise ShapeMismatchError("batch elements must share one (L, C) shape")
        t = int(rng.integers(1, schedule.T + 1))
        if rng.uniform() < guidance.p_uncond:
            z = null_embedding(z.dim)
        eps = rng.standard_normal(x0.shape)
        c = coeffs_at(schedule, t)
        xs.append(c.sqrt_alpha_bar_t * x0 + c.sqrt_one_minus_alpha_bar_t * eps)
        ts.append(t)
        zs.append(z)
        epss.append(eps)
    return TrainingDraws(
        x_t=np.stack(xs), t=np.array(ts), z=tuple(zs), eps=np.stack(epss), T=schedule.T
    )


def loss_value(eps_model: EpsModelFn, draws: TrainingDraws) -> float:
    """Mean squared error between injected and predicted noise."""
    total = 0.0
    for i in range(draws.x_t.shape[0]):
        pred = eps_model(draws.x_t[i], int(draws.t[i]), draws.z[i])
        total += float(np.sum((pred - draws.eps[i]) ** 2))
    return total / draws.eps.size


def loss_and_grads(
    denoiser: Denoiser, params: Params, draws: TrainingDraws
) -> tuple[float, Params]:
    """Loss plus exact gradients for every parameter, fusion included."""
    denoiser.validate_params(params)
    cfg = denoiser.config
    bsz = draws.x_t.shape[0]
    if draws.x_t.shape[1:] != (cfg.length, cfg.channels):
        raise ShapeMismatchError(
            f"batch shape {draws.x_t.shape} does not match (L, C) = ({cfg.length}, {cfg.channels})"
        )
    leaves = {name: Tensor(v, requires_grad=True) for name, v in params.items()}
    t_embs = np.stack([time_embed(int(t), draws.T, cfg.embed_dim) for t in draws.t])
    z_mat = np.stack([z.values for z in draws.z])
    if z_mat.shape[1] != cfg.text_dim:
        raise ShapeMismatchError(f"text width {z_mat.shape[1]} != config text_dim {cfg.text_dim}")
    emb = Tensor(t_embs) + Tensor(z_mat) @ leaves["fuse.w"] + leaves["fuse.b"]
    out = denoiser.apply_tape(leaves, Tensor(draws.x_t), emb)
    diff = out - Tensor(draws.eps)
    loss_t = mean_axes(diff * diff, (0, 1, 2))
    value = float(loss_t.value.reshape(()))
    if not math.isfinite(value):
        raise NumericsError("training loss is non-finite")
    tape_backward(loss_t)
    grads = {
        name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
        for name, leaf in leaves.items()
    }
    return value, grads


def loss(
    denoiser: Denoiser,
    params: Params,
    batch: Sequence[tuple[np.ndarray, TextEmbedding]],
    schedule: NoiseSchedule,
    guidance: GuidanceConfig,
    rng: np.random.Generator,
) -> tuple[float, Params]:
    """Draw a minibatch corruption and return (loss, gradients)."""
    return loss_and_grads(denoiser, params, draw_training_batch(batch, schedule, guidance, rng))


# ---------------------------------------------------------------------------
# Optimizer (adaptive moments)
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: Params
    v: Params
    step: int = 0

    @staticmethod
    def zeros_like(params: Params) -> "AdamState":
        return AdamState(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
        )


def adam_update(
    params: Params,
    grads: Params,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Params:
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    out: Params = {}
    for name, p in params.items():
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        out[name] = p - lr * (state.m[name] / bc1) / (np.sqrt(state.v[name] / bc2) + eps)
    return out


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    schedule: NoiseSchedule
    length: int
    batch_size: int
    steps: int
    seed: int
    lr: float = 1e-4
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    embed_dim: int = 64
    hidden: tuple[int, ...] = (64, 128)
    levels: int = 2
    text_encoder: object = None  # defaults to HashedBowEncoder(64, 0)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.steps < 0:
            raise ValidationError("steps must be >= 0")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ValidationError("learning rate must be positive and finite")
        if self.text_encoder is None:
            object.__setattr__(self, "text_encoder", HashedBowEncoder(64, 0))


@dataclass(frozen=True)
class TrainResult:
    checkpoint: "checkpointing.Checkpoint"
    losses: tuple[tuple[int, float], ...]  # (step, loss) records


def train(dataset: Sequence[DatasetEntry], config: TrainConfig) -> TrainResult:
    """Seeded minibatch gradient descent on the noise-prediction MSE.

    Deterministic for a fixed (dataset, config): cropping, init, batch
    order, and corruption draws each use their own child stream of the
    run seed.  Aborts with NumericsError if the loss goes non-finite.
    """
    if not dataset:
        raise ValidationError("training dataset is empty")
    fps = dataset[0].motion.fps
    if any(e.motion.fps != fps for e in dataset):
        raise ValidationError("training dataset mixes frame rates")

    crop_ss, init_ss, order_ss, noise_ss = np.random.SeedSequence(config.seed).spawn(4)
    crop_rng = np.random.Generator(np.random.PCG64(crop_ss))
    order_rng = np.random.Generator(np.random.PCG64(order_ss))
    noise_rng = np.random.Generator(np.random.PCG64(noise_ss))

    cropped = [
        DatasetEntry(e.text, crop_to_length(e.motion, config.length, crop_rng)) for e in dataset
    ]
    stats = compute_norm_stats(cropped)
    channels = stats.channels

    encoder = config.text_encoder
    embeddings: dict[str, TextEmbedding] = {}
    for e in cropped:
        if e.text not in embeddings:
            embeddings[e.text] = encoder.encode(e.text)
    x0s = [normalize(e.motion, stats).frames for e in cropped]
    zs = [embeddings[e.text] for e in cropped]

    den_cfg = DenoiserConfig(
        length=config.length,
        channels=channels,
        embed_dim=config.embed_dim,
        hidden=config.hidden,
        levels=config.levels,
        text_dim=encoder.dim,
    )
    den = Denoiser(den_cfg)
    params = den.init_params(int(init_ss.generate_state(1)[0]))
    adam = AdamState.zeros_like(params)

    order: list[int] = []
    losses: list[tuple[int, float]] = []
    for step in range(1, config.steps + 1):
        while len(order) < config.batch_size:
            order.extend(order_rng.permutation(len(x0s)).tolist())
        idx, order = order[: config.batch_size], order[config.batch_size :]
        batch = [(x0s[i], zs[i]) for i in idx]
        draws = draw_training_batch(batch, config.schedule, config.guidance, noise_rng)
        try:
            value, grads = loss_and_grads(den, params, draws)
        except NumericsError as exc:
            raise NumericsError(f"training diverged at step {step}: {exc}") from exc
        params = adam_update(params, grads, adam, config.lr)
        losses.append((step, value))

    ckpt = checkpointing.Checkpoint(
        denoiser_config=den_cfg,
        params=params,
        schedule=config.schedule,
        norm_stats=stats,
        text_encoder=encoder.descriptor(),
        fps=fps,
    )
    return TrainResult(checkpoint=ckpt, losses=tuple(losses))


# ---------------------------------------------------------------------------
# Guided ancestral sampling
# ---------------------------------------------------------------------------


def guided_epsilon(
    eps_model: EpsModelFn, x: np.ndarray, t: int, z: TextEmbedding, w: float
) -> np.ndarray:
    """(1+w) * conditional - w * unconditional prediction.

    The degenerate cases take a single evaluation so they reproduce the
    underlying branch bit-exactly: w = 0 returns the conditional
    prediction, a null z returns the unconditional one.
    """
    if z.is_null:
        return eps_model(x, t, z)
    if w == 0.0:
        return eps_model(x, t, z)
    e_cond = eps_model(x, t, z)
    e_uncond = eps_model(x, t, null_embedding(z.dim))
    return (1.0 + w) * e_cond - w * e_uncond


def p_sample_step(
    eps_model: EpsModelFn,
    x_t: np.ndarray,
    t: int,
    z: TextEmbedding,
    schedule: NoiseSchedule,
    guidance: GuidanceConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """One reverse transition x_t -> x_{t-1} (deterministic at t = 1)."""
    if not (1 <= t <= schedule.T):
        raise ValidationError(f"step index {t} out of range [1, {schedule.T}]")
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = guided_epsilon(eps_model, x_t, t, z, guidance.w)
    c = coeffs_at(schedule, t)
    mean = (x_t - c.posterior_mean_coef * eps) / math.sqrt(c.alpha_t)
    if t == 1:
        return mean
    return mean + math.sqrt(c.beta_t) * rng.standard_normal(x_t.shape)


def sample_chain(
    eps_model: EpsModelFn,
    z: TextEmbedding,
    schedule: NoiseSchedule,
    guidance: GuidanceConfig,
    shape: tuple[int, ...],
    rng: np.random.Generator,
) -> np.ndarray:
    """Full reverse chain from x_T ~ N(0, I) down to x_0."""
    x = rng.standard_normal(shape)
    for t in range(schedule.T, 0, -1):
        x = p_sample_step(eps_model, x, t, z, schedule, guidance, rng)
    return x


class EpsModel:
    """Adapter turning (denoiser, params) into the eps_model interface."""

    def __init__(self, denoiser: Denoiser, params: Params, T: int):
        self.denoiser = denoiser
        self.params = params
        self.T = T

    def __call__(self, x: np.ndarray, t: int, z: TextEmbedding) -> np.ndarray:
        emb = fuse(self.params, time_embed(t, self.T, self.denoiser.config.embed_dim), z)
        if np.asarray(x).ndim == 3:
            emb = np.broadcast_to(emb, (x.shape[0], emb.shape[0]))
        return self.denoiser.forward(self.params, x, emb)


def sample(
    ckpt: "checkpointing.Checkpoint",
    text: str,
    count: int,
    guidance: GuidanceConfig,
    rng: np.random.Generator,
) -> list[Motion]:
    """Draw `count` independent guided reverse chains conditioned on `text`.

    Each chain owns a child stream spawned from `rng`, so results do not
    depend on evaluation order.  Outputs are denormalized with the
    checkpoint's stored statistics.
    """
    if count < 1:
        raise ValidationError("sample count must be >= 1")
    if ckpt.norm_stats is None:
        raise ValidationError("checkpoint carries no normalization stats; cannot denormalize")
    cfg = ckpt.denoiser_config
    encoder = encoder_from_descriptor(ckpt.text_encoder)
    z = encoder.encode(text)
    eps_model = EpsModel(Denoiser(cfg), ckpt.params, ckpt.schedule.T)
    shape = (cfg.length, cfg.channels)
    motions = []
    for child in rng.spawn(count):
        x0 = sample_chain(eps_model, z, ckpt.schedule, guidance, shape, child)
        motions.append(denormalize(Motion(x0, ckpt.fps), ckpt.norm_stats))
    return motions
