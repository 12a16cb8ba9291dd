"""Noise schedules and derived diffusion coefficients.

A schedule is the vector beta_1..beta_T of per-step noise rates together
with alpha_t = 1 - beta_t and the cumulative product
alpha_bar_t = prod_{s<=t} alpha_s.  The closed-form corruption of a clean
sequence x0 at step t is

    x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.

Both constructors are pure functions; all arrays are float64 and frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

COSINE_MAX_BETA = 0.999
DEFAULT_COSINE_OFFSET = 0.008

#: alpha_bar_T must have decayed below this for long schedules (T >= 100),
#: otherwise terminal samples are far from the standard normal prior.
_TERMINAL_ALPHA_BAR = 0.05


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    args: dict
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ValidationError("beta must be a 1-D vector with T >= 1")
        if (beta <= 0).any() or (beta >= 1).any():
            raise ValidationError("every beta_t must lie strictly in (0, 1)")
        alpha = np.asarray(self.alpha, dtype=np.float64)
        alpha_bar = np.asarray(self.alpha_bar, dtype=np.float64)
        if (np.diff(alpha_bar) >= 0).any():
            raise ValidationError("alpha_bar must be strictly decreasing")
        if beta.size >= 100 and alpha_bar[-1] >= _TERMINAL_ALPHA_BAR:
            raise ValidationError(
                f"alpha_bar_T = {alpha_bar[-1]:.4f} has not decayed below "
                f"{_TERMINAL_ALPHA_BAR} for T = {beta.size}"
            )
        object.__setattr__(self, "beta", _freeze(beta))
        object.__setattr__(self, "alpha", _freeze(alpha))
        object.__setattr__(self, "alpha_bar", _freeze(alpha_bar))

    @property
    def T(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class StepCoeffs:
    """All per-step quantities the forward and reverse updates need."""

    beta_t: float
    alpha_t: float
    alpha_bar_t: float
    sqrt_alpha_bar_t: float
    sqrt_one_minus_alpha_bar_t: float
    #: beta_t / sqrt(1 - alpha_bar_t), the weight on the predicted noise
    #: inside the reverse-step mean.
    posterior_mean_coef: float


def _build(kind: str, args: dict, beta: np.ndarray) -> NoiseSchedule:
    alpha = 1.0 - beta
    return NoiseSchedule(kind=kind, args=args, beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))


def make_linear(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Betas linearly interpolated from beta_start to beta_end inclusive."""
    if T < 1:
        raise ValidationError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValidationError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, T)
    return _build("linear", {"beta_start": beta_start, "beta_end": beta_end}, beta)


def make_cosine(T: int, offset: float = DEFAULT_COSINE_OFFSET) -> NoiseSchedule:
    """Squared-cosine alpha_bar profile.

    alpha_bar_t = f(t)/f(0) with f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2);
    betas are recovered as 1 - alpha_bar_t/alpha_bar_{t-1} and clipped to
    COSINE_MAX_BETA, then alpha_bar is rebuilt from the clipped betas so
    the cumulative-product identity holds exactly.
    """
    if T < 1:
        raise ValidationError("T must be >= 1")
    if not (0.0 < offset < 1.0):
        raise ValidationError(f"cosine offset must be in (0, 1), got {offset}")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos((t / T + offset) / (1.0 + offset) * (math.pi / 2.0)) ** 2
    ratio = f[1:] / f[:-1]  # alpha_bar_t / alpha_bar_{t-1}, telescoping to f(t)/f(0)
    beta = np.minimum(1.0 - ratio, COSINE_MAX_BETA)
    return _build("cosine", {"offset": offset}, beta)


def coeffs_at(schedule: NoiseSchedule, t: int) -> StepCoeffs:
    """Coefficients for step t, 1-based (1 <= t <= T)."""
    if not (1 <= t <= schedule.T):
        raise ValidationError(f"step index {t} out of range [1, {schedule.T}]")
    beta_t = float(schedule.beta[t - 1])
    alpha_t = float(schedule.alpha[t - 1])
    alpha_bar_t = float(schedule.alpha_bar[t - 1])
    one_minus = 1.0 - alpha_bar_t
    return StepCoeffs(
        beta_t=beta_t,
        alpha_t=alpha_t,
        alpha_bar_t=alpha_bar_t,
        sqrt_alpha_bar_t=math.sqrt(alpha_bar_t),
        sqrt_one_minus_alpha_bar_t=math.sqrt(one_minus),
        posterior_mean_coef=beta_t / math.sqrt(one_minus),
    )


def make_schedule(kind: str, T: int, **args) -> NoiseSchedule:
    if kind == "linear":
        return make_linear(T, args.get("beta_start", 1e-4), args.get("beta_end", 0.02))
    if kind == "cosine":
        return make_cosine(T, args.get("offset", DEFAULT_COSINE_OFFSET))
    raise ValidationError(f"unknown schedule kind {kind!r}")


def schedule_to_dict(schedule: NoiseSchedule) -> dict:
    """Checkpoint form: construction recipe plus alpha_bar for verification."""
    return {
        "kind": schedule.kind,
        "T": schedule.T,
        "parameters": dict(schedule.args),
        "alpha_bar": [float(v) for v in schedule.alpha_bar],
    }


def schedule_from_dict(doc: dict) -> NoiseSchedule:
    """Rebuild from the recipe and verify against the stored alpha_bar."""
    for key in ("kind", "T", "parameters"):
        if key not in doc:
            raise ValidationError(f"schedule descriptor is missing key {key!r}")
    schedule = make_schedule(doc["kind"], int(doc["T"]), **doc["parameters"])
    stored = doc.get("alpha_bar")
    if stored is not None:
        stored = np.asarray(stored, dtype=np.float64)
        if stored.shape != schedule.alpha_bar.shape or not np.allclose(
            stored, schedule.alpha_bar, rtol=0.0, atol=1e-12
        ):
            raise ValidationError(
                "stored alpha_bar disagrees with the re-derived schedule (>1e-12)"
            )
    return schedule
