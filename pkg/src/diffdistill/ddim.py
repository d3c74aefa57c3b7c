"""Noise schedules, deterministic DDIM steps and the DDPM forward map."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DEFAULT_TRAIN_STEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
DEFAULT_INFERENCE_STEPS = 31

EpsFn = Callable[[np.ndarray, float, int], np.ndarray]


class ScheduleError(ValueError):
    pass


def linear_alpha_bar(train_steps: int, beta_start: float, beta_end: float) -> np.ndarray:
    """Cumulative products for a linear beta ramp; index 0 holds 1.0."""
    betas = np.linspace(beta_start, beta_end, train_steps, dtype=np.float64)
    return np.concatenate([[1.0], np.cumprod(1.0 - betas)])


@dataclass(frozen=True)
class NoiseSchedule:
    train_steps: int
    beta_start: float
    beta_end: float
    inference_steps: tuple
    alpha_bar: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        T = int(self.train_steps)
        if T < 1:
            raise ScheduleError("train_steps must be positive")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ScheduleError("need 0 < beta_start <= beta_end < 1")
        steps = tuple(int(s) for s in self.inference_steps)
        object.__setattr__(self, "inference_steps", steps)
        if len(steps) < 2 or steps[0] != 0:
            raise ScheduleError("inference grid must start at 0 and hold at least two steps")
        if any(b <= a for a, b in zip(steps, steps[1:])) or steps[-1] > T:
            raise ScheduleError("inference grid must be strictly increasing and end <= train_steps")
        object.__setattr__(self, "alpha_bar", linear_alpha_bar(T, self.beta_start, self.beta_end))

    @property
    def num_inference(self) -> int:
        """Number of DDIM steps K (the grid has K + 1 points)."""
        return len(self.inference_steps) - 1

    @property
    def grid_alpha_bar(self) -> np.ndarray:
        return self.alpha_bar[list(self.inference_steps)]

    @property
    def terminal_alpha_bar(self) -> float:
        return float(self.alpha_bar[self.inference_steps[-1]])

    def to_dict(self) -> dict:
        return {
            "train_steps": self.train_steps,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "inference_steps": list(self.inference_steps),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseSchedule":
        try:
            return cls(
                int(doc["train_steps"]),
                float(doc["beta_start"]),
                float(doc["beta_end"]),
                tuple(doc["inference_steps"]),
            )
        except (KeyError, TypeError) as exc:
            raise ScheduleError(f"malformed schedule document: {exc!r}") from exc


def build_schedule(
    train_steps: int = DEFAULT_TRAIN_STEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    num_inference: int = DEFAULT_INFERENCE_STEPS,
    terminal_step: int | None = None,
) -> NoiseSchedule:
    """Linear-beta schedule with a uniform K-step inference grid.

    The grid is ``{0} U {round(j * terminal / K)}`` for ``j = 1..K``.
    ``terminal_step`` defaults to ``train_steps``; a smaller value gives a
    truncated (shallower) inversion.
    """
    T = int(train_steps)
    if T < 1:
        raise ScheduleError("train_steps must be positive")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError("need 0 < beta_start <= beta_end < 1")
    end = T if terminal_step is None else int(terminal_step)
    if not (1 <= end <= T):
        raise ScheduleError("terminal_step must lie in [1, train_steps]")
    K = int(num_inference)
    if not (1 <= K <= T):
        raise ScheduleError("num_inference must lie in [1, train_steps]")
    grid = sorted({0} | {round(j * end / K) for j in range(1, K + 1)})
    if len(grid) != K + 1:
        raise ScheduleError(f"inference grid collapses: {K} steps over {end} timesteps")
    return NoiseSchedule(T, float(beta_start), float(beta_end), tuple(grid))


def _check_abar(*values: float) -> None:
    for a in values:
        if not (0.0 < a <= 1.0):
            raise ValueError(f"alpha_bar must lie in (0, 1], got {a}")


def _transfer(z, abar_from: float, abar_to: float, eps) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if eps.shape != z.shape:
        raise ValueError(f"eps shape {eps.shape} != z shape {z.shape}")
    coef = np.sqrt(abar_to) * (np.sqrt(1.0 / abar_to - 1.0) - np.sqrt(1.0 / abar_from - 1.0))
    return np.sqrt(abar_to / abar_from) * z + coef * eps


def ddim_sample_step(z, abar_from: float, abar_to: float, eps) -> np.ndarray:
    """One deterministic DDIM step toward the data end (``abar_to >= abar_from``)."""
    _check_abar(abar_from, abar_to)
    if abar_to < abar_from:
        raise ValueError("sampling step must move toward larger alpha_bar")
    return _transfer(z, abar_from, abar_to, eps)


def ddim_invert_step(z, abar_from: float, abar_to: float, eps) -> np.ndarray:
    """One DDIM inversion step toward the noise end (``abar_to <= abar_from``).

    Exact algebraic inverse of :func:`ddim_sample_step` for a frozen ``eps``.
    """
    _check_abar(abar_from, abar_to)
    if abar_to > abar_from:
        raise ValueError("inversion step must move toward smaller alpha_bar")
    return _transfer(z, abar_from, abar_to, eps)


@dataclass(frozen=True)
class LatentBatch:
    """Latents of one class sitting at a position on the inference grid."""

    latents: np.ndarray
    class_index: int = 0
    step: int = 0

    def __post_init__(self):
        lat = np.array(self.latents, dtype=float, copy=True)
        if lat.ndim != 2:
            raise ValueError("latents must be a 2-D array (n, d)")
        lat.setflags(write=False)
        object.__setattr__(self, "latents", lat)

    @property
    def dimension(self) -> int:
        return self.latents.shape[1]

    def __len__(self) -> int:
        return self.latents.shape[0]


def invert(batch: LatentBatch, schedule: NoiseSchedule, eps_fn: EpsFn) -> LatentBatch:
    """Map a batch from grid index 0 to the terminal index K.

    ``eps_fn(z, alpha_bar, class_index)`` receives the whole ``(n, d)`` batch
    and is evaluated at the source timestep of every step.
    """
    if batch.step != 0:
        raise ValueError("invert expects a batch at grid index 0")
    abars = schedule.grid_alpha_bar
    z = batch.latents
    for k in range(schedule.num_inference):
        a_from, a_to = float(abars[k]), float(abars[k + 1])
        z = ddim_invert_step(z, a_from, a_to, eps_fn(z, a_from, batch.class_index))
    return LatentBatch(z, batch.class_index, schedule.num_inference)


def sample(batch: LatentBatch, schedule: NoiseSchedule, eps_fn: EpsFn) -> LatentBatch:
    """Map a batch from the terminal grid index back to index 0."""
    K = schedule.num_inference
    if batch.step != K:
        raise ValueError(f"sample expects a batch at grid index {K}")
    abars = schedule.grid_alpha_bar
    z = batch.latents
    for k in range(K, 0, -1):
        a_from, a_to = float(abars[k]), float(abars[k - 1])
        z = ddim_sample_step(z, a_from, a_to, eps_fn(z, a_from, batch.class_index))
    return LatentBatch(z, batch.class_index, 0)


def ddpm_forward(z0, abar: float, noise) -> np.ndarray:
    """Stochastic forward noising ``sqrt(abar) z0 + sqrt(1 - abar) noise``."""
    _check_abar(abar)
    z0 = np.asarray(z0, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if noise.shape != z0.shape:
        raise ValueError("noise shape must match z0")
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * noise
