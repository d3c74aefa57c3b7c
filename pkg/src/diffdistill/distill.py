"""Gaussian fitting in the inverted domain, group sampling and the full pipeline.

Per class, the data points are pushed to the noise end of the schedule by
DDIM inversion, a diagonal Gaussian is fitted to the result, ``m`` candidate
subsets of ``n`` latents are drawn from it, the candidate whose mean, spread
and skewness best match the fitted Gaussian is kept, and those latents are
carried back to data space by DDIM sampling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ._seeding import DDPM_NOISE_STREAM, derived_seed, rng_for, worker_count
from .ddim import (
    EpsFn,
    LatentBatch,
    NoiseSchedule,
    build_schedule,
    ddpm_forward,
    invert,
    sample,
)
from .gmm_world import Dataset, GmmSpec, epsilon_fn

MODES = ("group", "random", "ddpm")
DEFAULT_WEIGHTS = (1.0, 1.0, 0.5)
DEFAULT_M = 10_000
DEFAULT_IPC = 10
STD_FLOOR = 1e-9

# candidates scored per vectorised chunk; bounds peak memory at large m
_CHUNK = 2048


@dataclass(frozen=True)
class ClassGaussianStats:
    class_index: int
    mean: np.ndarray
    std: np.ndarray
    source_count: int
    skew_target: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(-1))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=float).reshape(-1))
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std lengths differ")
        if np.any(self.std <= 0):
            raise ValueError("std entries must be positive")
        if self.skew_target != 0.0:
            raise ValueError("skew target of a Gaussian is 0")

    @property
    def dimension(self) -> int:
        return self.mean.shape[0]

    def scaled(self, var_scale: float) -> "ClassGaussianStats":
        """Same Gaussian with its variance multiplied by ``var_scale``."""
        if var_scale <= 0:
            raise ValueError("var_scale must be positive")
        return replace(self, std=self.std * np.sqrt(var_scale))


@dataclass(frozen=True)
class LossBreakdown:
    l_mu: float
    l_sigma: float
    l_skew: float
    total: float
    weights: tuple


@dataclass(frozen=True)
class CandidateSubset:
    latents: np.ndarray
    index: int
    loss: LossBreakdown


@dataclass(frozen=True)
class DistillConfig:
    ipc: int = DEFAULT_IPC
    m: int = DEFAULT_M
    weights: tuple = DEFAULT_WEIGHTS
    mode: str = "group"
    seed: int = 0
    var_scale: float = 1.0
    schedule: NoiseSchedule = field(default_factory=build_schedule)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.ipc < 1:
            raise ValueError("ipc must be >= 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        w = tuple(float(x) for x in self.weights)
        if len(w) != 3 or any(x < 0 for x in w):
            raise ValueError("weights must be three non-negative numbers")
        object.__setattr__(self, "weights", w)
        if self.var_scale <= 0:
            raise ValueError("var_scale must be positive")

    def provenance(self) -> dict:
        return {
            "seed": int(self.seed),
            "m": int(self.m),
            "K": self.schedule.num_inference,
            "weights": list(self.weights),
            "var_scale": float(self.var_scale),
        }


@dataclass
class DistilledSet:
    """Distilled points in data space, ``ipc`` per class."""

    points: np.ndarray
    labels: np.ndarray
    ipc: int
    mode: str
    m: int
    provenance: dict
    spec_digest: str = ""
    stats: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        counts = np.bincount(self.labels)
        if np.any(counts[counts > 0] != self.ipc):
            raise ValueError("every class must hold exactly ipc points")

    def as_dataset(self) -> Dataset:
        return Dataset(self.points, self.labels, self.provenance.get("seed", 0), self.spec_digest)

    def to_dict(self) -> dict:
        doc = self.as_dataset().to_dict()
        doc.update({"mode": self.mode, "ipc": int(self.ipc), "m": int(self.m), "provenance": self.provenance})
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "DistilledSet":
        ds = Dataset.from_dict(doc)
        return cls(ds.points, ds.labels, int(doc["ipc"]), doc["mode"], int(doc["m"]),
                   dict(doc.get("provenance", {})), ds.spec_digest)


def fit_class_stats(batch: LatentBatch) -> ClassGaussianStats:
    """Per-dimension mean and population (1/n) standard deviation."""
    z = batch.latents
    if z.shape[0] < 2:
        raise ValueError("need at least two latents to fit class statistics")
    mean = z.mean(axis=0)
    std = np.sqrt(np.mean((z - mean) ** 2, axis=0))
    if np.any(std < STD_FLOOR):
        raise ValueError("zero variance in at least one dimension")
    return ClassGaussianStats(batch.class_index, mean, std, z.shape[0])


def gaussian_subset_sample(stats: ClassGaussianStats, n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. draws from the diagonal Gaussian ``stats``, shape ``(n, d)``."""
    if n < 1:
        raise ValueError("subset size must be >= 1")
    return stats.mean + stats.std * rng_for(seed).standard_normal((n, stats.dimension))


def _loss_terms(z: np.ndarray, mean: np.ndarray, std: np.ndarray):
    """Moment-mismatch terms for subsets ``z`` of shape ``(..., n, d)``.

    Each term is computed per dimension, then averaged over dimensions.
    """
    n = z.shape[-2]
    dev = z - mean
    l_mu = np.mean((dev.mean(axis=-2)) ** 2, axis=-1)
    # spread is measured about the target mean, not the subset's own mean
    l_sigma = np.mean((np.sqrt(np.mean(dev**2, axis=-2)) - std) ** 2, axis=-1)
    if n < 3:
        l_skew = np.zeros_like(l_mu)
    else:
        g1 = n / ((n - 1) * (n - 2)) * np.sum((dev / std) ** 3, axis=-2)
        l_skew = np.mean(g1**2, axis=-1)
    return l_mu, l_sigma, l_skew


def subset_loss(subset, stats: ClassGaussianStats, weights: Sequence[float] = DEFAULT_WEIGHTS) -> LossBreakdown:
    z = np.asarray(subset, dtype=float)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    if z.shape[0] == 0:
        raise ValueError("subset must be non-empty")
    w = tuple(float(x) for x in weights)
    if any(x < 0 for x in w):
        raise ValueError("weights must be non-negative")
    l_mu, l_sigma, l_skew = (float(t) for t in _loss_terms(z, stats.mean, stats.std))
    total = w[0] * l_mu + w[1] * l_sigma + w[2] * l_skew
    return LossBreakdown(l_mu, l_sigma, l_skew, total, w)


def candidate_seed(seed: int, class_index: int, k: int) -> int:
    return derived_seed(seed, class_index, k)


def candidate_totals(stats, n, m, weights, seed, class_index=0, start=0):
    """Total loss of candidates ``start .. start + m - 1`` (no argmin)."""
    w = np.asarray(weights, dtype=float)
    out = np.empty(m)
    for lo in range(0, m, _CHUNK):
        hi = min(m, lo + _CHUNK)
        block = np.stack([
            gaussian_subset_sample(stats, n, candidate_seed(seed, class_index, start + k))
            for k in range(lo, hi)
        ])
        l_mu, l_sigma, l_skew = _loss_terms(block, stats.mean, stats.std)
        out[lo:hi] = w[0] * l_mu + w[1] * l_sigma + w[2] * l_skew
    return out


def group_sample(
    stats: ClassGaussianStats,
    n: int,
    m: int,
    weights: Sequence[float] = DEFAULT_WEIGHTS,
    seed: int = 0,
    class_index: int = 0,
) -> CandidateSubset:
    """Pick the lowest-loss subset among ``m`` independently drawn candidates.

    Candidate ``k`` is drawn from ``candidate_seed(seed, class_index, k)``, so
    pools are nested in ``m`` and can be generated in any order.  Ties go to
    the smallest index.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if n < 1:
        raise ValueError("subset size must be >= 1")
    totals = candidate_totals(stats, n, m, weights, seed, class_index)
    best = int(np.argmin(totals))
    latents = gaussian_subset_sample(stats, n, candidate_seed(seed, class_index, best))
    return CandidateSubset(latents, best, subset_loss(latents, stats, weights))


def _select_latents(stats, config: DistillConfig, class_index: int, mode: str) -> np.ndarray:
    stats = stats.scaled(config.var_scale) if config.var_scale != 1.0 else stats
    if mode == "group":
        return group_sample(stats, config.ipc, config.m, config.weights, config.seed, class_index).latents
    return gaussian_subset_sample(stats, config.ipc, candidate_seed(config.seed, class_index, 0))


def map_to_noise(points: np.ndarray, class_index: int, schedule: NoiseSchedule, eps_fn: EpsFn,
                 mode: str = "group", seed: int = 0) -> LatentBatch:
    """Carry class points to the terminal grid index (DDIM, or DDPM for ``ddpm``)."""
    batch = LatentBatch(points, class_index, 0)
    if mode != "ddpm":
        return invert(batch, schedule, eps_fn)
    noise = rng_for(derived_seed(seed, class_index, DDPM_NOISE_STREAM)).standard_normal(batch.latents.shape)
    zT = ddpm_forward(batch.latents, schedule.terminal_alpha_bar, noise)
    return LatentBatch(zT, class_index, schedule.num_inference)


def distill_class(
    points: np.ndarray,
    class_index: int,
    eps_fn: EpsFn,
    config: DistillConfig,
) -> tuple[np.ndarray, ClassGaussianStats]:
    """Distil one class; returns ``(ipc, d)`` data-space points and the fitted stats."""
    points = np.asarray(points, dtype=float)
    if points.shape[0] < 2:
        raise ValueError(f"class {class_index} needs at least two points")
    schedule = config.schedule
    zT = map_to_noise(points, class_index, schedule, eps_fn, config.mode, config.seed)
    stats = fit_class_stats(zT)
    chosen = _select_latents(stats, config, class_index, config.mode)
    out = sample(LatentBatch(chosen, class_index, schedule.num_inference), schedule, eps_fn)
    return out.latents.copy(), stats


def _assemble(results, ipc, config, spec_digest) -> DistilledSet:
    pts = np.concatenate([r[1] for r in results])
    labels = np.concatenate([np.full(ipc, r[0], dtype=np.int64) for r in results])
    stats = [r[2] for r in results]
    return DistilledSet(pts, labels, ipc, config.mode, config.m, config.provenance(), spec_digest, stats)


def _map_classes(fn, classes):
    workers = min(worker_count(), len(classes))
    if workers <= 1:
        return [fn(c) for c in classes]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, classes))


def distill_dataset(data: Dataset, spec: GmmSpec, config: DistillConfig) -> DistilledSet:
    """Run the per-class pipeline over every class present in ``data``."""
    eps = epsilon_fn(spec)
    classes = data.classes()
    for c in classes:
        if c >= spec.n_classes:
            raise ValueError(f"label {c} outside the world's {spec.n_classes} classes")
        if np.count_nonzero(data.labels == c) < 2:
            raise ValueError(f"class {c} has fewer than two points")

    def one(c):
        pts, stats = distill_class(data.class_points(c), c, eps, config)
        return c, pts, stats

    return _assemble(_map_classes(one, classes), config.ipc, config, data.spec_digest or spec.digest())


# -- stats-only storage -----------------------------------------------------


def stats_bundle(distilled: DistilledSet, config: DistillConfig) -> dict:
    """Everything needed to regenerate a distilled set of any IPC."""
    return {
        "schedule": config.schedule.to_dict(),
        "classes": [
            {"class": s.class_index, "mean": s.mean.tolist(), "std": s.std.tolist(), "n": s.source_count}
            for s in distilled.stats
        ],
        "weights": list(config.weights),
        "m": config.m,
        "mode": config.mode,
        "var_scale": config.var_scale,
        "spec_digest": distilled.spec_digest,
    }


def bundle_stats(bundle: dict) -> list[ClassGaussianStats]:
    try:
        return [ClassGaussianStats(int(c["class"]), c["mean"], c["std"], int(c["n"])) for c in bundle["classes"]]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed stats bundle: {exc!r}") from exc


def regenerate_from_stats(bundle: dict, ipc: int, spec: GmmSpec, seed: int) -> DistilledSet:
    """Fresh distilled set from stored statistics alone (no dataset needed)."""
    for key in ("schedule", "classes", "weights"):
        if key not in bundle:
            raise ValueError(f"stats bundle lacks {key!r}")
    stats = bundle_stats(bundle)
    have = {s.class_index for s in stats}
    missing = sorted(set(range(spec.n_classes)) - have)
    if missing:
        raise ValueError(f"stats bundle lacks classes {missing}")
    schedule = NoiseSchedule.from_dict(bundle["schedule"])
    config = DistillConfig(
        ipc=int(ipc),
        m=int(bundle.get("m", DEFAULT_M)),
        weights=tuple(bundle["weights"]),
        mode=bundle.get("mode", "group"),
        seed=int(seed),
        var_scale=float(bundle.get("var_scale", 1.0)),
        schedule=schedule,
    )
    eps = epsilon_fn(spec)

    def one(s: ClassGaussianStats):
        chosen = _select_latents(s, config, s.class_index, config.mode)
        out = sample(LatentBatch(chosen, s.class_index, schedule.num_inference), schedule, eps)
        return s.class_index, out.latents.copy(), s

    stats = sorted(stats, key=lambda s: s.class_index)
    digest = bundle.get("spec_digest") or spec.digest()
    return _assemble(_map_classes(one, stats), config.ipc, config, digest)
