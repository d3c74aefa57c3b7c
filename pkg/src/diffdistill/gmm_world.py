"""Class-conditional diagonal Gaussian mixtures and their diffused marginals.

A :class:`GmmSpec` plays the role of a latent space whose per-class
distribution is a multi-component mixture.  Because every component is an
axis-aligned Gaussian, the marginal obtained after forward diffusion to any
``alpha_bar`` is again a mixture in closed form, so the exact noise
predictor (:func:`analytic_epsilon`) can stand in for a trained network.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from ._seeding import rng_for

STD_FLOOR = 1e-6
WEIGHT_TOL = 1e-9

DEFAULT_WORLD_SEED = 0
DEFAULT_DIMENSION = 8
DEFAULT_CLASSES = 4
DEFAULT_COMPONENTS = 3


class SpecError(ValueError):
    """Raised for a malformed mixture specification."""


@dataclass(frozen=True)
class GmmComponent:
    weight: float
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        std = np.asarray(self.std, dtype=float).reshape(-1)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        w = float(self.weight)
        object.__setattr__(self, "weight", w)
        if not (0.0 < w <= 1.0 + WEIGHT_TOL):
            raise SpecError(f"component weight must be in (0, 1], got {w}")
        if mean.shape != std.shape:
            raise SpecError("component mean and std lengths differ")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
            raise SpecError("component parameters must be finite")
        if np.any(std < STD_FLOOR):
            raise SpecError(f"component std entries must be >= {STD_FLOOR}")

    @property
    def dimension(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class GmmSpec:
    """Per-class lists of diagonal Gaussian components."""

    dimension: int
    classes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        classes = tuple(tuple(c) for c in self.classes)
        object.__setattr__(self, "classes", classes)
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise SpecError("dimension must be a positive integer")
        object.__setattr__(self, "dimension", int(self.dimension))
        if not classes:
            raise SpecError("spec needs at least one class")
        for ci, comps in enumerate(classes):
            if not comps:
                raise SpecError(f"class {ci} has no components")
            for comp in comps:
                if not isinstance(comp, GmmComponent):
                    raise SpecError("classes must hold GmmComponent objects")
                if comp.dimension != self.dimension:
                    raise SpecError(f"class {ci}: component length != dimension {self.dimension}")
            total = sum(c.weight for c in comps)
            if abs(total - 1.0) > WEIGHT_TOL:
                raise SpecError(f"class {ci}: weights sum to {total!r}, expected 1")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "classes": [
                [{"weight": c.weight, "mean": c.mean.tolist(), "std": c.std.tolist()} for c in comps]
                for comps in self.classes
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GmmSpec":
        try:
            dim = doc["dimension"]
            classes = [
                [GmmComponent(c["weight"], c["mean"], c["std"]) for c in comps]
                for comps in doc["classes"]
            ]
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed spec document: {exc!r}") from exc
        return cls(dim, classes)

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


@dataclass
class Dataset:
    """Labelled points drawn from a :class:`GmmSpec`."""

    points: np.ndarray
    labels: np.ndarray
    seed: int = 0
    spec_digest: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points.reshape(-1, 1) if self.points.size else self.points.reshape(0, 0)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.points.shape[0] != self.labels.shape[0]:
            raise ValueError("points and labels differ in length")
        if np.any(self.labels < 0):
            raise ValueError("class labels must be non-negative")

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def classes(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.labels))

    def class_points(self, c: int) -> np.ndarray:
        return self.points[self.labels == c]

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "points": [{"x": x.tolist(), "y": int(y)} for x, y in zip(self.points, self.labels)],
            "seed": int(self.seed),
            "spec_digest": self.spec_digest,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Dataset":
        dim = int(doc["dimension"])
        pts = doc["points"]
        xs = np.array([p["x"] for p in pts], dtype=float).reshape(len(pts), dim)
        ys = np.array([p["y"] for p in pts], dtype=np.int64)
        return cls(xs, ys, int(doc.get("seed", 0)), str(doc.get("spec_digest", "")))


def _class_arrays(components: Sequence[GmmComponent]):
    log_w = np.log(np.array([c.weight for c in components]))
    means = np.stack([c.mean for c in components])
    var = np.stack([c.std for c in components]) ** 2
    return log_w, means, var


def sample_dataset(spec: GmmSpec, n_per_class: int, seed: int) -> Dataset:
    """Draw ``n_per_class`` labelled points from every class of ``spec``."""
    if not isinstance(spec, GmmSpec):
        raise SpecError("spec must be a GmmSpec")
    if int(n_per_class) < 1:
        raise ValueError("n_per_class must be positive")
    n = int(n_per_class)
    rng = rng_for(seed)
    xs, ys = [], []
    for ci, comps in enumerate(spec.classes):
        log_w, means, var = _class_arrays(comps)
        w = np.exp(log_w)
        idx = rng.choice(len(comps), size=n, p=w / w.sum())
        noise = rng.standard_normal((n, spec.dimension))
        xs.append(means[idx] + np.sqrt(var[idx]) * noise)
        ys.append(np.full(n, ci, dtype=np.int64))
    return Dataset(np.concatenate(xs), np.concatenate(ys), seed, spec.digest())


def _check_alpha_bar(alpha_bar: float) -> float:
    a = float(alpha_bar)
    if not (0.0 < a <= 1.0):
        raise ValueError(f"alpha_bar must lie in (0, 1], got {alpha_bar}")
    return a


def marginal_at(spec: GmmSpec, class_index: int, alpha_bar: float) -> list[GmmComponent]:
    """Class mixture after forward diffusion to ``alpha_bar``.

    Component means shrink by ``sqrt(alpha_bar)`` and variances become
    ``alpha_bar * s**2 + (1 - alpha_bar)``; weights are unchanged.
    """
    a = _check_alpha_bar(alpha_bar)
    comps = spec.classes[class_index]
    if a == 1.0:
        return list(comps)
    return [
        GmmComponent(c.weight, np.sqrt(a) * c.mean, np.sqrt(a * c.std**2 + (1.0 - a)))
        for c in comps
    ]


def _component_log_pdf(z: np.ndarray, means: np.ndarray, var: np.ndarray) -> np.ndarray:
    # z: (n, d) -> (n, K)
    diff = z[:, None, :] - means[None, :, :]
    return -0.5 * np.sum(np.log(2.0 * np.pi * var)[None] + diff**2 / var[None], axis=-1)


def gmm_log_density(mixture: Sequence[GmmComponent], point) -> float | np.ndarray:
    """Log density of a diagonal mixture at one point or a batch of points."""
    log_w, means, var = _class_arrays(mixture)
    z = np.asarray(point, dtype=float)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    if z2.shape[1] != means.shape[1]:
        raise ValueError(f"point dimension {z2.shape[1]} != mixture dimension {means.shape[1]}")
    out = logsumexp(log_w[None, :] + _component_log_pdf(z2, means, var), axis=1)
    return float(out[0]) if single else out


def mixture_score(mixture: Sequence[GmmComponent], point) -> np.ndarray:
    """Gradient of :func:`gmm_log_density` with respect to the point."""
    log_w, means, var = _class_arrays(mixture)
    z = np.asarray(point, dtype=float)
    z2 = np.atleast_2d(z)
    if z2.shape[1] != means.shape[1]:
        raise ValueError(f"point dimension {z2.shape[1]} != mixture dimension {means.shape[1]}")
    logits = log_w[None, :] + _component_log_pdf(z2, means, var)
    resp = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    score = np.einsum("nk,nkd->nd", resp, (means[None] - z2[:, None, :]) / var[None])
    return score[0] if z.ndim == 1 else score


def analytic_epsilon(spec: GmmSpec, class_index: int, z, alpha_bar: float) -> np.ndarray:
    """Exact noise prediction ``-sqrt(1 - alpha_bar) * grad log p_t(z)``.

    Works on a single vector or on a batch with shape ``(n, d)``.
    """
    a = _check_alpha_bar(alpha_bar)
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != spec.dimension:
        raise ValueError(f"z dimension {z.shape[-1]} != spec dimension {spec.dimension}")
    if a == 1.0:
        return np.zeros_like(z)
    return -np.sqrt(1.0 - a) * mixture_score(marginal_at(spec, class_index, a), z)


def mixture_mean(components: Sequence[GmmComponent]) -> np.ndarray:
    return sum(c.weight * c.mean for c in components)


def default_world(
    seed: int = DEFAULT_WORLD_SEED,
    dimension: int = DEFAULT_DIMENSION,
    n_classes: int = DEFAULT_CLASSES,
    n_components: int = DEFAULT_COMPONENTS,
) -> GmmSpec:
    """The seeded desk-scale world.

    Means are uniform in ``[-4, 4]^d``, stds uniform in ``[0.3, 1.2]`` and
    weights a flat Dirichlet draw, all from one PCG64 stream.
    """
    rng = rng_for(seed)
    classes = []
    for _ in range(n_classes):
        means = rng.uniform(-4.0, 4.0, size=(n_components, dimension))
        stds = rng.uniform(0.3, 1.2, size=(n_components, dimension))
        w = rng.dirichlet(np.ones(n_components))
        w = w / w.sum()
        classes.append([GmmComponent(w[k], means[k], stds[k]) for k in range(n_components)])
    return GmmSpec(dimension, classes)


def epsilon_fn(spec: GmmSpec):
    """Batch noise predictor ``(z, alpha_bar, class_index) -> eps`` for ``spec``."""

    def eps(z, alpha_bar, class_index):
        return analytic_epsilon(spec, class_index, z, alpha_bar)

    return eps
