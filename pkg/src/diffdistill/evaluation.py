"""Downstream accuracy, normality diagnostics and two-sample distances."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from ._io import fmt9
from .ddim import LatentBatch, NoiseSchedule, build_schedule, invert, sample
from .distill import MODES, DistillConfig, distill_dataset
from .gmm_world import Dataset, GmmSpec, epsilon_fn


# -- classifier ---------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 500
    l2: float = 1e-4


@dataclass
class ClassifierModel:
    """Multinomial logistic regression; ``weights`` has shape ``(C, d + 1)``.

    The last column is the bias.
    """

    weights: np.ndarray
    config: TrainConfig = field(default_factory=TrainConfig)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def logits(self, x: np.ndarray) -> np.ndarray:
        return _augment(x) @ self.weights.T

    def predict(self, x: np.ndarray) -> np.ndarray:
        # np.argmax resolves ties toward the smallest class index
        return np.argmax(self.logits(x), axis=1)


def _augment(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _l2_mask(shape) -> np.ndarray:
    mask = np.ones(shape)
    mask[:, -1] = 0.0
    return mask


def softmax_loss_and_grad(weights: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float):
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` (bias excluded), and its gradient."""
    xa = _augment(x)
    logits = xa @ weights.T
    lse = logsumexp(logits, axis=1, keepdims=True)
    probs = np.exp(logits - lse)
    n = x.shape[0]
    mask = _l2_mask(weights.shape)
    loss = float(np.mean(lse[:, 0] - logits[np.arange(n), y])) + 0.5 * l2 * float(np.sum((weights * mask) ** 2))
    probs[np.arange(n), y] -= 1.0
    grad = probs.T @ xa / n + l2 * weights * mask
    return loss, grad


def train_classifier(train: Dataset, config: TrainConfig = TrainConfig(), n_classes: int | None = None) -> ClassifierModel:
    """Full-batch gradient descent from zero initialisation."""
    if len(train) == 0:
        raise ValueError("training set is empty")
    present = train.classes()
    C = n_classes if n_classes is not None else max(present) + 1
    if len(present) < 2:
        raise ValueError("need at least two classes to train a classifier")
    missing = sorted(set(range(C)) - set(present))
    if missing:
        raise ValueError(f"classes without training points: {missing}")
    W = np.zeros((C, train.dimension + 1))
    for _ in range(config.epochs):
        loss, grad = softmax_loss_and_grad(W, train.points, train.labels, config.l2)
        if not np.isfinite(loss):
            raise FloatingPointError("training loss became non-finite")
        W -= config.learning_rate * grad
    loss, _ = softmax_loss_and_grad(W, train.points, train.labels, config.l2)
    if not (np.isfinite(loss) and np.all(np.isfinite(W))):
        raise FloatingPointError("training produced non-finite parameters")
    return ClassifierModel(W, config)


def evaluate_classifier(model: ClassifierModel, test: Dataset) -> float:
    if len(test) == 0:
        raise ValueError("test set is empty")
    if test.dimension + 1 != model.weights.shape[1]:
        raise ValueError("test dimension does not match the model")
    return float(np.mean(model.predict(test.points) == test.labels))


# -- normality --------------------------------------------------------------


@dataclass(frozen=True)
class NormalityReport:
    skewness: np.ndarray
    excess_kurtosis: np.ndarray

    @property
    def aggregate(self) -> float:
        return float(np.mean(np.abs(self.skewness) + np.abs(self.excess_kurtosis)))


def adjusted_skewness(x: np.ndarray) -> np.ndarray:
    """Adjusted Fisher-Pearson skewness G1 per column."""
    n = x.shape[0]
    s = x.std(axis=0, ddof=1)
    return n / ((n - 1) * (n - 2)) * np.sum(((x - x.mean(axis=0)) / s) ** 3, axis=0)


def adjusted_excess_kurtosis(x: np.ndarray) -> np.ndarray:
    """Bias-corrected excess kurtosis G2 per column."""
    n = x.shape[0]
    dev = x - x.mean(axis=0)
    m2 = np.mean(dev**2, axis=0)
    m4 = np.mean(dev**4, axis=0)
    g2 = m4 / m2**2 - 3.0
    return (n - 1) / ((n - 2) * (n - 3)) * ((n + 1) * g2 + 6.0)


def normality_report(batch: LatentBatch | np.ndarray) -> NormalityReport:
    x = batch.latents if isinstance(batch, LatentBatch) else np.asarray(batch, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[0] < 4:
        raise ValueError("normality report needs at least four latents")
    if np.any(x.std(axis=0) <= 1e-12 * (1.0 + np.abs(x.mean(axis=0)))):
        raise ValueError("zero variance in at least one dimension")
    return NormalityReport(adjusted_skewness(x), adjusted_excess_kurtosis(x))


# -- distances --------------------------------------------------------------


def _as_points(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a.reshape(-1, 1) if a.ndim == 1 else a


def energy_distance(a, b) -> float:
    """``2 E|A-B| - E|A-A'| - E|B-B'|`` with all three means over every ordered pair.

    Including the zero self-pairs makes this the V-statistic, which is
    non-negative and vanishes for identical multisets.
    """
    a, b = _as_points(a), _as_points(b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("point sets must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise ValueError("point sets differ in dimension")
    ab = cdist(a, b).mean()
    aa = cdist(a, a).mean()
    bb = cdist(b, b).mean()
    return float(max(2.0 * ab - aa - bb, 0.0))


def wasserstein1_per_dim(a, b) -> np.ndarray:
    """1-Wasserstein distance per coordinate (equal sizes, by sorting)."""
    a, b = _as_points(a), _as_points(b)
    if a.shape != b.shape:
        raise ValueError("sorting estimator needs equally sized sets")
    return np.mean(np.abs(np.sort(a, axis=0) - np.sort(b, axis=0)), axis=0)


def classwise_energy_distance(distilled: Dataset, full: Dataset) -> float:
    """Mean over classes of the energy distance between distilled and full points."""
    return float(np.mean([
        energy_distance(distilled.class_points(c), full.class_points(c)) for c in distilled.classes()
    ]))


# -- round trips and sweeps -------------------------------------------------


def round_trip_errors(data: Dataset, spec: GmmSpec, schedule: NoiseSchedule) -> np.ndarray:
    """Per-point relative L2 error of ``sample(invert(x))``, in dataset order."""
    eps = epsilon_fn(spec)
    out = np.empty(len(data))
    for c in data.classes():
        sel = data.labels == c
        x = data.points[sel]
        back = sample(invert(LatentBatch(x, c, 0), schedule, eps), schedule, eps).latents
        out[sel] = np.linalg.norm(back - x, axis=1) / np.linalg.norm(x, axis=1)
    return out


def inverted_normality(data: Dataset, spec: GmmSpec, schedule: NoiseSchedule) -> float:
    """Class-averaged normality aggregate of the batch at the terminal step."""
    eps = epsilon_fn(spec)
    return float(np.mean([
        normality_report(invert(LatentBatch(data.class_points(c), c, 0), schedule, eps)).aggregate
        for c in data.classes()
    ]))


def distill_accuracy(data: Dataset, test: Dataset, spec: GmmSpec, config: DistillConfig,
                     train_config: TrainConfig = TrainConfig()):
    """Distil, train on the distilled points, evaluate; returns (accuracy, distilled)."""
    distilled = distill_dataset(data, spec, config)
    model = train_classifier(distilled.as_dataset(), train_config, n_classes=spec.n_classes)
    return evaluate_classifier(model, test), distilled


SWEEP_HEADER = ("K", "normality", "median_round_trip_error", "accuracy")


@dataclass(frozen=True)
class SweepRow:
    K: int
    normality: float
    median_round_trip_error: float
    accuracy: float


def timestep_sweep(
    data: Dataset,
    test: Dataset,
    spec: GmmSpec,
    k_values: Iterable[int],
    config: DistillConfig = DistillConfig(),
    train_config: TrainConfig = TrainConfig(),
    terminal_step: int | None = None,
    seeds: Sequence[int] | None = None,
) -> list[SweepRow]:
    """One row per K: normality at the terminal step, round-trip error, accuracy.

    Accuracy is averaged over ``seeds`` (default: just ``config.seed``); the
    other two columns do not depend on the seed.
    """
    base = config.schedule
    seeds = [config.seed] if seeds is None else list(seeds)
    k_values = [int(K) for K in k_values]
    if any(K < 1 for K in k_values):
        raise ValueError("K values must be >= 1")
    rows = []
    for K in k_values:
        sched = build_schedule(base.train_steps, base.beta_start, base.beta_end, K, terminal_step)
        acc = float(np.mean([
            distill_accuracy(data, test, spec, replace(config, schedule=sched, seed=int(s)), train_config)[0]
            for s in seeds
        ]))
        rows.append(SweepRow(
            K,
            inverted_normality(data, spec, sched),
            float(np.median(round_trip_errors(data, spec, sched))),
            acc,
        ))
    return rows


# -- ablations --------------------------------------------------------------

# every non-empty combination of the three loss terms (mu, sigma, skew)
WEIGHT_GRID = {
    "L_mu": (1.0, 0.0, 0.0),
    "L_sigma": (0.0, 1.0, 0.0),
    "L_skew": (0.0, 0.0, 0.5),
    "L_mu+L_sigma": (1.0, 1.0, 0.0),
    "L_mu+L_skew": (1.0, 0.0, 0.5),
    "L_sigma+L_skew": (0.0, 1.0, 0.5),
    "L_mu+L_sigma+L_skew": (1.0, 1.0, 0.5),
}


@dataclass
class EvalReport:
    mode: str
    accuracy: float
    energy_distance: float
    normality: float | None = None
    label: str = ""
    per_seed: list = field(default_factory=list)

    def __post_init__(self):
        if not (0.0 <= self.accuracy <= 1.0):
            raise ValueError("accuracy must lie in [0, 1]")
        if self.energy_distance < 0:
            raise ValueError("energy distance must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        return _round_floats(d)


@dataclass(frozen=True)
class AblationSummary:
    label: str
    mode: str
    weights: tuple
    accuracy_mean: float
    accuracy_std: float
    energy_mean: float
    energy_std: float
    reports: tuple

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([r.accuracy for r in self.reports])


ABLATION_HEADER = ("label", "mode", "w_mu", "w_sigma", "w_skew", "seeds",
                   "accuracy_mean", "accuracy_std", "energy_mean", "energy_std")


def evaluate_distilled(distilled, full: Dataset, test: Dataset, spec: GmmSpec,
                       train_config: TrainConfig = TrainConfig(), label: str = "") -> EvalReport:
    ds = distilled.as_dataset()
    model = train_classifier(ds, train_config, n_classes=spec.n_classes)
    return EvalReport(
        mode=distilled.mode,
        accuracy=evaluate_classifier(model, test),
        energy_distance=classwise_energy_distance(ds, full),
        label=label or distilled.mode,
        per_seed=[{"seed": distilled.provenance.get("seed")}],
    )


def ablation_run(
    data: Dataset,
    test: Dataset,
    spec: GmmSpec,
    config: DistillConfig,
    seeds: Sequence[int],
    modes: Sequence[str] = MODES,
    weight_grid: bool = False,
    train_config: TrainConfig = TrainConfig(),
) -> list[AblationSummary]:
    """Evaluate each mode (and optionally each loss-term combination) over seeds.

    Distillation seeds vary; the training and test sets stay fixed so runs
    are paired by seed.
    """
    if len(seeds) < 2:
        raise ValueError("ablation needs at least two seeds")
    cells = [(m, m, config.weights) for m in modes]
    if weight_grid:
        cells += [(name, "group", w) for name, w in WEIGHT_GRID.items()]
    out = []
    for label, mode, w in cells:
        reports = []
        for s in seeds:
            cfg = replace(config, mode=mode, weights=w, seed=int(s))
            distilled = distill_dataset(data, spec, cfg)
            reports.append(evaluate_distilled(distilled, data, test, spec, train_config, label))
        acc = np.array([r.accuracy for r in reports])
        en = np.array([r.energy_distance for r in reports])
        out.append(AblationSummary(label, mode, tuple(w), float(acc.mean()), float(acc.std(ddof=1)),
                                   float(en.mean()), float(en.std(ddof=1)), tuple(reports)))
    return out


# -- serialisation ------------------------------------------------------------


def _round_floats(obj):
    if isinstance(obj, float):
        return float(fmt9(obj))
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt9(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    return _csv(SWEEP_HEADER, [(r.K, r.normality, r.median_round_trip_error, r.accuracy) for r in rows])


def ablation_csv(rows: Sequence[AblationSummary]) -> str:
    return _csv(ABLATION_HEADER, [
        (r.label, r.mode, *(float(x) for x in r.weights), len(r.reports),
         r.accuracy_mean, r.accuracy_std, r.energy_mean, r.energy_std)
        for r in rows
    ])


REPORT_HEADER = ("mode", "accuracy", "energy_distance", "normality")


def report_csv(reports: Sequence[EvalReport]) -> str:
    return _csv(REPORT_HEADER, [
        (r.mode, r.accuracy, r.energy_distance, "" if r.normality is None else r.normality) for r in reports
    ])
