"""Local model training for the learner-analytics pipeline.

Implements the client-side training flow: standardize raw tracking features,
derive High/Low-Performer labels by 2-means clustering on average measure
scores, fit a logistic-regression classifier by full-batch gradient descent,
and report accuracy, feature significance and k-fold cross-validation scores.

Everything here is deterministic given the input data and a TrainConfig:
parameters start at zero (or an explicit warm start), clustering and fold
assignment draw from a seeded generator, and no wall-clock state is consulted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .scoring import (
    Granularity,
    TrackingSnapshot,
    average_score,
    compute_measure_vector,
)

FEATURE_COLUMNS = ("D", "T", "P", "S", "C", "Q", "R", "F")
MEASURE_COLUMNS = ("conscientiousness", "motivation", "understanding", "engagement")

CSV_HEADER = ("learner_id", "period_index") + FEATURE_COLUMNS


class TrainerError(ValueError):
    """Invalid input to a training operation."""


class DegenerateDataError(TrainerError):
    """Data cannot support the requested fit (e.g. all points identical)."""


class DivergenceError(TrainerError):
    """Optimization produced a non-finite loss."""


class PerformanceLabel(IntEnum):
    LOW_PERFORMER = 0
    HIGH_PERFORMER = 1


@dataclass(frozen=True)
class FeatureMatrix:
    """Rectangular feature table, one row per learner-period."""

    values: np.ndarray
    granularity: Granularity
    columns: tuple[str, ...] = FEATURE_COLUMNS

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise TrainerError(f"feature matrix must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1:
            raise TrainerError("feature matrix needs at least one row")
        if values.shape[1] != len(self.columns):
            raise TrainerError(
                f"matrix has {values.shape[1]} columns but {len(self.columns)} names"
            )
        if not np.isfinite(values).all():
            raise TrainerError("feature matrix contains non-finite values")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]


def snapshots_to_matrix(
    snapshots: list[TrackingSnapshot], feature_kind: str = "raw"
) -> FeatureMatrix:
    """Build a FeatureMatrix from snapshots.

    feature_kind "raw" uses the eight tracking variables; "measures" uses the
    four derived learning measures instead.
    """
    if not snapshots:
        raise TrainerError("no snapshots given")
    granularities = {s.granularity for s in snapshots}
    if len(granularities) != 1:
        raise TrainerError("weekly and daily snapshots must not mix in one dataset")
    granularity = granularities.pop()
    if feature_kind == "raw":
        rows = [s.feature_row() for s in snapshots]
        return FeatureMatrix(np.array(rows), granularity, FEATURE_COLUMNS)
    if feature_kind == "measures":
        rows = [compute_measure_vector(s).as_tuple() for s in snapshots]
        return FeatureMatrix(np.array(rows), granularity, MEASURE_COLUMNS)
    raise TrainerError(f"unknown feature_kind {feature_kind!r}")


def average_scores(snapshots: list[TrackingSnapshot]) -> np.ndarray:
    """Per-row average learning-measure score, the clustering input."""
    return np.array([average_score(compute_measure_vector(s)) for s in snapshots])


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Standardizer:
    """Per-column mean and population standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, n_cols: int) -> "Standardizer":
        return cls(np.zeros(n_cols), np.ones(n_cols))


def standardize_fit(m: FeatureMatrix) -> Standardizer:
    """Capture column-wise mean and population stddev of the matrix."""
    x = m.values
    return Standardizer(mean=x.mean(axis=0), std=x.std(axis=0, ddof=0))


def standardize_apply(z: Standardizer, m: FeatureMatrix) -> FeatureMatrix:
    """Map each cell x to (x - mean) / std; constant columns map to 0."""
    if z.mean.shape[0] != m.n_cols:
        raise TrainerError(
            f"standardizer has {z.mean.shape[0]} columns, matrix has {m.n_cols}"
        )
    safe_std = np.where(z.std == 0.0, 1.0, z.std)
    out = (m.values - z.mean) / safe_std
    out[:, z.std == 0.0] = 0.0
    return FeatureMatrix(out, m.granularity, m.columns)


# ---------------------------------------------------------------------------
# Performance clustering (1-D, k = 2)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: np.ndarray  # sorted ascending after fit
    iterations_run: int
    inertia: float
    inertia_history: tuple[float, ...] = field(default=(), repr=False)


def _inertia(x: np.ndarray, centroids: np.ndarray, assign: np.ndarray) -> float:
    return float(((x - centroids[assign]) ** 2).sum())


def kmeans_fit(
    avg_scores,
    seed: int,
    *,
    max_iter: int = 300,
    tol: float = 1e-8,
) -> tuple[ClusterModel, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding on 1-D average scores, k=2.

    Stops when the largest centroid shift falls below `tol` or after
    `max_iter` iterations. Assignments pick the nearest centroid, ties going
    to the lower-indexed one. Centroids are sorted ascending before return.
    """
    x = np.asarray(avg_scores, dtype=np.float64)
    if x.ndim != 1:
        raise TrainerError("avg_scores must be one-dimensional")
    if not np.isfinite(x).all():
        raise TrainerError("avg_scores contains non-finite values")
    if np.unique(x).size < 2:
        raise DegenerateDataError("k-means needs at least 2 distinct values")

    rng = np.random.default_rng(seed)
    # k-means++ for k=2: first centroid uniform, second with prob ~ d^2.
    first = x[rng.integers(x.size)]
    d2 = (x - first) ** 2
    second = x[rng.choice(x.size, p=d2 / d2.sum())]
    centroids = np.array([first, second], dtype=np.float64)

    history: list[float] = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        assign = np.argmin(np.abs(x[:, None] - centroids[None, :]), axis=1)
        history.append(_inertia(x, centroids, assign))
        new_centroids = centroids.copy()
        for j in range(2):
            members = x[assign == j]
            if members.size:
                new_centroids[j] = members.mean()
            else:
                # Empty cluster: reseed at the point farthest from the other centroid.
                other = centroids[1 - j]
                new_centroids[j] = x[np.argmax(np.abs(x - other))]
        shift = float(np.max(np.abs(new_centroids - centroids)))
        centroids = new_centroids
        if shift < tol:
            break

    centroids = np.sort(centroids)
    assign = np.argmin(np.abs(x[:, None] - centroids[None, :]), axis=1)
    model = ClusterModel(
        k=2,
        centroids=centroids,
        iterations_run=iterations,
        inertia=_inertia(x, centroids, assign),
        inertia_history=tuple(history),
    )
    return model, assign


def map_labels(model: ClusterModel, assignments) -> list[PerformanceLabel]:
    """Cluster with the larger centroid becomes HighPerformer."""
    high = int(np.argmax(model.centroids))
    return [
        PerformanceLabel.HIGH_PERFORMER if a == high else PerformanceLabel.LOW_PERFORMER
        for a in np.asarray(assignments)
    ]


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 200
    l2_lambda: float = 1e-3
    convergence_tol: float = 1e-7
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise TrainerError("learning_rate must be positive")
        if self.epochs < 1:
            raise TrainerError("epochs must be a positive integer")
        if self.l2_lambda < 0:
            raise TrainerError("l2_lambda must be non-negative")
        if self.convergence_tol <= 0:
            raise TrainerError("convergence_tol must be positive")
        if not 0 <= self.seed < 2**64:
            raise TrainerError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    bias: float
    trained_on: Granularity
    standardizer: Standardizer
    version: int = 0

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", weights)
        if not (np.isfinite(weights).all() and np.isfinite(self.bias)):
            raise TrainerError("model parameters must be finite")


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss(weights, bias, x, y, l2_lambda: float = 0.0) -> float:
    """Mean cross-entropy plus (l2/2)*||weights||^2; the bias is unregularized."""
    z = x @ weights + bias
    ce = np.logaddexp(0.0, z) - y * z
    return float(ce.mean() + 0.5 * l2_lambda * float(weights @ weights))


def logistic_gradient(weights, bias, x, y, l2_lambda: float = 0.0):
    """Analytic gradient of `logistic_loss` w.r.t. (weights, bias)."""
    residual = sigmoid(x @ weights + bias) - y
    gw = x.T @ residual / x.shape[0] + l2_lambda * weights
    gb = float(residual.mean())
    return gw, gb


def train_logistic(
    m: FeatureMatrix,
    labels,
    cfg: TrainConfig,
    *,
    standardizer: Standardizer | None = None,
    init: tuple[np.ndarray, float] | None = None,
    version: int = 0,
) -> LogisticModel:
    """Fit a logistic classifier by full-batch gradient descent.

    Parameters start at zero unless `init` supplies a warm start (used by the
    federated loop, which resumes from the distributed global model). Training
    stops after `cfg.epochs` epochs or as soon as the epoch-over-epoch loss
    improvement drops below `cfg.convergence_tol`.
    """
    x = m.values
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise TrainerError("labels must align one-to-one with matrix rows")
    if x.shape[0] < 2:
        raise TrainerError("training needs at least 2 rows")
    classes = np.unique(y)
    if not np.isin(classes, (0.0, 1.0)).all():
        raise TrainerError("labels must be 0 or 1")
    if classes.size < 2:
        raise TrainerError("training needs both classes present")

    if init is None:
        w = np.zeros(x.shape[1])
        b = 0.0
    else:
        w = np.array(init[0], dtype=np.float64, copy=True)
        b = float(init[1])
        if w.shape != (x.shape[1],):
            raise TrainerError("warm-start weights do not match column count")

    prev_loss = None
    for epoch in range(cfg.epochs):
        loss = logistic_loss(w, b, x, y, cfg.l2_lambda)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        gw, gb = logistic_gradient(w, b, x, y, cfg.l2_lambda)
        w = w - cfg.learning_rate * gw
        b = b - cfg.learning_rate * gb
        if prev_loss is not None and prev_loss - loss < cfg.convergence_tol:
            break
        prev_loss = loss

    if standardizer is None:
        standardizer = Standardizer.identity(x.shape[1])
    return LogisticModel(
        weights=w,
        bias=b,
        trained_on=m.granularity,
        standardizer=standardizer,
        version=version,
    )


def predict_proba(model: LogisticModel, row) -> float:
    """P(HighPerformer) for one feature row."""
    row = np.asarray(row, dtype=np.float64)
    if row.shape != model.weights.shape:
        raise TrainerError(
            f"row has {row.shape} entries, model expects {model.weights.shape}"
        )
    return float(sigmoid(row @ model.weights + model.bias))


def predict(model: LogisticModel, row, threshold: float = 0.5) -> PerformanceLabel:
    """HighPerformer iff predicted probability >= threshold."""
    if predict_proba(model, row) >= threshold:
        return PerformanceLabel.HIGH_PERFORMER
    return PerformanceLabel.LOW_PERFORMER


def predict_matrix(model: LogisticModel, m: FeatureMatrix, threshold: float = 0.5):
    """Vectorized predict over every row of a matrix."""
    if m.n_cols != model.weights.shape[0]:
        raise TrainerError("matrix column count does not match model")
    proba = sigmoid(m.values @ model.weights + model.bias)
    return (proba >= threshold).astype(np.int64)


def accuracy(model: LogisticModel, m: FeatureMatrix, labels) -> float:
    """Fraction of rows whose prediction matches the given label."""
    y = np.asarray(labels, dtype=np.int64)
    if y.shape[0] != m.n_rows:
        raise TrainerError("labels must align one-to-one with matrix rows")
    return float((predict_matrix(model, m) == y).mean())


def feature_significance(
    model: LogisticModel, columns: tuple[str, ...] | None = None
) -> list[tuple[str, float]]:
    """Features ranked by |weight| descending; ties keep column order."""
    if columns is None:
        d = model.weights.shape[0]
        columns = FEATURE_COLUMNS if d == len(FEATURE_COLUMNS) else tuple(
            f"x{i}" for i in range(d)
        )
    if len(columns) != model.weights.shape[0]:
        raise TrainerError("column names do not match weight count")
    ranked = sorted(
        ((name, abs(float(w))) for name, w in zip(columns, model.weights)),
        key=lambda item: -item[1],
    )
    return ranked


def pack_params(weights, bias: float) -> np.ndarray:
    """Flatten (weights, bias) into the wire parameter vector, bias last."""
    return np.concatenate([np.asarray(weights, dtype=np.float64), [float(bias)]])


def unpack_params(params) -> tuple[np.ndarray, float]:
    """Inverse of pack_params."""
    params = np.asarray(params, dtype=np.float64)
    if params.size < 2:
        raise TrainerError("parameter vector needs at least one weight and a bias")
    return params[:-1], float(params[-1])


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldResult:
    fold_index: int
    accuracy: float | None
    failed: bool
    n_test: int


@dataclass(frozen=True)
class CrossValidation:
    mean_accuracy: float
    std_accuracy: float
    folds: tuple[FoldResult, ...]


def _stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Assign rows to folds: per-class seeded shuffle, then one continuing
    round-robin deal across classes so every fold is filled even when a class
    has fewer members than folds."""
    rng = np.random.default_rng(seed)
    assignment = np.empty(y.shape[0], dtype=np.int64)
    next_fold = 0
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        for i in idx:
            assignment[i] = next_fold % folds
            next_fold += 1
    return assignment


def cross_validate(
    m: FeatureMatrix, labels, folds: int, cfg: TrainConfig
) -> CrossValidation:
    """Seeded stratified k-fold accuracy of the logistic classifier.

    A fold whose training complement contains a single class is reported as
    failed and excluded from the mean and stddev.
    """
    y = np.asarray(labels, dtype=np.int64)
    if folds < 2:
        raise TrainerError("folds must be at least 2")
    if folds > m.n_rows:
        raise TrainerError(f"folds={folds} exceeds row count {m.n_rows}")
    if y.shape[0] != m.n_rows:
        raise TrainerError("labels must align one-to-one with matrix rows")

    assignment = _stratified_folds(y, folds, cfg.seed)
    results: list[FoldResult] = []
    for k in range(folds):
        test_mask = assignment == k
        train_mask = ~test_mask
        y_train = y[train_mask]
        if np.unique(y_train).size < 2:
            results.append(FoldResult(k, None, True, int(test_mask.sum())))
            continue
        sub = FeatureMatrix(m.values[train_mask], m.granularity, m.columns)
        model = train_logistic(sub, y_train, cfg)
        test = FeatureMatrix(m.values[test_mask], m.granularity, m.columns)
        acc = accuracy(model, test, y[test_mask])
        results.append(FoldResult(k, acc, False, int(test_mask.sum())))

    scores = [r.accuracy for r in results if not r.failed]
    if not scores:
        raise TrainerError("every fold failed: training data is single-class")
    arr = np.asarray(scores)
    return CrossValidation(
        mean_accuracy=float(arr.mean()),
        std_accuracy=float(arr.std(ddof=0)),
        folds=tuple(results),
    )


# ---------------------------------------------------------------------------
# Local pipeline and CSV interface
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LocalFit:
    """Everything a client produces in one local training pass."""

    matrix: FeatureMatrix  # standardized
    standardizer: Standardizer
    cluster_model: ClusterModel
    labels: np.ndarray
    model: LogisticModel
    train_accuracy: float


def fit_local_model(
    snapshots: list[TrackingSnapshot],
    cfg: TrainConfig,
    *,
    feature_kind: str = "raw",
    init: tuple[np.ndarray, float] | None = None,
    version: int = 0,
) -> LocalFit:
    """Standardize, cluster into High/Low performers, and fit the classifier."""
    raw = snapshots_to_matrix(snapshots, feature_kind)
    standardizer = standardize_fit(raw)
    standardized = standardize_apply(standardizer, raw)
    cluster, assign = kmeans_fit(average_scores(snapshots), cfg.seed)
    labels = np.asarray(map_labels(cluster, assign), dtype=np.int64)
    model = train_logistic(
        standardized, labels, cfg, standardizer=standardizer, init=init, version=version
    )
    return LocalFit(
        matrix=standardized,
        standardizer=standardizer,
        cluster_model=cluster,
        labels=labels,
        model=model,
        train_accuracy=accuracy(model, standardized, labels),
    )


def read_snapshot_csv(
    path, granularity: Granularity = Granularity.WEEKLY
) -> list[TrackingSnapshot]:
    """Load snapshots from the documented CSV layout.

    Header row must be: learner_id, period_index, D, T, P, S, C, Q, R, F.
    """
    path = Path(path)
    snapshots: list[TrackingSnapshot] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise TrainerError(
                f"{path}: expected header {','.join(CSV_HEADER)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise TrainerError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields")
            snapshots.append(
                TrackingSnapshot(
                    learner_id=row[0],
                    period_index=int(row[1]),
                    logins_streak_days=int(float(row[2])),
                    time_spent_hours=float(row[3]),
                    page_visits=int(float(row[4])),
                    search_queries=int(float(row[5])),
                    activity_completion_pct=float(row[6]),
                    quiz_avg_pct=float(row[7]),
                    reaction_ratio=float(row[8]),
                    feedback_avg=float(row[9]),
                    granularity=granularity,
                )
            )
    if not snapshots:
        raise TrainerError(f"{path}: no data rows")
    return snapshots


def write_snapshot_csv(path, snapshots: list[TrackingSnapshot]) -> None:
    """Write snapshots in the layout `read_snapshot_csv` accepts."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for s in snapshots:
            writer.writerow(
                [s.learner_id, s.period_index]
                + [f"{v:.9g}" for v in s.feature_row()]
            )
