"""Model comparison and hyperparameter search over full simulation runs."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from ..trainer import (
    LogisticModel,
    accuracy,
    average_scores,
    kmeans_fit,
    map_labels,
    snapshots_to_matrix,
    standardize_apply,
)
from .config import SimConfig
from .simulation import run_simulation


@dataclass(frozen=True)
class ABReport:
    accuracy_a: float
    accuracy_b: float
    delta: float
    winner: str  # "a" | "b" | "tie"
    n: int


def ab_test(
    model_a: LogisticModel,
    model_b: LogisticModel,
    snapshots,
    labels=None,
) -> ABReport:
    """Evaluate two models on the identical held-out set.

    Each model standardizes the raw features with the standardizer it was
    trained with. When labels are not supplied they are derived through the
    usual clustering pipeline (seed 0) so the comparison needs nothing beyond
    raw tracking data.
    """
    if model_a.weights.shape != model_b.weights.shape:
        raise ValueError("models have different parameter dimensionality")
    if not snapshots:
        raise ValueError("evaluation set is empty")
    feature_kind = "raw" if model_a.weights.shape[0] == 8 else "measures"
    raw = snapshots_to_matrix(snapshots, feature_kind)
    if labels is None:
        cluster, assign = kmeans_fit(average_scores(snapshots), seed=0)
        labels = np.asarray(map_labels(cluster, assign), dtype=np.int64)
    else:
        labels = np.asarray(labels, dtype=np.int64)

    acc_a = accuracy(model_a, standardize_apply(model_a.standardizer, raw), labels)
    acc_b = accuracy(model_b, standardize_apply(model_b.standardizer, raw), labels)
    if acc_a > acc_b:
        winner = "a"
    elif acc_b > acc_a:
        winner = "b"
    else:
        winner = "tie"
    return ABReport(acc_a, acc_b, acc_a - acc_b, winner, raw.n_rows)


@dataclass(frozen=True)
class SweepEntry:
    grid_index: int
    params: dict
    final_accuracy: float | None
    effective_epochs: int
    accepted_rounds: int
    error: str | None = None


def expand_grid(grid: dict[str, list]) -> list[dict]:
    """Cartesian product of the grid, in file order."""
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def hyperparameter_sweep(grid: dict[str, list], cfg: SimConfig) -> list[SweepEntry]:
    """One full deterministic run per grid point, ranked by final accuracy.

    Every point runs with the unchanged master seed so runs differ only in
    the swept training fields (duplicate points therefore score identically,
    and a singleton grid reproduces run_simulation for that TrainConfig).
    Ties rank by lower epochs, then grid order. Per-point failures are
    recorded and the sweep continues.
    """
    points = expand_grid(grid)
    if not points:
        raise ValueError("empty grid")
    entries: list[SweepEntry] = []
    for index, point in enumerate(points):
        train = replace(cfg.train, **point)
        run_cfg = replace(cfg, train=train, output_dir=None)
        try:
            result = run_simulation(run_cfg)
        except Exception as exc:
            entries.append(
                SweepEntry(index, point, None, train.epochs, 0, error=str(exc))
            )
            continue
        entries.append(
            SweepEntry(
                grid_index=index,
                params=point,
                final_accuracy=result.validation_accuracy,
                effective_epochs=train.epochs,
                accepted_rounds=sum(1 for r in result.records if r.accepted),
            )
        )
    entries.sort(
        key=lambda e: (
            -(e.final_accuracy if e.final_accuracy is not None else -1.0),
            e.effective_epochs,
            e.grid_index,
        )
    )
    return entries
