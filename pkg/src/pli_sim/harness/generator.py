"""Synthetic learner generation from behavioral archetypes.

Each archetype samples the eight tracking variables from simple per-variable
distributions chosen so that high- and low-engagement learners land in
clearly separated score bands. A learner's generator is seeded from the
master seed, the owning role (client index or "validation") and the learner
index, so datasets are reproducible and adding clients never disturbs
existing ones. Draw order per learner is fixed: one archetype draw, then the
eight variables in column order for each week.

Archetype tendencies are generator ground truth; they are recorded for
evaluation only and never used as training labels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..scoring import Granularity, TrackingSnapshot, TrackingVariable
from .seeds import derive_seed

_VAR_ORDER = (
    TrackingVariable.D,
    TrackingVariable.T,
    TrackingVariable.P,
    TrackingVariable.S,
    TrackingVariable.C,
    TrackingVariable.Q,
    TrackingVariable.R,
    TrackingVariable.F,
)

# Legal sampling ranges per variable; draws outside are rejection-resampled.
_DOMAIN = {
    TrackingVariable.D: (0.0, float("inf")),
    TrackingVariable.T: (0.0, float("inf")),
    TrackingVariable.P: (0.0, float("inf")),
    TrackingVariable.S: (0.0, float("inf")),
    TrackingVariable.C: (0.0, 100.0),
    TrackingVariable.Q: (0.0, 100.0),
    TrackingVariable.R: (0.0, float("inf")),
    TrackingVariable.F: (0.0, 10.0),
}

_INT_VARS = {TrackingVariable.D, TrackingVariable.P, TrackingVariable.S}


@dataclass(frozen=True)
class VariableDist:
    """One variable's sampling distribution: integer or continuous uniform."""

    kind: str  # "int_uniform" | "uniform"
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if self.kind not in ("int_uniform", "uniform"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.hi < self.lo:
            raise ValueError("hi must be >= lo")

    def sample(self, rng: np.random.Generator, domain: tuple[float, float]) -> float:
        lo, hi = domain
        for _ in range(1000):
            if self.kind == "int_uniform":
                value = float(rng.integers(int(round(self.lo)), int(round(self.hi)) + 1))
            else:
                value = float(rng.uniform(self.lo, self.hi))
            if lo <= value <= hi:
                return value
        raise ValueError(f"could not sample within domain [{lo}, {hi}] from {self}")


@dataclass(frozen=True)
class ArchetypeSpec:
    name: str
    dists: tuple[tuple[TrackingVariable, VariableDist], ...]
    label_tendency: str  # "High" | "Low"

    def __post_init__(self) -> None:
        if self.label_tendency not in ("High", "Low"):
            raise ValueError("label_tendency must be 'High' or 'Low'")
        if tuple(v for v, _ in self.dists) != _VAR_ORDER:
            raise ValueError("dists must cover all eight variables in canonical order")

    def dist_of(self, variable: TrackingVariable) -> VariableDist:
        return dict(self.dists)[variable]


def _spec(name: str, tendency: str, table: dict[TrackingVariable, VariableDist]) -> ArchetypeSpec:
    return ArchetypeSpec(
        name=name,
        dists=tuple((v, table[v]) for v in _VAR_ORDER),
        label_tendency=tendency,
    )


def default_archetypes() -> tuple[ArchetypeSpec, ...]:
    """The stock HighEngaged / LowEngaged pair used by the default config."""
    high = _spec(
        "HighEngaged",
        "High",
        {
            TrackingVariable.D: VariableDist("int_uniform", 3, 7),
            TrackingVariable.T: VariableDist("uniform", 8, 20),
            TrackingVariable.P: VariableDist("int_uniform", 3, 6),
            TrackingVariable.S: VariableDist("int_uniform", 3, 8),
            TrackingVariable.C: VariableDist("uniform", 61, 100),
            TrackingVariable.Q: VariableDist("uniform", 71, 100),
            TrackingVariable.R: VariableDist("uniform", 4, 8),
            TrackingVariable.F: VariableDist("uniform", 6, 10),
        },
    )
    low = _spec(
        "LowEngaged",
        "Low",
        {
            TrackingVariable.D: VariableDist("int_uniform", 0, 2),
            TrackingVariable.T: VariableDist("uniform", 0, 4),
            TrackingVariable.P: VariableDist("int_uniform", 0, 2),
            TrackingVariable.S: VariableDist("int_uniform", 0, 2),
            TrackingVariable.C: VariableDist("uniform", 0, 40),
            TrackingVariable.Q: VariableDist("uniform", 0, 55),
            TrackingVariable.R: VariableDist("uniform", 0, 2),
            TrackingVariable.F: VariableDist("uniform", 0, 4),
        },
    )
    return (high, low)


def drift_archetypes(
    archetypes: Iterable[ArchetypeSpec], factor: float
) -> tuple[ArchetypeSpec, ...]:
    """Move every archetype toward the across-archetype midpoint by `factor`.

    factor 0 returns parameters unchanged; factor 1 collapses all archetypes
    onto the common midpoint (tendencies become indistinguishable).
    """
    if not 0.0 <= factor <= 1.0:
        raise ValueError("drift factor must lie in [0, 1]")
    specs = list(archetypes)
    shifted = []
    for spec in specs:
        new_dists = []
        for variable, dist in spec.dists:
            others_lo = np.mean([s.dist_of(variable).lo for s in specs])
            others_hi = np.mean([s.dist_of(variable).hi for s in specs])
            new_dists.append(
                (
                    variable,
                    VariableDist(
                        dist.kind,
                        dist.lo + factor * (others_lo - dist.lo),
                        dist.hi + factor * (others_hi - dist.hi),
                    ),
                )
            )
        shifted.append(
            ArchetypeSpec(spec.name, tuple(new_dists), spec.label_tendency)
        )
    return tuple(shifted)


@dataclass(frozen=True)
class ArchetypeSchedule:
    """Archetype parameters as a function of week (supports one drift point)."""

    base: tuple[ArchetypeSpec, ...]
    drift_week: int | None = None
    drift_factor: float = 0.0

    def at_week(self, week: int) -> tuple[ArchetypeSpec, ...]:
        if self.drift_week is None or week < self.drift_week or self.drift_factor == 0.0:
            return self.base
        return self._drifted

    @property
    def _drifted(self) -> tuple[ArchetypeSpec, ...]:
        cached = getattr(self, "_drifted_cache", None)
        if cached is None:
            cached = drift_archetypes(self.base, self.drift_factor)
            object.__setattr__(self, "_drifted_cache", cached)
        return cached


@dataclass(frozen=True)
class LearnerRecord:
    learner_id: str
    archetype: str
    tendency: str
    snapshots: tuple[TrackingSnapshot, ...]  # one per week, in week order


@dataclass(frozen=True)
class GeneratedDataset:
    role: str
    learners: tuple[LearnerRecord, ...]

    def window_rows(self, start_week: int, end_week: int):
        """Snapshots and ground-truth labels for weeks in [start, end)."""
        snapshots: list[TrackingSnapshot] = []
        truth: list[int] = []
        for learner in self.learners:
            for snap in learner.snapshots[start_week:end_week]:
                snapshots.append(snap)
                truth.append(1 if learner.tendency == "High" else 0)
        return snapshots, np.asarray(truth, dtype=np.int64)


def _pick_archetype(
    rng: np.random.Generator, mix: tuple[tuple[str, float], ...],
    by_name: dict[str, ArchetypeSpec],
) -> ArchetypeSpec:
    draw = rng.random()
    cumulative = 0.0
    for name, proportion in mix:
        cumulative += proportion
        if draw < cumulative:
            return by_name[name]
    return by_name[mix[-1][0]]


def generate_dataset(
    master_seed: int,
    role: str,
    n_learners: int,
    weeks: int,
    mix: tuple[tuple[str, float], ...],
    schedule: ArchetypeSchedule,
) -> GeneratedDataset:
    """Sample one role's learners deterministically from the master seed."""
    by_name = {spec.name: spec for spec in schedule.base}
    unknown = [name for name, _ in mix if name not in by_name]
    if unknown:
        raise ValueError(f"archetype_mix names unknown archetypes: {unknown}")
    effective = [by_name[name] for name, p in mix if p > 0]
    if len(effective) == 1 and all(
        dist.lo == dist.hi for _, dist in effective[0].dists
    ):
        warnings.warn(
            f"archetype mix for {role!r} is a single zero-variance archetype; "
            "every learner will be identical",
            stacklevel=2,
        )
    learners = []
    for li in range(n_learners):
        rng = np.random.default_rng(derive_seed(master_seed, role, li))
        base_arch = _pick_archetype(rng, mix, by_name)
        snapshots = []
        for week in range(weeks):
            current = {s.name: s for s in schedule.at_week(week)}[base_arch.name]
            values = {
                variable: dist.sample(rng, _DOMAIN[variable])
                for variable, dist in current.dists
            }
            snapshots.append(
                TrackingSnapshot(
                    logins_streak_days=int(values[TrackingVariable.D]),
                    time_spent_hours=values[TrackingVariable.T],
                    page_visits=int(values[TrackingVariable.P]),
                    search_queries=int(values[TrackingVariable.S]),
                    activity_completion_pct=values[TrackingVariable.C],
                    quiz_avg_pct=values[TrackingVariable.Q],
                    reaction_ratio=values[TrackingVariable.R],
                    feedback_avg=values[TrackingVariable.F],
                    learner_id=f"{role}-L{li:04d}",
                    period_index=week,
                    granularity=Granularity.WEEKLY,
                )
            )
        learners.append(
            LearnerRecord(
                learner_id=f"{role}-L{li:04d}",
                archetype=base_arch.name,
                tendency=base_arch.label_tendency,
                snapshots=tuple(snapshots),
            )
        )
    return GeneratedDataset(role=role, learners=tuple(learners))
