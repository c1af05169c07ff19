"""Behavioral scoring of DLE tracking variables.

Eight per-period tracking variables describe a learner's interaction with a
digital learning environment: login streak days (D), hours spent (T), page
visits (P), search queries (S), activity completion percent (C), quiz average
percent (Q), positive:negative reaction ratio (R) and mean feedback score (F).
Each variable maps into a banded score, and fixed variable pairs average into
four learning measures on a 0-10 scale:

    conscientiousness <- D, T
    motivation        <- P, S
    understanding     <- C, Q
    engagement        <- R, F

Bins are lower-inclusive. Values strictly below a variable's lowest band score
0 (no activity is distinguishable from Low); open-ended top bands extend to
infinity. C and Q reserve the top band for exactly 100 percent, with a
VeryHigh band just below it.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum
import math

__all__ = [
    "Band",
    "Granularity",
    "MeasureScore",
    "MeasureVector",
    "ScoreDomainError",
    "TrackingSnapshot",
    "TrackingVariable",
    "MEASURE_PAIRS",
    "average_score",
    "compute_measure_vector",
    "score_variable",
]


class ScoreDomainError(ValueError):
    """A tracking value lies outside its variable's legal domain."""


class Granularity(Enum):
    WEEKLY = "weekly"
    DAILY = "daily"


class TrackingVariable(Enum):
    D = "D"  # login streak days
    T = "T"  # time spent, hours
    P = "P"  # page visits
    S = "S"  # search queries
    C = "C"  # activity completion percent
    Q = "Q"  # quiz average percent
    R = "R"  # reaction ratio, positive:negative
    F = "F"  # feedback average, 0-10


class Band(Enum):
    NONE = 0
    LOW = 2
    MODERATE = 4
    HIGH = 6
    VERY_HIGH = 8
    EXCEPTIONAL = 10


@dataclass(frozen=True)
class MeasureScore:
    value: int
    band: Band

    def __post_init__(self) -> None:
        if Band(self.value) is not self.band:
            raise ValueError(f"score {self.value} does not match band {self.band.name}")

    @classmethod
    def from_band(cls, band: Band) -> "MeasureScore":
        return cls(band.value, band)


# Lower-inclusive bin bounds per variable: (lower bound, band). A value picks
# the band of the greatest bound not exceeding it; below the first bound -> NONE.
_BIN_TABLE: dict[TrackingVariable, tuple[tuple[float, Band], ...]] = {
    TrackingVariable.D: (
        (1, Band.LOW), (2, Band.MODERATE), (3, Band.HIGH), (4, Band.EXCEPTIONAL),
    ),
    TrackingVariable.T: (
        (1, Band.LOW), (4, Band.MODERATE), (8, Band.HIGH), (13, Band.EXCEPTIONAL),
    ),
    TrackingVariable.P: (
        (1, Band.LOW), (2, Band.MODERATE), (3, Band.HIGH), (4, Band.EXCEPTIONAL),
    ),
    TrackingVariable.S: (
        (1, Band.LOW), (2, Band.MODERATE), (4, Band.HIGH), (6, Band.EXCEPTIONAL),
    ),
    TrackingVariable.C: (
        (1, Band.LOW), (21, Band.MODERATE), (61, Band.HIGH),
        (91, Band.VERY_HIGH), (100, Band.EXCEPTIONAL),
    ),
    TrackingVariable.Q: (
        (1, Band.LOW), (51, Band.MODERATE), (71, Band.HIGH),
        (91, Band.VERY_HIGH), (100, Band.EXCEPTIONAL),
    ),
    TrackingVariable.R: (
        (1, Band.LOW), (2, Band.MODERATE), (4, Band.HIGH), (7, Band.EXCEPTIONAL),
    ),
    TrackingVariable.F: (
        (1, Band.LOW), (4, Band.MODERATE), (6, Band.HIGH), (8, Band.EXCEPTIONAL),
    ),
}

_BOUNDS = {v: [b for b, _ in rows] for v, rows in _BIN_TABLE.items()}
_BANDS = {v: [band for _, band in rows] for v, rows in _BIN_TABLE.items()}

# Variables with a bounded domain; everything else only requires value >= 0.
_UPPER_LIMIT = {
    TrackingVariable.C: 100.0,
    TrackingVariable.Q: 100.0,
    TrackingVariable.F: 10.0,
}

MEASURE_PAIRS: dict[str, tuple[TrackingVariable, TrackingVariable]] = {
    "conscientiousness": (TrackingVariable.D, TrackingVariable.T),
    "motivation": (TrackingVariable.P, TrackingVariable.S),
    "understanding": (TrackingVariable.C, TrackingVariable.Q),
    "engagement": (TrackingVariable.R, TrackingVariable.F),
}


def _check_domain(variable: TrackingVariable, value: float) -> None:
    if not math.isfinite(value):
        raise ScoreDomainError(f"{variable.name}: value {value!r} is not finite")
    if value < 0:
        raise ScoreDomainError(f"{variable.name}: value {value!r} is negative")
    limit = _UPPER_LIMIT.get(variable)
    if limit is not None and value > limit:
        raise ScoreDomainError(
            f"{variable.name}: value {value!r} exceeds maximum {limit:g}"
        )


def score_variable(variable: TrackingVariable | str, value: float) -> MeasureScore:
    """Map one tracking value onto its banded score."""
    variable = TrackingVariable(variable)
    value = float(value)
    _check_domain(variable, value)
    idx = bisect_right(_BOUNDS[variable], value) - 1
    if idx < 0:
        return MeasureScore.from_band(Band.NONE)
    return MeasureScore.from_band(_BANDS[variable][idx])


@dataclass(frozen=True)
class TrackingSnapshot:
    """Raw tracking variables for one learner over one period."""

    logins_streak_days: int
    time_spent_hours: float
    page_visits: int
    search_queries: int
    activity_completion_pct: float
    quiz_avg_pct: float
    reaction_ratio: float
    feedback_avg: float
    learner_id: str
    period_index: int
    granularity: Granularity

    def __post_init__(self) -> None:
        for variable, value in self.variables().items():
            _check_domain(variable, value)
        if self.period_index < 0:
            raise ValueError("period_index must be non-negative")
        for name in ("logins_streak_days", "page_visits", "search_queries"):
            raw = getattr(self, name)
            if int(raw) != raw:
                raise ValueError(f"{name} must be an integer count, got {raw!r}")

    def variables(self) -> dict[TrackingVariable, float]:
        return {
            TrackingVariable.D: float(self.logins_streak_days),
            TrackingVariable.T: float(self.time_spent_hours),
            TrackingVariable.P: float(self.page_visits),
            TrackingVariable.S: float(self.search_queries),
            TrackingVariable.C: float(self.activity_completion_pct),
            TrackingVariable.Q: float(self.quiz_avg_pct),
            TrackingVariable.R: float(self.reaction_ratio),
            TrackingVariable.F: float(self.feedback_avg),
        }

    def feature_row(self) -> tuple[float, ...]:
        """The eight variables in canonical (D,T,P,S,C,Q,R,F) order."""
        return tuple(self.variables().values())


@dataclass(frozen=True)
class MeasureVector:
    """Four learning measures, each the mean of two banded scores."""

    conscientiousness: float
    motivation: float
    understanding: float
    engagement: float

    def __post_init__(self) -> None:
        for value in self.as_tuple():
            if not 0.0 <= value <= 10.0:
                raise ValueError(f"measure {value!r} outside [0, 10]")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (
            self.conscientiousness,
            self.motivation,
            self.understanding,
            self.engagement,
        )


def compute_measure_vector(snapshot: TrackingSnapshot) -> MeasureVector:
    """Score all eight variables and average the fixed pairs."""
    values = snapshot.variables()
    scores = {v: score_variable(v, x).value for v, x in values.items()}
    means = {
        measure: (scores[a] + scores[b]) / 2.0
        for measure, (a, b) in MEASURE_PAIRS.items()
    }
    return MeasureVector(**means)


def average_score(vector: MeasureVector) -> float:
    """Arithmetic mean of the four learning measures."""
    return sum(vector.as_tuple()) / 4.0
