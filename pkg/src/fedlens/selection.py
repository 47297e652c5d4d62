"""Per-client analytics matrix and eligibility screening for the FL cohort."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from fedlens.core import QueryResult
from fedlens.errors import InvalidSpec, MissingKernelOutputs

ALL = "all"


@dataclass(frozen=True)
class SelectionRow:
    client_id: int
    n_samples: int
    n_features: int
    skew: tuple[float | None, ...]
    features: tuple[str, ...]

    def __post_init__(self):
        if len(self.skew) != len(self.features):
            raise InvalidSpec("one skewness value per feature is required")

    def to_dict(self) -> dict:
        return {
            "client_id": self.client_id,
            "n_samples": self.n_samples,
            "n_features": self.n_features,
            "skew": dict(zip(self.features, self.skew)),
        }


@dataclass(frozen=True)
class SelectionMatrix:
    rows: tuple[SelectionRow, ...]

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(sorted(self.rows, key=lambda r: r.client_id)))

    def __len__(self):
        return len(self.rows)

    def row(self, client_id: int) -> SelectionRow:
        for r in self.rows:
            if r.client_id == client_id:
                return r
        raise KeyError(client_id)

    def to_dict(self) -> list[dict]:
        return [r.to_dict() for r in self.rows]

    @classmethod
    def from_table(cls, features: Sequence[str], table: Sequence[Sequence]) -> SelectionMatrix:
        """Rows of ``(client_id, n_samples, n_features, *skew)``."""
        rows = []
        for rec in table:
            cid, n, nf, *skew = rec
            rows.append(SelectionRow(int(cid), int(n), int(nf), tuple(skew), tuple(features)))
        return cls(tuple(rows))


@dataclass(frozen=True)
class SelectionCriteria:
    min_samples: int = 300
    skew_low: float = -1.0
    skew_high: float = 1.0
    features_considered: str | tuple[str, ...] = ALL

    def __post_init__(self):
        if not self.skew_low < self.skew_high:
            raise InvalidSpec("skew_low must be below skew_high")
        if self.min_samples < 0:
            raise InvalidSpec("min_samples must be non-negative")
        if not isinstance(self.features_considered, str):
            object.__setattr__(self, "features_considered", tuple(self.features_considered))

    def to_dict(self) -> dict:
        fc = self.features_considered
        return {
            "min_samples": self.min_samples,
            "skew_low": self.skew_low,
            "skew_high": self.skew_high,
            "features_considered": fc if isinstance(fc, str) else list(fc),
        }

    @classmethod
    def from_dict(cls, d) -> SelectionCriteria:
        fc = d.get("features_considered", ALL)
        return cls(
            int(d.get("min_samples", 300)),
            float(d.get("skew_low", -1.0)),
            float(d.get("skew_high", 1.0)),
            fc if isinstance(fc, str) else tuple(fc),
        )


@dataclass(frozen=True)
class Reason:
    criterion: str
    value: float
    bound: tuple[float, ...]
    feature: str | None = None

    def __str__(self):
        if self.criterion == "min_samples":
            return f"n_samples {self.value:g} < {self.bound[0]:g}"
        if self.value is None or (isinstance(self.value, float) and math.isnan(self.value)):
            return f"{self.feature} skewness undefined"
        return f"{self.feature} {self.value:g} not in ({self.bound[0]:g}, {self.bound[1]:g})"


@dataclass(frozen=True)
class SelectionVerdict:
    client_id: int
    reasons: tuple[Reason, ...] = field(default=())

    @property
    def selected(self) -> bool:
        return not self.reasons

    def to_dict(self) -> dict:
        return {"client_id": self.client_id, "selected": self.selected, "reasons": [str(r) for r in self.reasons]}


def build_selection_matrix(result: QueryResult) -> SelectionMatrix:
    """One row per responding client from a cumulative count/feature_count/skewness query."""
    if not result.per_client:
        raise MissingKernelOutputs("result carries no per-client payloads (not a cumulative query?)")
    rows = []
    for cid, payload in result.per_client.items():
        try:
            n = payload["count"]["value"]
            nf = payload["feature_count"]["value"]
            sk = payload["skewness"]
        except (KeyError, TypeError):
            raise MissingKernelOutputs(f"client {cid} lacks count, feature_count or skewness") from None
        rows.append(SelectionRow(int(cid), int(n), int(nf), tuple(sk["value"]), tuple(sk["features"])))
    return SelectionMatrix(tuple(rows))


def _considered(row: SelectionRow, criteria: SelectionCriteria) -> list[tuple[str, float | None]]:
    pairs = list(zip(row.features, row.skew))
    if criteria.features_considered == ALL:
        return pairs
    wanted = set(criteria.features_considered)
    return [(f, s) for f, s in pairs if f in wanted]


def select(matrix: SelectionMatrix, criteria: SelectionCriteria) -> list[SelectionVerdict]:
    """Selected iff n_samples >= min_samples and every considered skewness lies strictly inside the bounds.

    A skewness that could not be computed (too few rows, constant column)
    counts as a violation.
    """
    verdicts = []
    for row in sorted(matrix.rows, key=lambda r: r.client_id):
        reasons = []
        if row.n_samples < criteria.min_samples:
            reasons.append(Reason("min_samples", row.n_samples, (criteria.min_samples,)))
        for feature, s in _considered(row, criteria):
            if s is None or not criteria.skew_low < s < criteria.skew_high:
                reasons.append(Reason("skewness", s, (criteria.skew_low, criteria.skew_high), feature))
        verdicts.append(SelectionVerdict(row.client_id, tuple(reasons)))
    return verdicts


def selected_ids(verdicts: Sequence[SelectionVerdict]) -> list[int]:
    return [v.client_id for v in verdicts if v.selected]
