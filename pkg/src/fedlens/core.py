"""Shared domain types: schemas, client datasets, query and result envelopes."""
from __future__ import annotations

import hashlib
import uuid
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Iterable, Mapping

import numpy as np

from fedlens.errors import (
    DuplicateFeature,
    IncompatibleAggregation,
    IncompatibleKernel,
    InvalidSpec,
    MissingTarget,
    SchemaError,
    SchemaMismatch,
)

NUMERIC = "numeric"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str = NUMERIC

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"unknown feature kind {self.kind!r}")


@dataclass(frozen=True)
class Schema:
    """Ordered feature list plus the regression target.

    Only numeric features occupy columns of ``ClientDataset.rows``;
    categorical features live in ``ClientDataset.categorical_values``.
    """

    features: tuple[Feature, ...]
    target: str

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        seen = set()
        for name in names:
            if name in seen:
                raise DuplicateFeature(f"feature {name!r} appears more than once")
            seen.add(name)
        if self.target not in seen:
            raise MissingTarget(f"target {self.target!r} is not a schema feature")
        if not self.predictors:
            raise SchemaError("schema needs at least one numeric predictor")

    @classmethod
    def numeric(cls, names: Iterable[str], target: str) -> Schema:
        return cls(tuple(Feature(n) for n in names), target)

    @property
    def numeric_features(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features if f.kind == NUMERIC)

    @property
    def categorical_features(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features if f.kind == CATEGORICAL)

    @property
    def predictors(self) -> tuple[str, ...]:
        return tuple(n for n in self.numeric_features if n != self.target)

    @property
    def width(self) -> int:
        return len(self.numeric_features)

    def column(self, name: str) -> int:
        try:
            return self.numeric_features.index(name)
        except ValueError:
            raise SchemaError(f"{name!r} is not a numeric feature") from None

    def columns(self, names: Iterable[str]) -> list[int]:
        return [self.column(n) for n in names]

    def kind_of(self, name: str) -> str | None:
        for f in self.features:
            if f.name == name:
                return f.kind
        return None

    def to_dict(self) -> dict:
        return {
            "features": [{"name": f.name, "kind": f.kind} for f in self.features],
            "target": self.target,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> Schema:
        return cls(tuple(Feature(f["name"], f.get("kind", NUMERIC)) for f in d["features"]), d["target"])


FIREWALL_FEATURES = ("CPUUTP", "MEMUTP", "RTT", "MIR", "CPU", "MEM", "In_RX", "Out_TX", "LINK")
FIREWALL_SCHEMA = Schema.numeric(FIREWALL_FEATURES, target="LINK")


@dataclass(frozen=True, eq=False)
class ClientDataset:
    """One client's private partition. Never serialized into protocol messages."""

    client_id: int
    schema: Schema
    rows: np.ndarray
    categorical_values: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64, copy=True)
        if rows.ndim == 1 and rows.size == 0:
            rows = rows.reshape(0, self.schema.width)
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        cats = {k: frozenset(v) for k, v in dict(self.categorical_values).items()}
        object.__setattr__(self, "categorical_values", MappingProxyType(cats))

    @property
    def n_samples(self) -> int:
        return int(self.rows.shape[0])

    @property
    def n_features(self) -> int:
        return len(self.schema.features)

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.schema.column(name)]

    def predictors(self) -> np.ndarray:
        return self.rows[:, self.schema.columns(self.schema.predictors)]

    def target(self) -> np.ndarray:
        return self.rows[:, self.schema.column(self.schema.target)]

    def __repr__(self):
        return f"ClientDataset(client_id={self.client_id}, n_samples={self.n_samples}, n_features={self.n_features})"


def validate_dataset(ds: ClientDataset) -> ClientDataset:
    if ds.client_id < 0:
        raise InvalidSpec("client_id must be non-negative")
    # re-run schema checks in case the schema was built around __post_init__
    Schema(ds.schema.features, ds.schema.target)
    if ds.rows.ndim != 2 or ds.rows.shape[1] != ds.schema.width:
        got = ds.rows.shape[1] if ds.rows.ndim == 2 else ds.rows.shape
        raise SchemaMismatch(f"rows have width {got}, schema expects {ds.schema.width}")
    for name in ds.categorical_values:
        if ds.schema.kind_of(name) != CATEGORICAL:
            raise SchemaMismatch(f"categorical values given for non-categorical {name!r}")
    return ds


def digest_value(value: str, salt: str) -> str:
    """Salted SHA-256 digest used in place of raw categorical values."""
    return hashlib.sha256(f"{salt}\x00{value}".encode("utf-8")).hexdigest()


# --- queries -----------------------------------------------------------------

STATISTICAL = "statistical_testing"
SET = "set"
MATRIX = "matrix_transformation"

CUMULATIVE = "cumulative"
ADDITION = "addition"
AVERAGE = "average"

_ALL = frozenset({CUMULATIVE, ADDITION, AVERAGE})

KERNEL_CATEGORY = {
    "count": STATISTICAL,
    "feature_count": STATISTICAL,
    "sum": STATISTICAL,
    "mean": STATISTICAL,
    "variance": STATISTICAL,
    "min": STATISTICAL,
    "max": STATISTICAL,
    "skewness": STATISTICAL,
    "histogram": STATISTICAL,
    "moments": STATISTICAL,
    "set_cardinality": SET,
    "gram_for_pca": MATRIX,
}

KERNEL_AGGREGATIONS = {
    "count": _ALL,
    "feature_count": _ALL,
    "sum": _ALL,
    "mean": _ALL,
    "variance": _ALL,
    "histogram": _ALL,
    "moments": frozenset({CUMULATIVE, ADDITION}),
    "min": frozenset({CUMULATIVE}),
    "max": frozenset({CUMULATIVE}),
    # per-client only; pooled skewness is available through moments + merge
    "skewness": frozenset({CUMULATIVE}),
    "set_cardinality": frozenset({CUMULATIVE}),
    "gram_for_pca": frozenset({ADDITION}),
}

# kernels whose payload is a plain numeric vector, hence maskable
SECURE_KERNELS = frozenset({"count", "feature_count", "sum", "mean", "histogram", "gram_for_pca"})


@dataclass(frozen=True)
class Kernel:
    name: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in KERNEL_CATEGORY:
            raise IncompatibleKernel(f"unknown kernel {self.name!r}")
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))

    def __hash__(self):
        return hash((self.name, tuple(sorted((k, repr(v)) for k, v in self.params.items()))))

    def __eq__(self, other):
        return isinstance(other, Kernel) and self.name == other.name and dict(self.params) == dict(other.params)

    def get(self, key: str, default=None):
        return self.params.get(key, default)

    def to_dict(self) -> dict:
        return {"name": self.name, "params": _plain(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping | str) -> Kernel:
        if isinstance(d, str):
            return cls(d)
        return cls(d["name"], d.get("params", {}))


@dataclass(frozen=True)
class Aggregation:
    method: str
    weighted: bool = True

    def __post_init__(self):
        if self.method not in _ALL:
            raise IncompatibleAggregation(f"unknown aggregation {self.method!r}")

    def to_dict(self) -> dict:
        return {"method": self.method, "weighted": self.weighted}

    @classmethod
    def from_dict(cls, d: Mapping | str) -> Aggregation:
        if isinstance(d, str):
            return cls(d)
        return cls(d["method"], bool(d.get("weighted", True)))


@dataclass(frozen=True)
class QuerySpec:
    category: str
    kernels: tuple[Kernel, ...]
    aggregation: Aggregation
    cohort: tuple[int, ...]
    secure: bool = False
    query_id: str = field(default_factory=lambda: uuid.uuid4().hex)

    def __post_init__(self):
        kernels = self.kernels
        if isinstance(kernels, Kernel):
            kernels = (kernels,)
        object.__setattr__(self, "kernels", tuple(kernels))
        object.__setattr__(self, "cohort", tuple(int(c) for c in self.cohort))
        if isinstance(self.aggregation, str):
            object.__setattr__(self, "aggregation", Aggregation(self.aggregation))
        if not self.kernels:
            raise IncompatibleKernel("query has no kernels")
        names = [k.name for k in self.kernels]
        if len(set(names)) != len(names):
            raise IncompatibleKernel("each kernel may appear once per query")
        for k in self.kernels:
            if KERNEL_CATEGORY[k.name] != self.category:
                raise IncompatibleKernel(f"kernel {k.name!r} does not belong to category {self.category!r}")
            if self.aggregation.method not in KERNEL_AGGREGATIONS[k.name]:
                raise IncompatibleAggregation(
                    f"kernel {k.name!r} cannot be aggregated by {self.aggregation.method!r}"
                )
            if self.secure and k.name not in SECURE_KERNELS:
                raise IncompatibleAggregation(f"kernel {k.name!r} has no maskable payload")
        if self.secure:
            agg = self.aggregation
            if not (agg.method == ADDITION or (agg.method == AVERAGE and agg.weighted)):
                raise IncompatibleAggregation("secure queries need addition or weighted average")

    def kernel(self, name: str) -> Kernel:
        for k in self.kernels:
            if k.name == name:
                return k
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "category": self.category,
            "kernels": [k.to_dict() for k in self.kernels],
            "aggregation": self.aggregation.to_dict(),
            "cohort": list(self.cohort),
            "secure": self.secure,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> QuerySpec:
        kw = {}
        if d.get("query_id"):
            kw["query_id"] = str(d["query_id"])
        return cls(
            category=d["category"],
            kernels=tuple(Kernel.from_dict(k) for k in d["kernels"]),
            aggregation=Aggregation.from_dict(d["aggregation"]),
            cohort=tuple(d.get("cohort", ())),
            secure=bool(d.get("secure", False)),
            **kw,
        )


@dataclass(frozen=True)
class QueryResult:
    query_id: str
    aggregated: dict
    respondent_count: int
    per_client: dict[int, dict] | None = None
    partial: bool = False
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "per_client": None
            if self.per_client is None
            else {str(cid): _plain(p) for cid, p in self.per_client.items()},
            "aggregated": _plain(self.aggregated),
            "respondent_count": self.respondent_count,
            "partial": self.partial,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> QueryResult:
        pc = d.get("per_client")
        return cls(
            query_id=d["query_id"],
            aggregated=dict(d["aggregated"]),
            respondent_count=int(d["respondent_count"]),
            per_client=None if pc is None else {int(k): v for k, v in pc.items()},
            partial=bool(d.get("partial", False)),
            warnings=tuple(d.get("warnings", ())),
        )


@dataclass(frozen=True)
class ClientDescriptor:
    client_id: int
    domain_tag: str = "intra-domain"
    address: str = ""


def _plain(obj):
    """Convert numpy containers and mapping proxies into JSON-ready builtins."""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(_plain(v) for v in obj)
    return obj


to_plain = _plain
