"""FA server: dispatches queries to the cohort and aggregates the answers."""
from __future__ import annotations

import logging
import warnings

from fedlens.core import (
    ADDITION,
    CUMULATIVE,
    MATRIX,
    SET,
    CATEGORICAL,
    Aggregation,
    Kernel,
    QueryResult,
    QuerySpec,
)
from fedlens.errors import (
    ClientError,
    CohortTooSmall,
    DropoutUnsupported,
    EmptyCohort,
    NonCategoricalAttribute,
    QueryTimeout,
    RankDeficientWarning,
    ShapeMismatch,
    UnknownClient,
)
from fedlens.fa.aggregate import combine
from fedlens.fa.pca import PCAResult, pca_from_gram
from fedlens.fa.secure import delinearize, unmask_sum
from fedlens.transport.envelope import ERROR, QUERY
from fedlens.transport.federation import Federation

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0

UNION = "union_cardinality"
INTERSECTION = "intersection_cardinality"
EXACT = "exact_set"


class FAServer:
    def __init__(self, federation: Federation, timeout: float = DEFAULT_TIMEOUT):
        self.federation = federation
        self.timeout = timeout

    def _cohort(self, cohort) -> list[int]:
        ids = list(dict.fromkeys(int(c) for c in cohort))
        if not ids:
            raise EmptyCohort("query cohort is empty")
        unknown = [c for c in ids if c not in self.federation.descriptors]
        if unknown:
            raise UnknownClient(f"clients {unknown} are not registered")
        return ids

    def execute_query(self, spec: QuerySpec) -> QueryResult:
        cohort = self._cohort(spec.cohort)
        if spec.secure and len(cohort) < 2:
            raise CohortTooSmall("secure aggregation needs at least two clients")
        body = {"spec": spec.to_dict()}
        replies = self.federation.request(QUERY, {cid: body for cid in cohort}, self.timeout)

        failed = [env for env in replies.values() if env.kind == ERROR]
        if failed:
            err = failed[0].payload
            raise ClientError(f"client {err.get('client_id')} failed: {err['code']}: {err['message']}")
        responders = [c for c in cohort if c in replies]
        missing = [c for c in cohort if c not in replies]
        warns: list[str] = []
        if missing:
            msg = f"{len(missing)} of {len(cohort)} clients did not answer within {self.timeout:g}s: {missing}"
            if spec.secure:
                raise DropoutUnsupported(msg)
            if spec.category == MATRIX:
                raise QueryTimeout(msg)
            if not responders:
                raise QueryTimeout(msg)
            log.warning(msg)
            warns.append(msg)

        if spec.secure:
            layouts = [replies[c].payload["layout"] for c in responders]
            if any(lay != layouts[0] for lay in layouts[1:]):
                raise ShapeMismatch("clients disagree on the masked layout")
            total = unmask_sum(replies[c].payload["masked"] for c in responders)
            aggregated = delinearize(spec.kernels, spec.aggregation, layouts[0], total)
            per_client = None
        else:
            per = {c: replies[c].payload["payload"] for c in responders}
            aggregated = {k.name: combine(k, spec.aggregation, [per[c][k.name] for c in responders]) for k in spec.kernels}
            per_client = per if spec.aggregation.method == CUMULATIVE else None

        for k in spec.kernels:
            if k.name == "gram_for_pca" and k.get("k") is not None:
                g = aggregated[k.name]
                aggregated[k.name] = dict(g, pca=self._pca(g, int(k.get("k"))).to_dict())
        return QueryResult(spec.query_id, aggregated, len(responders), per_client, bool(missing), tuple(warns))

    def _pca(self, gram: dict, k: int) -> PCAResult:
        result = pca_from_gram(gram["n"], gram["s"], gram["g"], k, gram["features"])
        if result.rank_deficient:
            warnings.warn(f"k={k} exceeds the numerical rank of the covariance", RankDeficientWarning, stacklevel=3)
        return result

    def set_query(self, attr: str, mode: str, cohort) -> int | list[str]:
        """Union/intersection cardinality or the exact union, over salted digests."""
        cohort = self._cohort(cohort)
        for c in cohort:
            if self.federation.schema_of(c).kind_of(attr) != CATEGORICAL:
                raise NonCategoricalAttribute(f"{attr!r} is not categorical for client {c}")
        if mode not in (UNION, INTERSECTION, EXACT):
            raise ValueError(f"unknown set mode {mode!r}")
        spec = QuerySpec(SET, (Kernel("set_cardinality", {"attr": attr}),), Aggregation(CUMULATIVE), tuple(cohort))
        result = self.execute_query(spec)
        sets = [frozenset(p["digests"]) for p in result.aggregated["set_cardinality"]]
        if mode == INTERSECTION:
            return len(frozenset.intersection(*sets))
        union = frozenset().union(*sets)
        return len(union) if mode == UNION else sorted(union)

    def federated_pca(self, k: int, cohort, features=None, secure: bool = False) -> PCAResult:
        params = {} if features is None else {"features": list(features)}
        spec = QuerySpec(MATRIX, (Kernel("gram_for_pca", params),), Aggregation(ADDITION), tuple(cohort), secure=secure)
        gram = self.execute_query(spec).aggregated["gram_for_pca"]
        return self._pca(gram, k)
