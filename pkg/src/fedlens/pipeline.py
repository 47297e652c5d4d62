"""End-to-end experiment: standardize, query, select, train both arms, report."""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path


from fedlens import __version__
from fedlens.client import FAClient
from fedlens.core import (
    ADDITION,
    CUMULATIVE,
    STATISTICAL,
    Aggregation,
    ClientDataset,
    Kernel,
    QuerySpec,
    Schema,
)
from fedlens.data_io import (
    PartitionSpec,
    SyntheticSpec,
    default_synthetic_spec,
    gen_synthetic,
    load_csv,
    partition,
    write_report,
)
from fedlens.errors import DegenerateFeature, EmptySelection, InvalidSpec, UnknownClient
from fedlens.fa.engine import DEFAULT_TIMEOUT, FAServer
from fedlens.fl import ClientUpdate, TrainConfig, design_matrix, evaluate_mae, fedavg, from_base64, init_model, to_base64, to_bytes
from fedlens.prng import derive_seed
from fedlens.selection import SelectionCriteria, SelectionMatrix, build_selection_matrix, select, selected_ids
from fedlens.stats import ADJUSTED, MomentSketch
from fedlens.transport.envelope import MODEL_BROADCAST, MODEL_UPDATE
from fedlens.transport.federation import Federation
from fedlens.transport.sim import LinkModel, SimFederation

log = logging.getLogger(__name__)

SYNTHETIC = "synthetic"
CSV = "csv"
# report keys that legitimately differ between otherwise identical runs
VOLATILE_KEYS = ("created_at", "timing")


def _sub_seed(master: int, label: str) -> int:
    return derive_seed(label, master) & 0x7FFFFFFF


@dataclass(frozen=True)
class TransportConfig:
    mode: str = "sim"
    latency_ms: float | tuple[float, float] = 0.0
    drop_probability: float = 0.0
    seed: int = 0
    timeout_s: float = DEFAULT_TIMEOUT
    bind: str = "127.0.0.1:7700"
    connect: str = "127.0.0.1:7700"

    def link(self) -> LinkModel:
        return LinkModel(self.latency_ms, self.drop_probability, self.seed)

    def to_dict(self) -> dict:
        lat = self.latency_ms if isinstance(self.latency_ms, (int, float)) else list(self.latency_ms)
        return {
            "mode": self.mode,
            "latency_ms": lat,
            "drop_probability": self.drop_probability,
            "seed": self.seed,
            "timeout_s": self.timeout_s,
            "bind": self.bind,
            "connect": self.connect,
        }


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    source: str = SYNTHETIC
    csv_path: str | None = None
    data_seed: int = 0
    synthetic: SyntheticSpec = field(default_factory=default_synthetic_spec)
    schema: Schema | None = None
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    selection: SelectionCriteria = field(default_factory=SelectionCriteria)
    train: TrainConfig = field(default_factory=TrainConfig)
    hidden: tuple[int, ...] = (24, 12, 6)
    baseline: bool = True
    secure: bool = False
    skewness_convention: str = ADJUSTED
    transport: TransportConfig = field(default_factory=TransportConfig)
    output_dir: str = "out"

    def __post_init__(self):
        if self.source not in (SYNTHETIC, CSV):
            raise InvalidSpec(f"unknown data source {self.source!r}")
        if self.source == CSV and not self.csv_path:
            raise InvalidSpec("csv source needs data.path")

    @property
    def data_schema(self) -> Schema:
        if self.schema is not None:
            return self.schema
        return self.synthetic.schema

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        """Build from the nested TOML/JSON layout, deriving any missing seeds."""
        d = dict(d)
        master = int(d.get("seed", 0))
        data = dict(d.get("data", {}))
        synth = data.get("synthetic")
        if synth is None:
            spec = default_synthetic_spec()
        elif "generators" in synth:
            spec = SyntheticSpec.from_dict(synth)
        else:
            kw = {k: v for k, v in synth.items() if k in ("rows_per_client", "holdout_rows", "noise", "poisoned")}
            base = dict(
                rows_per_client=default_synthetic_spec().rows_per_client,
                holdout_rows=default_synthetic_spec().holdout_rows,
                noise=default_synthetic_spec().noise,
                poisoned=default_synthetic_spec().poisoned,
            )
            base.update(kw)
            spec = SyntheticSpec.firewall(**base)
        part = dict(d.get("partition", {}))
        part.setdefault("seed", _sub_seed(master, "partition"))
        train = dict(d.get("train", {}))
        train.setdefault("seed", _sub_seed(master, "train"))
        tr = dict(d.get("transport", {}))
        tr.setdefault("seed", _sub_seed(master, "transport"))
        if isinstance(tr.get("latency_ms"), list):
            tr["latency_ms"] = tuple(tr["latency_ms"])
        exp = dict(d.get("experiment", {}))
        return cls(
            seed=master,
            source=data.get("source", SYNTHETIC),
            csv_path=data.get("path"),
            data_seed=int(data.get("seed", _sub_seed(master, "data"))),
            synthetic=spec,
            schema=Schema.from_dict(data["schema"]) if data.get("schema") else None,
            partition=PartitionSpec.from_dict(part),
            selection=SelectionCriteria.from_dict(d.get("selection", {})),
            train=TrainConfig.from_dict(train),
            hidden=tuple(d.get("model", {}).get("hidden", (24, 12, 6))),
            baseline=bool(exp.get("baseline", True)),
            secure=bool(exp.get("secure", False)),
            skewness_convention=exp.get("skewness_convention", ADJUSTED),
            transport=TransportConfig(**{k: v for k, v in tr.items() if k in TransportConfig.__dataclass_fields__}),
            output_dir=str(d.get("output", {}).get("dir", "out")),
        )

    def to_dict(self) -> dict:
        data = {"source": self.source, "seed": self.data_seed, "synthetic": self.synthetic.to_dict()}
        if self.csv_path:
            data["path"] = self.csv_path
        if self.schema is not None:
            data["schema"] = self.schema.to_dict()
        return {
            "seed": self.seed,
            "data": data,
            "partition": self.partition.to_dict(),
            "selection": self.selection.to_dict(),
            "train": self.train.to_dict(),
            "model": {"hidden": list(self.hidden)},
            "experiment": {
                "baseline": self.baseline,
                "secure": self.secure,
                "skewness_convention": self.skewness_convention,
            },
            "transport": self.transport.to_dict(),
            "output": {"dir": self.output_dir},
        }

    def with_seed(self, seed: int) -> ExperimentConfig:
        """Same experiment under a new master seed (all derived seeds re-derived)."""
        d = self.to_dict()
        d["seed"] = seed
        d["data"].pop("seed", None)
        d["partition"].pop("seed", None)
        d["train"].pop("seed", None)
        d["transport"].pop("seed", None)
        return ExperimentConfig.from_dict(d)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if path.suffix == ".json":
        return ExperimentConfig.from_dict(json.loads(path.read_text(encoding="utf-8")))
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return ExperimentConfig.from_dict(tomllib.load(fh))


def materialize(cfg: ExperimentConfig) -> tuple[list[ClientDataset], ClientDataset]:
    """Client partitions and the evaluation holdout for a config."""
    if cfg.source == SYNTHETIC:
        return gen_synthetic(cfg.synthetic, cfg.data_seed)
    pooled = load_csv(cfg.csv_path, cfg.data_schema)
    return partition(pooled, cfg.partition)


# --- stages -----------------------------------------------------------------------------


def federated_standardize(server: FAServer, cohort, features=None, secure: bool = False) -> dict[str, tuple[float, float]]:
    """Pooled mean and population std per numeric feature, without pooling rows."""
    fparam = {"features": list(features)} if features is not None else {}
    if not secure:
        spec = QuerySpec(STATISTICAL, (Kernel("moments", fparam),), Aggregation(ADDITION), tuple(cohort))
        merged = server.execute_query(spec).aggregated["moments"]
        names = merged["features"]
        sketches = [MomentSketch.from_dict(s) for s in merged["sketches"]]
        means = [s.mean for s in sketches]
        variances = [s.m2 / s.n if s.n else 0.0 for s in sketches]
    else:
        first = QuerySpec(
            STATISTICAL, (Kernel("count"), Kernel("sum", fparam)), Aggregation(ADDITION), tuple(cohort), secure=True
        )
        res = server.execute_query(first).aggregated
        n = res["count"]
        means = [v / n for v in res["sum"]]
        second = QuerySpec(
            STATISTICAL,
            (Kernel("sum", dict(fparam, power=2, center=means)),),
            Aggregation(ADDITION),
            tuple(cohort),
            secure=True,
        )
        variances = [max(v, 0.0) / n for v in server.execute_query(second).aggregated["sum"]]
        names = list(features) if features is not None else list(server.federation.schema_of(cohort[0]).numeric_features)
    out = {}
    for name, mu, var in zip(names, means, variances):
        if not var > 0:
            raise DegenerateFeature(f"feature {name!r} has zero pooled variance")
        out[name] = (mu, math.sqrt(var))
    return out


def selection_query(cohort, convention: str = ADJUSTED) -> QuerySpec:
    kernels = (Kernel("count"), Kernel("feature_count"), Kernel("skewness", {"convention": convention}))
    return QuerySpec(STATISTICAL, kernels, Aggregation(CUMULATIVE), tuple(cohort))


def federated_training(fed: Federation, cohort, params, cfg: TrainConfig, standardization, eval_x, eval_y,
                       timeout: float = DEFAULT_TIMEOUT) -> tuple[object, list[float]]:
    """Synchronous FedAvg rounds; returns final params and per-round holdout MAE."""
    std = {k: list(v) for k, v in standardization.items()}
    curve = []
    for r in range(cfg.rounds):
        body = {"round": r, "model": to_base64(params), "train": cfg.to_dict(), "standardization": std}
        replies = fed.request(MODEL_BROADCAST, {cid: body for cid in cohort}, timeout)
        updates = []
        for cid in cohort:
            env = replies.get(cid)
            if env is not None and env.kind == MODEL_UPDATE:
                p = env.payload
                updates.append(ClientUpdate(cid, from_base64(p["model"]), int(p["k_n"]), float(p["loss"])))
        if len(updates) < len(cohort):
            log.warning("round %d: %d of %d updates arrived", r, len(updates), len(cohort))
        if updates:
            params = fedavg(updates)
        curve.append(evaluate_mae(params, eval_x, eval_y))
    return params, curve


def run_experiment(cfg: ExperimentConfig, federation: Federation | None = None, data=None,
                   matrix: SelectionMatrix | None = None) -> dict:
    """Run both arms and return the report dict (also written to ``cfg.output_dir`` by the CLI).

    ``matrix`` replaces the analytics query with a precomputed selection
    matrix, e.g. one transcribed from an earlier study.
    """
    timing = {}
    t0 = time.perf_counter()
    clients, holdout = data if data is not None else materialize(cfg)
    timing["load"] = time.perf_counter() - t0

    own_fed = federation is None
    if own_fed:
        federation = SimFederation([FAClient(ds) for ds in clients], cfg.transport.link())
    try:
        server = FAServer(federation, cfg.transport.timeout_s)
        cohort_all = federation.client_ids

        t = time.perf_counter()
        standardization = federated_standardize(server, cohort_all, secure=cfg.secure)
        timing["standardize"] = time.perf_counter() - t

        t = time.perf_counter()
        if matrix is None:
            result = server.execute_query(selection_query(cohort_all, cfg.skewness_convention))
            matrix = build_selection_matrix(result)
        verdicts = select(matrix, cfg.selection)
        chosen = selected_ids(verdicts)
        timing["fa_query_selection"] = time.perf_counter() - t
        if not chosen:
            raise EmptySelection("selection criteria rejected every client")
        strangers = sorted(set(chosen) - set(cohort_all))
        if strangers:
            raise UnknownClient(f"selection matrix names unregistered clients {strangers}")

        schema = holdout.schema
        ex, ey = design_matrix(holdout, standardization)
        target_std = standardization[schema.target][1]
        layout = (len(schema.predictors), *cfg.hidden, 1)
        init = init_model(cfg.train.seed, layout)

        t = time.perf_counter()
        _, fa_curve = federated_training(federation, chosen, init, cfg.train, standardization, ex, ey, cfg.transport.timeout_s)
        timing["fl_fa_assisted"] = time.perf_counter() - t
        base_curve = None
        if cfg.baseline:
            t = time.perf_counter()
            _, base_curve = federated_training(
                federation, cohort_all, init, cfg.train, standardization, ex, ey, cfg.transport.timeout_s
            )
            timing["fl_baseline"] = time.perf_counter() - t
    finally:
        if own_fed:
            federation.close()

    def raw(curve):
        return None if curve is None else [v * target_std for v in curve]

    report = {
        "version": __version__,
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "config": cfg.to_dict(),
        "standardization": {k: list(v) for k, v in standardization.items()},
        "selection": {
            "query": {"kernels": ["count", "feature_count", "skewness"], "aggregation": CUMULATIVE},
            "matrix": matrix.to_dict(),
            "verdicts": [v.to_dict() for v in verdicts],
            "selected": chosen,
            "all_clients": cohort_all,
        },
        "curves": {
            "round": list(range(1, cfg.train.rounds + 1)),
            "fa_assisted": raw(fa_curve),
            "baseline": raw(base_curve),
            "fa_assisted_normalized": fa_curve,
            "baseline_normalized": base_curve,
        },
        "final": {
            "fa_assisted_mae": raw(fa_curve)[-1],
            "baseline_mae": None if base_curve is None else raw(base_curve)[-1],
            "fa_assisted_mae_normalized": fa_curve[-1],
            "baseline_mae_normalized": None if base_curve is None else base_curve[-1],
        },
        "initial_model_sha256": hashlib.sha256(to_bytes(init)).hexdigest(),
        "holdout_rows": holdout.n_samples,
        "timing": timing,
    }
    return report


def stable_view(report: dict) -> dict:
    """Report without wall-clock fields, for equality checks."""
    return {k: v for k, v in report.items() if k not in VOLATILE_KEYS}


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def replay(report: dict) -> tuple[bool, list[str]]:
    """Re-run a report's embedded config; compare selection and curves byte for byte."""
    cfg = ExperimentConfig.from_dict(report["config"])
    fresh = run_experiment(cfg)
    diffs = []
    for key in ("selection", "curves", "final", "standardization"):
        if canonical(report.get(key)) != canonical(fresh.get(key)):
            diffs.append(_describe_diff(key, report.get(key), fresh.get(key)))
    return not diffs, diffs


def _describe_diff(key, old, new) -> str:
    if isinstance(old, dict) and isinstance(new, dict):
        parts = []
        for k in sorted(set(old) | set(new)):
            if canonical(old.get(k)) != canonical(new.get(k)):
                parts.append(k)
        return f"{key}: fields differ: {', '.join(parts)}"
    return f"{key}: {canonical(old)[:200]} != {canonical(new)[:200]}"


def run_and_write(cfg: ExperimentConfig, out_dir=None) -> tuple[dict, Path]:
    report = run_experiment(cfg)
    jpath, _ = write_report(report, out_dir or cfg.output_dir)
    return report, jpath
