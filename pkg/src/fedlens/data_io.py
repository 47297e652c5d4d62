"""CSV ingestion, seeded partitioning, synthetic federations and report files."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from fedlens.core import CATEGORICAL, FIREWALL_SCHEMA, ClientDataset, Schema
from fedlens.errors import EmptyFile, InsufficientRows, InvalidSpec, MissingColumn, UnparsableRow
from fedlens.prng import derive_seed, permutation

log = logging.getLogger(__name__)

RANDOM_SIZES = "random_sizes"
UNIFORM = "uniform"
DIRICHLET = "dirichlet"

REFERENCE_SIZES = (895, 400, 100, 120, 400, 330, 580, 780, 500, 290)


@dataclass(frozen=True, eq=False)
class PooledData:
    """Centralised rows; only the simulator and the CSV tools ever hold one."""

    schema: Schema
    rows: np.ndarray
    categorical: dict[str, list[str]] = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return int(self.rows.shape[0])

    def take(self, client_id: int, idx: Sequence[int]) -> ClientDataset:
        idx = np.asarray(idx, dtype=np.int64)
        cats = {name: {values[i] for i in idx} for name, values in self.categorical.items()}
        return ClientDataset(client_id, self.schema, self.rows[idx].reshape(len(idx), self.schema.width), cats)


# --- CSV -------------------------------------------------------------------------------


def load_csv(path, schema: Schema = FIREWALL_SCHEMA) -> PooledData:
    """Read a headed CSV, matching columns to the schema by name."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise EmptyFile(f"{path} has no header row")
        header = [h.strip() for h in header]
        index = {name: i for i, name in enumerate(header)}
        wanted = [f.name for f in schema.features]
        missing = [n for n in wanted if n not in index]
        if missing:
            raise MissingColumn(f"{path} lacks columns {missing}")
        extra = [h for h in header if h not in set(wanted)]
        if extra:
            log.warning("ignoring unknown columns %s in %s", extra, path)
        num_cols = [index[n] for n in schema.numeric_features]
        cat_cols = {n: index[n] for n in schema.categorical_features}
        rows = []
        cats: dict[str, list[str]] = {n: [] for n in cat_cols}
        for i, rec in enumerate(reader):
            if not rec:
                continue
            try:
                rows.append([float(rec[c]) for c in num_cols])
            except (ValueError, IndexError) as exc:
                raise UnparsableRow(i, str(exc)) from None
            if not all(math.isfinite(v) for v in rows[-1]):
                raise UnparsableRow(i, "non-finite value")
            for n, c in cat_cols.items():
                cats[n].append(rec[c])
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), schema.width)
    return PooledData(schema, arr, cats)


def write_csv(path, schema: Schema, rows: np.ndarray, categorical: dict[str, list[str]] | None = None) -> None:
    """Write rows with shortest round-trip float formatting."""
    categorical = categorical or {}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f.name for f in schema.features])
        numeric = {n: i for i, n in enumerate(schema.numeric_features)}
        for r, row in enumerate(np.asarray(rows)):
            out = []
            for f in schema.features:
                if f.kind == CATEGORICAL:
                    out.append(categorical[f.name][r])
                else:
                    out.append(repr(float(row[numeric[f.name]])))
            w.writerow(out)


def load_client_csv(path, client_id: int, schema: Schema = FIREWALL_SCHEMA) -> ClientDataset:
    pooled = load_csv(path, schema)
    return pooled.take(client_id, range(pooled.n_rows))


# --- partitioning ------------------------------------------------------------------------


@dataclass(frozen=True)
class PartitionSpec:
    strategy: str = RANDOM_SIZES
    sizes: tuple[int, ...] = REFERENCE_SIZES
    clients: int = 10
    alpha: float = 1.0
    seed: int = 0
    holdout_fraction: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if self.strategy not in (RANDOM_SIZES, UNIFORM, DIRICHLET):
            raise InvalidSpec(f"unknown partition strategy {self.strategy!r}")
        if not 0.0 <= self.holdout_fraction <= 0.5:
            raise InvalidSpec("holdout_fraction must lie in [0, 0.5]")
        if self.strategy == DIRICHLET and not self.alpha > 0:
            raise InvalidSpec("dirichlet alpha must be positive")
        if self.strategy != RANDOM_SIZES and self.clients < 1:
            raise InvalidSpec("need at least one client")
        if any(s < 0 for s in self.sizes):
            raise InvalidSpec("partition sizes must be non-negative")

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "sizes": list(self.sizes),
            "clients": self.clients,
            "alpha": self.alpha,
            "seed": self.seed,
            "holdout_fraction": self.holdout_fraction,
        }

    @classmethod
    def from_dict(cls, d) -> PartitionSpec:
        return cls(**{k: (tuple(v) if k == "sizes" else v) for k, v in d.items() if k in cls.__dataclass_fields__})


def _dirichlet_sizes(total: int, k: int, alpha: float, seed: int) -> list[int]:
    rng = np.random.default_rng(derive_seed("dirichlet", seed))
    p = rng.dirichlet([alpha] * k)
    raw = p * total
    sizes = np.floor(raw).astype(np.int64)
    short = total - int(sizes.sum())
    # largest remainders first, ties by index
    for i in sorted(range(k), key=lambda i: (-(raw[i] - sizes[i]), i))[:short]:
        sizes[i] += 1
    return sizes.tolist()


def partition_sizes(spec: PartitionSpec, available: int) -> list[int]:
    if spec.strategy == RANDOM_SIZES:
        if sum(spec.sizes) > available:
            raise InsufficientRows(f"sizes need {sum(spec.sizes)} rows, only {available} available")
        return list(spec.sizes)
    if spec.strategy == UNIFORM:
        q, r = divmod(available, spec.clients)
        return [q + (1 if i < r else 0) for i in range(spec.clients)]
    return _dirichlet_sizes(available, spec.clients, spec.alpha, spec.seed)


def partition(pooled: PooledData, spec: PartitionSpec) -> tuple[list[ClientDataset], ClientDataset]:
    """Shuffle once, carve the holdout off the front, then hand out contiguous slices.

    Client ids run from 1; the holdout carries id 0.
    """
    n = pooled.n_rows
    order = permutation(n, derive_seed("partition", spec.seed))
    n_hold = int(round(spec.holdout_fraction * n))
    sizes = partition_sizes(spec, n - n_hold)
    holdout = pooled.take(0, order[:n_hold])
    clients = []
    pos = n_hold
    for i, size in enumerate(sizes):
        clients.append(pooled.take(i + 1, order[pos : pos + size]))
        pos += size
    return clients, holdout


# --- synthetic federations ---------------------------------------------------------------

# firewall-like marginals: (mean, std) per predictor, plus the LINK weight per
# standard deviation of that predictor
_FIREWALL_MARGINALS = {
    "CPUUTP": (60.0, 15.0, 30.0),
    "MEMUTP": (45.0, 10.0, 10.0),
    "RTT": (20.0, 5.0, -15.0),
    "MIR": (1000.0, 250.0, 40.0),
    "CPU": (4.0, 1.0, 20.0),
    "MEM": (8.0, 2.0, 10.0),
    "In_RX": (0.5, 0.15, -10.0),
    "Out_TX": (0.5, 0.15, -5.0),
}


@dataclass(frozen=True)
class Poison:
    client_id: int
    label_noise: float = 0.0
    skew_inflation: float = 0.0

    def to_dict(self) -> dict:
        return {"client_id": self.client_id, "label_noise": self.label_noise, "skew_inflation": self.skew_inflation}


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator description for a whole federation plus its holdout.

    ``generators`` maps each predictor to ``{"dist": "normal"|"lognormal"|
    "mixture", ...}``. The target is ``intercept + sum(coef * x) + N(0, noise)``.
    A poisoned client gets label noise ``N(0, label_noise)`` and, with
    ``skew_inflation = f > 0``, predictors pushed through a standardized
    exponential so that they turn right-skewed while the target still follows
    the undistorted values.
    """

    rows_per_client: tuple[int, ...]
    holdout_rows: int = 0
    schema: Schema = FIREWALL_SCHEMA
    generators: dict = field(default_factory=dict)
    coef: dict = field(default_factory=dict)
    intercept: float = 0.0
    noise: float = 0.0
    poisoned: tuple[Poison, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "rows_per_client", tuple(int(r) for r in self.rows_per_client))
        object.__setattr__(self, "poisoned", tuple(p if isinstance(p, Poison) else Poison(**p) for p in self.poisoned))
        if not self.rows_per_client or any(r < 1 for r in self.rows_per_client):
            raise InvalidSpec("every client needs at least one row")
        if self.holdout_rows < 0 or self.noise < 0:
            raise InvalidSpec("holdout_rows and noise must be non-negative")
        if self.schema.categorical_features:
            raise InvalidSpec("synthetic generation supports numeric schemas only")
        for name in self.schema.predictors:
            if name not in self.generators:
                raise InvalidSpec(f"no generator for predictor {name!r}")
            if self.generators[name].get("dist", "normal") not in ("normal", "lognormal", "mixture"):
                raise InvalidSpec(f"unknown distribution for {name!r}")
        ids = set(range(1, len(self.rows_per_client) + 1))
        for p in self.poisoned:
            if p.client_id not in ids:
                raise InvalidSpec(f"poisoned client {p.client_id} does not exist")

    def to_dict(self) -> dict:
        return {
            "rows_per_client": list(self.rows_per_client),
            "holdout_rows": self.holdout_rows,
            "schema": self.schema.to_dict(),
            "generators": self.generators,
            "coef": self.coef,
            "intercept": self.intercept,
            "noise": self.noise,
            "poisoned": [p.to_dict() for p in self.poisoned],
        }

    @classmethod
    def from_dict(cls, d) -> SyntheticSpec:
        d = dict(d)
        if "schema" in d:
            d["schema"] = Schema.from_dict(d["schema"])
        d["poisoned"] = tuple(Poison(**p) for p in d.get("poisoned", ()))
        return cls(**d)

    @classmethod
    def firewall(cls, rows_per_client, holdout_rows=0, noise=5.0, poisoned=()) -> SyntheticSpec:
        gens = {n: {"dist": "normal", "mu": mu, "sigma": sd} for n, (mu, sd, _) in _FIREWALL_MARGINALS.items()}
        coef = {n: w / sd for n, (mu, sd, w) in _FIREWALL_MARGINALS.items()}
        intercept = 500.0 - sum(coef[n] * mu for n, (mu, _, _) in _FIREWALL_MARGINALS.items())
        return cls(tuple(rows_per_client), holdout_rows, FIREWALL_SCHEMA, gens, coef, intercept, noise, tuple(poisoned))


DEFAULT_SYNTHETIC = dict(
    rows_per_client=(600, 450, 120, 350, 500, 330, 160, 550, 420, 140),
    holdout_rows=800,
    noise=5.0,
    poisoned=(
        Poison(3, label_noise=150.0, skew_inflation=1.0),
        Poison(7, label_noise=150.0, skew_inflation=1.0),
        Poison(10, label_noise=150.0, skew_inflation=1.0),
    ),
)


def default_synthetic_spec() -> SyntheticSpec:
    return SyntheticSpec.firewall(**DEFAULT_SYNTHETIC)


def _draw(rng: np.random.Generator, gen: dict, n: int) -> np.ndarray:
    dist = gen.get("dist", "normal")
    if dist == "normal":
        return rng.normal(gen.get("mu", 0.0), gen.get("sigma", 1.0), n)
    if dist == "lognormal":
        return rng.lognormal(gen.get("mu", 0.0), gen.get("sigma", 1.0), n)
    comps = gen["components"]
    w = np.array([c.get("weight", 1.0) for c in comps], dtype=np.float64)
    pick = rng.choice(len(comps), size=n, p=w / w.sum())
    out = np.empty(n)
    for i, c in enumerate(comps):
        mask = pick == i
        out[mask] = rng.normal(c.get("mu", 0.0), c.get("sigma", 1.0), int(mask.sum()))
    return out


def _inflate_skew(x: np.ndarray, gen: dict, f: float) -> np.ndarray:
    """Map roughly-normal values onto a lognormal shape with the same mean and std."""
    mu = gen.get("mu", float(x.mean()))
    sd = gen.get("sigma", float(x.std()) or 1.0)
    z = (x - mu) / sd
    m = math.exp(f * f / 2.0)
    s = math.sqrt((math.exp(f * f) - 1.0) * math.exp(f * f))
    return mu + sd * (np.exp(f * z) - m) / s


def _block(spec: SyntheticSpec, rng: np.random.Generator, n: int, poison: Poison | None) -> np.ndarray:
    schema = spec.schema
    rows = np.empty((n, schema.width))
    clean = {}
    for name in schema.predictors:
        clean[name] = _draw(rng, spec.generators[name], n)
    y = spec.intercept + sum(spec.coef.get(name, 0.0) * clean[name] for name in schema.predictors)
    y = y + rng.normal(0.0, spec.noise, n) if spec.noise > 0 else y
    for name in schema.predictors:
        col = clean[name]
        if poison is not None and poison.skew_inflation > 0:
            col = _inflate_skew(col, spec.generators[name], poison.skew_inflation)
        rows[:, schema.column(name)] = col
    if poison is not None and poison.label_noise > 0:
        y = y + rng.normal(0.0, poison.label_noise, n)
    rows[:, schema.column(schema.target)] = y
    return rows


def gen_synthetic(spec: SyntheticSpec, seed: int) -> tuple[list[ClientDataset], ClientDataset]:
    rng = np.random.default_rng(derive_seed("synthetic", seed))
    poisons = {p.client_id: p for p in spec.poisoned}
    clients = []
    for i, n in enumerate(spec.rows_per_client):
        cid = i + 1
        clients.append(ClientDataset(cid, spec.schema, _block(spec, rng, n, poisons.get(cid))))
    holdout = ClientDataset(0, spec.schema, _block(spec, rng, spec.holdout_rows, None))
    return clients, holdout


# --- reports ------------------------------------------------------------------------------


def write_report(report: dict, out_dir) -> tuple[Path, Path]:
    """Write ``report.json`` (pretty, key-sorted) and ``metrics.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath = out / "report.json"
    jpath.write_text(json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
    cpath = out / "metrics.csv"
    curves = report["curves"]
    baseline = curves.get("baseline") or [None] * len(curves["fa_assisted"])
    with open(cpath, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "fa_assisted_mae", "baseline_mae"])
        for r, (a, b) in enumerate(zip(curves["fa_assisted"], baseline), start=1):
            w.writerow([r, repr(a), "" if b is None else repr(b)])
    return jpath, cpath
