"""Acceptance criteria, one test each, checked at their stated tolerances.

Each test records a PASS/FAIL line that is echoed in the pytest terminal
summary; running this file directly prints the same lines.
"""
import hashlib
import math
import threading
import time
from dataclasses import replace

import numpy as np
import pytest

from fedlens.cli import EXIT_OK, run as cli_run
from fedlens.client import FAClient
from fedlens.core import (
    ADDITION,
    FIREWALL_FEATURES,
    STATISTICAL,
    Aggregation,
    ClientDataset,
    Kernel,
    QuerySpec,
    Schema,
)
from fedlens.data_io import write_report
from fedlens.fa import FAServer
from fedlens.fa.secure import encode, mask_vector, unmask_sum
from fedlens.fl import ClientUpdate, ModelParams, fedavg, init_model, to_bytes
from fedlens.pipeline import ExperimentConfig, canonical, materialize, run_experiment, stable_view
from fedlens.selection import SelectionCriteria, SelectionMatrix, select, selected_ids
from fedlens.stats import ADJUSTED, MOMENT_G1, MomentSketch, merge, sketch_of, skewness
from fedlens.transport import Envelope, frame, unframe
from fedlens.transport.envelope import KINDS, REPLY_KINDS, REQUIRED_KEYS
from fedlens.transport.sim import SimFederation
from fedlens.transport.tcp import TcpFederation, run_client

from acceptance_log import record
from conftest import REFERENCE_MATRIX, REFERENCE_SELECTED
from oracles import gradient_check_case, svd_components


# --- 1 ------------------------------------------------------------------------------


def test_criterion_1_reference_selection():
    t0 = time.perf_counter()
    matrix = SelectionMatrix.from_table(FIREWALL_FEATURES, REFERENCE_MATRIX)
    verdicts = {v.client_id: v for v in select(matrix, SelectionCriteria(300, -1.0, 1.0))}
    chosen = set(selected_ids(verdicts.values()))
    reasons = {cid: [str(r) for r in verdicts[cid].reasons] for cid in (3, 4, 10)}
    expected = {
        3: ["n_samples 100 < 300", "CPUUTP -1.0135 not in (-1, 1)", "MIR 1.0952 not in (-1, 1)"],
        4: ["n_samples 120 < 300", "MIR 1.0823 not in (-1, 1)"],
        10: ["n_samples 290 < 300", "MIR 1.002 not in (-1, 1)"],
    }
    elapsed = time.perf_counter() - t0
    ok = chosen == REFERENCE_SELECTED and reasons == expected and elapsed < 1.0
    assert record(1, "reference selection matrix", ok, f"selected {sorted(chosen)}, rejected {sorted(reasons)}, {elapsed:.3f}s")


# --- 2 ------------------------------------------------------------------------------

SCHEMA_8 = Schema.numeric([f"x{i}" for i in range(8)], "x7")


def _rel(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), np.finfo(float).tiny)))


def test_criterion_2_federated_equals_pooled():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    data = rng.normal(size=(500, 8)) @ rng.normal(size=(8, 8)) + rng.normal(0, 5, size=8)
    features = [f"x{i}" for i in range(8)]
    ref_mean, ref_var = data.mean(axis=0), data.var(axis=0)
    ref_comps, ref_ratios = svd_components(data, 8)
    worst_rel, worst_cos = 0.0, 1.0
    for split in range(20):
        k = int(rng.integers(2, 11))
        cuts = np.sort(rng.choice(np.arange(1, 500), size=k - 1, replace=False))
        parts = np.split(data[rng.permutation(500)], cuts)
        clients = [ClientDataset(i + 1, SCHEMA_8, p) for i, p in enumerate(parts)]
        with SimFederation([FAClient(c) for c in clients]) as fed:
            server = FAServer(fed)
            spec = QuerySpec(STATISTICAL, (Kernel("count"), Kernel("moments")), Aggregation(ADDITION), tuple(fed.client_ids))
            agg = server.execute_query(spec).aggregated
            pca = server.federated_pca(8, fed.client_ids, features=features)
        sk = [MomentSketch.from_dict(d) for d in agg["moments"]["sketches"]]
        assert agg["count"] == 500 and all(s.n == 500 for s in sk)
        worst_rel = max(worst_rel, _rel([s.mean for s in sk], ref_mean), _rel([s.m2 / s.n for s in sk], ref_var))
        worst_rel = max(worst_rel, _rel(pca.explained_variance_ratio, ref_ratios))
        cos = np.abs(np.sum(pca.components * ref_comps, axis=0))
        worst_cos = min(worst_cos, float(cos.min()))
    elapsed = time.perf_counter() - t0
    ok = worst_rel <= 1e-9 and worst_cos >= 1 - 1e-8 and elapsed < 10
    assert record(2, "federated equals pooled", ok,
                  f"20 splits, worst rel {worst_rel:.2e}, min |cos| 1-{1 - worst_cos:.1e}, {elapsed:.2f}s")


# --- 3 ------------------------------------------------------------------------------


def _sketch_close(a: MomentSketch, b: MomentSketch, rel=1e-9) -> bool:
    """Relative comparison; central moments are scaled by n * sigma^k so near-zero m3 is judged fairly."""
    if a.n != b.n:
        return False
    sigma = math.sqrt(max(b.m2 / b.n, 0.0)) if b.n else 0.0
    return (
        math.isclose(a.mean, b.mean, rel_tol=rel, abs_tol=rel * max(sigma, abs(b.mean)))
        and math.isclose(a.m2, b.m2, rel_tol=rel, abs_tol=rel * b.n * sigma**2)
        and math.isclose(a.m3, b.m3, rel_tol=rel, abs_tol=rel * b.n * sigma**3)
    )


def test_criterion_3_skewness_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    merge_ok = True
    for _ in range(1000):
        a, b, c = (sketch_of(rng.gamma(rng.uniform(0.5, 4), size=int(rng.integers(1, 60))) * rng.uniform(0.1, 50)
                             + rng.uniform(-100, 100)) for _ in range(3))
        merge_ok &= _sketch_close(merge(a, b), merge(b, a))
        merge_ok &= _sketch_close(merge(merge(a, b), c), merge(a, merge(b, c)))
    affine_err, flip_err = 0.0, 0.0
    for _ in range(200):
        x = rng.gamma(rng.uniform(0.5, 4), size=int(rng.integers(3, 200)))
        a, b = rng.uniform(0.01, 100), rng.uniform(-1e3, 1e3)
        for conv in (ADJUSTED, MOMENT_G1):
            base = skewness(sketch_of(x), conv)
            affine_err = max(affine_err, abs(skewness(sketch_of(a * x + b), conv) - base))
            flip_err = max(flip_err, abs(skewness(sketch_of(-a * x + b), conv) + base))
    elapsed = time.perf_counter() - t0
    ok = merge_ok and affine_err <= 1e-9 and flip_err <= 1e-9 and elapsed < 5
    assert record(3, "skewness properties", ok,
                  f"1000 triples merge ok={merge_ok}, affine err {affine_err:.1e}, flip err {flip_err:.1e}, {elapsed:.2f}s")


# --- 4 ------------------------------------------------------------------------------


def test_criterion_4_secure_aggregation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst, all_hidden = 0.0, True
    for size in range(2, 11):
        cohort = sorted(rng.choice(np.arange(1, 100), size=size, replace=False).tolist())
        length = int(rng.integers(1, 33))
        payloads = {c: rng.uniform(-1e4, 1e4, size=length).tolist() for c in cohort}
        epoch = int(rng.integers(0, 2**31))
        masked = [mask_vector(payloads[c], c, cohort, epoch, f"q{size}") for c in cohort]
        for c, m in zip(cohort, masked):
            all_hidden &= m != [encode(v) for v in payloads[c]]
        plain = np.sum([payloads[c] for c in cohort], axis=0)
        worst = max(worst, float(np.max(np.abs(np.asarray(unmask_sum(masked)) - plain))))
        # the same through the server, with masking done by the clients
        clients = [ClientDataset(c, SCHEMA_8, rng.normal(size=(int(rng.integers(2, 30)), 8)) * 100) for c in cohort]
        with SimFederation([FAClient(ds) for ds in clients]) as fed:
            kernels = (Kernel("sum"), Kernel("count"))
            agg = Aggregation(ADDITION)
            server = FAServer(fed)
            sec = server.execute_query(QuerySpec(STATISTICAL, kernels, agg, tuple(fed.client_ids), secure=True))
            ref = server.execute_query(QuerySpec(STATISTICAL, kernels, agg, tuple(fed.client_ids)))
        worst = max(worst, float(np.max(np.abs(np.subtract(sec.aggregated["sum"], ref.aggregated["sum"])))))
        all_hidden &= sec.per_client is None and sec.aggregated["count"] == ref.aggregated["count"]
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and all_hidden and elapsed < 5
    assert record(4, "secure aggregation fidelity", ok,
                  f"cohorts 2-10, max abs err {worst:.1e}, masked != plain: {all_hidden}, {elapsed:.2f}s")


# --- 5 ------------------------------------------------------------------------------


def test_criterion_5_gradient_check():
    t0 = time.perf_counter()
    worst, ok = 0.0, True
    for seed in range(60):
        for loss in ("l1", "l2"):
            w, passed = gradient_check_case(seed, loss)
            worst, ok = max(worst, w), ok and passed
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 10
    assert record(5, "gradient check", ok, f"120 networks, worst rel err {worst:.1e}, {elapsed:.2f}s")


# --- 6 ------------------------------------------------------------------------------


def _scalar(v):
    return ModelParams((1, 1), (np.array([[v]]),), (np.array([0.0]),))


def test_criterion_6_fedavg_contract():
    t0 = time.perf_counter()
    examples = fedavg([ClientUpdate(1, _scalar(0.0), 1), ClientUpdate(2, _scalar(1.0), 3)]).weights[0][0, 0] == 0.75
    p = init_model(6)
    examples &= fedavg([ClientUpdate(1, p, 42)]).equals(p)
    examples &= fedavg([ClientUpdate(i, p, i) for i in range(1, 8)]).equals(p)
    rng = np.random.default_rng(6)
    convex = True
    for _ in range(100):
        ups = [ClientUpdate(i, init_model(int(rng.integers(0, 2**31)), (3, 4, 1)), int(rng.integers(1, 1000)))
               for i in range(int(rng.integers(1, 11)))]
        avg = fedavg(ups)
        for i, t in enumerate(avg.tensors()):
            stack = np.stack([u.params.tensors()[i] for u in ups])
            convex &= bool(np.all(stack.min(axis=0) <= t) and np.all(t <= stack.max(axis=0)))
    elapsed = time.perf_counter() - t0
    ok = bool(examples) and convex and elapsed < 5
    assert record(6, "FedAvg contract", ok, f"examples exact: {bool(examples)}, 100 sets convex: {convex}, {elapsed:.2f}s")


# --- 7 and 8 ------------------------------------------------------------------------

SEEDS = range(10)


@pytest.fixture(scope="module")
def seed_reports(tmp_path_factory):
    out = tmp_path_factory.mktemp("seeds")
    reports, paths = [], []
    t0 = time.perf_counter()
    for seed in SEEDS:
        cfg = replace(ExperimentConfig().with_seed(seed), output_dir=str(out / f"seed{seed}"))
        report = run_experiment(cfg)
        reports.append(report)
        paths.append(write_report(report, cfg.output_dir)[0])
    return reports, paths, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_7_fa_assisted_beats_baseline(seed_reports):
    reports, _, elapsed = seed_reports
    finals = [(r["final"]["fa_assisted_mae"], r["final"]["baseline_mae"]) for r in reports]
    wins = sum(fa <= base for fa, base in finals)
    # both arms are trained from the model whose digest the report records
    shared_init = all(
        r["initial_model_sha256"]
        == hashlib.sha256(to_bytes(init_model(r["config"]["train"]["seed"], (8, *r["config"]["model"]["hidden"], 1)))).hexdigest()
        for r in reports
    )
    ok = wins >= 8 and shared_init and elapsed < 300
    detail = ", ".join(f"{fa:.2f}/{base:.2f}" for fa, base in finals)
    assert record(7, "FA-assisted MAE <= baseline", ok, f"{wins}/10 seeds, fa/base: {detail}, {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_8_replay(seed_reports, capsys):
    _, paths, _ = seed_reports
    codes = [cli_run(["replay", "--report", str(p)]) for p in paths]
    capsys.readouterr()
    ok = all(c == EXIT_OK for c in codes)
    assert record(8, "replay reproduces reports", ok, f"exit codes {codes}")


# --- 9 ------------------------------------------------------------------------------


def _random_json(rng, depth=0):
    kind = int(rng.integers(0, 7 if depth < 3 else 5))
    if kind == 0:
        return None
    if kind == 1:
        return bool(rng.integers(0, 2))
    if kind == 2:
        return int(rng.integers(-(2**53), 2**53))
    if kind == 3:
        return float(rng.normal() * 10.0 ** rng.integers(-300, 300))
    if kind == 4:
        return "".join(chr(int(c)) for c in rng.integers(32, 0x2FFF, size=int(rng.integers(0, 12))))
    if kind == 5:
        return [_random_json(rng, depth + 1) for _ in range(int(rng.integers(0, 4)))]
    return {f"k{i}": _random_json(rng, depth + 1) for i in range(int(rng.integers(0, 4)))}


def _random_envelope(rng) -> Envelope:
    kinds = sorted(KINDS)
    kind = kinds[int(rng.integers(0, len(kinds)))]
    payload = {key: _random_json(rng) for key in sorted(REQUIRED_KEYS[kind])}
    payload.update({f"extra{i}": _random_json(rng) for i in range(int(rng.integers(0, 3)))})
    correlates = f"{int(rng.integers(0, 2**63)):x}" if kind in REPLY_KINDS or rng.integers(0, 2) else None
    return Envelope(kind, payload, msg_id=f"{int(rng.integers(0, 2**63)):x}", correlates=correlates)


def test_criterion_9_transport():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    round_trips = 0
    for _ in range(10_000):
        env = _random_envelope(rng)
        round_trips += unframe(frame(env)) == env

    cfg = ExperimentConfig().with_seed(9)
    cfg = replace(cfg, train=replace(cfg.train, rounds=5))
    data = materialize(cfg)
    sim = run_experiment(cfg, data=data)
    with TcpFederation("127.0.0.1:0") as fed:
        threads = [threading.Thread(target=run_client, args=(FAClient(ds), fed.address), daemon=True) for ds in data[0]]
        for t in threads:
            t.start()
        fed.wait_for_clients(len(data[0]), 30.0)
        tcp = run_experiment(cfg, fed, data)
    identical = canonical(stable_view(sim)) == canonical(stable_view(tcp))
    elapsed = time.perf_counter() - t0
    ok = round_trips == 10_000 and identical and elapsed < 30
    assert record(9, "transport", ok, f"{round_trips}/10000 round trips, sim == tcp report: {identical}, {elapsed:.1f}s")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
