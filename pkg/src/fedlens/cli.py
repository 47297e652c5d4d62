"""Command-line entry point.

    fedlens run --config exp.toml            full experiment in sim mode
    fedlens serve --config exp.toml          TCP server; waits for all clients
    fedlens client --connect HOST:PORT --data client_01.csv
    fedlens partition --config exp.toml --out-dir parts/
    fedlens gen-synth --config exp.toml --out-dir parts/
    fedlens query --spec q.json [--config exp.toml]
    fedlens replay --report out/report.json

Exit status: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from fedlens.client import FAClient
from fedlens.core import QuerySpec
from fedlens.data_io import load_client_csv, write_csv, write_report
from fedlens.errors import FedLensError
from fedlens.fa.engine import FAServer
from fedlens.pipeline import CSV, SYNTHETIC, ExperimentConfig, load_config, materialize, replay, run_experiment
from fedlens.transport.sim import SimFederation
from fedlens.transport.tcp import TcpFederation, run_client

log = logging.getLogger("fedlens")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


class JsonLineFormatter(logging.Formatter):
    def format(self, record):
        doc = {"ts": record.created, "level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        if record.exc_info:
            doc["exc"] = self.formatException(record.exc_info)
        return json.dumps(doc)


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(getattr(logging, level.upper(), logging.INFO))


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--log-level", default="warning", choices=["debug", "info", "warning", "error"])

    p = _Parser(prog="fedlens", description="Federated analytics and FA-assisted federated learning")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", parents=[common], help="run a full experiment in sim mode")
    run.add_argument("--config")
    run.add_argument("--seed", type=int)
    run.add_argument("--out-dir")

    serve = sub.add_parser("serve", parents=[common], help="TCP server: run the experiment over remote clients")
    serve.add_argument("--config")
    serve.add_argument("--bind")
    serve.add_argument("--seed", type=int)
    serve.add_argument("--out-dir")
    serve.add_argument("--wait", type=float, default=120.0, help="seconds to wait for registrations")

    client = sub.add_parser("client", parents=[common], help="TCP client serving one CSV partition")
    client.add_argument("--connect")
    client.add_argument("--data", required=True)
    client.add_argument("--client-id", type=int, required=True, help="preferred id (partition index)")
    client.add_argument("--config")

    for name in ("partition", "gen-synth"):
        sp = sub.add_parser(name, parents=[common], help=f"write client CSVs ({name})")
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir")

    query = sub.add_parser("query", parents=[common], help="run one FA query in sim mode")
    query.add_argument("--spec", required=True)
    query.add_argument("--config")
    query.add_argument("--seed", type=int)

    rep = sub.add_parser("replay", parents=[common], help="re-run a report and verify its curves")
    rep.add_argument("--report", required=True)
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "out_dir", None):
        cfg = replace(cfg, output_dir=args.out_dir)
    transport = cfg.transport
    bind = getattr(args, "bind", None) or os.environ.get("FEDLENS_BIND")
    if bind:
        transport = replace(transport, bind=bind)
    if getattr(args, "connect", None):
        transport = replace(transport, connect=args.connect)
    return replace(cfg, transport=transport)


def cmd_run(args) -> int:
    cfg = _config(args)
    report = run_experiment(cfg)
    jpath, cpath = write_report(report, cfg.output_dir)
    print(json.dumps({"report": str(jpath), "metrics": str(cpath), "final": report["final"],
                      "selected": report["selection"]["selected"]}))
    return EXIT_OK


def cmd_serve(args) -> int:
    cfg = _config(args)
    cfg = replace(cfg, transport=replace(cfg.transport, mode="tcp"))
    data = materialize(cfg)
    with TcpFederation(cfg.transport.bind) as fed:
        log.info("listening on %s for %d clients", fed.address, len(data[0]))
        print(json.dumps({"listening": fed.address}), flush=True)
        fed.wait_for_clients(len(data[0]), args.wait)
        report = run_experiment(cfg, fed, data)
    jpath, cpath = write_report(report, cfg.output_dir)
    print(json.dumps({"report": str(jpath), "metrics": str(cpath), "final": report["final"]}))
    return EXIT_OK


def cmd_client(args) -> int:
    cfg = _config(args)
    ds = load_client_csv(args.data, args.client_id, cfg.data_schema)
    run_client(FAClient(ds), cfg.transport.connect)
    return EXIT_OK


def _write_parts(cfg: ExperimentConfig, out_dir: str) -> int:
    clients, holdout = materialize(cfg)
    out = Path(out_dir)
    for ds in clients:
        write_csv(out / f"client_{ds.client_id:02d}.csv", ds.schema, ds.rows)
    write_csv(out / "holdout.csv", holdout.schema, holdout.rows)
    print(json.dumps({"out_dir": str(out), "clients": [ds.n_samples for ds in clients], "holdout": holdout.n_samples}))
    return EXIT_OK


def cmd_partition(args) -> int:
    cfg = _config(args)
    if cfg.source != CSV:
        raise UsageError("partition needs a config with data.source = \"csv\"")
    return _write_parts(cfg, cfg.output_dir)


def cmd_gen_synth(args) -> int:
    cfg = replace(_config(args), source=SYNTHETIC)
    return _write_parts(cfg, cfg.output_dir)


def cmd_query(args) -> int:
    cfg = _config(args)
    doc = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    clients, _ = materialize(cfg)
    with SimFederation([FAClient(ds) for ds in clients], cfg.transport.link()) as fed:
        doc.setdefault("cohort", fed.client_ids)
        spec = QuerySpec.from_dict(doc)
        result = FAServer(fed, cfg.transport.timeout_s).execute_query(spec)
    print(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_replay(args) -> int:
    report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    ok, diffs = replay(report)
    if not ok:
        for d in diffs:
            print(f"mismatch: {d}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"replay": "ok", "report": args.report}))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "serve": cmd_serve,
    "client": cmd_client,
    "partition": cmd_partition,
    "gen-synth": cmd_gen_synth,
    "query": cmd_query,
    "replay": cmd_replay,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    _setup_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"fedlens {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FedLensError, OSError, ValueError, KeyError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        print(f"fedlens {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
