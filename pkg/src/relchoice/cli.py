"""Command line entry point ``relchoice``.

Subcommands::

    synth       generate a synthetic event log and its ground truth
    sample      reduce an event log to sampled choice sets (long CSV)
    fit         fit a conditional logit to a reduced CSV
    demix       fit a de-mixed model to an event log
    experiment  run a JSON experiment plan to a results CSV
    summarize   aggregate a results CSV into per-grid-point statistics
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import harness
from .clogit import fit
from .demix import ModePartition, fit_demixed
from .event_graph import GraphState, read_events_csv, replay, write_events_csv
from .features import resolve_spec
from .reduce import read_reduced_csv, reduce_events, write_reduced_csv
from .sampling import even_quotas, policy_from_dict
from .synth import GeneratorConfig, generate, write_truth

log = logging.getLogger("relchoice")


def _load_json_or_name(value: str):
    """A path to a JSON file, an inline JSON document, or a builtin name."""
    if os.path.exists(value):
        with open(value, encoding="utf-8") as fh:
            return json.load(fh)
    if value.lstrip().startswith("{"):
        return json.loads(value)
    return value


def _load_log(path: str, n_nodes: int | None, warmup: int):
    events, seen, _ = read_events_csv(path)
    n = max(seen, n_nodes or 0)
    if not 0 <= warmup <= len(events):
        raise SystemExit(f"--warmup {warmup} outside [0, {len(events)}]")
    state = replay(GraphState(n), events[:warmup])
    return state, events[warmup:]


def _read_sidecar(path) -> dict:
    """Spec hash and sampling config written next to a reduced CSV, if any."""
    side = Path(str(path) + ".meta.json")
    if not side.exists():
        return {}
    doc = json.loads(side.read_text(encoding="utf-8"))
    return {k: doc.get(k) for k in ("spec_hash", "sampling_config")}


def _policy_from_args(args) -> dict:
    if args.sampling == "full":
        return {"policy": "full"}
    if args.sampling == "stratified":
        if args.quotas:
            parts = [int(x) for x in args.quotas.split(",")]
            if len(parts) != 3:
                raise SystemExit("--quotas takes three integers: friend,fof,rest")
            return {"policy": "stratified",
                    "quotas": dict(zip(("friend", "fof", "rest"), parts))}
        return {"policy": "stratified",
                "quotas": {g.name.lower(): v for g, v in even_quotas(args.s).items()}}
    return {"policy": args.sampling, "s": args.s}


def cmd_synth(args) -> int:
    cfg = _load_json_or_name(args.config) if args.config else {}
    if not isinstance(cfg, dict):
        raise SystemExit("--config must be a JSON file or document")
    if args.seed is not None:
        cfg["seed"] = args.seed
    config = GeneratorConfig.from_dict(cfg)
    t0 = time.perf_counter()
    run = generate(config)
    write_events_csv(run.all_events, args.out)
    if args.truth:
        write_truth(config, args.truth)
    extra = ""
    if run.mode is not None:
        extra = f", {int(np.sum(run.mode == 0))} local, {int(np.sum(run.mode >= 2))} fallback"
    print(f"wrote {len(run.all_events)} events ({config.n_seed} seed{extra}) "
          f"to {args.out} in {time.perf_counter() - t0:.1f}s")
    return 0


def cmd_sample(args) -> int:
    spec = resolve_spec(_load_json_or_name(args.spec))
    state, events = _load_log(args.events, args.nodes, args.warmup)
    pol_dict = _policy_from_args(args)
    policy = policy_from_dict(pol_dict)
    data = reduce_events(state, events, spec, {"cli": policy}, args.seed)["cli"]
    write_reduced_csv(data, args.out, spec.names)
    meta = {"spec": spec.to_dict(), "spec_hash": spec.spec_hash(),
            "sampling_config": {**policy.to_dict(), "seed": args.seed,
                                "warmup": args.warmup}}
    with open(str(args.out) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    print(f"wrote {len(data)} records, {data.n_rows} rows to {args.out}")
    return 0


def cmd_fit(args) -> int:
    data = read_reduced_csv(args.data)
    res = fit(data, tol=args.tol, max_iter=args.max_iter, names=data.names)
    res.meta.update(_read_sidecar(args.data))
    text = res.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    if not res.converged:
        log.warning("fit did not converge: %s", res.message)
        return 2
    return 0


def cmd_demix(args) -> int:
    doc = _load_json_or_name(args.partition) if args.partition else None
    partition = ModePartition.local_rest() if doc is None else ModePartition.from_dict(doc)
    state, events = _load_log(args.events, args.nodes, args.warmup)
    res = fit_demixed(partition, state, events, seed=args.seed, tol=args.tol,
                      workers=harness.pool_size(args.workers))
    text = res.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    print(res.table(), file=sys.stderr)
    return 0


def cmd_experiment(args) -> int:
    plan = harness.ExperimentPlan.from_json(args.plan)
    if args.full_scale:
        plan = plan.at_full_scale()
    if args.replicates is not None:
        plan.replicates = args.replicates
    t0 = time.perf_counter()
    rows = harness.run_plan(plan, workers=args.workers)
    harness.write_results_csv(rows, args.out)
    if args.summary:
        harness.write_summary_csv(harness.summarize(rows), args.summary)
    failed = sum(not r.converged for r in rows)
    print(f"{plan.name}: {len(rows)} fits ({failed} not converged) "
          f"in {time.perf_counter() - t0:.1f}s -> {args.out}")
    return 0


def cmd_summarize(args) -> int:
    rows = harness.read_results_csv(args.results)
    truth = None
    if args.truth:
        doc = _load_json_or_name(args.truth)
        if "theta" in doc:
            truth = dict(zip(doc["feature_names"], doc["theta"]))
        else:
            truth = {str(k): float(v) for k, v in doc.items()}
    harness.write_summary_csv(harness.summarize(rows, truth), args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relchoice", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("synth", help="generate a synthetic event log")
    q.add_argument("--config", help="generator JSON (file or inline)")
    q.add_argument("--out", required=True)
    q.add_argument("--truth", help="write ground truth JSON here")
    q.add_argument("--seed", type=int)
    q.set_defaults(func=cmd_synth)

    def log_args(q):
        q.add_argument("--events", required=True, help="CSV with header t,src,dst")
        q.add_argument("--warmup", type=int, default=0,
                       help="leading events that only build the graph")
        q.add_argument("--nodes", type=int, help="universe size if larger than max id + 1")
        q.add_argument("--seed", type=int, default=0)

    q = sub.add_parser("sample", help="reduce an event log to sampled choice sets")
    log_args(q)
    q.add_argument("--spec", default="synthetic", help="builtin name or JSON spec")
    q.add_argument("--sampling", choices=("uniform", "stratified", "importance", "full"),
                   default="stratified")
    q.add_argument("--s", type=int, default=24)
    q.add_argument("--quotas", help="friend,fof,rest for stratified sampling")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_sample)

    q = sub.add_parser("fit", help="fit a conditional logit to a reduced CSV")
    q.add_argument("--data", required=True)
    q.add_argument("--tol", type=float, default=1e-8)
    q.add_argument("--max-iter", type=int, default=1000)
    q.add_argument("--out")
    q.set_defaults(func=cmd_fit)

    q = sub.add_parser("demix", help="fit a de-mixed model to an event log")
    log_args(q)
    q.add_argument("--partition", help="partition JSON; default local/rest")
    q.add_argument("--tol", type=float, default=1e-8)
    q.add_argument("--workers", type=int)
    q.add_argument("--out")
    q.set_defaults(func=cmd_demix)

    q = sub.add_parser("experiment", help="run an experiment plan")
    q.add_argument("plan")
    q.add_argument("--out", required=True, help="results CSV")
    q.add_argument("--summary", help="also write a summary CSV")
    q.add_argument("--full-scale", action="store_true",
                   help="full-size generator and replicate count")
    q.add_argument("--replicates", type=int)
    q.add_argument("--workers", type=int)
    q.set_defaults(func=cmd_experiment)

    q = sub.add_parser("summarize", help="summarize a results CSV")
    q.add_argument("results")
    q.add_argument("--truth", help="truth JSON from synth, or a name->value mapping")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_summarize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        if args.verbose:
            raise
        print(f"relchoice {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
