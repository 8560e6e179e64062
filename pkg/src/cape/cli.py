"""Command-line entry points: headless experiments, dataset preparation, and
serving interactive sessions.

    cape simulate --config cfg.json --seeds 10 --out-dir runs/
    cape compare  --config cfg.json --policies EIG,RND --seeds 10 --out-dir cmp/
    cape prepare-effect-graph data.csv effect.json --top-variance 50
    cape serve    --config cfg.json --bind 127.0.0.1:8000

Every command is deterministic under fixed seeds (serve with a human expert
excepted).  CAPE_LOG_LEVEL in {error, warn, info, debug} controls verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .expert import ConfigurationError
from .oracles import (build_effect_graph, effect_graph_to_dict,
                      load_interventional_csv)
from .priors import top_variance_columns
from .session import (METRIC_COLUMNS, SessionConfig, build_prior, load_config,
                      run_session)

log = logging.getLogger("cape.cli")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = os.environ.get("CAPE_LOG_LEVEL", "warn").lower()
    logging.basicConfig(level=_LOG_LEVELS.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _apply_overrides(config: SessionConfig, args) -> SessionConfig:
    updates = {}
    if getattr(args, "policy", None):
        updates["policy"] = args.policy
    if getattr(args, "rounds", None):
        updates["rounds"] = args.rounds
    if getattr(args, "particles", None):
        updates["particles"] = args.particles
    return replace(config, **updates) if updates else config


def _seed_list(base_seed: int, count: int) -> list[int]:
    return [base_seed + k for k in range(count)]


def cmd_simulate(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out_root = Path(args.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    per_seed_rows = []
    for seed in _seed_list(config.seed, args.seeds):
        cfg = replace(config, seed=seed)
        result = run_session(cfg, out_dir=out_root / f"seed_{seed}")
        per_seed_rows.append(result.rows)
        log.info("seed %d finished after %d rounds", seed, len(result.rows))
    _write_aggregate_csv(out_root / "aggregate.csv", per_seed_rows)
    print(f"wrote {len(per_seed_rows)} session(s) under {out_root}")
    return 0


def cmd_compare(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    policies = [p.strip().upper() for p in args.policies.split(",") if p.strip()]
    if len(policies) < 2:
        raise ConfigurationError("compare needs at least two policies")
    out_root = Path(args.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    long_rows = []
    for seed in _seed_list(config.seed, args.seeds):
        base = replace(config, seed=seed)
        # one prior per seed, shared across policies so comparisons are matched
        prior_pset, w_star, a_star = build_prior(base, rngmod.stream(seed, "prior"))
        hashes = set()
        for policy in policies:
            cfg = replace(base, policy=policy)
            result = run_session(cfg, out_dir=out_root / f"{policy}_seed_{seed}",
                                 prior_pset=prior_pset, w_star=w_star,
                                 a_star=a_star)
            hashes.add(result.prior_hash)
            for row in result.rows:
                for metric, value in row["metrics"].items():
                    long_rows.append((policy, seed, row["round"], metric, value))
        if len(hashes) != 1:
            raise RuntimeError(f"matched-seed priors diverged for seed {seed}")
        log.info("seed %d: matched prior %s", seed, next(iter(hashes))[:12])
    out_csv = out_root / "compare.csv"
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "seed", "round", "metric", "value"])
        writer.writerows(long_rows)
    print(f"wrote {out_csv}")
    return 0


def cmd_prepare_effect_graph(args) -> int:
    genes, controls, interventions = load_interventional_csv(args.data_csv)
    if args.top_variance:
        keep = top_variance_columns(controls, args.top_variance)
        keep_set = {int(k) for k in keep}
        remap = {old: new for new, old in enumerate(sorted(keep_set))}
        genes = [genes[k] for k in sorted(keep_set)]
        controls = controls[:, sorted(keep_set)]
        interventions = [(remap[t], samples[:, sorted(keep_set)])
                         for t, samples in interventions if t in keep_set]
    a_star = build_effect_graph(controls, interventions, alpha=args.alpha,
                                min_effect=args.min_effect,
                                min_group_n=args.min_group_n)
    with open(args.out_json, "w") as fh:
        json.dump(effect_graph_to_dict(a_star, genes), fh)
    d = a_star.shape[0]
    n_edges = int(a_star.sum())
    density = n_edges / (d * (d - 1)) if d > 1 else float("nan")
    print(f"effect graph: {d} genes, {n_edges} edges, "
          f"density {n_edges}/{d * (d - 1)} = {density:.4f}")
    return 0


def cmd_serve(args) -> int:
    from .server import start_server
    from .session import _write_checkpoint

    config = _apply_overrides(load_config(args.config), args)
    ui_dir = None
    if not args.no_ui:
        candidate = Path(args.ui_dir) if args.ui_dir else _default_ui_dir()
        if candidate and candidate.is_dir():
            ui_dir = candidate
        else:
            log.warning("UI assets not found; serving API only")
    out_dir = Path(args.out_dir) if args.out_dir else None
    server, thread, holder = start_server(config, bind=args.bind,
                                          ui_dir=ui_dir, out_dir=out_dir)
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port}/ (policy {config.policy}, "
          f"oracle {config.oracle.get('kind')})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        state = holder.get()
        if state is not None and out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            _write_checkpoint(state, out_dir)
            print(f"checkpointed round {state.t} to {out_dir}/checkpoint.json")
    finally:
        server.shutdown()
        server.server_close()
    return 0


def _default_ui_dir():
    here = Path(__file__).resolve()
    for base in [here.parents[2], here.parents[1]]:
        candidate = base / "frontend" / "dist"
        if candidate.is_dir():
            return candidate
    return None


def _write_aggregate_csv(path, per_seed_rows) -> None:
    """Per-round mean and std of every metric across seeds."""
    max_rounds = max((len(rows) for rows in per_seed_rows), default=0)
    metrics = [c for c in METRIC_COLUMNS
               if any(c in row["metrics"] for rows in per_seed_rows for row in rows)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round"]
                        + [f"{m}_mean" for m in metrics]
                        + [f"{m}_std" for m in metrics])
        for t in range(max_rounds):
            cells = [t + 1]
            means, stds = [], []
            for m in metrics:
                values = [rows[t]["metrics"][m] for rows in per_seed_rows
                          if t < len(rows) and m in rows[t]["metrics"]
                          and rows[t]["metrics"][m] is not None
                          and not (isinstance(rows[t]["metrics"][m], float)
                                   and math.isnan(rows[t]["metrics"][m]))]
                if values:
                    means.append(float(np.mean(values)))
                    stds.append(float(np.std(values)))
                else:
                    means.append("")
                    stds.append("")
            writer.writerow(cells + means + stds)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cape",
        description="Expert-in-the-loop Bayesian causal discovery engine")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run headless sessions over seeds")
    sim.add_argument("--config", required=True)
    sim.add_argument("--seeds", type=int, default=1,
                     help="number of consecutive seeds starting at the config seed")
    sim.add_argument("--policy", choices=("EIG", "UNC", "RND", "STE"))
    sim.add_argument("--rounds", type=int)
    sim.add_argument("--particles", type=int)
    sim.add_argument("--out-dir", default="cape_runs")
    sim.set_defaults(func=cmd_simulate)

    cmp_ = sub.add_parser("compare", help="matched-seed policy comparison")
    cmp_.add_argument("--config", required=True)
    cmp_.add_argument("--policies", required=True,
                      help="comma-separated, e.g. EIG,RND")
    cmp_.add_argument("--seeds", type=int, default=1)
    cmp_.add_argument("--rounds", type=int)
    cmp_.add_argument("--particles", type=int)
    cmp_.add_argument("--out-dir", default="cape_compare")
    cmp_.set_defaults(func=cmd_compare)

    prep = sub.add_parser("prepare-effect-graph",
                          help="build the perturbation effect-graph oracle")
    prep.add_argument("data_csv")
    prep.add_argument("out_json")
    prep.add_argument("--alpha", type=float, default=0.05)
    prep.add_argument("--min-effect", type=float, default=0.3)
    prep.add_argument("--min-group-n", type=int, default=25)
    prep.add_argument("--top-variance", type=int)
    prep.set_defaults(func=cmd_prepare_effect_graph)

    srv = sub.add_parser("serve", help="serve the HTTP API (and UI) for a session")
    srv.add_argument("--config", required=True)
    srv.add_argument("--bind", default="127.0.0.1:8000")
    srv.add_argument("--no-ui", action="store_true")
    srv.add_argument("--ui-dir")
    srv.add_argument("--out-dir")
    srv.add_argument("--policy", choices=("EIG", "UNC", "RND", "STE"))
    srv.add_argument("--rounds", type=int)
    srv.add_argument("--particles", type=int)
    srv.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
