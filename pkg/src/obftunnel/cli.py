"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 construction failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .adversaries import SuiteConfig, run_suite
from .errors import ConstructionFailed, InvalidInput, InvalidParameter, NumericFailure, ParseError
from .experiments import ExperimentConfig, load_config, preset, run, with_trials
from .graph_core import BuildParams, build_instance, forecast_counts
from .quantum_sim import exit_scan
from .serialize import load_instance, save_instance
from .spectral import CollapsedPath, adiabatic_sweep, solve_quasimomenta, write_quasimomenta_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CONSTRUCTION = 4


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON configuration file")
    p.add_argument("--label-bits", type=int, default=argparse.SUPPRESS, help="oracle label width")
    return p


def _params_from_args(a) -> BuildParams:
    cfg = getattr(a, "config", None)
    if cfg:
        with open(cfg) as fh:
            d = json.load(fh)
        d = d.get("params", d)
        if hasattr(a, "seed"):
            d["seed"] = a.seed
        return BuildParams.from_dict(d)
    return BuildParams(
        m=a.m,
        k=a.k,
        ell=a.ell,
        delta=a.delta,
        rounds=a.rounds,
        trees_per_round=a.trees,
        depth_override=tuple(a.depth) if a.depth else None,
        seed=getattr(a, "seed", 0),
        expander_threshold=a.threshold,
        memory_cap=a.memory_cap,
    )


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_build(a) -> int:
    params = _params_from_args(a)
    fc = forecast_counts(params)
    if fc.vertex_count > params.memory_cap:
        raise ConstructionFailed(f"forecast {fc.vertex_count} vertices exceeds cap {params.memory_cap}")
    g, layout = build_instance(params)
    out = getattr(a, "out", None)
    if out:
        save_instance(out, g, layout, params.seed)
    summary = {
        "vertices": g.vertex_count,
        "edges": g.edge_count,
        "max_degree": int(g.degrees.max()),
        "digest": g.digest(),
        "forecast_vertices": fc.vertex_count,
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_spectral(a) -> int:
    out = getattr(a, "out", None)
    if a.action == "quasimomenta":
        sol = solve_quasimomenta(a.ell, a.alpha)
        fh = open(out, "w") if out else sys.stdout
        try:
            write_quasimomenta_csv(sol, fh)
        finally:
            if out:
                fh.close()
        return EXIT_OK
    if a.instance:
        g, layout, _ = load_instance(a.instance)
        base = (g, layout) if layout is not None else g
    else:
        base = CollapsedPath.uniform(a.ell, a.m, 2 * a.m, m=a.m)
    sweep = adiabatic_sweep(base, a.s_grid, a.endpoint_weight)
    fh = open(out, "w") if out else sys.stdout
    try:
        sweep.write_csv(fh)
    finally:
        if out:
            fh.close()
    print(f"min gap {sweep.min_gap!r}", file=sys.stderr)
    return EXIT_OK


def cmd_adversary(a) -> int:
    cfg_path = getattr(a, "config", None)
    if not cfg_path:
        raise InvalidParameter("adversary run needs --config")
    with open(cfg_path) as fh:
        d = json.load(fh)
    if hasattr(a, "seed"):
        d["master_seed"] = a.seed
    if hasattr(a, "label_bits"):
        d["label_bits"] = a.label_bits
    suite = SuiteConfig.from_dict(d)
    instance = None
    if a.instance:
        g, layout, _ = load_instance(a.instance)
        instance = (g, layout)
    stats = run_suite(suite, instance)
    _emit(json.dumps({"config": suite.to_dict(), "stats": stats.to_dict(budget=suite.budget)}, sort_keys=True, indent=1), getattr(a, "out", None))
    return EXIT_OK


def cmd_quantum(a) -> int:
    op = CollapsedPath.uniform(a.ell, a.hop)
    scan = exit_scan(op, a.tmax, a.samples)
    out = getattr(a, "out", None)
    fh = open(out, "w") if out else sys.stdout
    try:
        scan.write_csv(fh)
    finally:
        if out:
            fh.close()
    print(f"best t {scan.best_t!r} probability {scan.best_probability!r}", file=sys.stderr)
    return EXIT_OK


def cmd_run(a) -> int:
    seed = getattr(a, "seed", 0)
    if getattr(a, "config", None):
        cfg = load_config(a.config)
        if hasattr(a, "seed"):
            cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "master_seed": seed})
    elif a.preset:
        cfg = preset(a.preset, seed=seed)
    else:
        raise InvalidParameter("run needs --config or --preset")
    if a.trials is not None:
        cfg = with_trials(cfg, a.trials)
    out = getattr(a, "out", None)
    if out:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "out_dir": out})
    if hasattr(a, "label_bits"):
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "label_bits": a.label_bits})
    rec = run(cfg)
    if not out:
        print(rec.to_json())
    else:
        print(f"wrote {Path(out) / 'record.json'}")
    return EXIT_OK if not rec.errors else EXIT_NUMERIC


def cmd_report(a) -> int:
    with open(a.record) as fh:
        rec = json.load(fh)
    lines = [f"experiment {rec['name']} ({rec['config_hash'][:12]})"]
    for tag, v in rec["variants"].items():
        inst = v.get("instance", {})
        lines.append(f"[{tag}] n={inst.get('vertex_count')} edges={inst.get('edge_count')}")
        for name, st in v.get("adversaries", {}).items():
            lo, hi = st["ci95"]
            lines.append(f"  {name}: hit rate {st['hit_rate']:.3f} [{lo:.3f}, {hi:.3f}] over {st['trials']} trials")
        spec = v.get("spectral", {})
        if "min_gap" in spec:
            lines.append(f"  min adiabatic gap {spec['min_gap']:.4g}")
        if "weights" in spec:
            w = spec["weights"]
            lines.append(f"  l2/l1 on original {w['l2_fraction_on_original']:.4f} / {w['l1_fraction_on_original']:.4f}")
        for T, p in v.get("quantum", {}).get("adiabatic", {}).items():
            lines.append(f"  adiabatic T={T}: P(EXIT)={p:.4f}")
    for name, c in rec.get("comparisons", {}).get("classical", {}).items():
        lines.append(f"{name}: drop {c['drop']:.3f}, one-sided p={c['p_value']:.3g}")
    for stage, msg in rec.get("errors", {}).items():
        lines.append(f"ERROR {stage}: {msg}")
    _emit("\n".join(lines) + "\n", getattr(a, "out", None))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    p = argparse.ArgumentParser(prog="obftunnel", parents=[common], description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", parents=[common], help="build an instance, optionally save it as TWG1")
    b.add_argument("--m", type=int, default=2)
    b.add_argument("--k", type=int, default=1)
    b.add_argument("--ell", type=int, default=5)
    b.add_argument("--delta", type=float, default=1 / 16)
    b.add_argument("--rounds", type=int, default=None)
    b.add_argument("--trees", type=int, default=None, help="trees per round")
    b.add_argument("--depth", type=int, nargs="*", default=None, help="tree depth per level (level 1 first)")
    b.add_argument("--threshold", type=float, default=None, help="expander lambda2 threshold (inf disables)")
    b.add_argument("--memory-cap", type=int, default=20_000_000)
    b.set_defaults(func=cmd_build)

    s = sub.add_parser("spectral", parents=[common], help="adiabatic gap sweep or quasimomenta dump")
    s.add_argument("action", choices=["sweep", "quasimomenta"])
    s.add_argument("--ell", type=int, default=5)
    s.add_argument("--m", type=float, default=16.0, help="hop weight of the collapsed path")
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("--s-grid", type=int, default=201)
    s.add_argument("--endpoint-weight", type=float, default=None)
    s.add_argument("--instance", default=None, help="TWG1 file instead of a collapsed path")
    s.set_defaults(func=cmd_spectral)

    ad = sub.add_parser("adversary", parents=[common], help="run an adversary suite")
    ad.add_argument("action", choices=["run"])
    ad.add_argument("--instance", default=None, help="TWG1 file (otherwise built from the config)")
    ad.set_defaults(func=cmd_adversary)

    q = sub.add_parser("quantum", parents=[common], help="EXIT-probability scan on a path")
    q.add_argument("action", choices=["scan"])
    q.add_argument("--ell", type=int, default=21)
    q.add_argument("--tmax", type=float, default=200.0)
    q.add_argument("--samples", type=int, default=2000)
    q.add_argument("--hop", type=float, default=1.0)
    q.set_defaults(func=cmd_quantum)

    r = sub.add_parser("run", parents=[common], help="run a full experiment")
    r.add_argument("--preset", choices=["separation", "smoke"], default=None)
    r.add_argument("--trials", type=int, default=None)
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("report", parents=[common], help="summarize a record.json")
    rp.add_argument("record")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except (InvalidParameter, InvalidInput, ParseError, KeyError, FileNotFoundError, json.JSONDecodeError, TypeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConstructionFailed as e:
        print(f"construction failure: {e}", file=sys.stderr)
        return EXIT_CONSTRUCTION


if __name__ == "__main__":
    sys.exit(main())
