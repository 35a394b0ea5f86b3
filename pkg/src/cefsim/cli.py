"""Command-line driver.

Exit codes: 0 success, 1 configuration error, 2 pipeline error, 3 oracle mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from .cdm import CdmKind
from .config import ConfigError, load_config
from .pipeline import MODES, Pipeline, PipelineError

EXIT_OK, EXIT_CONFIG, EXIT_PIPELINE, EXIT_ORACLE = 0, 1, 2, 3

log = logging.getLogger("cefsim")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cefsim", description="CEF-aware fault injection for collision-detection memories")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, kind=True):
        sp.add_argument("--config", help="YAML or JSON experiment config (defaults if omitted)")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--jobs", type=int, help="worker processes")
        if kind:
            sp.add_argument("--kind", action="append", help="CDM kind (repeatable; default: all in config)")

    common(sub.add_parser("motionset", help="generate the motion set"), kind=False)
    common(sub.add_parser("cef", help="phase 1: per-bit CEF and critical spaces"))
    sp = sub.add_parser("fi", help="fault-injection campaigns (phase 2, exhaustive, uniform)")
    common(sp)
    sp.add_argument("--mode", action="append", choices=MODES, help="FI mode (repeatable; default: config)")
    common(sub.add_parser("plan", help="protection orderings, FIT and overhead curves"))
    common(sub.add_parser("compare", help="cross-architecture FIT table and CEF distributions"), kind=False)
    sp = sub.add_parser("run", help="all stages in order")
    common(sp, kind=False)
    sp = sub.add_parser("oracle", help="brute-force verification on a tiny instance")
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--kind", action="append")
    sp.add_argument("--pairs", type=int, default=1000, help="random (bit, scenario) pairs per kind")
    return p


def _kinds(values):
    return [CdmKind.parse(v) for v in values] if values else None


def _oracle(args) -> int:
    from .environments import generate_scenarios
    from .fi import run_phase1
    from .geometry import GridSpec
    from .oracle import check_cef_report, check_fast_path, scene_cef, reference_scenes
    from .robot import ArmSpec, generate_motion_set

    failures = 0
    for scene in reference_scenes():
        got = scene_cef(scene)
        ok = got == scene.expected_cef
        failures += not ok
        print(f"scene {scene.name} {scene.kind.value}: cef={got} expected={scene.expected_cef} {'ok' if ok else 'MISMATCH'}")
    arm = ArmSpec((14.0, 12.0, 9.0, 7.0), 5.0)
    grid = GridSpec(8, 2 * arm.reach)
    ms = generate_motion_set(arm, grid, 16, 32, args.seed)
    obstacles = generate_scenarios("D4", 500, grid, args.seed).obstacle_matrix()
    for kind in _kinds(args.kind) or list(CdmKind):
        t = time.perf_counter()
        report, cache = run_phase1(ms, kind)
        n, bad, n_bad = check_cef_report(ms, report, cache)
        pairs, sdcc, mism = check_fast_path(ms, report, cache, obstacles, args.pairs, args.seed)
        failures += n_bad + mism
        print(
            f"{kind.value}: {n} bits, cef mismatches={n_bad}; {pairs} pairs ({sdcc} sdcc), fast-path mismatches={mism} "
            f"[{time.perf_counter() - t:.1f}s]"
        )
        for b in bad:
            print(f"  motion {b.motion_id} bit {b.bit}: {b.what}")
    return EXIT_ORACLE if failures else EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "oracle":
        return _oracle(args)
    try:
        cfg = load_config(args.config, {"seed": args.seed, "out_dir": args.out, "jobs": args.jobs})
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        pipe = Pipeline(cfg)
        if args.command == "motionset":
            outs = [pipe.motionset()]
        elif args.command == "cef":
            outs = pipe.cef(_kinds(args.kind))
        elif args.command == "fi":
            outs = pipe.fi(_kinds(args.kind), args.mode)
        elif args.command == "plan":
            outs = pipe.plan(_kinds(args.kind))
        elif args.command == "compare":
            outs = pipe.compare()
        else:
            pipe.run_all()
            outs = [pipe.manifest.path]
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (PipelineError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PIPELINE
    digests = pipe.manifest.artifact_digests()
    for o in outs:
        print(f"{o}  {digests.get(o.name, '')}")
    if args.command == "fi":
        for name, st in pipe.manifest.doc["stages"].get("fi", {}).get("run_counters", {}).items():
            if name.startswith("fi_cef_aware"):
                doc = json.loads((pipe.out / f"{name}.json").read_text())
                print(f"{name}: runs={st} exhaustive={doc['meta']['exhaustive_runs']} speedup={doc['meta']['speedup']:.1f}x")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
