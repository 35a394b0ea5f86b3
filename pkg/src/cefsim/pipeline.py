"""Pipeline stages and the run manifest.

Each stage reads only artifacts written by earlier stages, checks their
digests against the manifest, and records its own outputs. Artifacts::

    motionset.json                      motionset
    cef_<K>.bin [cef_<K>.csv]           cef
    scenarios_<D>.json                  fi
    fi_cef_aware_<K>_<D>.{json,csv}     fi
    fi_exhaustive_<K>_<D>.{bin,json}    fi (plan density only)
    fi_uniform_<K>_<D>.json             fi (plan density only)
    plan_<K>.{csv,json}                 plan
    compare.{csv,json}, cef_cdf.csv     compare
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

from . import __version__
from .cdm import CdmKind
from .config import ExperimentConfig
from .environments import ScenarioBatch, generate_scenarios
from .fi import (
    exhaustive_fi,
    load_exhaustive,
    load_phase1,
    phase2_sdcc,
    run_phase1,
    save_exhaustive,
    save_phase1,
    table_from_dict,
    table_to_dict,
    uniform_statistical_fi,
    write_cef_csv,
    write_table_csv,
)
from .planner import (
    ACCELERATORS,
    HARDENING,
    Heuristic,
    PlannerAux,
    PlannerError,
    access_counts,
    box_volumes,
    cef_cdf,
    fit_rate,
    fit_reduction_curve,
    full_protection_overhead,
    overhead_curve,
    rank_structures,
    sil_costs,
    sil_verdict,
)
from .robot import MotionSet, generate_motion_set
from .seeding import seed_sequence
from .store import dumps_json, sha256_file

log = logging.getLogger(__name__)

STAGES = ("motionset", "cef", "fi", "plan", "compare")
MODES = ("cef_aware", "exhaustive", "uniform_statistical")


class PipelineError(RuntimeError):
    pass


class Manifest:
    def __init__(self, out: Path, cfg: ExperimentConfig):
        self.out = out
        self.path = out / "manifest.json"
        self.cfg = cfg
        doc = None
        if self.path.exists():
            doc = json.loads(self.path.read_text())
            if doc.get("config_digest") != cfg.digest():
                log.warning("config changed since the last run in %s; earlier stages must be rerun", out)
                doc = None
        self.doc = doc or {
            "config_digest": cfg.digest(),
            "tool_version": __version__,
            "seed": cfg.seed,
            "stages": {},
        }

    def artifact_digests(self) -> dict[str, str]:
        out = {}
        for st in self.doc["stages"].values():
            out.update(st["outputs"])
        return dict(sorted(out.items()))

    def require(self, rel: str, producer: str) -> Path:
        path = self.out / rel
        recorded = self.artifact_digests().get(rel)
        if recorded is None or not path.exists():
            raise PipelineError(f"missing artifact {rel}: run `cefsim {producer}` first")
        if sha256_file(path) != recorded:
            raise PipelineError(f"stale artifact {rel} (digest differs from manifest): rerun `cefsim {producer}`")
        return path

    def record(self, stage: str, outputs: list[str], inputs: list[str], seconds: float, counters: dict | None = None):
        prev = self.doc["stages"].get(stage, {"outputs": {}, "inputs": {}, "run_counters": {}, "wall_clock_s": 0.0})
        prev["outputs"].update({r: sha256_file(self.out / r) for r in outputs})
        prev["inputs"].update({r: sha256_file(self.out / r) for r in inputs})
        prev["run_counters"].update(counters or {})
        prev["wall_clock_s"] = round(prev["wall_clock_s"] + seconds, 3)
        self.doc["stages"][stage] = prev
        # downstream stages were built from older inputs
        for later in STAGES[STAGES.index(stage) + 1 :]:
            self.doc["stages"].pop(later, None)
        self.save()

    def save(self):
        self.path.write_text(json.dumps(self.doc, indent=1, sort_keys=True) + "\n")


class Pipeline:
    def __init__(self, cfg: ExperimentConfig, out: str | Path | None = None, jobs: int | None = None):
        self.cfg = cfg
        self.out = Path(out or cfg.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.jobs = jobs or cfg.jobs
        self.manifest = Manifest(self.out, cfg)
        self.grid = cfg.grid_spec()

    def _meta(self, **extra) -> dict:
        return {"seed": self.cfg.seed, "config_digest": self.cfg.digest(), **extra}

    def _derived_seed(self, stage: str, *items) -> int:
        return int(seed_sequence(self.cfg.seed, stage, *items).generate_state(1)[0])

    # -- stages ----------------------------------------------------------

    def motionset(self) -> Path:
        t = time.perf_counter()
        c = self.cfg.motion_set
        ms = generate_motion_set(self.cfg.arm_spec(), self.grid, c.n_poses, c.n_motions, self.cfg.seed, c.steps, self.jobs)
        path = ms.save(self.out / "motionset.json")
        self.manifest.record("motionset", [path.name], [], time.perf_counter() - t)
        return path

    def load_motionset(self) -> MotionSet:
        return MotionSet.load(self.manifest.require("motionset.json", "motionset"))

    def cef(self, kinds=None) -> list[Path]:
        ms = self.load_motionset()
        outs = []
        for kind in kinds or self.cfg.kind_list():
            t = time.perf_counter()
            report, cache = run_phase1(ms, kind, self.jobs, self.cfg.fi.engine)
            rel = [f"cef_{kind.name}.bin"]
            save_phase1(self.out / rel[0], report, cache, self._meta(stage="cef", n_bits=report.n_bits))
            if self.cfg.fi.write_bit_csv:
                rel.append(f"cef_{kind.name}.csv")
                write_cef_csv(self.out / rel[1], report)
            self.manifest.record("cef", rel, ["motionset.json"], time.perf_counter() - t, {f"phase1_{kind.name}": report.n_bits})
            outs += [self.out / r for r in rel]
        return outs

    def scenarios(self, dclass: str) -> ScenarioBatch:
        rel = f"scenarios_{dclass}.json"
        path = self.out / rel
        if rel in self.manifest.artifact_digests() and path.exists():
            return ScenarioBatch.load(self.manifest.require(rel, "fi"))
        batch = generate_scenarios(dclass, self.cfg.fi.scenario_count, self.grid, self.cfg.seed)
        batch.save(path)
        self.manifest.record("fi", [rel], [], 0.0)
        return batch

    def fi(self, kinds=None, modes=None) -> list[Path]:
        modes = list(modes or self.cfg.fi.modes)
        for m in modes:
            if m not in MODES:
                raise PipelineError(f"unknown FI mode {m!r}; choose from {MODES}")
        fc = self.cfg.fi
        batches = {d: self.scenarios(d) for d in self.cfg.density_classes}
        obstacles = {d: b.obstacle_matrix() for d, b in batches.items()}
        written = []
        for kind in kinds or self.cfg.kind_list():
            src = f"cef_{kind.name}.bin"
            report, cache, _ = load_phase1(self.manifest.require(src, "cef"))
            exhaustive_runs = report.n_bits * fc.scenario_count
            for d in self.cfg.density_classes:
                scen = f"scenarios_{d}.json"
                if "cef_aware" in modes:
                    t = time.perf_counter()
                    table = phase2_sdcc(report, cache, obstacles[d], fc.M, self.cfg.seed, fc.confidence, fc.margin)
                    runs = table.budget.run_counter
                    table.meta = self._meta(
                        density=d,
                        scenario_batch="shared across CEF groups",
                        exhaustive_runs=exhaustive_runs,
                        speedup=exhaustive_runs / runs if runs else None,
                        calibration=batches[d].calibration.to_dict(),
                    )
                    base = f"fi_cef_aware_{kind.name}_{d}"
                    (self.out / f"{base}.json").write_text(dumps_json(table_to_dict(table)) + "\n")
                    write_table_csv(self.out / f"{base}.csv", table, table.meta)
                    self.manifest.record(
                        "fi", [f"{base}.json", f"{base}.csv"], [src, scen], time.perf_counter() - t, {base: runs}
                    )
                    written += [self.out / f"{base}.json", self.out / f"{base}.csv"]
                if d != fc.plan_density:
                    continue
                if "exhaustive" in modes:
                    t = time.perf_counter()
                    res = exhaustive_fi(report, cache, obstacles[d], fc.exhaustive_max_runs)
                    base = f"fi_exhaustive_{kind.name}_{d}"
                    meta = self._meta(density=d)
                    save_exhaustive(self.out / f"{base}.bin", res, meta)
                    summary = {"kind": kind.value, "overall": res.overall, "budget": res.budget.to_dict(), "meta": meta}
                    (self.out / f"{base}.json").write_text(dumps_json(summary) + "\n")
                    self.manifest.record(
                        "fi", [f"{base}.bin", f"{base}.json"], [src, scen], time.perf_counter() - t,
                        {base: res.budget.run_counter},
                    )
                    written.append(self.out / f"{base}.bin")
                if "uniform_statistical" in modes:
                    t = time.perf_counter()
                    res = uniform_statistical_fi(report, cache, obstacles[d], fc.uniform_samples, self.cfg.seed, fc.confidence)
                    base = f"fi_uniform_{kind.name}_{d}"
                    doc = {
                        "kind": kind.value,
                        "estimate": res.estimate,
                        "ci": [res.ci_low, res.ci_high],
                        "sdcc": res.sdcc,
                        "n_samples": res.n_samples,
                        "budget": res.budget.to_dict(),
                        "meta": self._meta(density=d, exhaustive_runs=exhaustive_runs),
                    }
                    (self.out / f"{base}.json").write_text(dumps_json(doc) + "\n")
                    self.manifest.record("fi", [f"{base}.json"], [src, scen], time.perf_counter() - t, {base: res.n_samples})
                    written.append(self.out / f"{base}.json")
        return written

    def _per_bit(self, kind: CdmKind, report):
        """Exhaustive per-bit probabilities if available, else the CEF-group model."""
        d = self.cfg.fi.plan_density
        rel = f"fi_exhaustive_{kind.name}_{d}.bin"
        if rel in self.manifest.artifact_digests():
            return load_exhaustive(self.manifest.require(rel, "fi")).per_bit, "exhaustive", rel
        rel = f"fi_cef_aware_{kind.name}_{d}.json"
        table = table_from_dict(json.loads(self.manifest.require(rel, "fi").read_text()))
        return table.per_bit(report), "cef_groups", rel

    def plan(self, kinds=None) -> list[Path]:
        pc = self.cfg.planner
        ms = self.load_motionset()
        written = []
        for kind in kinds or self.cfg.kind_list():
            t = time.perf_counter()
            src = f"cef_{kind.name}.bin"
            report, _, _ = load_phase1(self.manifest.require(src, "cef"))
            per_bit, basis, prob_src = self._per_bit(kind, report)
            exact = per_bit if basis == "exhaustive" else None
            accs = [ACCELERATORS[a] for a in pc.accelerators if ACCELERATORS[a].kind is kind]
            aux = PlannerAux(per_bit_exact=exact)
            skipped = {}
            plans = {}
            for name in pc.heuristics:
                h = Heuristic.parse(name)
                try:
                    if h is Heuristic.ACCESS_FREQUENCY and aux.access_counts is None:
                        calib = generate_scenarios(
                            self.cfg.fi.plan_density, pc.access_scenarios, self.grid, self._derived_seed("access-calibration")
                        )
                        aux.access_counts = access_counts(ms, kind, calib.obstacle_matrix())
                    if h is Heuristic.BOX_VOLUME and kind is CdmKind.A2 and aux.box_volumes is None:
                        aux.box_volumes = box_volumes(ms)
                    if h is Heuristic.UNIFORM_RANDOM:
                        plans[h.value] = [
                            (i, rank_structures(h, report, PlannerAux(seed=self._derived_seed("uniform-random", i))))
                            for i in range(pc.uniform_seeds)
                        ]
                    else:
                        plans[h.value] = [(None, rank_structures(h, report, aux))]
                except PlannerError as e:
                    skipped[h.value] = str(e)
            rows = []
            summary = {"kind": kind.value, "probability_basis": basis, "skipped_heuristics": skipped, "accelerators": {}}
            for acc in accs:
                params = acc.fit_params(report, self.cfg.fit.fit_raw)
                base_fit = fit_rate(float(per_bit.mean()) if per_bit.size else 0.0, params)
                acc_sum = {
                    "N": acc.N,
                    "resident_bits": params.total_bits,
                    "fit_unprotected": base_fit,
                    "sil_unprotected": sil_verdict(base_fit),
                    "full_protection": {},
                    "sil_costs": {},
                }
                techniques = [tq for tq in pc.hardening if tq in acc.techniques]
                for tq in techniques:
                    a, p = full_protection_overhead(HARDENING[tq], acc)
                    acc_sum["full_protection"][tq] = {"area_overhead_pct": a, "power_overhead_pct": p}
                for hname, plist in plans.items():
                    curves = {}
                    for seed_i, plan in plist:
                        for pt in fit_reduction_curve(plan, per_bit, params, pc.fractions):
                            rows.append((acc.name, hname, seed_i, "none", pt))
                        for tq in techniques:
                            pts = overhead_curve(plan, per_bit, HARDENING[tq], acc, params, pc.fractions)
                            rows += [(acc.name, hname, seed_i, tq, pt) for pt in pts]
                            if seed_i in (None, 0):
                                curves[tq] = pts
                    acc_sum["sil_costs"][hname] = [c.__dict__ for c in sil_costs(curves)]
                summary["accelerators"][acc.name] = acc_sum
            summary["meta"] = self._meta(probability_source=prob_src)
            csv_rel, json_rel = f"plan_{kind.name}.csv", f"plan_{kind.name}.json"
            with open(self.out / csv_rel, "w") as fh:
                fh.write(f"# seed={self.cfg.seed} config_digest={self.cfg.digest()} basis={basis}\n")
                fh.write("accelerator,heuristic,seed_index,technique,fraction,residual_fit,area_overhead_pct,power_overhead_pct,sil\n")
                for acc_name, h, si, tq, p in rows:
                    fh.write(
                        f"{acc_name},{h},{'' if si is None else si},{tq},{p.fraction!r},{p.residual_fit!r},"
                        f"{p.area_overhead_pct!r},{p.power_overhead_pct!r},{'' if p.sil is None else p.sil}\n"
                    )
            (self.out / json_rel).write_text(dumps_json(summary) + "\n")
            self.manifest.record("plan", [csv_rel, json_rel], [src, prob_src], time.perf_counter() - t)
            written += [self.out / csv_rel, self.out / json_rel]
        return written

    def compare(self) -> list[Path]:
        t = time.perf_counter()
        rows, cdf_rows, inputs = [], [], []
        doc = {"fit": [], "meta": self._meta()}
        for kind in self.cfg.kind_list():
            src = f"cef_{kind.name}.bin"
            report, _, _ = load_phase1(self.manifest.require(src, "cef"))
            inputs.append(src)
            values, cum = cef_cdf(report)
            cdf_rows += [(kind.value, int(v), float(c)) for v, c in zip(values, cum)]
            for d in self.cfg.density_classes:
                rel = f"fi_cef_aware_{kind.name}_{d}.json"
                table = table_from_dict(json.loads(self.manifest.require(rel, "fi").read_text()))
                inputs.append(rel)
                for acc in ACCELERATORS.values():
                    if acc.kind is not kind or acc.name not in self.cfg.planner.accelerators:
                        continue
                    params = acc.fit_params(report, self.cfg.fit.fit_raw)
                    fit = fit_rate(table.overall, params)
                    rows.append((kind.value, acc.name, d, table.overall, params.total_bits, acc.N, fit, sil_verdict(fit)))
        with open(self.out / "compare.csv", "w") as fh:
            fh.write("kind,accelerator,density,p_sdcc,resident_bits,N,fit,sil\n")
            for r in rows:
                fh.write(",".join("" if x is None else repr(x) if isinstance(x, float) else str(x) for x in r) + "\n")
        with open(self.out / "cef_cdf.csv", "w") as fh:
            fh.write("kind,cef,cumulative_fraction\n")
            for k, v, c in cdf_rows:
                fh.write(f"{k},{v},{c!r}\n")
        doc["fit"] = [dict(zip(("kind", "accelerator", "density", "p_sdcc", "resident_bits", "N", "fit", "sil"), r)) for r in rows]
        (self.out / "compare.json").write_text(dumps_json(doc) + "\n")
        self.manifest.record("compare", ["compare.csv", "cef_cdf.csv", "compare.json"], inputs, time.perf_counter() - t)
        return [self.out / "compare.csv", self.out / "cef_cdf.csv", self.out / "compare.json"]

    def run_all(self):
        self.motionset()
        self.cef()
        self.fi()
        self.plan()
        self.compare()
        return self.manifest.artifact_digests()
