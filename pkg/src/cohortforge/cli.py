"""Command-line entry point: preprocess, index, match, simulate, report, rerun."""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from contextlib import contextmanager

import numpy as np
import scipy

from . import __version__
from .config import PARAMS, resolve, semantic_config
from .dataset import (
    Dataset,
    align_levels,
    binarize,
    load_csv,
    pool_schema,
    range_filter,
    read_schema,
    write_csv,
)
from .errors import CohortForgeError, ConfigError, DataError, NumericError
from .ga import GaConfig, run as ga_run
from .hull import filter_inside, hull_build
from .indices import (
    HERMITE_DIFFERENTIAL,
    HERMITE_NATURAL,
    IndexConfig,
    hermite_differential,
    hermite_natural,
    propensity_index,
)
from .kde import kde_fit
from .logistic import logistic_fit
from .report import (
    balance_report,
    csv_text,
    emit_power_report,
    histogram_csv,
    json_text,
    read_power_table,
    sha256_file,
    write_text,
)
from .simstudy import SimConfig, run_power_study
from .transform import TransformPipeline, pipeline_apply, pipeline_fit

log = logging.getLogger("cohortforge")


@contextmanager
def stage(name: str):
    try:
        yield
    except NumericError as exc:
        raise NumericError(f"[{name}] {exc}", exc.diagnostics) from exc
    except CohortForgeError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        raise NumericError(f"[{name}] {exc}") from exc
    except OSError as exc:
        raise DataError(f"[{name}] {exc}") from exc


class Run:
    """Collects inputs and outputs of one command for its manifest."""

    def __init__(self, command: str, cfg: dict):
        self.command = command
        self.cfg = cfg
        self.out = cfg["out"]
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        try:
            os.makedirs(self.out, exist_ok=True)
        except OSError as exc:
            raise DataError(f"cannot create output directory {self.out}: {exc.strerror}") from exc

    def input(self, key: str) -> str:
        path = self.cfg[key]
        if not path:
            raise ConfigError(f"missing required input --{key.replace('_', '-')}")
        if not os.path.isfile(path):
            raise DataError(f"input file not found: {path}")
        self.inputs[key] = path
        return path

    def write(self, name: str, text: str) -> str:
        path = write_text(os.path.join(self.out, name), text)
        self.outputs.append(name)
        return path

    def add_outputs(self, paths):
        self.outputs.extend(os.path.basename(p) for p in paths)

    def manifest(self) -> dict:
        return {
            "tool": "cohortforge",
            "version": __version__,
            "command": self.command,
            "config": semantic_config(self.command, self.cfg),
            "inputs": {k: {"path": os.path.abspath(p), "sha256": sha256_file(p)}
                       for k, p in sorted(self.inputs.items())},
            "outputs": {n: sha256_file(os.path.join(self.out, n)) for n in sorted(set(self.outputs))},
            "versions": {"python": platform.python_version(), "numpy": np.__version__,
                         "scipy": scipy.__version__},
        }

    def finish(self):
        write_text(os.path.join(self.out, "manifest.json"), json_text(self.manifest()))


def _load(run: Run, key: str, schema=None, name=None) -> Dataset:
    cfg = run.cfg
    path = run.input(key)
    user = read_schema(run.input("schema")) if cfg.get("schema") else {}
    merged = dict(schema or {})
    merged.update({k: v for k, v in user.items()})
    # a user schema may name columns absent from this particular file
    with open(path, encoding="utf-8") as fh:
        header = {h.strip() for h in fh.readline().split(",")}
    merged = {k: v for k, v in merged.items() if k in header}
    return load_csv(path, merged, cfg["max_levels"], cfg["drop_missing"], name=name or key)


def _index_config(cfg: dict, kind: str | None = None) -> IndexConfig:
    return IndexConfig(kind=kind or cfg["index.kind"], mc_samples=cfg["index.mc_samples"],
                       seed=cfg["seed"], ridge=cfg["index.ridge"],
                       ps_replicates=cfg["index.ps_replicates"])


# -- commands ------------------------------------------------------------------

def cmd_preprocess(cfg: dict) -> dict:
    run = Run("preprocess", cfg)
    with stage("load"):
        clinical = _load(run, "clinical")
        pool = _load(run, "pool", pool_schema(clinical))
    with stage("range_filter"):
        pool_in_range, range_excluded = range_filter(pool, clinical)
    with stage("binarize"):
        clinical_b = binarize(clinical)
        pool_b = binarize(pool_in_range)
    with stage("pipeline_fit"):
        pipeline, z = pipeline_fit(clinical_b, cfg["dim"], cfg["max_dim"])
    with stage("pipeline_apply"):
        zp, clamps = pipeline_apply(pipeline, pool_b, return_clamps=True)
    with stage("hull"):
        hull = hull_build(z, max_dim=cfg["max_dim"])
        inside, outside = filter_inside(hull, zp, threads=cfg["threads"])

    inside_ids = [pool_in_range.row_ids[i] for i in inside]
    hull_out_ids = [pool_in_range.row_ids[i] for i in outside]
    inside_set = set(inside_ids)
    reasons = {rid: "range" for rid in range_excluded}
    reasons.update({rid: "hull" for rid in hull_out_ids})

    run.write("pipeline.json", pipeline.dumps())
    run.write("membership.csv", csv_text(("row_id", "inside"),
                                         [(rid, int(rid in inside_set)) for rid in pool.row_ids]))
    run.write("inside_ids.csv", csv_text(("row_id",), [(rid,) for rid in inside_ids]))
    run.write("outside_ids.csv", csv_text(("row_id", "reason"),
                                          [(rid, reasons[rid]) for rid in pool.row_ids
                                           if rid in reasons]))
    write_csv(pool_in_range.take(inside, name="pool_inside"), os.path.join(run.out, "pool_inside.csv"))
    run.outputs.append("pool_inside.csv")
    run.write("histogram.csv", histogram_csv(z, zp[inside] if inside.size else np.empty((0, z.shape[1])),
                                             cfg["bins"]))
    summary = {
        "clinical_rows": clinical.n_rows,
        "pool_rows": pool.n_rows,
        "dropped_missing": {"clinical": clinical.n_dropped, "pool": pool.n_dropped},
        "range_excluded": len(range_excluded),
        "hull_outside": len(hull_out_ids),
        "inside": len(inside_ids),
        "d": pipeline.d,
        "binarized_columns": len(clinical_b.columns),
        "explained_variance_ratio": pipeline.diagnostics["explained_variance_ratio"],
        "explained_variance_total": pipeline.diagnostics["explained_variance_total"],
        "stage2_skewness": pipeline.diagnostics["skewness"],
        "hull_degenerate": hull.degenerate,
        "hull_affine_rank": hull.affine_rank,
        "clamped_values": clamps,
    }
    run.write("summary.json", json_text(summary))
    run.finish()
    return summary


def _group_matrices(run: Run, keys, pipeline_key="pipeline"):
    """Load CSVs for ``keys`` on the first file's levels, binarize, optionally transform."""
    with stage("load"):
        first = _load(run, keys[0])
        sets = [first] + [align_levels(_load(run, k, pool_schema(first)), first) for k in keys[1:]]
    raw = sets
    with stage("binarize"):
        sets = [binarize(s) for s in sets]
    if run.cfg.get(pipeline_key):
        with stage("pipeline_apply"):
            with open(run.input(pipeline_key), encoding="utf-8") as fh:
                pipeline = TransformPipeline.loads(fh.read())
            mats = [pipeline_apply(pipeline, s) for s in sets]
    else:
        mats = [s.values for s in sets]
    return raw, sets, mats


def cmd_index(cfg: dict) -> dict:
    run = Run("index", cfg)
    kind = cfg["index.kind"]
    keys = ["treatment"] if kind == HERMITE_NATURAL else ["treatment", "control"]
    _, _, mats = _group_matrices(run, keys)
    icfg = _index_config(cfg)
    result = {"kind": kind, "stderr": None}
    with stage("index"):
        if kind == HERMITE_NATURAL:
            f = kde_fit(mats[0])
            est = hermite_natural(f, f.dim, icfg)
            result.update(value=est.value, stderr=est.stderr,
                          diagnostics={"n": f.n, "d": f.dim, "mc_samples": icfg.mc_samples,
                                       "bandwidth": f.bandwidth})
        elif kind == HERMITE_DIFFERENTIAL:
            fa, fb = kde_fit(mats[0]), kde_fit(mats[1])
            value = hermite_differential(fa, fb, np.vstack(mats))
            result.update(value=value, diagnostics={
                "n_treatment": fa.n, "n_control": fb.n, "d": fa.dim,
                "bandwidth_treatment": fa.bandwidth, "bandwidth_control": fb.bandwidth})
        else:
            X = np.vstack(mats)
            y = np.r_[np.ones(len(mats[0])), np.zeros(len(mats[1]))]
            value = propensity_index(X, y, icfg)
            model = logistic_fit(X, y, icfg.ridge)
            result.update(value=value, diagnostics={
                "n_treatment": len(mats[0]), "n_control": len(mats[1]),
                "iterations": model.n_iter, "deviance": model.deviance})
    run.write("index.json", json_text(result))
    run.finish()
    return result


def cmd_match(cfg: dict) -> dict:
    run = Run("match", cfg)
    if cfg["ga.m"] < 1:
        raise ConfigError("--ga-m (augmentation size) is required")
    raw, sets, mats = _group_matrices(run, ["treatment", "control", "pool"])
    A_ds, B_ds, R_ds = sets
    ga_cfg = GaConfig(m=cfg["ga.m"], k=cfg["ga.k"], s=cfg["ga.s"],
                      max_generations=cfg["ga.max_generations"], stall=cfg["ga.stall"],
                      seed=cfg["seed"], index=_index_config(cfg), incremental=cfg["ga.incremental"],
                      threads=cfg["threads"])
    with stage("match"):
        best, trace = ga_run(*mats, ga_cfg)
    chosen = list(best.indices)
    selected_ids = [R_ds.row_ids[i] for i in chosen]
    aug_ids = tuple(f"control:{r}" for r in B_ds.row_ids) + tuple(f"pool:{r}" for r in selected_ids)

    def augment(control, pool):
        return Dataset("augmented_control", control.columns,
                       np.vstack([control.values, pool.values[chosen]]), aug_ids)

    run.write("selected_ids.csv", csv_text(("row_id",), [(r,) for r in selected_ids]))
    # written on the original columns; the balance report uses the binarized ones
    write_csv(augment(raw[1], raw[2]), os.path.join(run.out, "augmented_control.csv"))
    run.outputs.append("augmented_control.csv")
    run.write("trace.csv", csv_text(("generation", "best_fitness", "evaluations"), trace.rows()))
    with stage("balance"):
        bal = balance_report(A_ds, augment(B_ds, R_ds))
    for part, text in bal.items():
        run.write(f"balance_{part}.csv", text)
    summary = {
        "index": ga_cfg.index.kind,
        "m": ga_cfg.m,
        "initial_best_fitness": trace.best_fitness[0],
        "final_fitness": best.fitness,
        "generations": trace.generations,
        "stop_reason": trace.stop_reason,
        "evaluations": trace.total_evaluations,
        "cache_hits": trace.cache_hits,
        "n_treatment": A_ds.n_rows,
        "n_control": B_ds.n_rows,
        "n_pool": R_ds.n_rows,
        "transformed": bool(cfg["pipeline"]),
    }
    run.write("summary.json", json_text(summary))
    run.finish()
    return summary


def _sim_config(cfg: dict) -> SimConfig:
    preset = {"desk": dict(pool_size=5_000, n_datasets=20, n_response_reps=20),
              "full": dict(pool_size=50_000, n_datasets=100, n_response_reps=100)}[cfg["sim.scale"]]
    for key in ("pool_size", "n_datasets", "n_response_reps"):
        if cfg[f"sim.{key}"] > 0:
            preset[key] = cfg[f"sim.{key}"]
    return SimConfig(
        n_treat=cfg["sim.n_treat"], n_control=cfg["sim.n_control"], m_augment=cfg["sim.m_augment"],
        deltas=cfg["sim.deltas"], sigmas=cfg["sim.sigmas"], alpha=cfg["sim.alpha"],
        seed=cfg["seed"], test=cfg["sim.test"], ga_k=cfg["ga.k"], ga_s=cfg["ga.s"],
        ga_max_generations=cfg["ga.max_generations"], ga_stall=cfg["ga.stall"],
        ridge=cfg["index.ridge"], **preset,
    )


def cmd_simulate(cfg: dict) -> dict:
    run = Run("simulate", cfg)
    sim = _sim_config(cfg)
    with stage("simulate"):
        table = run_power_study(sim, threads=cfg["threads"])
    with stage("report"):
        run.add_outputs(emit_power_report(table, run.out))
    summary = {
        "test": sim.test,
        "alpha": sim.alpha,
        "note": "two-sided test on outcome by arm; test choice is a modelling assumption",
        "pool_size": sim.pool_size,
        "n_datasets": sim.n_datasets,
        "n_response_reps": sim.n_response_reps,
        "diagnostics": table.diagnostics,
    }
    run.write("summary.json", json_text(summary))
    run.finish()
    return summary


def cmd_report(cfg: dict) -> dict:
    run = Run("report", cfg)
    if cfg["power_table"]:
        with stage("report"):
            table = read_power_table(run.input("power_table"))
            run.add_outputs(emit_power_report(table, run.out))
    elif cfg["treatment"] and cfg["augmented"]:
        with stage("load"):
            treatment = _load(run, "treatment")
            augmented = align_levels(_load(run, "augmented", pool_schema(treatment)), treatment)
        with stage("balance"):
            bal = balance_report(binarize(treatment), binarize(augmented))
        for part, text in bal.items():
            run.write(f"balance_{part}.csv", text)
    else:
        raise ConfigError("report needs --power-table, or --treatment with --augmented")
    run.finish()
    return {"outputs": sorted(run.outputs)}


COMMANDS = {
    "preprocess": cmd_preprocess,
    "index": cmd_index,
    "match": cmd_match,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def rerun(manifest_path: str, out: str, threads: int = 1) -> dict:
    """Re-execute the command recorded in a manifest into ``out``."""
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    command = doc.get("command")
    if command not in COMMANDS:
        raise ConfigError(f"manifest names unknown command {command!r}")
    flags = dict(doc["config"])
    for key, info in doc.get("inputs", {}).items():
        flags[key] = info["path"]
    flags["out"] = out
    flags["threads"] = threads
    cfg = resolve(command, flags, environ={})
    return COMMANDS[command](cfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cohortforge",
        description="Select external pool rows to augment a trial control arm.",
        epilog="Precedence: flag > COHORTFORGE_* env var > --config file > default. "
               "File formats: docs/formats.md.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging verbosity")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "preprocess": "range filter, rank/PCA transform and hull filtering of a pool",
        "index": "dissimilarity index between two CSVs (JSON result)",
        "match": "genetic search for the pool subset that best augments the control arm",
        "simulate": "power simulation: random vs GA augmentation",
        "report": "render a power table or a balance report",
    }
    for name, params in PARAMS.items():
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--config", help="key = value config file")
        for prm in params:
            kwargs = dict(dest=prm.dest, default=None,
                          help=f"{prm.help} (default: {prm.default!r}; env {prm.env})")
            if prm.type == "bool":
                kwargs.update(nargs="?", const="true", metavar="BOOL")
            elif prm.choices:
                kwargs.update(choices=prm.choices)
            else:
                kwargs.update(metavar=prm.type.upper())
            p.add_argument(prm.flag, **kwargs)
    p = sub.add_parser("rerun", help="repeat a run from its manifest.json",
                       description="repeat a run from its manifest.json")
    p.add_argument("manifest", help="manifest.json written by a previous run")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rerun":
            result = rerun(args.manifest, args.out, args.threads)
        else:
            flags = {prm.key: getattr(args, prm.dest) for prm in PARAMS[args.command]}
            cfg = resolve(args.command, flags, args.config)
            result = COMMANDS[args.command](cfg)
    except CohortForgeError as exc:
        print(f"cohortforge: error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(json_text(result), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
