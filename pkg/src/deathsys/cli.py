"""Command-line entry point: ``deathsys <subcommand> --config FILE --out DIR``.

Exit codes: 0 success, 1 domain error (invalid system, non-convergence,
bad config content), 2 usage error.  Every run writes ``run_manifest.json``
into the output directory; passing that file back as ``--config`` re-runs
the recorded command with the recorded config, input and seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import SCHEMA, as_float, check_schema, fingerprint, load_json, take
from .errors import DeathsysError
from .estimate import FitOptions, ModelSpec, build_likelihood, default_init, fit
from .harness import Scenario, run_scenario, typology_suite, visit_spacing_sweep
from .observe import Dataset, apply_observation, classify_car, scheme_from_config
from .simulate import CONTRASTS, SimConfig, contrast, preferable, read_population, simulate_population, \
    write_population
from .system import influence_graph, is_nuc, system_from_config, validate_system, with_overrides

log = logging.getLogger("deathsys")

COMMANDS = ("validate", "graph", "simulate", "observe", "classify-car", "fit", "preferable", "contrast", "study",
            "typology")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _resolve(x, base: Path, what: str) -> dict:
    """Inline object or path (relative to the referencing config)."""
    if isinstance(x, str):
        return load_json(base / x)
    if isinstance(x, dict):
        return x
    raise DeathsysError(f"{what}: expected an object or a path")


def _inline(doc: dict, base: Path, keys) -> dict:
    """Copy of ``doc`` with path references replaced by their content, so the
    run manifest is self-contained."""
    out = dict(doc)
    for k in keys:
        if k in out:
            out[k] = _resolve(out[k], base, k)
    return out


def _system(doc) -> object:
    return validate_system(system_from_config(doc))


def _write_csv(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, lineterminator="\n")


def _seed(args, doc: dict, key: str = "seed") -> int:
    if args.seed is not None:
        return int(args.seed)
    return int(doc.get(key, 0))


def _need_input(args) -> Path:
    if not args.input:
        raise UsageError(f"{args.command} needs --input")
    return Path(args.input)


# ---------------------------------------------------------------------------
# subcommands; each returns (config actually used, exit code)
# ---------------------------------------------------------------------------

def cmd_validate(args, doc, base, out):
    sys_ = _system(doc)
    graph = influence_graph(sys_)
    (out / "graph.dot").write_text(graph.to_dot())
    info = {"processes": [p.name for p in graph.nodes], "death": graph.death,
            "edges": sorted([list(e) for e in graph.edges]),
            "observed_edges": sorted([list(e) for e in graph.observed_edges])}
    try:
        f, t = sys_.default_factor(), sys_.default_target()
        info["nuc"] = {"factor": f, "target": t, "verdict": str(is_nuc(sys_, f, t, graph)),
                       "death": str(is_nuc(sys_, f, sys_.death, graph))}
    except DeathsysError:
        pass
    (out / "validation.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    print(f"valid system: {len(graph.nodes)} processes, {len(graph.edges)} edges")
    return doc, 0


def cmd_graph(args, doc, base, out):
    sys_ = _system(doc)
    graph = influence_graph(sys_)
    (out / "graph.dot").write_text(graph.to_dot())
    rows = [{"source": a, "target": b, "through": "true"} for a, b in sorted(graph.edges)]
    rows += [{"source": a, "target": b, "through": "observed"} for a, b in sorted(graph.observed_edges)]
    _write_csv(pd.DataFrame(rows, columns=["source", "target", "through"]), out / "edges.csv")
    sys.stdout.write(graph.to_dot())
    return doc, 0


def cmd_simulate(args, doc, base, out):
    check_schema(doc, "simulate")
    doc = take(doc, "simulate", ("schema", "system"), ("simulation", "seed", "params"))
    doc = _inline(doc, base, ["system"])
    sim = take(doc.get("simulation", {}), "simulate.simulation", (), ("n", "step", "horizon"))
    seed = _seed(args, doc)
    cfg = SimConfig(int(sim.get("n", 1000)), as_float(sim.get("step", 0.01), "step"),
                    as_float(sim.get("horizon", 5.0), "horizon"), seed)
    params = {k: as_float(v, f"params.{k}") for k, v in doc.get("params", {}).items()}
    pop = simulate_population(_system(doc["system"]), params, cfg, workers=args.workers)
    write_population(pop, out)
    if args.emit_plot_data:
        rows = []
        for name in sorted(pop.paths):
            arr = pop.paths[name]
            k = np.arange(arr.shape[1])
            for i in range(len(pop)):
                alive = pop.grid < pop.death_time[i]
                rows.append(pd.DataFrame({"subject": int(pop.subject_ids[i]), "t": pop.grid[alive],
                                          "process": name, "value": arr[i, k[alive]]}))
        plot = pd.concat(rows, ignore_index=True) if rows else pd.DataFrame(columns=["subject", "t", "process", "value"])
        _write_csv(plot, out / "plot_paths.csv")
    print(f"simulated {cfg.n_subjects} subjects; {int(np.sum(np.isfinite(pop.death_time)))} deaths")
    return {**doc, "seed": seed}, 0


def cmd_observe(args, doc, base, out):
    pop = read_population(_need_input(args))
    seed = _seed(args, doc)
    scheme_doc = {k: v for k, v in doc.items() if k != "seed"}
    scheme = scheme_from_config(scheme_doc)
    data = apply_observation(pop, scheme, seed)
    data.write(out)
    print(f"observed {len(data.deaths)} subjects: {len(data.longitudinal)} longitudinal records, "
          f"{len(data.events)} event records")
    for ch, v in data.meta["car"].items():
        print(f"  CAR(DYN) {ch}: {v['status']} ({v['reason']})")
    return {**scheme_doc, "seed": seed}, 0


def cmd_classify(args, doc, base, out):
    check_schema(doc, "classify-car")
    doc = take(doc, "classify-car", ("schema", "system", "observation"))
    doc = _inline(doc, base, ["system", "observation"])
    sys_ = _system(doc["system"])
    verdicts = classify_car(scheme_from_config(doc["observation"]), influence_graph(sys_))
    rows = [{"channel": k, "status": v.status, "reason": v.reason} for k, v in verdicts.items()]
    _write_csv(pd.DataFrame(rows, columns=["channel", "status", "reason"]), out / "car.csv")
    for r in rows:
        print(f"{r['channel']}: {r['status']} ({r['reason']})")
    return doc, 0


def cmd_fit(args, doc, base, out):
    check_schema(doc, "fit")
    doc = take(doc, "fit", ("schema", "model"), ("init", "options", "seed"))
    data = Dataset.read(_need_input(args))
    model = ModelSpec.from_config(doc["model"], "fit.model")
    if args.seed is not None or "seed" in doc:
        from dataclasses import replace
        model = replace(model, qmc_seed=_seed(args, doc))
    lik = build_likelihood(model, data)
    init = doc.get("init", "default")
    if init == "default":
        init = default_init(model, lik)
    elif not isinstance(init, dict):
        raise DeathsysError("fit.init must be 'default' or an object of parameter values")
    opts = FitOptions.from_config(doc.get("options"))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = fit(model, data, init, opts, lik=lik)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    (out / "fit.json").write_text(res.to_json() + "\n")
    if args.emit_plot_data:
        _write_csv(pd.DataFrame({"iteration": np.arange(len(res.history)), "loglik": res.history}),
                   out / "plot_history.csv")
    print(f"{model.family}: loglik {res.loglik:.6f}, converged {res.converged}, {res.iterations} iterations")
    for k in res.free:
        se = res.se[k] if res.se else float("nan")
        print(f"  {k:<14} {res.estimates[k]: .6f}  (se {se:.6f})")
    used = {**doc, "model": model.to_config(), "seed": model.qmc_seed}
    if not res.converged:
        print(f"error: NonConvergence: {res.message}", file=sys.stderr)
        return used, 1
    return used, 0


def _factor_arg(x, what):
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return float(x)
    if isinstance(x, dict):
        take(x, what, (), ("intercept", "slope"))
        return {k: float(v) for k, v in x.items()}
    raise DeathsysError(f"{what}: expected a number or {{intercept, slope}}")


def _contrast_common(doc, base, name, extra=()):
    check_schema(doc, name)
    doc = take(doc, name, ("schema", "system", "v1", "v2", "t_grid"),
               ("params", "n_mc", "seed", "step", "target", "factor") + tuple(extra))
    return _inline(doc, base, ["system"])


def cmd_preferable(args, doc, base, out):
    doc = _contrast_common(doc, base, "preferable", ("z_threshold",))
    seed = _seed(args, doc)
    params = {k: as_float(v, f"params.{k}") for k, v in doc.get("params", {}).items()}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = preferable(_system(doc["system"]), params, _factor_arg(doc["v1"], "v1"), _factor_arg(doc["v2"], "v2"),
                         doc["t_grid"], int(doc.get("n_mc", 100_000)), seed,
                         z_threshold=float(doc.get("z_threshold", 3.0)), step=float(doc.get("step", 0.01)),
                         target=doc.get("target"), factor=doc.get("factor"))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    _write_csv(res.table, out / "preferable.csv")
    (out / "preferable.json").write_text(json.dumps({"verdict": res.verdict, "interpretation": res.interpretation},
                                                    indent=2) + "\n")
    if args.emit_plot_data:
        t = res.table
        long = pd.concat([
            pd.DataFrame({"t": t["t"], "quantity": "p_dead", "trajectory": "v1", "value": t["p_dead_v1"]}),
            pd.DataFrame({"t": t["t"], "quantity": "p_dead", "trajectory": "v2", "value": t["p_dead_v2"]}),
            pd.DataFrame({"t": t["t"], "quantity": "outcome", "trajectory": "v1", "value": t["outcome_v1"]}),
            pd.DataFrame({"t": t["t"], "quantity": "outcome", "trajectory": "v2", "value": t["outcome_v2"]}),
        ], ignore_index=True)
        _write_csv(long, out / "plot_preferable.csv")
    print(f"{res.verdict} (outcome criterion {res.interpretation})")
    return {**doc, "seed": seed}, 0


def cmd_contrast(args, doc, base, out):
    doc = _contrast_common(doc, base, "contrast", ("kind", "attributes"))
    kind = doc.get("kind", "survival_difference")
    if kind not in CONTRASTS:
        raise DeathsysError(f"contrast.kind must be one of {CONTRASTS}")
    seed = _seed(args, doc)
    params = {k: as_float(v, f"params.{k}") for k, v in doc.get("params", {}).items()}
    tab = contrast(_system(doc["system"]), params, _factor_arg(doc["v1"], "v1"), _factor_arg(doc["v2"], "v2"), kind,
                   doc["t_grid"], int(doc.get("n_mc", 10_000)), seed, float(doc.get("step", 0.01)),
                   doc.get("target"), doc.get("factor"), doc.get("attributes"))
    _write_csv(tab, out / "contrast.csv")
    if args.emit_plot_data:
        _write_csv(tab.assign(kind=kind)[["t", "kind", "value", "se"]], out / "plot_contrast.csv")
    print(tab.to_string(index=False))
    return {**doc, "seed": seed}, 0


def cmd_study(args, doc, base, out):
    sweep = doc.get("sweep")
    body = {k: v for k, v in doc.items() if k != "sweep"}
    body = _inline(body, base, ["system", "observation"])
    if args.seed is not None:
        body["seed"] = int(args.seed)
    s = Scenario.from_config(body, base)
    if sweep is not None:
        sweep = take(sweep, "study.sweep", ("channel", "spacings"))
        curve, reports = visit_spacing_sweep(s, sweep["channel"], sweep["spacings"], args.workers)
        table = pd.concat([r.table for r in reports], ignore_index=True)
        _write_csv(table, out / "report.csv")
        _write_csv(curve, out / "sweep.csv")
        text = "\n\n".join(r.summary() for r in reports)
        (out / "summary.txt").write_text(text + "\n")
        print(curve.to_string(index=False))
        return {**body, "sweep": sweep}, 0
    rep = run_scenario(s, args.workers)
    (out / "report.csv").write_text(rep.to_csv())
    (out / "summary.txt").write_text(rep.summary() + "\n")
    if args.emit_plot_data:
        _write_csv(rep.table[["scenario", "fit", "parameter", "bias", "mcse", "coverage"]], out / "plot_bias.csv")
    print(rep.summary())
    if rep.exclusion_rate >= 0.05:
        print(f"warning: exclusion rate {rep.exclusion_rate:.2f} >= 0.05; scenario considered broken",
              file=sys.stderr)
    return body, 0


def cmd_typology(args, doc, base, out):
    check_schema(doc, "typology")
    doc = take(doc, "typology", ("schema", "cells"), ("replications", "n", "description"))
    cells = []
    for c in doc["cells"]:
        if isinstance(c, str):
            path = base / c
            c = _inline(load_json(path), path.parent, ["system", "observation"])
        else:
            c = _inline(c, base, ["system", "observation"])
        if args.seed is not None:
            c = {**c, "seed": int(args.seed)}
        cells.append(c)
    used = {**doc, "cells": cells}
    table, reports = typology_suite(used, base, args.workers)
    _write_csv(table, out / "typology.csv")
    (out / "report.csv").write_text("".join(r.to_csv() if k == 0 else r.to_csv().split("\n", 1)[1]
                                            for k, r in enumerate(reports)))
    (out / "summary.txt").write_text("\n\n".join(r.summary() for r in reports) + "\n")
    if args.emit_plot_data:
        _write_csv(table[["cell", "naive_z", "reference_z", "empirical", "classify_car"]], out / "plot_typology.csv")
    print(table.to_string(index=False))
    return used, 0


HANDLERS = {"validate": cmd_validate, "graph": cmd_graph, "simulate": cmd_simulate, "observe": cmd_observe,
            "classify-car": cmd_classify, "fit": cmd_fit, "preferable": cmd_preferable, "contrast": cmd_contrast,
            "study": cmd_study, "typology": cmd_typology}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deathsys", description="Dynamical systems with death: simulate, observe, "
                                     "classify observation schemes, fit and run bias studies.")
    parser.add_argument("--version", action="version", version=f"deathsys {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    sub.required = True
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config, or a run_manifest.json to re-run")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker processes")
        p.add_argument("--input", default=None, help="input directory (observe: population; fit: dataset)")
        p.add_argument("--emit-plot-data", action="store_true", help="also write tidy long-format CSV for plotting")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _run(args) -> int:
    config_path = Path(args.config)
    doc = load_json(config_path)
    base = config_path.parent
    if "run_manifest" in doc:
        man = doc["run_manifest"]
        if man.get("command") != args.command:
            raise UsageError(f"manifest records command {man.get('command')!r}, not {args.command!r}")
        doc = man["config"]
        if args.input is None and man.get("input"):
            args.input = man["input"]
        if args.seed is None and man.get("seed") is not None:
            args.seed = man["seed"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    used, code = HANDLERS[args.command](args, doc, base, out)
    manifest = {"run_manifest": {
        "command": args.command, "version": __version__, "schema": SCHEMA,
        "config": used, "config_hash": fingerprint(used),
        "seed": args.seed if args.seed is not None else (used.get("seed") if isinstance(used, dict) else None),
        "input": str(Path(args.input).resolve()) if args.input else None,
        "workers": args.workers, "emit_plot_data": bool(args.emit_plot_data), "exit_code": code,
    }}
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"deathsys: error: {exc}", file=sys.stderr)
        return 2
    except DeathsysError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
