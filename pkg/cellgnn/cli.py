# ABOUTME: Command-line entry point: gen-data, train, emit-lib, eval-system, interp-drive and bench-runtime.
# ABOUTME: Resolves the run configuration once, writes CSV reports and manifests, and maps errors to exit codes.

import argparse
import dataclasses
import hashlib
import itertools
import json
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from cellgnn.benchmarks import BUNDLED, load_netlist
from cellgnn.cellgraph import CapacitanceStimulus, DelayStimulus, LeakageStimulus, encode
from cellgnn.config import RunConfig, config_hash, derive_seed, load_config
from cellgnn.dataset import (
    Task,
    build_dataset,
    corner_grid,
    dataset_hash,
    export_csv,
    fit_normalization,
    read_dataset,
    stimulus_grid,
    write_dataset,
)
from cellgnn.errors import CellGnnError, ConfigError, DataError
from cellgnn.gnn import (
    Checkpoint,
    load_models,
    predict_batch,
    read_checkpoint,
    split_validation,
    train,
    write_checkpoint,
    write_training_log,
)
from cellgnn.libgen import (
    CharLibrary,
    ModelSource,
    OracleSource,
    build_library,
    compare_library_metrics,
    library_grid,
    metrics,
    metrics_frame,
    per_cell_frame,
)
from cellgnn.liberty import emit_liberty, parse_liberty
from cellgnn.netlist import CellCatalog, build_default_catalog, load_catalog, scale_drive
from cellgnn.oracle import (
    SurrogateParams,
    characterize,
    clear_caches,
    default_params,
    enumerate_arcs,
    leakage_power,
    load_params,
    pin_capacitance,
)
from cellgnn.sta import clock_frequency, compare_libraries, minimum_period, size_gates
from cellgnn.technology import Corner, system_eval_corner

logger = logging.getLogger(__name__)

VALID_FRACTION = 0.1
DEFAULT_NEW_DRIVES = "INV:3,5,6,7;BUF:3,5,6,7;AND2:3;NAND2:3;OR2:3;NOR2:3"
DEFAULT_PERIOD_FACTORS = "1.1,1.25,1.5"
INTERP_NETLISTS = ["inv-chain-32", "rca8", "rca16", "mult4x4"]


# --- Shared resolution -----------------------------------------------------


def resolve_catalog(config: RunConfig) -> CellCatalog:
    if config.catalog == "default":
        catalog = build_default_catalog(config.technology)
    else:
        catalog = load_catalog(config.catalog, config.technology)
    return catalog.subset(config.cells) if config.cells else catalog


def resolve_params(config: RunConfig) -> SurrogateParams:
    return load_params(config.preset) if config.preset else default_params(config.technology)


def resolve_corner(config: RunConfig, text: Optional[str]) -> Corner:
    corner = Corner.from_text(config.technology, text) if text else system_eval_corner(config.technology)
    return corner.validate()


def models_dir(config: RunConfig, given: Optional[str]) -> Path:
    return Path(given) if given else config.out_dir / "models"


def resolve_library(
    spec: str,
    config: RunConfig,
    corner: Corner,
    catalog: CellCatalog,
    params: SurrogateParams,
    name: str,
) -> CharLibrary:
    """
    Turn a library argument into a library.

    Args:
        spec: 'oracle', a .lib file, or a directory holding the five checkpoints.
    """
    slews, loads = library_grid(config.technology, config.lib_slew_points, config.lib_load_points)
    if spec == "oracle":
        return build_library(OracleSource(params), catalog, corner, slews, loads, name=name, jobs=config.jobs)
    path = Path(spec)
    if path.is_file():
        return parse_liberty(path)
    if path.is_dir():
        source = ModelSource(load_models(path, [t.value for t in Task]), params, jobs=config.jobs)
        return build_library(source, catalog, corner, slews, loads, name=name, jobs=config.jobs)
    raise DataError(f"library source '{spec}' is not 'oracle', a .lib file, or a model directory")


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info("Wrote %s", path)
    return path


def write_manifest(path: Path, manifest: Dict) -> str:
    """Write a manifest with its own content hash; returns that hash."""
    body = json.dumps(manifest, sort_keys=True, indent=2)
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({**manifest, "manifest_hash": digest}, sort_keys=True, indent=2) + "\n")
    return digest


# --- gen-data --------------------------------------------------------------


def cmd_gen_data(config: RunConfig, args: argparse.Namespace) -> int:
    """Label the training and test corner grids with the oracle and write one file per task and split."""
    catalog = resolve_catalog(config)
    params = resolve_params(config)
    stimulus = stimulus_grid(config.technology, config.n_slew, config.n_load)
    data_dir = config.out_dir / "data"
    splits = {
        "train": corner_grid(config.technology, config.train_points),
        "test": corner_grid(config.technology, config.test_points),
    }
    manifest = {
        "config_hash": config_hash(config),
        "config": config.fingerprint(),
        "seed": config.seed,
        "preset": config.preset or config.technology.value,
        "oracle_params": {k: str(v) for k, v in sorted(dataclasses.asdict(params).items())},
        "cells": catalog.names(),
        "splits": {},
    }
    for split, corners in splits.items():
        datasets = build_dataset(catalog, corners, stimulus, config.tasks, params, jobs=config.jobs)
        entry = {"corners": len(corners), "tasks": {}}
        for task, samples in datasets.items():
            write_dataset(data_dir / f"{split}_{task.value}.cgds", task, samples)
            if args.csv:
                export_csv(samples, data_dir / f"{split}_{task.value}.csv")
            entry["tasks"][task.value] = {"count": len(samples), "hash": dataset_hash(task, samples)}
        manifest["splits"][split] = entry
    digest = write_manifest(data_dir / "manifest.json", manifest)

    print(f"Dataset written to {data_dir}")
    for split, entry in manifest["splits"].items():
        counts = ", ".join(f"{task}={info['count']:,}" for task, info in entry["tasks"].items())
        print(f"{split}: {entry['corners']} corners; {counts}")
    print(f"Manifest hash: {digest}")
    return 0


# --- train -----------------------------------------------------------------


def cmd_train(config: RunConfig, args: argparse.Namespace) -> int:
    """Train one model per task; writes best-validation checkpoints, resume states, logs and test metrics."""
    data_dir = Path(args.data) if args.data else config.out_dir / "data"
    out_models = models_dir(config, args.models)
    reports = {}
    for task in config.tasks:
        _, train_samples = read_dataset(data_dir / f"train_{task.value}.cgds")
        if not train_samples:
            raise DataError(f"training set for {task.value} is empty")
        resume_path = out_models / f"{task.value}.state"
        train_config = config.train_config(task)
        params = state = None
        start_epoch = 1
        if args.resume:
            previous = read_checkpoint(resume_path)
            params, state, norm = previous.params, previous.state, previous.norm
            start_epoch = previous.epoch + 1
            logger.info("Resuming %s from epoch %d", task.value, previous.epoch)
        else:
            norm = fit_normalization(train_samples)

        graphs = [norm.apply_graph(s.graph) for s in train_samples]
        fit_set, valid_set = split_validation(graphs, VALID_FRACTION, derive_seed(config.seed, f"split/{task.value}"))
        result = train(fit_set, valid_set, train_config, params=params, state=state, start_epoch=start_epoch)

        write_checkpoint(out_models / f"{task.value}.cgnn", Checkpoint(result.params, norm, None, result.last_epoch))
        write_checkpoint(resume_path, Checkpoint(result.final_params, norm, result.state, result.last_epoch))
        log_path = config.out_dir / "logs" / f"{task.value}_train.csv"
        if args.resume and log_path.exists():
            log = pd.concat([pd.read_csv(log_path), result.log], ignore_index=True)
        else:
            log = result.log
        write_training_log(log, log_path)

        test_path = data_dir / f"test_{task.value}.cgds"
        if test_path.exists():
            _, test_samples = read_dataset(test_path)
            if test_samples:
                pred = predict_batch(result.params, norm, [s.graph for s in test_samples], jobs=config.jobs)
                truth = [s.target for s in test_samples]
                cells = [s.provenance.cell for s in test_samples]
                reports[task] = metrics(pred, truth, cells, task.value)
        print(f"Trained {task.value}: epochs {start_epoch}-{result.last_epoch}, best valid MAPE {result.best_valid}")

    if reports:
        table = metrics_frame(reports)
        write_csv(table, config.out_dir / "metrics" / "test_metrics.csv")
        write_csv(per_cell_frame(reports), config.out_dir / "metrics" / "test_metrics_per_cell.csv")
        print(table.to_string(index=False))
    return 0


# --- emit-lib --------------------------------------------------------------


def cmd_emit_lib(config: RunConfig, args: argparse.Namespace) -> int:
    """Characterize a library from the oracle or the models; with --compare also score it against the oracle."""
    corner = resolve_corner(config, args.corner)
    catalog = resolve_catalog(config)
    params = resolve_params(config)
    name = args.name or f"{config.technology.value}_{'oracle' if args.source == 'oracle' else 'model'}"
    library = resolve_library(args.source, config, corner, catalog, params, name)
    path = emit_liberty(library, config.out_dir / "lib" / f"{name}.lib")
    print(f"Library {library.name} ({len(library.cells)} cells at {corner.label()}) written to {path}")

    if args.compare and args.source != "oracle":
        truth = resolve_library("oracle", config, corner, catalog, params, f"{config.technology.value}_oracle")
        reports = compare_library_metrics(library, truth)
        table = metrics_frame(reports)
        write_csv(table, config.out_dir / "metrics" / f"{name}_metrics.csv")
        write_csv(per_cell_frame(reports), config.out_dir / "metrics" / f"{name}_metrics_per_cell.csv")
        print(table.to_string(index=False))
    return 0


# --- eval-system -----------------------------------------------------------


def cmd_eval_system(config: RunConfig, args: argparse.Namespace) -> int:
    """Timing and power of benchmark netlists under a truth and a predicted library, one row per netlist."""
    corner = resolve_corner(config, args.corner)
    catalog = resolve_catalog(config)
    params = resolve_params(config)
    truth = resolve_library(args.truth, config, corner, catalog, params, "truth")
    pred = resolve_library(args.pred or str(models_dir(config, None)), config, corner, catalog, params, "pred")
    rows = []
    for source in args.netlist or BUNDLED:
        netlist = load_netlist(source, config.technology, known_cells=truth.cells)
        frequency = args.frequency or clock_frequency(netlist.period, truth)
        comparison = compare_libraries(netlist, truth, pred, frequency)
        row = {"netlist": netlist.name or source, "gates": len(netlist.gates), "period": netlist.period, "frequency_hz": frequency}
        row.update(comparison.as_row())
        row["wns_pct_of_period"] = comparison.wns_delta / netlist.period * 100.0
        rows.append(row)
    table = pd.DataFrame(rows)
    write_csv(table, config.out_dir / "system" / "eval_system.csv")
    print(table.to_string(index=False))
    return 0


# --- interp-drive ----------------------------------------------------------


def parse_drives(text: str) -> Dict[str, Tuple[int, ...]]:
    """
    Parse 'FAMILY:d,d;FAMILY:d' into family -> drives.

    Raises:
        ConfigError: On a malformed entry.
    """
    drives: Dict[str, Tuple[int, ...]] = {}
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        family, _, values = chunk.partition(":")
        try:
            parsed = tuple(int(v) for v in values.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"drive list '{chunk}' must look like FAMILY:3,5")
        if not family.strip() or not parsed or min(parsed) < 1:
            raise ConfigError(f"drive list '{chunk}' must look like FAMILY:3,5")
        drives[family.strip().upper()] = parsed
    return drives


def interpolated_cells(catalog: CellCatalog, drives: Dict[str, Tuple[int, ...]]) -> CellCatalog:
    """Catalog of new drive strengths scaled from each family's smallest existing drive."""
    new_cells = []
    for family, wanted in drives.items():
        existing = sorted((c for c in catalog if c.base_name == family), key=lambda c: c.drive)
        if not existing:
            raise ConfigError(f"no cell of family {family} in the catalog to scale from")
        for drive in wanted:
            if f"{family}X{drive}" not in catalog:
                new_cells.append(scale_drive(existing[0], drive))
    return CellCatalog(catalog.technology, {c.name: c for c in new_cells})


def cmd_interp_drive(config: RunConfig, args: argparse.Namespace) -> int:
    """Size netlists with the original library and with the drive-extended one, across a period sweep."""
    corner = resolve_corner(config, args.corner)
    catalog = resolve_catalog(config)
    params = resolve_params(config)
    added = interpolated_cells(catalog, parse_drives(args.drives))
    logger.info("Extension cells: %s", ", ".join(added.names()) or "none")
    factors = [float(f) for f in args.factors.split(",") if f.strip()]
    if not factors or min(factors) <= 0:
        raise ConfigError("period factors must be positive numbers")

    base = resolve_library("oracle", config, corner, catalog, params, "original")
    plus = base
    plus_pred = None
    if len(added):
        extended = catalog.extended(added)
        plus = resolve_library("oracle", config, corner, extended, params, "original_plus")
        if args.models:
            plus_pred = resolve_library(args.models, config, corner, extended, params, "original_plus_pred")
            reports = compare_library_metrics(plus_pred, plus, cells=added.names())
            table = metrics_frame(reports)
            write_csv(table, config.out_dir / "interp" / "new_cell_metrics.csv")
            print(table.to_string(index=False))

    rows = []
    for source in args.netlist or INTERP_NETLISTS:
        netlist = load_netlist(source, config.technology, known_cells=base.cells)
        fastest = minimum_period(netlist, base)
        for factor in factors:
            period = fastest * factor
            frequency = clock_frequency(period, base)
            origin = size_gates(netlist, base, period, frequency)
            sized = size_gates(netlist, plus, period, frequency)
            row = {
                "netlist": netlist.name or source,
                "period_factor": factor,
                "period": period,
                "frequency_hz": frequency,
                "area_original": origin.area_after,
                "power_original_uw": origin.power_after,
                "met_original": origin.met,
                "area_plus": sized.area_after,
                "power_plus_uw": sized.power_after,
                "met_plus": sized.met,
                "ppa_impro_pct": sized.ppa_versus(origin) if len(added) else 0.0,
            }
            if plus_pred is not None:
                predicted = size_gates(netlist, plus_pred, period, frequency)
                row["ppa_impro_pred_pct"] = predicted.ppa_versus(origin)
            rows.append(row)
    table = pd.DataFrame(rows)
    write_csv(table, config.out_dir / "interp" / "interp_drive.csv")
    print(table.to_string(index=False))
    return 0


# --- bench-runtime ---------------------------------------------------------


def query_set(catalog: CellCatalog, corner: Corner, slews: Sequence[float], loads: Sequence[float]):
    """Per task: (graphs, oracle thunks) for every table entry of a full library."""
    queries = {task: ([], []) for task in Task}
    grid = [(s, l) for s in slews for l in loads]
    for cell in catalog:
        for arc in enumerate_arcs(cell):
            tasks = (Task.DELAY, Task.FLIP_POWER) if arc.output_flips else (Task.NON_FLIP_POWER,)
            for slew, load in grid:
                graph = encode(cell, corner, DelayStimulus(slew, load, arc.before, arc.after), arc=arc.label())
                for task in tasks:
                    queries[task][0].append(graph)
                    queries[task][1].append((cell, arc, slew, load))
        for state in itertools.product((0, 1), repeat=len(cell.inputs)):
            queries[Task.LEAKAGE][0].append(encode(cell, corner, LeakageStimulus(state)))
            queries[Task.LEAKAGE][1].append((cell, state))
        for pin in cell.inputs:
            queries[Task.CAPACITANCE][0].append(encode(cell, corner, CapacitanceStimulus(pin)))
            queries[Task.CAPACITANCE][1].append((cell, pin))
    return queries


def _oracle_value(task: Task, query, corner: Corner, params: SurrogateParams) -> float:
    if task is Task.LEAKAGE:
        return leakage_power(query[0], query[1], corner, params)
    if task is Task.CAPACITANCE:
        return pin_capacitance(query[0], query[1], corner, params)
    cell, arc, slew, load = query
    point = characterize(cell, arc, corner, slew, load, params)
    return {Task.DELAY: point.delay, Task.FLIP_POWER: point.flip_energy}.get(task, point.non_flip_energy)


def cmd_bench_runtime(config: RunConfig, args: argparse.Namespace) -> int:
    """Model batch inference against oracle characterization over the same full-library query set."""
    corner = resolve_corner(config, args.corner)
    catalog = resolve_catalog(config)
    slews, loads = library_grid(config.technology, config.lib_slew_points, config.lib_load_points)

    start = time.perf_counter()
    models = load_models(models_dir(config, args.models), [t.value for t in Task])
    params = resolve_params(config)
    load_seconds = time.perf_counter() - start
    queries = query_set(catalog, corner, slews, loads)

    rows = [{"item": "environment_loading", "queries": 0, "model_seconds": load_seconds, "oracle_seconds": 0.0}]
    for task in Task:
        graphs, oracle_queries = queries[task]
        checkpoint = models[task.value]
        start = time.perf_counter()
        predict_batch(checkpoint.params, checkpoint.norm, graphs, jobs=config.jobs)
        model_seconds = time.perf_counter() - start
        clear_caches()
        start = time.perf_counter()
        for query in oracle_queries:
            _oracle_value(task, query, corner, params)
        oracle_seconds = time.perf_counter() - start
        rows.append({"item": task.value, "queries": len(graphs), "model_seconds": model_seconds, "oracle_seconds": oracle_seconds})
    table = pd.DataFrame(rows)
    total = {
        "item": "total",
        "queries": int(table["queries"].sum()),
        "model_seconds": float(table["model_seconds"].sum()),
        "oracle_seconds": float(table["oracle_seconds"].sum()),
    }
    table = pd.concat([table, pd.DataFrame([total])], ignore_index=True)
    table["speedup"] = np.where(table["model_seconds"] > 0, table["oracle_seconds"] / table["model_seconds"], np.nan)
    write_csv(table, config.out_dir / "runtime" / "bench_runtime.csv")
    print(table.to_string(index=False))
    return 0


# --- Entry point -----------------------------------------------------------

COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "emit-lib": cmd_emit_lib,
    "eval-system": cmd_eval_system,
    "interp-drive": cmd_interp_drive,
    "bench-runtime": cmd_bench_runtime,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cellgnn",
        description="GNN-based standard-cell library characterization.",
        epilog="Any config key can also be set through a CELLGNN_<KEY> environment variable or a .env file.",
    )
    parser.add_argument("--config", help="key=value run configuration file")
    parser.add_argument("--seed", help="top-level seed (SEED)")
    parser.add_argument("--jobs", help="worker count (JOBS); defaults to the available cores")
    parser.add_argument("--out", help="output directory (OUT)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="label training and test corner grids with the oracle")
    gen.add_argument("--csv", action="store_true", help="also export every dataset as CSV")

    tr = sub.add_parser("train", help="train one model per task")
    tr.add_argument("--data", help="dataset directory (default <out>/data)")
    tr.add_argument("--models", help="checkpoint directory (default <out>/models)")
    tr.add_argument("--resume", action="store_true", help="continue from the saved training states")

    emit = sub.add_parser("emit-lib", help="write a Liberty library from the oracle or the models")
    emit.add_argument("--source", default="oracle", help="'oracle' or a checkpoint directory")
    emit.add_argument("--corner", help="vdd,vth,third (default: the system evaluation corner)")
    emit.add_argument("--name", help="library name")
    emit.add_argument("--compare", action="store_true", help="score a model library against the oracle")

    ev = sub.add_parser("eval-system", help="compare netlist timing and power under two libraries")
    ev.add_argument("--truth", default="oracle", help="'oracle', a .lib file or a checkpoint directory")
    ev.add_argument("--pred", help="'oracle', a .lib file or a checkpoint directory (default <out>/models)")
    ev.add_argument("--netlist", action="append", help="bundled benchmark name or gate-list file; repeatable")
    ev.add_argument("--frequency", type=float, help="clock frequency in Hz for power (default: 1 / period)")
    ev.add_argument("--corner", help="vdd,vth,third")

    interp = sub.add_parser("interp-drive", help="PPA gain of an interpolated drive-strength extension")
    interp.add_argument("--drives", default=DEFAULT_NEW_DRIVES, help="new drives, e.g. 'INV:3,5;AND2:3'")
    interp.add_argument("--netlist", action="append", help="bundled benchmark name or gate-list file; repeatable")
    interp.add_argument("--factors", default=DEFAULT_PERIOD_FACTORS, help="periods as multiples of the minimum period")
    interp.add_argument("--models", help="checkpoint directory for a predicted extension library")
    interp.add_argument("--corner", help="vdd,vth,third")

    bench = sub.add_parser("bench-runtime", help="model inference time against oracle characterization")
    bench.add_argument("--models", help="checkpoint directory (default <out>/models)")
    bench.add_argument("--corner", help="vdd,vth,third")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Optional[str]]:
    overrides: Dict[str, Optional[str]] = {"SEED": args.seed, "JOBS": args.jobs, "OUT": args.out}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
        overrides[key.strip().upper()] = value
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        0 on success, 1 for configuration errors, 2 for data or coverage
        errors, 3 for numeric failures.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config, _overrides(args))
        logger.info("Running %s with config %s", args.command, config_hash(config)[:12])
        return COMMANDS[args.command](config, args)
    except CellGnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
