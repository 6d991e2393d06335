"""Executes a manifest's cells and writes the result files.

Output directory layout:

    results.jsonl   header line {"schema": ..., "data": <fingerprint>} then one
                    ExperimentResult per line (wall_time excluded, so reruns are
                    byte-identical)
    timings.jsonl   wall-clock seconds per cell
    table.txt       peak (or per-run) table
    series.csv      accuracy-vs-epoch data per family/architecture
    networks/       trained networks (DHNN) when save_networks is on
    FAILED          present only if some cell raised; lists each failure
"""
from __future__ import annotations

import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

from . import serialize
from .data import SplitSpec, load_csv, load_idx, split
from .manifest import Cell
from .pipeline import ExperimentResult, Splits, prepare_splits, run_experiment
from .report import epoch_series, report_table

log = logging.getLogger(__name__)

SCHEMA = "nnhybrid.results/1"
JOBS_ENV = "NNHYBRID_JOBS"


class RunFailed(RuntimeError):
    pass


def load_source(src):
    """Return (training-pool dataset, separate test dataset or None)."""
    test = None
    if src.format == "idx":
        ds = load_idx(src.paths["images"], src.paths["labels"], src.name)
        if "test_images" in src.paths:
            test = load_idx(src.paths["test_images"], src.paths["test_labels"], src.name)
    elif src.format == "csv":
        ds = load_csv(src.paths["path"], src.label_column, src.header, src.delimiter,
                      src.drop_columns, src.image_shape, src.name)
    else:
        ds = serialize.load_dataset(serialize.read(src.paths["path"][0]))
    return ds, test


def build_splits(manifest):
    src, cfg = manifest.dataset, manifest.split
    ds, test_file = load_source(src)
    if test_file is not None:
        train, val, _ = split(ds, SplitSpec(cfg.train, cfg.val, 0, cfg.seed, cfg.strategy))
        test = test_file if cfg.test == 0 else test_file.subset(range(cfg.test))
    else:
        train, val, test = split(ds, SplitSpec(cfg.train, cfg.val, cfg.test, cfg.seed, cfg.strategy))
    names = [f"{src.name}:{part}" for part in ("train", "val", "test")]
    train, val, test = (s.subset(range(len(s)), n) for s, n in zip((train, val, test), names))
    mode = src.normalize
    if mode == "auto":
        mode = "image" if src.type == "image" else "zscore"
    if mode == "none":
        return Splits(train, val, test)
    splits, _ = prepare_splits(train, val, test, mode)
    return splits


def _record_line(result):
    return json.dumps(result.record(), ensure_ascii=False)


def _cell_of(record):
    return Cell(record["model_family"], record["architecture_id"], record["epochs"], record["seed"])


def read_results(path):
    header, records = None, []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "schema" in obj:
                header = obj
            else:
                records.append(obj)
    return header, records


_SPLITS = None


def _init_worker(splits):
    global _SPLITS
    _SPLITS = splits


def _network_name(cell):
    fam = cell.family.replace("/", "-")
    return f"{fam}_arch{cell.architecture_id}_ep{cell.epochs}_seed{cell.seed}.dhnn"


def _run_cell(cell, net_dir=None):
    kw = {"arch_id": cell.architecture_id, "epochs": cell.epochs, "seed": cell.seed}
    if net_dir is not None and cell.architecture_id is not None:
        kw["on_network"] = lambda net: serialize.save(
            Path(net_dir) / _network_name(cell), serialize.dump_network(net))
    return run_experiment(cell.family, _SPLITS, **kw)


def jobs_bound(flag=None):
    if flag is not None:
        return max(1, flag)
    try:
        return max(1, int(os.environ.get(JOBS_ENV, "1")))
    except ValueError:
        return 1


def run_manifest(manifest, jobs=None, progress=None):
    """Run every missing cell; returns the results in manifest cell order.

    Cells already present in an existing ``results.jsonl`` with a matching data
    fingerprint are skipped. Raises :class:`RunFailed` after all cells have
    been attempted if any of them failed.
    """
    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results_path = out / "results.jsonl"
    fingerprint = manifest.data_fingerprint()
    header = {"schema": SCHEMA, "data": fingerprint}

    done = {}
    if results_path.exists():
        old_header, records = read_results(results_path)
        if old_header == header:
            done = {_cell_of(r).key(): r for r in records}
        else:
            log.info("data fingerprint changed; discarding previous results")
    cells = manifest.cells()
    todo = [c for c in cells if c.key() not in done]
    (out / "FAILED").unlink(missing_ok=True)

    splits = build_splits(manifest) if todo else None
    net_dir = None
    if manifest.save_networks:
        net_dir = out / "networks"
        net_dir.mkdir(exist_ok=True)

    if not done:
        results_path.write_text(json.dumps(header) + "\n")
    failures = []
    with open(results_path, "a") as res_f, open(out / "timings.jsonl", "a") as time_f:
        def commit(cell, result):
            res_f.write(_record_line(result) + "\n")
            res_f.flush()
            time_f.write(json.dumps({"cell": list(cell.key()), "wall_time": result.wall_time}) + "\n")
            time_f.flush()
            done[cell.key()] = result.record()
            if progress:
                progress(cell, result)

        def fail(cell, exc_text):
            failures.append((cell, exc_text))
            log.error("cell %s failed:\n%s", cell, exc_text)

        n_jobs = min(jobs_bound(jobs), max(1, len(todo)))
        if n_jobs == 1:
            _init_worker(splits)
            for cell in todo:
                try:
                    commit(cell, _run_cell(cell, net_dir))
                except Exception:
                    fail(cell, traceback.format_exc())
        else:
            with ProcessPoolExecutor(n_jobs, initializer=_init_worker, initargs=(splits,)) as pool:
                futures = {pool.submit(_run_cell, cell, net_dir): cell for cell in todo}
                for fut in as_completed(futures):
                    cell = futures[fut]
                    try:
                        commit(cell, fut.result())
                    except Exception:
                        fail(cell, traceback.format_exc())

    # canonical order so the file does not depend on scheduling
    ordered = [done[c.key()] for c in cells if c.key() in done]
    lines = [json.dumps(header)] + [json.dumps(r, ensure_ascii=False) for r in ordered]
    results_path.write_text("\n".join(lines) + "\n")
    results = [ExperimentResult(**r) for r in ordered]
    if results:
        (out / "table.txt").write_text(report_table(results, "text", manifest.aggregation))
        (out / "series.csv").write_text(epoch_series(results))
    if failures:
        text = "".join(f"{c.family} arch={c.architecture_id} epochs={c.epochs} seed={c.seed}\n{tb}\n"
                       for c, tb in failures)
        (out / "FAILED").write_text(text)
        raise RunFailed(f"{len(failures)} of {len(cells)} cells failed; see {out / 'FAILED'}")
    return results
