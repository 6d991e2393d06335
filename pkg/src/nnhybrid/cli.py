"""Command-line entry point: ``nnhybrid {run,report,validate,extract,cache}``."""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import serialize
from .manifest import ManifestError, check_files, load_manifest
from .neural import extract_features, strip_softmax
from .report import report_table
from .runner import RunFailed, load_source, read_results, run_manifest

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


def _overrides(args):
    out = {}
    if getattr(args, "out", None):
        out["output.dir"] = str(Path(args.out).resolve())
    if getattr(args, "aggregation", None):
        out["output.aggregation"] = args.aggregation
    if getattr(args, "epochs", None):
        out["experiment.epochs"] = args.epochs
    if getattr(args, "seeds", None):
        out["experiment.seeds"] = args.seeds
    return out


def cmd_validate(args):
    manifest = load_manifest(args.manifest, _overrides(args))
    check_files(manifest)
    cells = manifest.cells()
    print(f"{args.manifest}: ok, {len(cells)} cells")
    for c in cells:
        arch = "-" if c.architecture_id is None else c.architecture_id
        epochs = "-" if c.epochs is None else c.epochs
        print(f"  {c.family:7s} arch={arch} epochs={epochs} seed={c.seed}")
    return EXIT_OK


def cmd_run(args):
    manifest = load_manifest(args.manifest, _overrides(args))
    check_files(manifest)

    def progress(cell, result):
        print(f"{result.model_family:7s} arch={result.architecture_id} epochs={result.epochs} "
              f"seed={result.seed} hyper={result.chosen_hyper} acc={result.test_accuracy:.4f} "
              f"({result.wall_time:.1f}s)", flush=True)

    try:
        results = run_manifest(manifest, jobs=args.jobs, progress=progress)
    except RunFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(report_table(results, "text", manifest.aggregation), end="")
    return EXIT_OK


def cmd_report(args):
    _, records = read_results(args.results)
    if not records:
        print(f"error: {args.results} holds no results", file=sys.stderr)
        return EXIT_RUNTIME
    sys.stdout.write(report_table(records, args.format, args.aggregation or "peak"))
    return EXIT_OK


def _load_features(path):
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path), None
    ds = serialize.load_any(path)
    return ds.features, ds


def cmd_extract(args):
    net = serialize.load_network(serialize.read(args.network))
    x, ds = _load_features(args.data)
    feats = extract_features(strip_softmax(net), x)
    out = Path(args.out)
    if out.suffix == ".npy":
        np.save(out, feats)
    else:
        from .data import Dataset
        labels = ds.labels if ds is not None else np.zeros(len(feats), dtype=np.int64)
        count = ds.class_count if ds is not None else 1
        name = ds.name if ds is not None else "features"
        serialize.save(out, serialize.dump_dataset(Dataset(feats, labels, count, name)))
    print(f"wrote {feats.shape[0]}x{feats.shape[1]} features to {out}")
    return EXIT_OK


def cmd_cache(args):
    manifest = load_manifest(args.manifest)
    check_files(manifest)
    ds, test = load_source(manifest.dataset)
    serialize.save(args.out, serialize.dump_dataset(ds))
    print(f"wrote {len(ds)} samples to {args.out}")
    if test is not None and args.test_out:
        serialize.save(args.test_out, serialize.dump_dataset(test))
        print(f"wrote {len(test)} test samples to {args.test_out}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="nnhybrid", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def manifest_flags(p):
        p.add_argument("manifest")
        p.add_argument("--out", help="override output.dir")
        p.add_argument("--epochs", help="override epochs for every network experiment, e.g. 2,5")
        p.add_argument("--seeds", help="override seeds for every experiment, e.g. 1,2,3")
        p.add_argument("--aggregation", choices=("peak", "per-run"))

    p = sub.add_parser("run", help="execute every cell of a manifest")
    manifest_flags(p)
    p.add_argument("--jobs", type=int, help="parallel cells (default: $NNHYBRID_JOBS or 1)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a manifest without running it")
    manifest_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="render a results.jsonl file")
    p.add_argument("results")
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.add_argument("--aggregation", choices=("peak", "per-run"))
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("extract", help="dump feature-extractor outputs for a dataset")
    p.add_argument("--network", required=True, help="DHNN network file")
    p.add_argument("--data", required=True, help="DHDS dataset file or .npy array")
    p.add_argument("--out", required=True, help="output .npy or DHDS file")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("cache", help="write a manifest's dataset as a DHDS file")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--test-out")
    p.set_defaults(func=cmd_cache)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ManifestError as exc:
        print(f"invalid manifest: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
