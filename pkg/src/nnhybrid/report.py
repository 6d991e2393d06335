"""Peak-accuracy tables and accuracy-vs-epoch series built from result records."""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from statistics import median

from .pipeline import FAMILIES, ExperimentResult

MISSING = "—"


def _as_dict(r):
    return r.record(with_time=True) if isinstance(r, ExperimentResult) else dict(r)


def seed_medians(results):
    """Median test accuracy over seeds per (dataset, family, architecture, epochs)."""
    groups = defaultdict(list)
    for r in map(_as_dict, results):
        key = (r["dataset_name"], r["model_family"], r["architecture_id"], r["epochs"])
        groups[key].append(r["test_accuracy"])
    return {k: (median(v), min(v), max(v), len(v)) for k, v in groups.items()}


def peak_table(results):
    """{dataset: {family: peak accuracy}} with the peak taken over architectures and epochs."""
    table = defaultdict(dict)
    for (ds, fam, _, _), (med, *_rest) in seed_medians(results).items():
        table[ds][fam] = max(med, table[ds].get(fam, -1.0))
    return table


def _datasets(results):
    seen = []
    for r in map(_as_dict, results):
        if r["dataset_name"] not in seen:
            seen.append(r["dataset_name"])
    return seen


def percent(acc):
    return round(100.0 * acc, 2)


def report_table(results, fmt="text", aggregation="peak"):
    results = list(results)
    if not results:
        raise ValueError("no results to report")
    if aggregation == "per-run":
        return _per_run(results, fmt)
    table = peak_table(results)
    datasets = _datasets(results)
    cells = [[table[ds].get(fam) for ds in datasets] for fam in FAMILIES]
    if fmt == "json":
        body = {"columns": datasets,
                "rows": {fam: {ds: (None if v is None else percent(v)) for ds, v in zip(datasets, row)}
                         for fam, row in zip(FAMILIES, cells)}}
        return json.dumps(body, indent=2, ensure_ascii=False) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Model"] + datasets)
        for fam, row in zip(FAMILIES, cells):
            w.writerow([fam] + ["" if v is None else f"{percent(v):.2f}" for v in row])
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    rows = [["Model"] + datasets]
    for fam, row in zip(FAMILIES, cells):
        rows.append([fam] + [MISSING if v is None else f"{percent(v):.2f}%" for v in row])
    return _align(rows)


def _per_run(results, fmt):
    header = ["dataset_name", "model_family", "architecture_id", "epochs", "chosen_hyper", "seed",
              "test_accuracy"]
    recs = [_as_dict(r) for r in results]
    if fmt == "json":
        return json.dumps([{k: r[k] for k in header} for r in recs], indent=2, ensure_ascii=False) + "\n"
    rows = [header] + [["" if r[k] is None else str(r[k]) for k in header] for r in recs]
    if fmt == "csv":
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    for row, r in zip(rows[1:], recs):
        row[-1] = f"{percent(r['test_accuracy']):.2f}%"
        row[:] = [MISSING if c == "" else c for c in row]
    return _align(rows)


def _align(rows):
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def epoch_series(results):
    """CSV text: one row per (dataset, family, architecture, epochs) with seed statistics."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset_name", "model_family", "architecture_id", "epochs",
                "median_accuracy", "min_accuracy", "max_accuracy", "seeds"])
    order = {f: i for i, f in enumerate(FAMILIES)}
    stats = seed_medians(results)
    for key in sorted(stats, key=lambda k: (k[0], order.get(k[1], 99), k[2] or 0, k[3] or 0)):
        ds, fam, arch, ep = key
        med, lo, hi, n = stats[key]
        w.writerow([ds, fam, "" if arch is None else arch, "" if ep is None else ep,
                    repr(med), repr(lo), repr(hi), n])
    return buf.getvalue()
