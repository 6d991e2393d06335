"""Run manifests: INI files describing a dataset, its split and a grid of experiments.

Grammar (``configparser`` syntax; ``#`` or ``;`` start comments)::

    [dataset]
    name = mnist                      # column label in reports
    type = image | numeric
    format = idx | csv | cache
    # idx:   images, labels, optional test_images + test_labels
    # csv:   path (several files joined with "|"), label_column (index or name),
    #        header (bool), delimiter ("," default, "whitespace" for UCI .trn/.tst),
    #        drop_columns (comma list), image_shape (e.g. 1,28,28)
    # cache: path to a DHDS dataset file
    normalize = auto | image | zscore | none   (auto: image for images, zscore otherwise)

    [split]
    train = 50000
    val = 10000
    test = 0          # 0 with test files given: use the whole test file
    seed = 0
    strategy = shuffled | given-order

    [output]
    dir = results/mnist
    aggregation = peak | per-run
    save_networks = false

    [experiment.<label>]                # any number of these
    family = NN | SVM | KNN | NN/SVM | NN/KNN
    architectures = 1,2,3,4           # NN families only
    epochs = 2,5,10,20                # NN families only; default shown
    seeds = 1,2,3                     # default shown

Relative paths resolve against the manifest's directory.
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .neural import IMAGE_ARCHS, NUMERIC_DEPTH
from .pipeline import FAMILIES, KNN, NN, SVM

DEFAULT_EPOCHS = (2, 5, 10, 20)
DEFAULT_SEEDS = (1, 2, 3)


class ManifestError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class DatasetSource:
    name: str
    type: str
    format: str
    paths: dict
    label_column: object = -1
    header: bool = False
    delimiter: str | None = ","
    drop_columns: tuple = ()
    image_shape: tuple | None = None
    normalize: str = "auto"


@dataclass(frozen=True)
class SplitConfig:
    train: int
    val: int
    test: int = 0
    seed: int = 0
    strategy: str = "shuffled"


@dataclass(frozen=True)
class Experiment:
    label: str
    family: str
    architectures: tuple = ()
    epochs: tuple = ()
    seeds: tuple = DEFAULT_SEEDS


@dataclass(frozen=True)
class Cell:
    family: str
    architecture_id: int | None
    epochs: int | None
    seed: int

    def key(self):
        return (self.family, self.architecture_id, self.epochs, self.seed)


@dataclass(frozen=True)
class RunManifest:
    dataset: DatasetSource
    split: SplitConfig
    experiments: tuple
    out_dir: Path
    aggregation: str = "peak"
    save_networks: bool = False
    source: Path | None = field(default=None, compare=False)

    def cells(self):
        """Every (family, architecture, epochs, seed) combination, deduplicated, in manifest order."""
        seen, out = set(), []
        for exp in self.experiments:
            if exp.family in (SVM, KNN):
                combos = [(None, None, s) for s in exp.seeds]
            else:
                combos = [(a, e, s) for a in exp.architectures for e in exp.epochs for s in exp.seeds]
            for arch, epochs, seed in combos:
                cell = Cell(exp.family, arch, epochs, seed)
                if cell.key() not in seen:
                    seen.add(cell.key())
                    out.append(cell)
        return out

    def data_fingerprint(self):
        """Hash of everything that determines the data a cell sees."""
        payload = {"dataset": asdict(self.dataset), "split": asdict(self.split)}
        payload["dataset"]["paths"] = {k: str(v) for k, v in self.dataset.paths.items()}
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _ints(text, field_name, minimum=0):
    try:
        values = tuple(int(v) for v in text.replace(" ", "").split(",") if v != "")
    except ValueError:
        raise ManifestError(field_name, f"expected a comma-separated list of integers, got {text!r}") from None
    if not values:
        raise ManifestError(field_name, "list is empty")
    if any(v < minimum for v in values):
        raise ManifestError(field_name, f"values must be >= {minimum}")
    return values


def _int(section, key, field_name, default=None, minimum=0):
    if key not in section:
        if default is None:
            raise ManifestError(field_name, "missing")
        return default
    try:
        value = int(section[key])
    except ValueError:
        raise ManifestError(field_name, f"expected an integer, got {section[key]!r}") from None
    if value < minimum:
        raise ManifestError(field_name, f"must be >= {minimum}")
    return value


def _bool(section, key, field_name, default=False):
    try:
        return section.getboolean(key, fallback=default)
    except ValueError:
        raise ManifestError(field_name, f"expected true/false, got {section[key]!r}") from None


def _choice(section, key, field_name, options, default=None):
    value = section.get(key, default)
    if value is None:
        raise ManifestError(field_name, "missing")
    if value not in options:
        raise ManifestError(field_name, f"must be one of {', '.join(options)}; got {value!r}")
    return value


def _parse_dataset(sec, base):
    name = sec.get("name") or "dataset"
    dtype = _choice(sec, "type", "dataset.type", ("image", "numeric"))
    fmt = _choice(sec, "format", "dataset.format", ("idx", "csv", "cache"))
    required = {"idx": ("images", "labels"), "csv": ("path",), "cache": ("path",)}[fmt]
    for key in required:
        if key not in sec:
            raise ManifestError(f"dataset.{key}", f"required for format={fmt}")
    paths = {}
    for key in ("images", "labels", "test_images", "test_labels", "path"):
        if key in sec:
            parts = [p.strip() for p in sec[key].split("|") if p.strip()]
            resolved = tuple(p if Path(p).is_absolute() else base / p for p in map(Path, parts))
            paths[key] = resolved if key == "path" else resolved[0]
    if ("test_images" in paths) != ("test_labels" in paths):
        raise ManifestError("dataset.test_images", "test_images and test_labels go together")
    label = sec.get("label_column", "-1").strip()
    try:
        label = int(label)
    except ValueError:
        pass
    delimiter = sec.get("delimiter", ",")
    if delimiter == "whitespace":
        delimiter = None
    shape = None
    if "image_shape" in sec:
        shape = _ints(sec["image_shape"], "dataset.image_shape", minimum=1)
        if len(shape) != 3:
            raise ManifestError("dataset.image_shape", "expected C,H,W")
    drop = ()
    if sec.get("drop_columns", "").strip():
        drop = tuple(int(v) if v.lstrip("-").isdigit() else v
                     for v in (p.strip() for p in sec["drop_columns"].split(",")))
    if fmt == "csv" and dtype == "image" and shape is None:
        raise ManifestError("dataset.image_shape", "image CSV needs image_shape")
    normalize = _choice(sec, "normalize", "dataset.normalize", ("auto", "image", "zscore", "none"), "auto")
    return DatasetSource(name, dtype, fmt, paths, label, _bool(sec, "header", "dataset.header"),
                         delimiter, drop, shape, normalize)


def _parse_experiment(label, sec, dtype):
    where = f"experiment.{label}"
    family = _choice(sec, "family", f"{where}.family", FAMILIES)
    seeds = _ints(sec.get("seeds", ",".join(map(str, DEFAULT_SEEDS))), f"{where}.seeds")
    if family in (SVM, KNN):
        for key in ("architectures", "architecture", "epochs"):
            if key in sec:
                raise ManifestError(f"{where}.{key}", f"not allowed for the {family} baseline")
        return Experiment(label, family, seeds=seeds)
    key = "architectures" if "architectures" in sec else "architecture"
    if key not in sec:
        raise ManifestError(f"{where}.architectures", f"required for family {family}")
    archs = _ints(sec[key], f"{where}.{key}", minimum=1)
    allowed = IMAGE_ARCHS if dtype == "image" else NUMERIC_DEPTH
    for a in archs:
        if a not in allowed:
            raise ManifestError(f"{where}.{key}",
                                f"architecture {a} does not take {dtype} input (allowed: {sorted(allowed)})")
    epochs = _ints(sec.get("epochs", ",".join(map(str, DEFAULT_EPOCHS))), f"{where}.epochs")
    return Experiment(label, family, archs, epochs, seeds)


def parse_manifest(text, base=Path("."), source=None, overrides=None):
    """Parse manifest text. ``overrides`` maps "section.key" to a replacement value."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ManifestError("manifest", f"syntax error: {exc}") from None
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.rpartition(".")
        if section == "experiment":  # applies to every experiment
            for name in cp.sections():
                if name.startswith("experiment.") and not (
                        key in ("epochs", "architectures") and cp[name].get("family") in (SVM, KNN)):
                    cp[name][key] = value
            continue
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][key] = value
    for required in ("dataset", "split"):
        if not cp.has_section(required):
            raise ManifestError(required, "section missing")
    base = Path(base)
    dataset = _parse_dataset(cp["dataset"], base)
    sp = cp["split"]
    split_cfg = SplitConfig(
        _int(sp, "train", "split.train", minimum=1), _int(sp, "val", "split.val", minimum=1),
        _int(sp, "test", "split.test", default=0), _int(sp, "seed", "split.seed", default=0),
        _choice(sp, "strategy", "split.strategy", ("shuffled", "given-order"), "shuffled"))
    if split_cfg.test == 0 and "test_images" not in dataset.paths:
        raise ManifestError("split.test", "must be positive unless a separate test file is given")
    experiments = tuple(_parse_experiment(name.split(".", 1)[1], cp[name], dataset.type)
                        for name in cp.sections() if name.startswith("experiment."))
    if not experiments:
        raise ManifestError("experiment", "at least one [experiment.<label>] section is required")
    out = cp["output"] if cp.has_section("output") else {}
    out_dir = Path(out.get("dir", "results"))
    if not out_dir.is_absolute():
        out_dir = base / out_dir
    aggregation = out.get("aggregation", "peak")
    if aggregation not in ("peak", "per-run"):
        raise ManifestError("output.aggregation", f"must be peak or per-run; got {aggregation!r}")
    save = cp["output"].getboolean("save_networks", fallback=False) if cp.has_section("output") else False
    return RunManifest(dataset, split_cfg, experiments, out_dir, aggregation, save, source)


def load_manifest(path, overrides=None):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError("manifest", f"cannot read {path}: {exc.strerror}") from None
    return parse_manifest(text, path.parent, path, overrides)


def check_files(manifest):
    """Validation beyond syntax: every referenced file must be readable."""
    for key, value in manifest.dataset.paths.items():
        for p in value if isinstance(value, tuple) else (value,):
            if not Path(p).is_file():
                raise ManifestError(f"dataset.{key}", f"file not found: {p}")
