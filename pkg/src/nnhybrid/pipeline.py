"""Train/validate/test protocol for the baselines and the hybrid NN/SVM, NN/KNN models.

Hyperparameters (C for the SVM, k for KNN) are chosen by fitting on the
training split and scoring on validation. The winner is refit on
train+validation and scored once on test. Hybrids first train the network
on the training split alone, drop its softmax layer and run every split
through the remaining layers.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from math import isqrt

import numpy as np

from . import neural
from .classifiers import knn_fit, knn_predict, svm_fit, svm_predict
from .data import Dataset, NormalizationStats, concat, normalize_apply, normalize_fit

log = logging.getLogger(__name__)

C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0, 1000.0)
K_BASE = (3, 5, 7, 11, 25)

NN, SVM, KNN, NN_SVM, NN_KNN = "NN", "SVM", "KNN", "NN/SVM", "NN/KNN"
FAMILIES = (NN, SVM, KNN, NN_SVM, NN_KNN)
HYBRID_OF = {SVM: NN_SVM, KNN: NN_KNN}


class PipelineError(RuntimeError):
    pass


def k_grid(n):
    """{3, 5, 7, 11, 25, floor(sqrt(n))}, deduplicated, sorted, values above n dropped."""
    return tuple(sorted(v for v in set(K_BASE) | {isqrt(n)} if 1 <= v <= n))


@dataclass(frozen=True)
class HyperGrid:
    c_values: tuple = C_GRID

    def k_values(self, n):
        return k_grid(n)

    def for_family(self, family, n):
        return self.c_values if family == SVM else self.k_values(n)


@dataclass(frozen=True)
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset

    @property
    def name(self):
        return self.train.name.split(":")[0]


@dataclass(frozen=True)
class ExperimentResult:
    model_family: str
    architecture_id: int | None
    epochs: int | None
    chosen_hyper: float | int | None
    test_accuracy: float
    seed: int
    dataset_name: str
    wall_time: float = 0.0

    def record(self, with_time=False):
        out = asdict(self)
        if not with_time:
            out.pop("wall_time")
        return out


def accuracy(predictions, truth):
    p = np.asarray(predictions)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise ValueError(f"{p.size} predictions for {t.size} labels")
    if p.size == 0:
        raise ValueError("accuracy of an empty prediction list")
    return float(np.mean(p == t))


def prepare_splits(train, val, test, mode):
    """Fit normalisation on ``train`` and apply those statistics to all three splits."""
    stats = normalize_fit(train, mode)
    return Splits(*(normalize_apply(stats, s) for s in (train, val, test))), stats


def _flat(x):
    x = np.asarray(x)
    return x.reshape(x.shape[0], -1)


def _fit(family, x, y, value, class_count):
    if family == SVM:
        return svm_fit(x, y, value, class_count=class_count)
    if family == KNN:
        return knn_fit(x, y, int(value))
    raise PipelineError(f"unknown classifier family {family!r}")


def _predict(family, model, x):
    return svm_predict(model, x) if family == SVM else knn_predict(model, x)


def validate_select(family, train_x, train_y, val_x, val_y, grid, class_count=None):
    """Return (best value, {value: validation accuracy}); ties go to the smaller value."""
    if len(grid) == 0:
        raise PipelineError("empty hyperparameter grid")
    if len(train_y) == 0 or len(val_y) == 0:
        raise PipelineError("validation needs non-empty train and val splits")
    train_x, val_x = _flat(train_x), _flat(val_x)
    scores = {}
    for value in sorted(grid):
        try:
            model = _fit(family, train_x, train_y, value, class_count)
        except Exception as exc:
            raise PipelineError(f"{family} fit failed for grid value {value}: {exc}") from exc
        scores[value] = accuracy(_predict(family, model, val_x), val_y)
        log.debug("%s %s -> val acc %.4f", family, value, scores[value])
    best = max(sorted(scores), key=lambda v: (scores[v], -v))
    return best, scores


def _select_refit_test(family, train_x, train_y, val_x, val_y, test, class_count, grid, trace,
                       test_transform=None):
    values = grid.for_family(family, len(train_y))
    best, _ = validate_select(family, train_x, train_y, val_x, val_y, values, class_count)
    _trace(trace, "selected")
    model = _fit(family, np.concatenate([_flat(train_x), _flat(val_x)]),
                 np.concatenate([train_y, val_y]), best, class_count)
    _trace(trace, "refit")
    test_x = test.features
    if test_transform is not None:
        test_x = test_transform(test_x)
    acc = accuracy(_predict(family, model, _flat(test_x)), test.labels)
    _trace(trace, "evaluated")
    return best, acc


def _trace(trace, event):
    if trace is not None:
        trace(event)


def run_baseline_classifier(family, splits, seed=0, grid=HyperGrid(), trace=None):
    """SVM or KNN on the raw features."""
    if family not in (SVM, KNN):
        raise PipelineError(f"baseline family must be SVM or KNN, got {family!r}")
    start = time.perf_counter()
    tr, va = splits.train, splits.val
    class_count = tr.class_count
    best, acc = _select_refit_test(family, tr.features, tr.labels, va.features, va.labels,
                                   splits.test, class_count, grid, trace)
    return ExperimentResult(family, None, None, _plain(best), acc, seed, splits.name,
                            time.perf_counter() - start)


def run_network_baseline(arch_id, splits, epochs, seed, trace=None, nesterov=False,
                         on_network=None):
    """Train on train+val, report softmax-argmax accuracy on test."""
    start = time.perf_counter()
    data = concat(splits.train, splits.val)
    spec = neural.build_architecture(arch_id, data.sample_shape, data.class_count)
    net = neural.train(spec, data, epochs, seed, nesterov=nesterov)
    _trace(trace, "network-trained")
    if on_network is not None:
        on_network(net)
    test = splits.test
    acc = accuracy(net.predict(test.features), test.labels)
    _trace(trace, "evaluated")
    return ExperimentResult(NN, arch_id, epochs, None, acc, seed, splits.name,
                            time.perf_counter() - start)


def train_feature_extractor(arch_id, train, epochs, seed, sample_hook=None, nesterov=False):
    spec = neural.build_architecture(arch_id, train.sample_shape, train.class_count)
    net = neural.train(spec, train, epochs, seed, nesterov=nesterov, sample_hook=sample_hook)
    return net, neural.strip_softmax(net)


def run_hybrid(arch_id, family, splits, epochs, seed, grid=HyperGrid(), trace=None,
               sample_hook=None, nesterov=False, on_network=None):
    """NN/SVM or NN/KNN: the network sees only the training split during updates."""
    if family not in HYBRID_OF:
        raise PipelineError(f"hybrid family must be SVM or KNN, got {family!r}")
    start = time.perf_counter()
    tr, va = splits.train, splits.val
    try:
        net, extractor = train_feature_extractor(arch_id, tr, epochs, seed, sample_hook, nesterov)
    except Exception as exc:
        raise PipelineError(f"training architecture {arch_id} failed: {exc}") from exc
    _trace(trace, "network-trained")
    if on_network is not None:
        on_network(net)
    f_train = neural.extract_features(extractor, tr.features)
    f_val = neural.extract_features(extractor, va.features)
    best, acc = _select_refit_test(
        family, f_train, tr.labels, f_val, va.labels, splits.test, tr.class_count, grid, trace,
        test_transform=lambda x: neural.extract_features(extractor, x))
    return ExperimentResult(HYBRID_OF[family], arch_id, epochs, _plain(best), acc, seed,
                            splits.name, time.perf_counter() - start)


def run_experiment(family, splits, arch_id=None, epochs=None, seed=0, **kw):
    """Dispatch on the model family name used in reports and manifests."""
    if family == NN:
        return run_network_baseline(arch_id, splits, epochs, seed, **kw)
    if family in (SVM, KNN):
        if arch_id is not None:
            raise PipelineError(f"{family} baseline takes no architecture")
        kw.pop("nesterov", None)
        kw.pop("on_network", None)
        return run_baseline_classifier(family, splits, seed, **kw)
    if family in (NN_SVM, NN_KNN):
        base = SVM if family == NN_SVM else KNN
        return run_hybrid(arch_id, base, splits, epochs, seed, **kw)
    raise PipelineError(f"unknown model family {family!r}")


def _plain(value):
    f = float(value)
    return int(f) if f.is_integer() and f >= 1 and not isinstance(value, float) else f


__all__ = [
    "C_GRID", "FAMILIES", "ExperimentResult", "HyperGrid", "NormalizationStats", "Splits",
    "accuracy", "k_grid", "prepare_splits", "run_baseline_classifier", "run_experiment",
    "run_hybrid", "run_network_baseline", "validate_select",
]
