import os
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = ROOT / "data" / "mnist-npm"


class AuditedDataset:
    """Wraps a Dataset and logs every read of its features/labels to a shared list."""

    def __init__(self, ds, tag, log):
        self._ds = ds
        self.tag = tag
        self.log = log

    @property
    def features(self):
        self.log.append(f"{self.tag}.features")
        return self._ds.features

    @property
    def labels(self):
        self.log.append(f"{self.tag}.labels")
        return self._ds.labels

    @property
    def class_count(self):
        return self._ds.class_count

    @property
    def name(self):
        return self._ds.name

    @property
    def sample_shape(self):
        return self._ds.sample_shape

    @property
    def label_names(self):
        return self._ds.label_names

    def __len__(self):
        return len(self._ds)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mnist_paths():
    images = MNIST_DIR / "images-idx3-ubyte.gz"
    labels = MNIST_DIR / "labels-idx1-ubyte.gz"
    if not images.exists():
        pytest.skip("bundled MNIST subset missing (run scripts/mnist_from_npm.py)")
    return images, labels


def dataset_file(env, *candidates):
    """First existing path among $env and the repo-relative candidates, else None."""
    if os.environ.get(env):
        return [Path(p) for p in os.environ[env].split(os.pathsep)]
    found = [ROOT / c for c in candidates]
    return found if all(p.exists() for p in found) else None


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
