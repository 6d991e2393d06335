"""Versioned little-endian binary containers.

Layout shared by every file type::

    magic      4 bytes ("DHNN", "DHSV", "DHKN", "DHDS")
    version    uint16
    header     type-specific fixed fields (see the writers below)
    arrays     uint32 count, then per array: uint8 ndim, ndim x uint32 dims,
               product(dims) x float64

All integers are little-endian. Floats are written with ``<f8`` so a
round trip reproduces every bit.
"""
import io
import struct

import numpy as np

from .neural import ArchitectureSpec, TrainedNetwork, build_architecture
from .tensor import DTYPE

VERSION = 1
NETWORK_MAGIC = b"DHNN"
SVM_MAGIC = b"DHSV"
KNN_MAGIC = b"DHKN"
DATASET_MAGIC = b"DHDS"


class FormatError(ValueError):
    pass


class _Writer:
    def __init__(self, magic):
        self.buf = io.BytesIO()
        self.buf.write(magic)
        self.pack("<H", VERSION)

    def pack(self, fmt, *values):
        self.buf.write(struct.pack(fmt, *values))

    def shape(self, shape):
        self.pack("<B", len(shape))
        for d in shape:
            self.pack("<I", d)

    def arrays(self, arrays):
        self.pack("<I", len(arrays))
        for arr in arrays:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            self.shape(arr.shape)
            self.buf.write(arr.tobytes())

    def getvalue(self):
        return self.buf.getvalue()


class _Reader:
    def __init__(self, blob, magic):
        self.blob = memoryview(blob)
        self.pos = 0
        got = bytes(self.take(4))
        if got != magic:
            raise FormatError(f"expected magic {magic!r}, found {got!r}")
        (version,) = self.unpack("<H")
        if version != VERSION:
            raise FormatError(f"unsupported format version {version}")

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise FormatError("truncated file")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def shape(self):
        (ndim,) = self.unpack("<B")
        return tuple(self.unpack("<I")[0] for _ in range(ndim))

    def arrays(self):
        (count,) = self.unpack("<I")
        out = []
        for _ in range(count):
            shape = self.shape()
            n = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(self.take(8 * n), dtype="<f8").astype(DTYPE)
            out.append(data.reshape(shape))
        return out

    def done(self):
        if self.pos != len(self.blob):
            raise FormatError(f"{len(self.blob) - self.pos} trailing bytes")


def _flatten_params(params):
    return [arr for p in params if p is not None for arr in p]


def _unflatten_params(template, flat):
    out, it = [], iter(flat)
    for p in template:
        out.append(None if p is None else (next(it), next(it)))
    return out


def dump_network(net):
    spec = net.spec
    w = _Writer(NETWORK_MAGIC)
    w.pack("<BI", spec.arch_id, spec.class_count)
    w.shape(spec.input_shape)
    w.pack("<qI", net.seed, net.epochs_trained)
    w.pack("<dd", spec.learning_rate, spec.momentum)
    w.arrays(_flatten_params(net.parameters))
    w.arrays(_flatten_params(net.velocities))
    return w.getvalue()


def load_network(blob):
    r = _Reader(blob, NETWORK_MAGIC)
    arch_id, class_count = r.unpack("<BI")
    input_shape = r.shape()
    seed, epochs = r.unpack("<qI")
    rate, momentum = r.unpack("<dd")
    params = r.arrays()
    velocities = r.arrays()
    r.done()
    base = build_architecture(arch_id, input_shape, class_count)
    spec = ArchitectureSpec(arch_id, base.layers, rate, momentum, input_shape, class_count)
    template = [None if layer.kind == "MaxPool" else () for layer in spec.layers]
    return TrainedNetwork(spec, _unflatten_params(template, params),
                          _unflatten_params(template, velocities), epochs, seed)


def dump_svm(model):
    w = _Writer(SVM_MAGIC)
    w.pack("<Idd", model.class_count, model.hyper.C, model.hyper.gamma)
    w.pack("<I", len(model.binaries))
    for (a, b), m in sorted(model.binaries.items()):
        w.pack("<IIdB", a, b, m.bias, int(m.converged))
        w.arrays([m.support_vectors, m.dual_coefs])
    return w.getvalue()


def load_svm(blob):
    from .classifiers import SvmBinaryModel, SvmHyper, SvmModel

    r = _Reader(blob, SVM_MAGIC)
    class_count, c, gamma = r.unpack("<Idd")
    hyper = SvmHyper(c, gamma)
    (count,) = r.unpack("<I")
    binaries = {}
    for _ in range(count):
        a, b, bias, converged = r.unpack("<IIdB")
        sv, coefs = r.arrays()
        binaries[(a, b)] = SvmBinaryModel(sv, coefs, bias, hyper, bool(converged))
    r.done()
    return SvmModel(class_count, binaries, hyper)


def dump_knn(model):
    w = _Writer(KNN_MAGIC)
    w.pack("<I", model.k)
    w.arrays([model.points, model.labels.astype(DTYPE)])
    return w.getvalue()


def load_knn(blob):
    from .classifiers import KnnModel

    r = _Reader(blob, KNN_MAGIC)
    (k,) = r.unpack("<I")
    points, labels = r.arrays()
    r.done()
    return KnnModel(points, labels.astype(np.int64), k)


def dump_dataset(ds):
    w = _Writer(DATASET_MAGIC)
    name = ds.name.encode("utf-8")
    w.pack("<IH", ds.class_count, len(name))
    w.buf.write(name)
    w.arrays([ds.features, np.asarray(ds.labels, dtype=DTYPE)])
    return w.getvalue()


def load_dataset(blob):
    from .data import Dataset

    r = _Reader(blob, DATASET_MAGIC)
    class_count, name_len = r.unpack("<IH")
    name = bytes(r.take(name_len)).decode("utf-8")
    features, labels = r.arrays()
    r.done()
    return Dataset(features, labels.astype(np.int64), class_count, name)


def save(path, blob):
    with open(path, "wb") as f:
        f.write(blob)


def read(path):
    with open(path, "rb") as f:
        return f.read()


def load_any(path):
    """Dispatch on the magic bytes of ``path``."""
    blob = read(path)
    loaders = {NETWORK_MAGIC: load_network, SVM_MAGIC: load_svm,
               KNN_MAGIC: load_knn, DATASET_MAGIC: load_dataset}
    try:
        return loaders[blob[:4]](blob)
    except KeyError:
        raise FormatError(f"{path}: unknown magic {blob[:4]!r}") from None
