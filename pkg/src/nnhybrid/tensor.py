"""Dense float64 arrays with explicit shape checks.

Tensors are plain numpy ``float64`` arrays in C (row-major) order. The helpers
here add the validation the rest of the package relies on; they never
broadcast.
"""
from math import prod

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


def tensor_new(shape, values):
    shape = tuple(int(d) for d in shape)
    if any(d < 1 for d in shape):
        raise ShapeError(f"every dimension must be >= 1, got {shape}")
    flat = np.asarray(values, dtype=DTYPE).ravel()
    if flat.size != prod(shape):
        raise ShapeError(
            f"shape {shape} needs {prod(shape)} values, got {flat.size}")
    out = np.ascontiguousarray(flat.reshape(shape))
    out.flags.writeable = False
    return out


def zeros(shape):
    return np.zeros(shape, dtype=DTYPE)


def as_tensor(x):
    return np.ascontiguousarray(x, dtype=DTYPE)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(a, b, kind):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {kind} needs equal shapes, got {a.shape} and {b.shape}")
    try:
        op = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    return op(a, b)
