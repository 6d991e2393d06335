"""The seven built-in networks: construction, backprop training, feature extraction.

Image architectures 1-4 stack 5x5 valid convolutions (32 filters, stride 1)
and 2x2/stride-2 max pooling before a 256-unit dense layer. Numeric
architectures 5-7 are 2, 4 or 6 dense layers of 256 units. Every network ends
in a softmax layer sized to the class count. Dense and softmax layers apply
inverted dropout (p=0.5) to their *inputs* during training only.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import prod

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, ShapeError, as_tensor

CONV = "Convolution"
POOL = "MaxPool"
DENSE = "Dense"
SOFTMAX = "SoftmaxOutput"

FILTERS = 32
KERNEL = 5
HIDDEN_UNITS = 256
DROPOUT = 0.5
BATCH_SIZE = 128
PROB_FLOOR = 1e-12

IMAGE_ARCHS = {1: (CONV, POOL, CONV, POOL), 2: (CONV, POOL), 3: (CONV,), 4: ()}
NUMERIC_DEPTH = {5: 2, 6: 4, 7: 6}
IMAGE_RATE = 0.01
NUMERIC_RATE = 0.0001
MOMENTUM = 0.9


class ArchitectureError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0
    dropout: float = 0.0
    filters: int = 0
    size: int = 0
    stride: int = 1

    def describe(self):
        if self.kind == CONV:
            return f"Conv{self.filters}"
        if self.kind == POOL:
            return "Pool"
        if self.kind == DENSE:
            return f"Dense{self.units}"
        return f"Softmax{self.units}"


@dataclass(frozen=True)
class ArchitectureSpec:
    arch_id: int
    layers: tuple
    learning_rate: float
    momentum: float
    input_shape: tuple
    class_count: int

    @property
    def is_image(self):
        return self.arch_id in IMAGE_ARCHS

    def describe(self):
        return [layer.describe() for layer in self.layers]


def _conv_layer():
    return LayerSpec(CONV, filters=FILTERS, size=KERNEL, stride=1)


def _dense_layer():
    return LayerSpec(DENSE, units=HIDDEN_UNITS, dropout=DROPOUT)


def layer_shapes(layers, input_shape):
    """Output shape (without batch axis) after each layer; raises on impossible stacks."""
    shape = tuple(input_shape)
    shapes = []
    for layer in layers:
        if layer.kind == CONV:
            c, h, w = shape
            if h < layer.size or w < layer.size:
                raise ArchitectureError(
                    f"{h}x{w} input is smaller than the {layer.size}x{layer.size} filter")
            shape = (layer.filters, h - layer.size + 1, w - layer.size + 1)
        elif layer.kind == POOL:
            c, h, w = shape
            if h < 2 or w < 2:
                raise ArchitectureError(f"cannot pool a {h}x{w} map")
            shape = (c, h // 2, w // 2)
        else:
            shape = (layer.units,)
        shapes.append(shape)
    return shapes


def build_architecture(arch_id, input_shape, class_count):
    input_shape = tuple(int(d) for d in input_shape)
    if class_count < 1:
        raise ArchitectureError(f"class_count must be positive, got {class_count}")
    if arch_id in IMAGE_ARCHS:
        if len(input_shape) != 3:
            raise ArchitectureError(
                f"architecture {arch_id} needs a CxHxW image input, got {input_shape}")
        layers = [_conv_layer() if kind == CONV else LayerSpec(POOL, size=2, stride=2)
                  for kind in IMAGE_ARCHS[arch_id]]
        layers.append(_dense_layer())
        rate = IMAGE_RATE
    elif arch_id in NUMERIC_DEPTH:
        if len(input_shape) != 1:
            raise ArchitectureError(
                f"architecture {arch_id} needs a flat numeric input, got {input_shape}")
        layers = [_dense_layer() for _ in range(NUMERIC_DEPTH[arch_id])]
        rate = NUMERIC_RATE
    else:
        raise ArchitectureError(f"architecture id must be 1..7, got {arch_id}")
    layers.append(LayerSpec(SOFTMAX, units=int(class_count), dropout=DROPOUT))
    layer_shapes(layers, input_shape)
    return ArchitectureSpec(arch_id, tuple(layers), rate, MOMENTUM, input_shape, int(class_count))


# ----------------------------------------------------------------------------
# primitive layers


def relu(x):
    return np.maximum(x, 0.0)


def conv2d_forward(x, filters, bias):
    """Valid cross-correlation, stride 1. ``x`` is [C,H,W] or [B,C,H,W]; returns pre-activation."""
    x = as_tensor(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    cols, out_h, out_w = _im2col(x, filters.shape[-1])
    out = cols @ filters.reshape(filters.shape[0], -1).T + bias
    out = out.reshape(x.shape[0], out_h, out_w, filters.shape[0]).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def _im2col(x, k):
    b, c, h, w = x.shape
    if h < k or w < k:
        raise ShapeError(f"input {h}x{w} smaller than {k}x{k} filter")
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # [B,C,Ho,Wo,k,k]
    out_h, out_w = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * out_h * out_w, c * k * k)
    return cols, out_h, out_w


def _conv_backward(x, cols, filters, dout, need_input_grad):
    b, f, out_h, out_w = dout.shape
    k = filters.shape[-1]
    dz = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (dz.T @ cols).reshape(filters.shape)
    db = dz.sum(axis=0)
    if not need_input_grad:
        return None, dw, db
    dcols = (dz @ filters.reshape(f, -1)).reshape(b, out_h, out_w, x.shape[1], k, k)
    dx = np.zeros_like(x)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + out_h, j:j + out_w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dx, dw, db


def maxpool_forward(x):
    """2x2 stride-2 max pooling; odd trailing rows/columns are dropped.

    Returns the pooled maps and, for each output cell, the flat index (0..3)
    of the winning element inside its window (first maximum on ties).
    """
    x = as_tensor(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    b, c, h, w = x.shape
    oh, ow = h // 2, w // 2
    win = x[:, :, :2 * oh, :2 * ow].reshape(b, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(b, c, oh, ow, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    if single:
        return out[0], arg[0]
    return out, arg


def _maxpool_backward(dout, arg, in_shape):
    b, c, h, w = in_shape
    oh, ow = dout.shape[2], dout.shape[3]
    dwin = np.zeros((b, c, oh, ow, 4), dtype=DTYPE)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dwin = dwin.reshape(b, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * oh, 2 * ow)
    dx = np.zeros(in_shape, dtype=DTYPE)
    dx[:, :, :2 * oh, :2 * ow] = dwin
    return dx


def softmax(logits):
    z = as_tensor(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def categorical_cross_entropy(probs, labels):
    probs = as_tensor(probs)
    if probs.ndim == 1:
        probs = probs[None]
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != probs.shape[0]:
        raise ShapeError(f"{labels.shape[0]} labels for a batch of {probs.shape[0]}")
    n = probs.shape[1]
    bad = (labels < 0) | (labels >= n)
    if bad.any():
        raise ValueError(f"label {int(labels[bad][0])} outside [0, {n})")
    picked = probs[np.arange(labels.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


# ----------------------------------------------------------------------------
# networks


@dataclass
class TrainedNetwork:
    spec: ArchitectureSpec
    parameters: list          # per layer: (weight, bias) or None for pooling
    velocities: list
    epochs_trained: int = 0
    seed: int = 0
    history: list = field(default_factory=list, compare=False)

    def forward(self, batch, mode="infer", rng=None, masks=None):
        return forward(self, batch, mode, rng, masks)

    def predict_proba(self, batch):
        return forward(self, batch, "infer").probs

    def predict(self, batch):
        return np.argmax(self.predict_proba(batch), axis=1)


@dataclass
class FeatureExtractor:
    layers: tuple
    parameters: list
    input_shape: tuple
    arch_id: int

    @property
    def output_dim(self):
        return self.layers[-1].units

    def __call__(self, batch):
        return _run(self.layers, self.parameters, _as_batch(batch, self.input_shape),
                    "infer", None, None).activations[-1]


@dataclass
class ForwardPass:
    """Everything backward() needs from one forward call."""
    inputs: list       # input to each layer (after flatten, before dropout)
    masks: list        # scaled dropout mask per layer, or None
    caches: list       # im2col columns / pool argmax
    activations: list  # output of each layer (softmax layer: logits)
    probs: np.ndarray | None = None


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_parameters(spec, rng):
    params = []
    shape = spec.input_shape
    for layer, out_shape in zip(spec.layers, layer_shapes(spec.layers, spec.input_shape)):
        if layer.kind == CONV:
            c = shape[0]
            w = glorot_uniform(rng, (layer.filters, c, layer.size, layer.size),
                               c * layer.size ** 2, layer.filters * layer.size ** 2)
            params.append((w, np.zeros(layer.filters)))
        elif layer.kind == POOL:
            params.append(None)
        else:
            d = prod(shape)
            w = glorot_uniform(rng, (d, layer.units), d, layer.units)
            params.append((w, np.zeros(layer.units)))
        shape = out_shape
    return params


def _zeros_like_params(params):
    return [None if p is None else (np.zeros_like(p[0]), np.zeros_like(p[1])) for p in params]


def _as_batch(batch, input_shape):
    x = as_tensor(batch)
    if x.shape[1:] != tuple(input_shape):
        if x.shape == tuple(input_shape):
            x = x[None]
        else:
            raise ShapeError(f"batch shape {x.shape} does not match input {tuple(input_shape)}")
    return x


def forward(network, batch, mode="infer", rng=None, masks=None):
    """Run ``batch`` through the network.

    In ``train`` mode each dense/softmax layer's input is multiplied by an
    inverted-dropout mask, either sampled from ``rng`` or taken from
    ``masks`` (a list aligned with the layers, for replaying a pass).
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "train" and rng is None and masks is None:
        raise ValueError("train mode needs an rng or explicit masks")
    x = _as_batch(batch, network.spec.input_shape)
    fp = _run(network.spec.layers, network.parameters, x, mode, rng, masks)
    fp.probs = softmax(fp.activations[-1])
    return fp


def _run(layers, params, x, mode, rng, masks):
    fp = ForwardPass([], [], [], [])
    for idx, (layer, p) in enumerate(zip(layers, params)):
        if layer.kind == CONV:
            fp.inputs.append(x)
            fp.masks.append(None)
            cols, oh, ow = _im2col(x, layer.size)
            fp.caches.append(cols)
            w, b = p
            z = (cols @ w.reshape(w.shape[0], -1).T + b)
            x = relu(z.reshape(x.shape[0], oh, ow, w.shape[0]).transpose(0, 3, 1, 2))
        elif layer.kind == POOL:
            fp.inputs.append(x)
            fp.masks.append(None)
            x, arg = maxpool_forward(x)
            fp.caches.append(arg)
        else:
            x = x.reshape(x.shape[0], -1)
            fp.inputs.append(x)
            mask = None
            if mode == "train" and layer.dropout > 0:
                if masks is not None:
                    mask = masks[idx]
                else:
                    keep = 1.0 - layer.dropout
                    mask = (rng.random(x.shape) < keep) / keep
            fp.masks.append(mask)
            fp.caches.append(None)
            w, b = p
            z = (x if mask is None else x * mask) @ w + b
            x = z if layer.kind == SOFTMAX else relu(z)
        fp.activations.append(x)
    return fp


def backward(network, fp, labels):
    """Gradients of the mean cross-entropy w.r.t. every parameter, per layer."""
    labels = np.asarray(labels, dtype=np.int64)
    batch = labels.shape[0]
    delta = fp.probs.copy()
    delta[np.arange(batch), labels] -= 1.0
    delta /= batch
    layers = network.spec.layers
    grads = [None] * len(layers)
    for idx in range(len(layers) - 1, -1, -1):
        layer = layers[idx]
        out = fp.activations[idx]
        if layer.kind != SOFTMAX and layer.kind != POOL:
            delta = delta * (out > 0)
        if layer.kind == POOL:
            delta = _maxpool_backward(delta, fp.caches[idx], fp.inputs[idx].shape)
        elif layer.kind == CONV:
            w, _ = network.parameters[idx]
            delta, dw, db = _conv_backward(fp.inputs[idx], fp.caches[idx], w, delta, idx > 0)
            grads[idx] = (dw, db)
        else:
            w, _ = network.parameters[idx]
            x = fp.inputs[idx]
            mask = fp.masks[idx]
            xd = x if mask is None else x * mask
            grads[idx] = (xd.T @ delta, delta.sum(axis=0))
            if idx > 0:
                delta = delta @ w.T
                if mask is not None:
                    delta = delta * mask
                delta = delta.reshape(fp.activations[idx - 1].shape)
    return grads


def sgd_momentum_step(parameters, velocities, gradients, learning_rate, momentum, nesterov=False):
    """Returns new (parameters, velocities); inputs are not modified.

    Classical: v <- mu*v - lr*g; w <- w + v.
    Nesterov (reformulated): w <- w + mu*v_new - lr*g.
    """
    new_params, new_vel = [], []
    for p, v, g in zip(parameters, velocities, gradients):
        if p is None:
            new_params.append(None)
            new_vel.append(None)
            continue
        pair_p, pair_v = [], []
        for w, vel, grad in zip(p, v, g):
            if w.shape != grad.shape or vel.shape != w.shape:
                raise ShapeError(f"parameter {w.shape}, velocity {vel.shape}, gradient {grad.shape}")
            vel = momentum * vel - learning_rate * grad
            step = momentum * vel - learning_rate * grad if nesterov else vel
            pair_p.append(w + step)
            pair_v.append(vel)
        new_params.append(tuple(pair_p))
        new_vel.append(tuple(pair_v))
    return new_params, new_vel


def _check_labels(labels, class_count):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise ValueError(f"labels must lie in [0, {class_count})")
    return labels


def train(spec, dataset, epochs, seed, nesterov=False, batch_size=BATCH_SIZE,
          learning_rate=None, sample_hook=None):
    """Minibatch SGD with momentum on the mean categorical cross-entropy.

    ``dataset`` is anything with ``features`` and ``labels``. One seeded
    generator drives initialisation, per-epoch shuffles and dropout masks, so
    (spec, data, epochs, seed) fixes the result bit for bit.
    ``sample_hook`` is called with the index array of every minibatch.
    """
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    x = as_tensor(dataset.features)
    y = _check_labels(dataset.labels, spec.class_count)
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if x.shape[1:] != spec.input_shape:
        raise ShapeError(f"data shape {x.shape[1:]} does not match architecture input {spec.input_shape}")
    lr = spec.learning_rate if learning_rate is None else learning_rate

    rng = np.random.default_rng(seed)
    params = init_parameters(spec, rng)
    net = TrainedNetwork(spec, params, _zeros_like_params(params), 0, seed)
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            if sample_hook is not None:
                sample_hook(idx)
            fp = forward(net, x[idx], "train", rng)
            total += categorical_cross_entropy(fp.probs, y[idx]) * idx.size
            grads = backward(net, fp, y[idx])
            net.parameters, net.velocities = sgd_momentum_step(
                net.parameters, net.velocities, grads, lr, spec.momentum, nesterov)
        net.epochs_trained += 1
        net.history.append(total / n)
    _freeze(net.parameters)
    _freeze(net.velocities)
    return net


def _freeze(params):
    for p in params:
        if p is not None:
            for arr in p:
                arr.flags.writeable = False


def strip_softmax(network):
    if not isinstance(network, TrainedNetwork) or network.spec.layers[-1].kind != SOFTMAX:
        raise ArchitectureError("only a network ending in a softmax layer can be stripped")
    return FeatureExtractor(network.spec.layers[:-1], list(network.parameters[:-1]),
                            network.spec.input_shape, network.spec.arch_id)


def extract_features(extractor, data, chunk=512):
    x = as_tensor(getattr(data, "features", data))
    if x.shape[1:] != tuple(extractor.input_shape):
        raise ShapeError(f"data shape {x.shape[1:]} does not match extractor input {extractor.input_shape}")
    out = np.empty((x.shape[0], extractor.output_dim), dtype=DTYPE)
    for start in range(0, x.shape[0], chunk):
        out[start:start + chunk] = extractor(x[start:start + chunk])
    return out


def with_parameters(network, parameters):
    """Copy of ``network`` carrying different parameters (used by gradient checks)."""
    return replace(network, parameters=parameters)
