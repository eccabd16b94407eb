"""A small reference network for checking nested models end to end.

Bias-free dense (and optional same-padded conv) layers with ReLU, trained by
plain mini-batch SGD on seeded Gaussian blobs. Quantized forward passes use
dequantized weight overlays and per-sample symmetric activation fake-quant.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ModeError, TrainingError
from .quantizer import dequantize

log = logging.getLogger(__name__)

DEFAULT_CONFIG = Path(__file__).with_name("refnet_default.json")
MODES = ("fp32", "full_bit", "part_bit")


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Conv2D:
    in_ch: int
    out_ch: int
    k: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


# -- data ------------------------------------------------------------------


@dataclass(eq=False)
class SyntheticDataset:
    seed: int
    features: int
    classes: int
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


def make_blobs(seed: int, features: int = 16, classes: int = 4, n_train: int = 1600,
               n_test: int = 400, separation: float = 3.0, spread: float = 1.0,
               offset: float = 0.0) -> SyntheticDataset:
    """Gaussian blobs around random centres; ``offset`` shifts every feature
    (non-negative-mean inputs, like pixel intensities)."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(classes, features)) * separation

    def draw(count):
        y = np.arange(count) % classes
        rng.shuffle(y)
        x = centers[y] + rng.normal(size=(count, features)) * spread + offset
        return x.astype(np.float32), y.astype(np.int64)

    x_train, y_train = draw(n_train)
    x_test, y_test = draw(n_test)
    return SyntheticDataset(seed, features, classes, x_train, y_train, x_test, y_test)


def dataset_from_config(config, seed) -> SyntheticDataset:
    d = config["dataset"]
    return make_blobs(seed, d["features"], d["classes"], d["train"], d["test"],
                      d.get("separation", 3.0), d.get("spread", 1.0), d.get("offset", 0.0))


def load_config(path=None) -> dict:
    with open(path or DEFAULT_CONFIG) as fh:
        return json.load(fh)


# -- conv helpers ----------------------------------------------------------


def _im2col(x, k):
    # x: (B, C, H, W), same padding, stride 1 -> (B, H*W, C*k*k)
    b, c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))  # B,C,H,W,k,k
    return cols.transpose(0, 2, 3, 1, 4, 5).reshape(b, h * w, c * k * k)


def _col2im(cols, shape, k):
    b, c, h, w = shape
    p = k // 2
    cols = cols.reshape(b, h, w, c, k, k)
    out = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + h, j:j + w] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out[:, :, p:p + h, p:p + w]


def fake_quant(a, bits):
    """Per-sample symmetric min-max quantize-dequantize."""
    if bits is None:
        return a
    qmax = (1 << (bits - 1)) - 1
    flat = a.reshape(a.shape[0], -1)
    peak = np.abs(flat).max(axis=1)
    scale = np.where(peak > 0, peak / qmax, 1.0).astype(np.float32)
    scale = scale.reshape((-1,) + (1,) * (a.ndim - 1))
    q = np.clip(np.sign(a) * np.floor(np.abs(a) / scale + 0.5), -qmax - 1, qmax)
    return (q * scale).astype(np.float32)


# -- network ---------------------------------------------------------------


@dataclass(eq=False)
class RefNet:
    specs: list
    weights: dict
    input_shape: tuple
    overlays: dict = field(default_factory=dict)

    @property
    def weighted(self):
        return [(name, spec) for name, spec in self._named() if name is not None]

    def _named(self):
        i = 0
        for spec in self.specs:
            if isinstance(spec, Dense):
                yield f"dense{i}", spec
                i += 1
            elif isinstance(spec, Conv2D):
                yield f"conv{i}", spec
                i += 1
            else:
                yield None, spec

    @classmethod
    def from_weights(cls, weights, input_shape=None):
        """Rebuild the architecture from an ordered name->array mapping.

        Rank-4 arrays are convolutions, rank-2 arrays dense layers; every
        weighted layer but the last is followed by ReLU.
        """
        arrays = list(weights.items())
        specs = []
        convs = [a for _, a in arrays if np.ndim(a) == 4]
        if input_shape is None:
            if convs:
                first = arrays[0][1]
                raise ModeError(f"conv net with first kernel {first.shape} needs an explicit input shape")
            input_shape = (arrays[0][1].shape[1],)
        seen_dense = False
        for idx, (_, a) in enumerate(arrays):
            if a.ndim == 4:
                specs.append(Conv2D(a.shape[1], a.shape[0], a.shape[2]))
            elif a.ndim == 2:
                if not seen_dense and convs:
                    specs.append(Flatten())
                seen_dense = True
                specs.append(Dense(a.shape[1], a.shape[0]))
            else:
                raise ModeError(f"cannot infer a layer from weight of rank {a.ndim}")
            if idx < len(arrays) - 1:
                specs.append(ReLU())
        net = cls(specs, {}, tuple(input_shape))
        net.weights = {name: np.asarray(a, dtype=np.float32)
                       for (name, _), (_, a) in zip(net.weighted, arrays)}
        return net

    def named_weights(self):
        return dict(self.weights)

    def with_quantized(self, qweights, mode="full_bit"):
        """Copy carrying ``name -> QuantizedTensor`` as the overlay for ``mode``."""
        if mode not in ("full_bit", "part_bit"):
            raise ModeError(f"overlay mode must be full_bit or part_bit, got {mode!r}")
        q = list(qweights.values())
        if len(q) != len(self.weights):
            raise ModeError(f"overlay has {len(q)} layers, network has {len(self.weights)}")
        over = {}
        for (name, w), qt in zip(self.weights.items(), q):
            arr = dequantize(qt)
            if arr.shape != w.shape:
                raise ModeError(f"overlay for {name} has shape {arr.shape}, expected {w.shape}")
            over[name] = arr
        overlays = dict(self.overlays)
        overlays[mode] = over
        return RefNet(self.specs, self.weights, self.input_shape, overlays)

    def with_nested(self, model):
        return self.with_quantized(model.full_weights(), "full_bit").with_quantized(
            model.part_weights(), "part_bit")


def init_net(hidden, input_shape, classes, rng, conv=()):
    """He-normal initialised net: conv blocks, then dense hidden layers."""
    weights = {}
    i = 0
    ch = input_shape[0] if len(input_shape) == 3 else None
    for out_ch, k in conv:
        fan_in = ch * k * k
        weights[f"conv{i}"] = (rng.normal(size=(out_ch, ch, k, k)) * np.sqrt(2.0 / fan_in)).astype(np.float32)
        ch = out_ch
        i += 1
    width = ch * input_shape[1] * input_shape[2] if conv else int(np.prod(input_shape))
    for out in list(hidden) + [classes]:
        weights[f"dense{i}"] = (rng.normal(size=(out, width)) * np.sqrt(2.0 / width)).astype(np.float32)
        width = out
        i += 1
    return RefNet.from_weights(weights, input_shape)


def _layer_weights(net, mode):
    if mode == "fp32":
        return net.weights
    if mode not in MODES:
        raise ModeError(f"unknown mode {mode!r}")
    if mode not in net.overlays:
        raise ModeError(f"no {mode} overlay attached")
    return net.overlays[mode]


def _forward(net, x, weights, act_bits, keep=False):
    a = np.asarray(x, dtype=np.float32).reshape((x.shape[0],) + net.input_shape)
    cache = []
    for name, spec in net._named():
        if isinstance(spec, Dense):
            a_in = fake_quant(a, act_bits)
            cache.append((name, spec, a_in))
            a = a_in @ weights[name].T
        elif isinstance(spec, Conv2D):
            a_in = fake_quant(a, act_bits)
            cols = _im2col(a_in, spec.k)
            cache.append((name, spec, (a_in.shape, cols)))
            out = cols @ weights[name].reshape(spec.out_ch, -1).T  # B, HW, O
            a = out.transpose(0, 2, 1).reshape(a_in.shape[0], spec.out_ch, *a_in.shape[2:])
        elif isinstance(spec, ReLU):
            cache.append((None, spec, a))
            a = np.maximum(a, 0)
        elif isinstance(spec, Flatten):
            cache.append((None, spec, a.shape))
            a = a.reshape(a.shape[0], -1)
    return (a, cache) if keep else a


def forward(net: RefNet, x, mode="fp32", act_bits=8):
    """Logits for ``x``; ``act_bits`` is ignored in fp32 mode."""
    weights = _layer_weights(net, mode)
    return _forward(net, x, weights, None if mode == "fp32" else act_bits)


def evaluate(net: RefNet, dataset: SyntheticDataset, mode="fp32", act_bits=8, split="test") -> float:
    x = dataset.x_test if split == "test" else dataset.x_train
    y = dataset.y_test if split == "test" else dataset.y_train
    logits = forward(net, x, mode, act_bits)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def _backward(net, cache, grad):
    grads = {}
    for name, spec, saved in reversed(cache):
        if isinstance(spec, Dense):
            grads[name] = grad.T @ saved
            grad = grad @ net.weights[name]
        elif isinstance(spec, Conv2D):
            shape, cols = saved
            g = grad.reshape(shape[0], spec.out_ch, -1).transpose(0, 2, 1)  # B, HW, O
            w2 = net.weights[name].reshape(spec.out_ch, -1)
            grads[name] = np.einsum("bpo,bpk->ok", g, cols).reshape(net.weights[name].shape)
            grad = _col2im(g @ w2, shape, spec.k)
        elif isinstance(spec, ReLU):
            grad = grad * (saved > 0)
        elif isinstance(spec, Flatten):
            grad = grad.reshape(saved)
    return grads


def train(net: RefNet, dataset: SyntheticDataset, epochs, batch, lr, rng, momentum=0.0,
          lr_decay=1.0, decay_every=0) -> RefNet:
    n = dataset.x_train.shape[0]
    velocity = {k: np.zeros_like(v) for k, v in net.weights.items()}
    for epoch in range(epochs):
        if decay_every and epoch and epoch % decay_every == 0:
            lr *= lr_decay
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            x, y = dataset.x_train[idx], dataset.y_train[idx]
            logits, cache = _forward(net, x, net.weights, None, keep=True)
            z = logits - logits.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            loss = -np.log(p[np.arange(len(y)), y] + 1e-12).mean()
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            total += loss * len(y)
            p[np.arange(len(y)), y] -= 1.0
            grads = _backward(net, cache, (p / len(y)).astype(np.float32))
            for name, g in grads.items():
                velocity[name] = momentum * velocity[name] + g
                net.weights[name] = (net.weights[name] - lr * velocity[name]).astype(np.float32)
        log.debug("epoch %d loss %.4f", epoch, total / n)
    return net


def train_reference(config=None, seed=0):
    """Train the configured reference net; returns (net, dataset).

    Raises TrainingError if test accuracy ends below ``accuracy_floor``
    (checked only when at least one epoch runs).
    """
    if config is None or isinstance(config, (str, Path)):
        config = load_config(config)
    data = dataset_from_config(config, seed)
    rng = np.random.default_rng(seed + 1)
    m = config["model"]
    conv = [tuple(c) for c in m.get("conv", [])]
    if conv:
        side = int(round(np.sqrt(data.features)))
        if side * side != data.features:
            raise TrainingError("conv models need a square number of features")
        input_shape = (1, side, side)
    else:
        input_shape = (data.features,)
    net = init_net(m["hidden"], input_shape, data.classes, rng, conv)
    t = config["train"]
    train(net, data, t["epochs"], t["batch"], t["lr"], rng, t.get("momentum", 0.0),
          t.get("lr_decay", 1.0), t.get("decay_every", 0))
    if t["epochs"] > 0:
        acc = evaluate(net, data, "fp32")
        floor = config.get("accuracy_floor", 0.0)
        if acc < floor:
            raise TrainingError(f"test accuracy {acc:.3f} below floor {floor}")
    return net, data


def input_shape_for(config, weights):
    if any(np.ndim(a) == 4 for a in weights.values()):
        feats = config["dataset"]["features"]
        side = int(round(np.sqrt(feats)))
        return (1, side, side)
    return None


def part_bit_sweep(net: RefNet, data: SyntheticDataset, n: int, hs, strategy, act_bits=8) -> dict:
    """Part-bit test accuracy for each h; key ``"full"`` holds the full-bit accuracy."""
    from .nesting import nest_model

    out = {}
    for h in hs:
        nested = net.with_nested(nest_model(net.weights, n, h, strategy))
        out[h] = evaluate(nested, data, "part_bit", act_bits)
        out.setdefault("full", evaluate(nested, data, "full_bit", act_bits))
    return out


def critical_h(sweep: dict, drop: float):
    """Lowest h whose part-bit accuracy stays within ``drop`` of full-bit, or None."""
    ok = [h for h in sweep if h != "full" and sweep[h] >= sweep["full"] - drop]
    return min(ok) if ok else None
