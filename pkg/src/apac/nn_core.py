"""Minimal dense tensor / layer engine.

Layers: valid convolution (stride 1, no padding), non-overlapping max
pooling, fully-connected, ReLU, and a terminal softmax. Forward and
backward are hand-written; parameters and activations are float32 by
default while log-softmax / loss reductions run in float64.

Array conventions: images are (C, H, W); batches prepend an N axis.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from apac.rng import STREAM_INIT, generator_for

CHECKPOINT_MAGIC = b"APACNET1"


class LayerShapeError(ValueError):
    """Input shape incompatible with a layer."""


class StaleCacheError(ValueError):
    """backward() called with a cache from an outdated forward pass."""


# ---------------------------------------------------------------------------
# Layer specs (architecture description, no parameters)

@dataclass(frozen=True)
class Conv:
    """Valid convolution, k x k kernels, stride 1."""
    out_maps: int
    k: int


@dataclass(frozen=True)
class Pool:
    """Non-overlapping max pooling over a g x g grid."""
    g: int


@dataclass(frozen=True)
class Dense:
    units: int


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class Softmax:
    pass


LayerSpec = Conv | Pool | Dense | Relu | Softmax

_SPEC_NAMES = {"conv": Conv, "pool": Pool, "dense": Dense, "relu": Relu, "softmax": Softmax}


def spec_to_dict(spec: LayerSpec) -> dict:
    name = type(spec).__name__.lower()
    d = {"kind": name}
    d.update(vars(spec))
    return d


def spec_from_dict(d: dict) -> LayerSpec:
    d = dict(d)
    cls = _SPEC_NAMES[d.pop("kind")]
    return cls(**d)


# ---------------------------------------------------------------------------
# Parameters

@dataclass
class Param:
    name: str
    value: np.ndarray
    decay: bool  # L2 regularization applies only to weights, not biases


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Stable log-softmax along the last axis, computed in float64."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("log_softmax requires finite logits")
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(log_probs: np.ndarray, target_class: int) -> float:
    """Negative log-likelihood of the target class."""
    lp = np.asarray(log_probs)
    n = lp.shape[-1]
    if not 0 <= int(target_class) < n:
        raise ValueError(f"target class {target_class} out of range [0, {n})")
    return float(-lp[..., int(target_class)])


# ---------------------------------------------------------------------------
# Standalone layer primitives (also used directly by tests)

def conv2d_valid(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid cross-correlation: x (C,H,W), kernels (O,C,k,k), bias (O,)."""
    if x.ndim != 3 or kernels.ndim != 4 or x.shape[0] != kernels.shape[1]:
        raise LayerShapeError(
            f"conv2d_valid: input {x.shape} incompatible with kernels {kernels.shape}")
    k = kernels.shape[2]
    if x.shape[1] < k or x.shape[2] < k:
        raise LayerShapeError(f"conv2d_valid: spatial size {x.shape[1:]} smaller than kernel {k}")
    y = _conv_forward(x[None], kernels, bias)
    return y[0]


def _conv_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    o, _, k, _ = kernels.shape
    oh, ow = h - k + 1, w - k + 1
    cols = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh * ow, c * k * k)
    wmat = kernels.reshape(o, c * k * k)
    y = cols @ wmat.T + bias
    return y.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)


def maxpool(x: np.ndarray, g: int) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping g x g max pooling of x (C,H,W); returns (pooled, argmax map).

    Argmax indices are positions within each block in row-major scan order
    (ties broken by the first maximum).
    """
    if x.ndim != 3:
        raise LayerShapeError(f"maxpool: expected (C,H,W), got {x.shape}")
    out, idx = _pool_forward(x[None], g)
    return out[0], idx[0]


def _pool_forward(x: np.ndarray, g: int) -> tuple[np.ndarray, np.ndarray]:
    n, c, h, w = x.shape
    if h % g or w % g:
        raise LayerShapeError(f"maxpool: spatial size {(h, w)} not divisible by grid {g}")
    hg, wg = h // g, w // g
    blocks = x.reshape(n, c, hg, g, wg, g).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hg, wg, g * g)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def fully_connected(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """out = weights @ x + bias for a single flat input vector."""
    if x.ndim != 1 or weights.shape[1] != x.shape[0] or bias.shape[0] != weights.shape[0]:
        raise LayerShapeError(
            f"fully_connected: input {x.shape}, weights {weights.shape}, bias {bias.shape}")
    return weights @ x + bias


# ---------------------------------------------------------------------------
# Network

class Network:
    """Ordered layer sequence ending in softmax, with explicit backprop."""

    def __init__(self, specs: list[LayerSpec], input_shape: tuple[int, ...],
                 seed: int = 0, dtype=np.float32):
        if not specs or not isinstance(specs[-1], Softmax):
            raise ValueError("network must end with a Softmax layer")
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.seed = int(seed)
        self.dtype = dtype
        self.params: list[Param] = []
        self._param_of_layer: dict[int, tuple[int, int]] = {}  # layer idx -> (w idx, b idx)
        self._version = 0
        self._build()

    # -- construction -------------------------------------------------------

    def _build(self) -> None:
        shape = self.input_shape
        for i, spec in enumerate(self.specs):
            if isinstance(spec, Conv):
                if len(shape) != 3:
                    raise LayerShapeError(f"layer {i} (conv): needs (C,H,W) input, has {shape}")
                c, h, w = shape
                if h < spec.k or w < spec.k:
                    raise LayerShapeError(f"layer {i} (conv): input {shape} smaller than k={spec.k}")
                fan_in = c * spec.k * spec.k
                wshape = (spec.out_maps, c, spec.k, spec.k)
                self._add_param(i, wshape, (spec.out_maps,), fan_in)
                shape = (spec.out_maps, h - spec.k + 1, w - spec.k + 1)
            elif isinstance(spec, Pool):
                if len(shape) != 3 or shape[1] % spec.g or shape[2] % spec.g:
                    raise LayerShapeError(f"layer {i} (pool): input {shape} not divisible by g={spec.g}")
                shape = (shape[0], shape[1] // spec.g, shape[2] // spec.g)
            elif isinstance(spec, Dense):
                n_in = int(np.prod(shape))
                self._add_param(i, (spec.units, n_in), (spec.units,), n_in)
                shape = (spec.units,)
            elif isinstance(spec, Relu):
                pass
            elif isinstance(spec, Softmax):
                if len(shape) != 1:
                    raise LayerShapeError(f"layer {i} (softmax): needs flat input, has {shape}")
        self.output_shape = shape
        self.class_count = shape[0]

    def _add_param(self, layer_idx: int, wshape, bshape, fan_in: int) -> None:
        g = generator_for(self.seed, (STREAM_INIT,), layer_idx)
        bound = 1.0 / np.sqrt(fan_in)
        w = g.uniform(-bound, bound, size=wshape).astype(self.dtype)
        b = np.zeros(bshape, dtype=self.dtype)
        wi = len(self.params)
        self.params.append(Param(f"layer{layer_idx}.weight", w, decay=True))
        self.params.append(Param(f"layer{layer_idx}.bias", b, decay=False))
        self._param_of_layer[layer_idx] = (wi, wi + 1)

    def bump_version(self) -> None:
        """Invalidate outstanding forward caches (call after mutating params)."""
        self._version += 1

    # -- forward / backward -------------------------------------------------

    def forward(self, x: np.ndarray):
        """Returns (probabilities, log_probabilities, cache).

        Accepts a single input of ``input_shape`` or a batch with a leading
        N axis; outputs follow the same convention.
        """
        x = np.asarray(x)
        single = x.shape == self.input_shape
        if single:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise LayerShapeError(
                f"network input: expected {self.input_shape}, got {x.shape[1:]}")
        acts = [x]
        pool_idx: dict[int, np.ndarray] = {}
        for i, spec in enumerate(self.specs):
            h = acts[-1]
            try:
                if isinstance(spec, Conv):
                    wi, bi = self._param_of_layer[i]
                    h = _conv_forward(h, self.params[wi].value, self.params[bi].value)
                elif isinstance(spec, Pool):
                    h, idx = _pool_forward(h, spec.g)
                    pool_idx[i] = idx
                elif isinstance(spec, Dense):
                    wi, bi = self._param_of_layer[i]
                    flat = h.reshape(h.shape[0], -1)
                    if flat.shape[1] != self.params[wi].value.shape[1]:
                        raise LayerShapeError(
                            f"expected {self.params[wi].value.shape[1]} inputs, got {flat.shape[1]}")
                    h = flat @ self.params[wi].value.T + self.params[bi].value
                elif isinstance(spec, Relu):
                    h = np.maximum(h, 0)
                elif isinstance(spec, Softmax):
                    logp = log_softmax(h)
                    probs = np.exp(logp)
                    cache = _ForwardCache(self, self._version, acts, pool_idx, probs)
                    if single:
                        return probs[0], logp[0], cache
                    return probs, logp, cache
            except LayerShapeError as e:
                raise LayerShapeError(f"layer {i} ({type(spec).__name__.lower()}): {e}") from None
            acts.append(h)
        raise AssertionError("unreachable: softmax is the last layer")

    def backward(self, cache: "_ForwardCache", target_class) -> list[np.ndarray]:
        """Gradients of the mean cross-entropy over the cached batch.

        Returns one array per entry of ``self.params``, same shapes.
        """
        if cache.net is not self or cache.version != self._version:
            raise StaleCacheError("forward cache does not match current parameters")
        targets = np.atleast_1d(np.asarray(target_class, dtype=np.int64))
        n = cache.acts[0].shape[0]
        if targets.shape != (n,):
            raise ValueError(f"expected {n} target(s), got shape {targets.shape}")
        if targets.min() < 0 or targets.max() >= self.class_count:
            raise ValueError("target class out of range")

        grads = [np.zeros_like(p.value) for p in self.params]
        onehot = np.zeros((n, self.class_count), dtype=np.float64)
        onehot[np.arange(n), targets] = 1.0
        delta = ((cache.probs - onehot) / n).astype(self.dtype)

        for i in range(len(self.specs) - 2, -1, -1):
            spec = self.specs[i]
            h_in = cache.acts[i]
            h_out = cache.acts[i + 1]
            if isinstance(spec, Dense):
                wi, bi = self._param_of_layer[i]
                flat = h_in.reshape(n, -1)
                grads[wi] += delta.T @ flat
                grads[bi] += delta.sum(axis=0)
                delta = (delta @ self.params[wi].value).reshape(h_in.shape)
            elif isinstance(spec, Relu):
                delta = delta * (h_out > 0)
            elif isinstance(spec, Conv):
                wi, bi = self._param_of_layer[i]
                dw, db, delta = self._conv_backward(h_in, delta, self.params[wi].value)
                grads[wi] += dw
                grads[bi] += db
            elif isinstance(spec, Pool):
                delta = self._pool_backward(h_in.shape, cache.pool_idx[i], delta, spec.g)
        return grads

    @staticmethod
    def _conv_backward(x, dy, kernels):
        n, c, h, w = x.shape
        o, _, k, _ = kernels.shape
        oh, ow = h - k + 1, w - k + 1
        cols = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
        cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)
        dyf = dy.transpose(0, 2, 3, 1).reshape(n * oh * ow, o)
        dw = (dyf.T @ cols).reshape(o, c, k, k)
        db = dyf.sum(axis=0)
        dcols = (dyf @ kernels.reshape(o, -1)).reshape(n, oh, ow, c, k, k)
        dx = np.zeros_like(x)
        for dy_ in range(k):
            for dx_ in range(k):
                dx[:, :, dy_:dy_ + oh, dx_:dx_ + ow] += dcols[:, :, :, :, dy_, dx_].transpose(0, 3, 1, 2)
        return dw, db, dx

    @staticmethod
    def _pool_backward(in_shape, idx, dy, g):
        n, c, h, w = in_shape
        hg, wg = h // g, w // g
        blocks = np.zeros((n, c, hg, wg, g * g), dtype=dy.dtype)
        np.put_along_axis(blocks, idx[..., None], dy[..., None], axis=-1)
        return blocks.reshape(n, c, hg, wg, g, g).transpose(0, 1, 2, 4, 3, 5).reshape(in_shape)

    # -- persistence ---------------------------------------------------------

    def save(self, path, seed: int | None = None, config_digest: str = "") -> None:
        header = {
            "layers": [spec_to_dict(s) for s in self.specs],
            "input_shape": list(self.input_shape),
            "init_seed": self.seed,
            "run_seed": self.seed if seed is None else int(seed),
            "config_digest": config_digest,
            "param_shapes": [list(p.value.shape) for p in self.params],
        }
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            for p in self.params:
                f.write(np.ascontiguousarray(p.value, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> tuple["Network", dict]:
        with open(path, "rb") as f:
            magic = f.read(8)
            if magic != CHECKPOINT_MAGIC:
                raise ValueError(f"bad checkpoint magic {magic!r}")
            (hlen,) = struct.unpack("<I", f.read(4))
            header = json.loads(f.read(hlen))
            specs = [spec_from_dict(d) for d in header["layers"]]
            net = cls(specs, tuple(header["input_shape"]), seed=header["init_seed"])
            for p, shape in zip(net.params, header["param_shapes"]):
                n = int(np.prod(shape))
                raw = f.read(4 * n)
                if len(raw) != 4 * n:
                    raise ValueError("truncated checkpoint parameter blob")
                p.value = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
        net.bump_version()
        return net, header

    def digest(self) -> str:
        h = hashlib.sha256()
        for p in self.params:
            h.update(np.ascontiguousarray(p.value, dtype="<f4").tobytes())
        return h.hexdigest()


class _ForwardCache:
    __slots__ = ("net", "version", "acts", "pool_idx", "probs")

    def __init__(self, net, version, acts, pool_idx, probs):
        self.net = net
        self.version = version
        self.acts = acts
        self.pool_idx = pool_idx
        self.probs = probs
