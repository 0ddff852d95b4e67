"""A small reverse-mode autodiff engine for (C, H, W) float64 feature maps.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure accumulating gradients into them.  Only what the channel networks
need is here: dilated convolution, pooling with arbitrary stride, bilinear
upsampling, the three activations and the two training losses.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, InternalError
from .io import atomic_write_bytes

WEIGHTS_MAGIC = b"GMCN1\n"


class Tensor:
    __slots__ = ("values", "grad", "_parents", "_backward", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.array(values, dtype=np.float64, order="C")
        self.grad = np.zeros_like(self.values) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def requires_grad(self) -> bool:
        return self.grad is not None

    def item(self) -> float:
        if self.values.size != 1:
            raise ConfigError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, grad={'yes' if self.requires_grad else 'no'})"


def _node(values: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.name = None
    out.grad = None
    out._parents = ()
    out._backward = None
    if any(p.requires_grad for p in parents):
        out.grad = np.zeros_like(values)
        out._parents = parents
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is not None:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Populate ``grad`` of every tensor reachable from the scalar ``loss``.

    Leaf gradients accumulate across calls; call ``NetworkParams.zero_grad``
    between steps.
    """
    if loss.values.size != 1:
        raise ConfigError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    loss.grad[...] = 1.0
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)
    for node in order:
        if not np.all(np.isfinite(node.grad)):
            raise InternalError(f"non-finite gradient in {node!r}")


# --- elementwise and structural ops ------------------------------------------

def add(*terms: Tensor) -> Tensor:
    values = terms[0].values.copy()
    for t in terms[1:]:
        values = values + t.values

    def back(g):
        for t in terms:
            _accumulate(t, g)

    return _node(values, tuple(terms), back)


def scale(x: Tensor, factor: float) -> Tensor:
    return _node(x.values * factor, (x,), lambda g: _accumulate(x, g * factor))


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Stack along the channel axis."""
    tensors = tuple(tensors)
    sizes = [t.shape[0] for t in tensors]
    spatial = {t.shape[1:] for t in tensors}
    if len(spatial) != 1:
        raise ConfigError(f"concat of mismatched spatial shapes {sorted(spatial)}")
    values = np.concatenate([t.values for t in tensors], axis=0)
    bounds = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            _accumulate(t, g[lo:hi])

    return _node(values, tensors, back)


def select_channels(x: Tensor, channels: Sequence[int]) -> Tensor:
    idx = list(channels)

    def back(g):
        if x.grad is not None:
            np.add.at(x.grad, idx, g)

    return _node(x.values[idx].copy(), (x,), back)


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    # np.maximum keeps NaN visible so divergence is caught downstream
    return _node(np.maximum(x.values, 0.0), (x,), lambda g: _accumulate(x, g * mask))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.values)
    return _node(y, (x,), lambda g: _accumulate(x, g * y * (1.0 - y)))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the leading (channel) axis."""
    if x.shape[0] < 2:
        raise ConfigError(f"softmax needs at least 2 channels, got {x.shape[0]}")
    y = _softmax(x.values)

    def back(g):
        _accumulate(x, y * (g - np.sum(g * y, axis=0, keepdims=True)))

    return _node(y, (x,), back)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind in ("softmax", "softmax_over_channels"):
        return softmax(x)
    raise ConfigError(f"unknown activation {kind!r}")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def _softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def _log_softmax(v: np.ndarray) -> np.ndarray:
    shifted = v - v.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


# --- convolution, pooling, resampling ----------------------------------------

def conv_output_size(n: int, k: int, stride: int, dilation: int, padding: int) -> int:
    span = n + 2 * padding - dilation * (k - 1) - 1
    if span < 0 or span % stride:
        raise ConfigError(
            f"extent {n} with kernel {k}, stride {stride}, dilation {dilation}, "
            f"padding {padding} does not give an integral output size"
        )
    return span // stride + 1


def _taps(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int, ho: int, wo: int):
    """Yield (i, j, view) for every kernel tap over the padded input."""
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dilation, j * dilation
            yield i, j, xp[:, r0 : r0 + stride * (ho - 1) + 1 : stride, c0 : c0 + stride * (wo - 1) + 1 : stride]


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    dilation: int = 1,
    padding: int = 0,
) -> Tensor:
    """Cross-correlation with taps spaced ``dilation`` apart and zero padding."""
    if x.values.ndim != 3 or kernel.values.ndim != 4:
        raise ConfigError(f"conv2d expects input (C,H,W) and kernel (F,C,kh,kw), got {x.shape} and {kernel.shape}")
    c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise ConfigError(f"conv2d channel mismatch: input has C={c}, kernel expects C={kc}")
    if bias is not None and bias.shape != (f,):
        raise ConfigError(f"conv2d bias shape {bias.shape} does not match F={f}")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ConfigError(f"bad conv2d geometry stride={stride} dilation={dilation} padding={padding}")
    ho = conv_output_size(h, kh, stride, dilation, padding)
    wo = conv_output_size(w, kw, stride, dilation, padding)

    xp = np.pad(x.values, ((0, 0), (padding, padding), (padding, padding))) if padding else x.values
    cols = np.empty((c, kh, kw, ho, wo))
    for i, j, view in _taps(xp, kh, kw, stride, dilation, ho, wo):
        cols[:, i, j] = view
    cols = cols.reshape(c * kh * kw, ho * wo)
    kmat = kernel.values.reshape(f, -1)
    out = kmat @ cols
    if bias is not None:
        out += bias.values[:, None]
    out = out.reshape(f, ho, wo)

    def back(g):
        gm = g.reshape(f, -1)
        _accumulate(kernel, (gm @ cols.T).reshape(kernel.shape))
        if bias is not None:
            _accumulate(bias, gm.sum(axis=1))
        if x.grad is not None:
            gcols = (kmat.T @ gm).reshape(c, kh, kw, ho, wo)
            gxp = np.zeros_like(xp)
            for i, j, view in _taps(gxp, kh, kw, stride, dilation, ho, wo):
                view += gcols[:, i, j]
            x.grad += gxp[:, padding : padding + h, padding : padding + w] if padding else gxp

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _node(out, parents, back)


def inflate_kernel(kernel: np.ndarray, dilation: int) -> np.ndarray:
    """Insert ``dilation - 1`` zero rows/columns between kernel taps."""
    f, c, kh, kw = kernel.shape
    out = np.zeros((f, c, dilation * (kh - 1) + 1, dilation * (kw - 1) + 1))
    out[:, :, ::dilation, ::dilation] = kernel
    return out


def maxpool(x: Tensor, window: int, stride: int, padding: int = 0) -> Tensor:
    """Windowed maximum; padding is -inf so it never wins.

    The gradient goes to the first maximal element in row-major window order.
    """
    if window < 1 or stride < 1 or padding < 0:
        raise ConfigError(f"bad maxpool geometry window={window} stride={stride} padding={padding}")
    c, h, w = x.shape
    if window > h + 2 * padding or window > w + 2 * padding:
        raise ConfigError(f"maxpool window {window} exceeds padded input {h + 2 * padding}x{w + 2 * padding}")
    ho = (h + 2 * padding - window) // stride + 1
    wo = (w + 2 * padding - window) // stride + 1
    xp = np.pad(x.values, ((0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf) if padding else x.values
    stacked = np.empty((c, window * window, ho, wo))
    for i, j, view in _taps(xp, window, window, stride, 1, ho, wo):
        stacked[:, i * window + j] = view
    arg = stacked.argmax(axis=1)
    out = np.take_along_axis(stacked, arg[:, None], axis=1)[:, 0]

    def back(g):
        if x.grad is None:
            return
        gxp = np.zeros_like(xp)
        for i, j, view in _taps(gxp, window, window, stride, 1, ho, wo):
            view += np.where(arg == i * window + j, g, 0.0)
        x.grad += gxp[:, padding : padding + h, padding : padding + w] if padding else gxp

    return _node(out, (x,), back)


def _bilinear_matrix(n: int, factor: int) -> np.ndarray:
    """(n*factor, n) interpolation matrix, half-pixel (align-corners-false) centers."""
    m = n * factor
    src = np.clip((np.arange(m) + 0.5) / factor - 0.5, 0.0, n - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    frac = src - lo
    mat = np.zeros((m, n))
    rows = np.arange(m)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ConfigError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return _node(x.values.copy(), (x,), lambda g: _accumulate(x, g))
    _, h, w = x.shape
    my = _bilinear_matrix(h, factor)
    mx = _bilinear_matrix(w, factor)
    out = np.einsum("ah,chw,bw->cab", my, x.values, mx, optimize=True)
    return _node(out, (x,), lambda g: _accumulate(x, np.einsum("ah,cab,bw->chw", my, g, mx, optimize=True)))


# --- losses ----------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, labels: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Mean over pixels of -log softmax(logits)[label].

    ``weights`` optionally rescales each pixel's term (the mean still divides
    by the pixel count).
    """
    k, h, w = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (h, w):
        raise DataError(f"label map shape {labels.shape} does not match logits {(h, w)}")
    bad = (labels < 0) | (labels >= k)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise DataError(f"label {labels[y, x]} at pixel (y={y}, x={x}) outside [0, {k})")
    lab = labels.astype(np.int64)
    logp = _log_softmax(logits.values)
    picked = np.take_along_axis(logp, lab[None], axis=0)[0]
    wts = np.ones((h, w)) if weights is None else np.asarray(weights, dtype=np.float64)
    n = h * w
    loss = -np.sum(wts * picked) / n

    def back(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, lab[None], np.take_along_axis(grad, lab[None], axis=0) - 1.0, axis=0)
        _accumulate(logits, g * grad * wts[None] / n)

    return _node(np.array(loss), (logits,), back)


def _softplus(v: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, v)


def edge_balance(edges: np.ndarray) -> float:
    """Fraction of negative (non-edge) pixels, the weight given to positives."""
    edges = np.asarray(edges, dtype=bool)
    return float(np.count_nonzero(~edges)) / edges.size


def balanced_sigmoid_cross_entropy(logits: Tensor, edges: np.ndarray, reduction: str = "sum") -> Tensor:
    """Class-balanced binary cross entropy on a (1, H, W) logit map.

    loss = -b * sum_pos log s(x) - (1 - b) * sum_neg log(1 - s(x)), b = |neg| / |all|.
    ``reduction="mean"`` divides by the pixel count.
    """
    edges = np.asarray(edges)
    if logits.shape[0] != 1 or edges.shape != logits.shape[1:]:
        raise DataError(f"edge mask shape {edges.shape} does not match logits {logits.shape}")
    if not np.isin(edges, (0, 1)).all():
        raise DataError("edge mask must be binary")
    pos = edges.astype(bool)
    beta = edge_balance(pos)
    x = logits.values[0]
    # -log s(x) = softplus(-x); -log(1 - s(x)) = softplus(x)
    loss = beta * np.sum(_softplus(-x[pos])) + (1.0 - beta) * np.sum(_softplus(x[~pos]))
    if reduction == "mean":
        norm = float(pos.size)
    elif reduction == "sum":
        norm = 1.0
    else:
        raise ConfigError(f"unknown reduction {reduction!r}")

    def back(g):
        s = _sigmoid(x)
        grad = np.where(pos, -beta * (1.0 - s), (1.0 - beta) * s)
        _accumulate(logits, g * grad[None] / norm)

    return _node(np.array(loss / norm), (logits,), back)


# --- parameters, layers, training utilities --------------------------------

class NetworkParams:
    """Named parameter tensors plus the optimizer's momentum buffers."""

    def __init__(self, tensors: dict[str, Tensor] | None = None):
        self.tensors: dict[str, Tensor] = {}
        self.velocity: dict[str, np.ndarray] = {}
        for name, t in (tensors or {}).items():
            self.add(name, t)

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self.tensors:
            raise ConfigError(f"duplicate parameter name {name!r}")
        if t.grad is None:
            t.grad = np.zeros_like(t.values)
        t.name = name
        self.tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.tensors[name]
        except KeyError:
            raise ConfigError(f"missing parameter {name!r}") from None

    def __contains__(self, name) -> bool:
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def update(self, other: "NetworkParams") -> None:
        for name, t in other.items():
            self.add(name, t)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad[...] = 0.0

    def copy(self) -> "NetworkParams":
        return NetworkParams({n: Tensor(t.values, requires_grad=True) for n, t in self.items()})

    def num_values(self) -> int:
        return sum(t.values.size for t in self.tensors.values())

    def to_bytes(self) -> bytes:
        parts = [WEIGHTS_MAGIC]
        for name, t in self.tensors.items():
            raw = name.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)))
            parts.append(raw)
            parts.append(struct.pack("<I", t.values.ndim))
            parts.append(struct.pack(f"<{t.values.ndim}I", *t.values.shape))
            parts.append(t.values.astype("<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<bytes>") -> "NetworkParams":
        if not data.startswith(WEIGHTS_MAGIC):
            raise DataError(f"{source}: not a GMCN1 weights file (bad magic)")
        pos = len(WEIGHTS_MAGIC)
        params = cls()

        def take(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(data):
                raise DataError(f"{source}: truncated weights payload at byte {pos}")
            chunk = data[pos : pos + n]
            pos += n
            return chunk

        while pos < len(data):
            (name_len,) = struct.unpack("<I", take(4))
            try:
                name = take(name_len).decode("utf-8")
            except UnicodeDecodeError:
                raise DataError(f"{source}: parameter name is not UTF-8") from None
            (rank,) = struct.unpack("<I", take(4))
            dims = struct.unpack(f"<{rank}I", take(4 * rank))
            count = math.prod(dims)
            values = np.frombuffer(take(8 * count), dtype="<f8").reshape(dims)
            try:
                params.add(name, Tensor(values, requires_grad=True))
            except ConfigError as exc:
                raise DataError(f"{source}: {exc}") from None
        return params

    def save(self, path) -> None:
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "NetworkParams":
        return cls.from_bytes(Path(path).read_bytes(), str(path))


def sgd_step(params: NetworkParams, lr: float, momentum: float = 0.0) -> NetworkParams:
    """v <- momentum * v - lr * g; p <- p + v (in place; returns ``params``)."""
    for name, t in params.items():
        if t.grad is None:
            raise InternalError(f"parameter {name!r} has no gradient buffer")
        v = params.velocity.get(name)
        if v is None:
            v = params.velocity[name] = np.zeros_like(t.values)
        v *= momentum
        v -= lr * t.grad
        t.values += v
    return params


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: NetworkParams | dict[str, Tensor] | Iterable[Tensor],
    eps: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn`` rebuilds the forward pass from the current parameter values.
    With ``max_entries`` only that many randomly chosen entries per tensor are
    perturbed.  No parameters gives 0.
    """
    if eps <= 0:
        raise ConfigError("eps must be positive")
    if isinstance(params, (NetworkParams, dict)):
        tensors = list(params.values())
    else:
        tensors = list(params)
    tensors = [t for t in tensors if t.values.size]
    if not tensors:
        return 0.0
    for t in tensors:
        if t.grad is None:
            raise InternalError(f"{t!r} has no gradient buffer")
        t.grad[...] = 0.0
    backward(loss_fn())
    analytic = [t.grad.copy() for t in tensors]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(tensors, analytic):
        flat = t.values.reshape(-1)
        a_flat = a.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = loss_fn().item()
            flat[i] = orig - eps
            f_minus = loss_fn().item()
            flat[i] = orig
            num = (f_plus - f_minus) / (2.0 * eps)
            err = abs(a_flat[i] - num) / max(abs(a_flat[i]), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a sequential schedule.

    kind is one of conv, relu, maxpool, upsample, softmax, sigmoid.
    ``kernel`` doubles as the pooling window.
    """

    kind: str
    name: str = ""
    in_ch: int = 0
    out_ch: int = 0
    kernel: int = 1
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    factor: int = 1
    bias: bool = True

    def validate(self) -> None:
        if self.kind not in ("conv", "relu", "maxpool", "upsample", "softmax", "sigmoid"):
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.stride < 1 or self.dilation < 1 or self.factor < 1 or self.padding < 0:
            raise ConfigError(f"layer {self.name or self.kind}: stride, dilation, factor must be >= 1")
        if self.kind == "conv" and (self.in_ch < 1 or self.out_ch < 1 or self.kernel < 1 or not self.name):
            raise ConfigError(f"conv layer {self.name!r} needs a name, channels and kernel size")

    def output_shape(self, shape: tuple[int, int, int]) -> tuple[int, int, int]:
        self.validate()
        c, h, w = shape
        if self.kind == "conv":
            if c != self.in_ch:
                raise ConfigError(f"layer {self.name}: expects {self.in_ch} channels, got {c}")
            return (
                self.out_ch,
                conv_output_size(h, self.kernel, self.stride, self.dilation, self.padding),
                conv_output_size(w, self.kernel, self.stride, self.dilation, self.padding),
            )
        if self.kind == "maxpool":
            if self.kernel > h + 2 * self.padding or self.kernel > w + 2 * self.padding:
                raise ConfigError(f"maxpool window {self.kernel} exceeds padded input {h}x{w}")
            return (
                c,
                (h + 2 * self.padding - self.kernel) // self.stride + 1,
                (w + 2 * self.padding - self.kernel) // self.stride + 1,
            )
        if self.kind == "upsample":
            return (c, h * self.factor, w * self.factor)
        if self.kind == "softmax" and c < 2:
            raise ConfigError("softmax layer needs at least 2 channels")
        return shape


def conv(name: str, in_ch: int, out_ch: int, kernel: int = 3, dilation: int = 1, bias: bool = True) -> LayerSpec:
    """Stride-1 convolution with 'same' padding (odd kernels)."""
    if kernel % 2 == 0:
        raise ConfigError(f"layer {name}: 'same' padding needs an odd kernel, got {kernel}")
    return LayerSpec("conv", name, in_ch, out_ch, kernel, 1, dilation, dilation * (kernel - 1) // 2, bias=bias)


def check_schedule(specs: Sequence[LayerSpec], shape: tuple[int, int, int]) -> tuple[int, int, int]:
    for spec in specs:
        shape = spec.output_shape(shape)
    return shape


def init_params(specs: Iterable[LayerSpec], rng: np.random.Generator, prefix: str = "") -> NetworkParams:
    """Xavier-uniform kernels, zero biases."""
    params = NetworkParams()
    for spec in specs:
        spec.validate()
        if spec.kind != "conv":
            continue
        fan_in = spec.in_ch * spec.kernel**2
        fan_out = spec.out_ch * spec.kernel**2
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        kshape = (spec.out_ch, spec.in_ch, spec.kernel, spec.kernel)
        params.add(f"{prefix}{spec.name}.weight", Tensor(rng.uniform(-bound, bound, kshape), requires_grad=True))
        if spec.bias:
            params.add(f"{prefix}{spec.name}.bias", Tensor(np.zeros(spec.out_ch), requires_grad=True))
    return params


def apply_layer(spec: LayerSpec, x: Tensor, params: NetworkParams, prefix: str = "") -> Tensor:
    if spec.kind == "conv":
        bias = params[f"{prefix}{spec.name}.bias"] if spec.bias else None
        return conv2d(x, params[f"{prefix}{spec.name}.weight"], bias, spec.stride, spec.dilation, spec.padding)
    if spec.kind == "maxpool":
        return maxpool(x, spec.kernel, spec.stride, spec.padding)
    if spec.kind == "upsample":
        return upsample_bilinear(x, spec.factor)
    if spec.kind == "relu":
        return relu(x)
    if spec.kind == "sigmoid":
        return sigmoid(x)
    if spec.kind == "softmax":
        return softmax(x)
    raise ConfigError(f"unknown layer kind {spec.kind!r}")


def forward_layers(specs: Sequence[LayerSpec], x: Tensor, params: NetworkParams, prefix: str = "") -> Tensor:
    for spec in specs:
        x = apply_layer(spec, x, params, prefix)
    return x


def is_finite(t: Tensor) -> bool:
    return bool(np.all(np.isfinite(t.values)))


def dot(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar sum(x * weights) against a constant array (a linear probe)."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != x.shape:
        raise ConfigError(f"probe shape {weights.shape} does not match {x.shape}")
    return _node(np.array(np.sum(x.values * weights)), (x,), lambda g: _accumulate(x, g * weights))
