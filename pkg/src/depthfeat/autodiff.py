"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy array together with an accumulated gradient and a
closure that propagates the output gradient to the inputs that produced it.
``backward()`` runs the closures in reverse topological order.  The set of
operations is deliberately small: exactly what the feature network, the
losses and the synthesis head need.  All arithmetic is float64 and every
reduction uses a fixed order, so repeated runs on the same inputs produce
bit-identical results.
"""

from __future__ import annotations

import io
import zipfile
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor",
    "Parameter",
    "constant",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "square",
    "sqrt",
    "absolute",
    "exp",
    "relu",
    "sigmoid",
    "maximum_scalar",
    "guarded_reciprocal",
    "sum_all",
    "mean_all",
    "sum_last",
    "max_last",
    "concat_last",
    "broadcast_last",
    "tile_spatial",
    "neighbor",
    "gather_cells",
    "conv2d",
    "add_channel_bias",
    "linear",
    "l2_normalize",
    "global_average_pool",
    "bilinear_sample",
    "adam_step",
    "zero_gradients",
    "CHECKPOINT_VERSION",
    "save_checkpoint",
    "load_checkpoint",
    "restore_parameters",
]


class Tensor:
    """A node in the computation graph: float64 data plus gradient plumbing."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate gradients of this node into every upstream tensor."""
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that requires no grad")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        if seed is None:
            seed = np.ones_like(self.data)
        _accumulate(self, np.asarray(seed, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


class Parameter(Tensor):
    """A trainable tensor carrying Adam moment estimates and a step count."""

    __slots__ = ("name", "m", "v", "steps")

    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.steps = 0


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _node(data: np.ndarray, parents: Sequence[Tensor],
          backward: Callable[[Tensor], Callable[[], None]]) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward(out)
    return out


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _check_binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` (handles the size-1 broadcast case)."""
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape) if shape else np.float64(np.sum(g))


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes(a, b, "add")

    def backward(out: Tensor):
        def run():
            _accumulate(a, _reduce_to(out.grad, a.shape))
            _accumulate(b, _reduce_to(out.grad, b.shape))
        return run

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes(a, b, "sub")

    def backward(out: Tensor):
        def run():
            _accumulate(a, _reduce_to(out.grad, a.shape))
            _accumulate(b, _reduce_to(-out.grad, b.shape))
        return run

    return _node(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes(a, b, "mul")

    def backward(out: Tensor):
        def run():
            _accumulate(a, _reduce_to(out.grad * b.data, a.shape))
            _accumulate(b, _reduce_to(out.grad * a.data, b.shape))
        return run

    return _node(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes(a, b, "div")

    def backward(out: Tensor):
        def run():
            _accumulate(a, _reduce_to(out.grad / b.data, a.shape))
            _accumulate(b, _reduce_to(-out.grad * a.data / (b.data * b.data),
                                      b.shape))
        return run

    return _node(a.data / b.data, (a, b), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def backward(out: Tensor):
        def run():
            _accumulate(x, out.grad * factor)
        return run

    return _node(x.data * factor, (x,), backward)


def square(x: Tensor) -> Tensor:
    def backward(out: Tensor):
        def run():
            _accumulate(x, out.grad * 2.0 * x.data)
        return run

    return _node(x.data * x.data, (x,), backward)


def sqrt(x: Tensor, epsilon: float = 1e-12) -> Tensor:
    """Elementwise square root; the slope is clamped near zero to stay finite."""
    data = np.sqrt(x.data)

    def backward(out: Tensor):
        def run():
            _accumulate(x, out.grad * 0.5 / np.maximum(data, epsilon))
        return run

    return _node(data, (x,), backward)


def absolute(x: Tensor) -> Tensor:
    def backward(out: Tensor):
        def run():
            _accumulate(x, out.grad * np.sign(x.data))
        return run

    return _node(np.abs(x.data), (x,), backward)


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)

    def backward(out: Tensor):
        def run():
            _accumulate(x, out.grad * data)
        return run

    return _node(data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    def backward(out: Tensor):
        def run():
            _accumulate(x, out.grad * (x.data > 0.0))
        return run

    return _node(np.maximum(x.data, 0.0), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign so neither branch exponentiates a large positive value.
    data = np.where(x.data >= 0,
                    1.0 / (1.0 + np.exp(-np.abs(x.data))),
                    np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))

    def backward(out: Tensor):
        def run():
            _accumulate(x, out.grad * data * (1.0 - data))
        return run

    return _node(data, (x,), backward)


def maximum_scalar(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); at the tie the gradient goes to x."""
    floor = float(floor)

    def backward(out: Tensor):
        def run():
            _accumulate(x, out.grad * (x.data >= floor))
        return run

    return _node(np.maximum(x.data, floor), (x,), backward)


def guarded_reciprocal(x: Tensor, epsilon: float) -> Tensor:
    """1/x with |x| clamped away from zero, keeping the sign of x.

    Entries inside the guard band get zero gradient: the clamped value does
    not move with x there.
    """
    sign = np.where(x.data >= 0.0, 1.0, -1.0)
    safe = sign * np.maximum(np.abs(x.data), epsilon)
    live = np.abs(x.data) >= epsilon

    def backward(out: Tensor):
        def run():
            _accumulate(x, np.where(live, -out.grad / (safe * safe), 0.0))
        return run

    return _node(1.0 / safe, (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(out: Tensor):
        def run():
            _accumulate(x, np.full_like(x.data, out.grad))
        return run

    return _node(np.sum(x.data), (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    n = x.size

    def backward(out: Tensor):
        def run():
            _accumulate(x, np.full_like(x.data, out.grad / n))
        return run

    return _node(np.sum(x.data) / n, (x,), backward)


def sum_last(x: Tensor, keepdims: bool = True) -> Tensor:
    def backward(out: Tensor):
        def run():
            g = out.grad if keepdims else out.grad[..., None]
            _accumulate(x, np.broadcast_to(g, x.data.shape).copy())
        return run

    return _node(np.sum(x.data, axis=-1, keepdims=keepdims), (x,), backward)


def max_last(x: Tensor, keepdims: bool = True) -> Tensor:
    """Maximum over the last axis; the gradient flows to the first maximum."""
    idx = np.argmax(x.data, axis=-1)
    data = np.take_along_axis(x.data, idx[..., None], axis=-1)
    if not keepdims:
        data = data[..., 0]

    def backward(out: Tensor):
        def run():
            g = out.grad if keepdims else out.grad[..., None]
            buf = np.zeros_like(x.data)
            np.put_along_axis(buf, idx[..., None], g, axis=-1)
            _accumulate(x, buf)
        return run

    return _node(data, (x,), backward)


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    widths = [p.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(out: Tensor):
        def run():
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                _accumulate(p, out.grad[..., lo:hi])
        return run

    return _node(np.concatenate([p.data for p in parts], axis=-1),
                 parts, backward)


def expand_last(x: Tensor) -> Tensor:
    """Append a singleton trailing axis."""

    def backward(out: Tensor):
        def run():
            _accumulate(x, out.grad[..., 0])
        return run

    return _node(x.data[..., None], (x,), backward)


def broadcast_last(x: Tensor, n: int) -> Tensor:
    """Repeat a trailing singleton axis n times."""
    if x.shape[-1] != 1:
        raise ShapeError(f"broadcast_last needs a trailing axis of 1, got {x.shape}")

    def backward(out: Tensor):
        def run():
            _accumulate(x, np.sum(out.grad, axis=-1, keepdims=True))
        return run

    return _node(np.broadcast_to(x.data, x.shape[:-1] + (n,)).copy(),
                 (x,), backward)


def tile_spatial(x: Tensor, height: int, width: int) -> Tensor:
    """Tile a length-f vector into an h x w x f map."""
    if x.ndim != 1:
        raise ShapeError(f"tile_spatial expects a vector, got shape {x.shape}")

    def backward(out: Tensor):
        def run():
            _accumulate(x, np.sum(out.grad, axis=(0, 1)))
        return run

    return _node(np.broadcast_to(x.data, (height, width, x.shape[0])).copy(),
                 (x,), backward)


def neighbor(x: Tensor, di: int, dj: int) -> Tensor:
    """Shift a 2D-indexed tensor by (di, dj) with clamped (replicated) borders."""
    h, w = x.shape[0], x.shape[1]
    rows = np.clip(np.arange(h) + di, 0, h - 1)
    cols = np.clip(np.arange(w) + dj, 0, w - 1)

    def backward(out: Tensor):
        def run():
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad, (rows[:, None], cols[None, :]), out.grad)
        return run

    return _node(x.data[np.ix_(rows, cols)], (x,), backward)


def gather_cells(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Select fibers x[rows[k], cols[k]]; duplicates accumulate on backward."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)

    def backward(out: Tensor):
        def run():
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad, (rows, cols), out.grad)
        return run

    return _node(x.data[rows, cols], (x,), backward)


def _pad_amounts(size: int, kernel: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)  # ceil division
    total = max((out - 1) * stride + kernel - size, 0)
    before = total // 2
    return before, total - before


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1,
           padding: str = "same") -> Tensor:
    """2D convolution of an h x w x c_in map with a k x k x c_in x c_out kernel.

    "same" padding follows the convention that puts the extra pixel (when the
    total padding is odd) at the bottom and right, so the output size is
    ceil(h / stride) x ceil(w / stride).  "valid" keeps only fully covered
    windows.  Implemented by gathering input patches into a matrix and using
    one matrix product, which is also how the backward pass runs.
    """
    if x.ndim != 3:
        raise ShapeError(f"conv2d input must be h x w x c, got {x.shape}")
    if kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise ShapeError(f"conv2d kernel must be k x k x c_in x c_out, got {kernel.shape}")
    k = kernel.shape[0]
    if k % 2 != 1:
        raise ShapeError(f"conv2d kernel size must be odd, got {k}")
    if kernel.shape[2] != x.shape[2]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape[2]}, kernel {kernel.shape[2]}")
    if padding not in ("same", "valid"):
        raise ValueError(f"unknown padding {padding!r}")

    h, w, c_in = x.shape
    c_out = kernel.shape[3]
    if padding == "same":
        pt, pb = _pad_amounts(h, k, stride)
        pl, pr = _pad_amounts(w, k, stride)
    else:
        pt = pb = pl = pr = 0
    hp, wp = h + pt + pb, w + pl + pr
    h_out = (hp - k) // stride + 1
    w_out = (wp - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"conv2d: input {h}x{w} too small for kernel {k} ({padding})")

    padded = np.zeros((hp, wp, c_in))
    padded[pt:pt + h, pl:pl + w] = x.data
    # Patch matrix: every output site's receptive field flattened to one row.
    ii = (np.arange(h_out) * stride)[:, None] + np.arange(k)[None, :]
    jj = (np.arange(w_out) * stride)[:, None] + np.arange(k)[None, :]
    patches = padded[ii[:, None, :, None], jj[None, :, None, :]]
    cols = patches.reshape(h_out * w_out, k * k * c_in)
    kmat = kernel.data.reshape(k * k * c_in, c_out)
    data = (cols @ kmat).reshape(h_out, w_out, c_out)

    def backward(out: Tensor):
        def run():
            go = out.grad.reshape(h_out * w_out, c_out)
            _accumulate(kernel, (cols.T @ go).reshape(kernel.shape))
            if x.requires_grad:
                gcols = (go @ kmat.T).reshape(h_out, w_out, k, k, c_in)
                gpad = np.zeros_like(padded)
                np.add.at(gpad,
                          (ii[:, None, :, None], jj[None, :, None, :]),
                          gcols)
                _accumulate(x, gpad[pt:pt + h, pl:pl + w])
        return run

    return _node(data, (x, kernel), backward)


def add_channel_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel bias along the last axis of a feature map."""
    if bias.ndim != 1 or bias.shape[0] != x.shape[-1]:
        raise ShapeError(f"bias shape {bias.shape} does not match channels {x.shape[-1]}")

    def backward(out: Tensor):
        def run():
            _accumulate(x, out.grad)
            axes = tuple(range(out.grad.ndim - 1))
            _accumulate(bias, out.grad.sum(axis=axes))
        return run

    return _node(x.data + bias.data, (x, bias), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map along the last axis: x @ weight + bias."""
    d_in, d_out = weight.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight rows {d_in}")
    if bias.shape != (d_out,):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({d_out},)")
    lead = x.shape[:-1]
    flat = x.data.reshape(-1, d_in)
    data = (flat @ weight.data + bias.data).reshape(lead + (d_out,))

    def backward(out: Tensor):
        def run():
            go = out.grad.reshape(-1, d_out)
            _accumulate(weight, flat.T @ go)
            _accumulate(bias, go.sum(axis=0))
            if x.requires_grad:
                _accumulate(x, (go @ weight.data.T).reshape(x.shape))
        return run

    return _node(data, (x, weight, bias), backward)


def l2_normalize(x: Tensor, epsilon: float = 1e-8) -> Tensor:
    """Normalize the trailing axis to unit length, dividing by max(norm, eps)."""
    norm = sqrt(sum_last(square(x), keepdims=True))
    guarded = maximum_scalar(norm, epsilon)
    return div(x, broadcast_last(guarded, x.shape[-1]))


def global_average_pool(x: Tensor) -> Tensor:
    """Mean over the two spatial axes of an h x w x f map, giving a vector."""
    if x.ndim != 3:
        raise ShapeError(f"global_average_pool expects h x w x f, got {x.shape}")
    h, w, _ = x.shape

    def backward(out: Tensor):
        def run():
            _accumulate(x, np.broadcast_to(out.grad / (h * w), x.shape).copy())
        return run

    return _node(x.data.mean(axis=(0, 1)), (x,), backward)


def bilinear_sample(x: Tensor, coords: np.ndarray, valid: np.ndarray) -> Tensor:
    """Sample fibers of an h x w x f map at continuous (row, col) positions.

    ``coords`` has shape t_h x t_w x 2 and ``valid`` t_h x t_w; invalid sites
    produce zero fibers and receive no gradient.  The sampling grid is plain
    data, only the sampled map is differentiated.
    """
    if x.ndim != 3:
        raise ShapeError(f"bilinear_sample expects h x w x f input, got {x.shape}")
    h, w, f = x.shape
    coords = np.asarray(coords, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    out_shape = valid.shape + (f,)

    r = np.clip(coords[..., 0][valid], 0.0, h - 1.0)
    c = np.clip(coords[..., 1][valid], 0.0, w - 1.0)
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0)[:, None]
    fc = (c - c0)[:, None]
    w00 = (1.0 - fr) * (1.0 - fc)
    w01 = (1.0 - fr) * fc
    w10 = fr * (1.0 - fc)
    w11 = fr * fc

    data = np.zeros(out_shape)
    data[valid] = (w00 * x.data[r0, c0] + w01 * x.data[r0, c1]
                   + w10 * x.data[r1, c0] + w11 * x.data[r1, c1])

    def backward(out: Tensor):
        def run():
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            g = out.grad[valid]
            np.add.at(x.grad, (r0, c0), w00 * g)
            np.add.at(x.grad, (r0, c1), w01 * g)
            np.add.at(x.grad, (r1, c0), w10 * g)
            np.add.at(x.grad, (r1, c1), w11 * g)
        return run

    return _node(data, (x,), backward)


def adam_step(params: Iterable[Parameter], learning_rate: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> None:
    """One Adam update with bias correction; missing gradients count as zero."""
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.steps += 1
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1 ** p.steps)
        v_hat = p.v / (1.0 - beta2 ** p.steps)
        p.data -= learning_rate * m_hat / (np.sqrt(v_hat) + epsilon)


def zero_gradients(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad = None


CHECKPOINT_VERSION = 1

# Fixed zip entry timestamp so the same state always serializes to the same
# bytes regardless of wall-clock time.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _write_entry(zf: zipfile.ZipFile, name: str, arr: np.ndarray) -> None:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.asarray(arr))
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, buf.getvalue())


def save_checkpoint(path, params: Mapping[str, Parameter]) -> None:
    """Serialize parameter values, Adam moments and step counts to one file."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        _write_entry(zf, "format_version", np.array(CHECKPOINT_VERSION))
        for name in sorted(params):
            p = params[name]
            _write_entry(zf, f"value/{name}", p.data)
            _write_entry(zf, f"moment1/{name}", p.m)
            _write_entry(zf, f"moment2/{name}", p.v)
            _write_entry(zf, f"steps/{name}", np.array(p.steps))


def load_checkpoint(path) -> dict:
    """Read a checkpoint into {name: {value, moment1, moment2, steps}}."""
    arrays: dict[str, np.ndarray] = {}
    with zipfile.ZipFile(path, "r") as zf:
        for entry in zf.namelist():
            with zf.open(entry) as fh:
                arrays[entry] = np.lib.format.read_array(io.BytesIO(fh.read()))
    version = int(arrays.pop("format_version"))
    if version != CHECKPOINT_VERSION:
        raise ShapeError(f"unsupported checkpoint version {version}")
    state: dict[str, dict] = {}
    for entry, arr in arrays.items():
        kind, _, name = entry.partition("/")
        state.setdefault(name, {})[kind] = arr
    return state


def restore_parameters(params: Mapping[str, Parameter], path) -> None:
    """Load a checkpoint into existing parameters, checking names and shapes."""
    state = load_checkpoint(path)
    missing = sorted(set(params) - set(state))
    extra = sorted(set(state) - set(params))
    if missing or extra:
        raise ShapeError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
    for name, p in params.items():
        slot = state[name]
        if slot["value"].shape != p.data.shape:
            raise ShapeError(f"parameter {name}: checkpoint shape {slot['value'].shape} "
                             f"!= expected {p.data.shape}")
        p.data = slot["value"].astype(np.float64)
        p.m = slot["moment1"].astype(np.float64)
        p.v = slot["moment2"].astype(np.float64)
        p.steps = int(slot["steps"])
