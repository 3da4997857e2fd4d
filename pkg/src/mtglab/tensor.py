"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its inputs and a backward rule on the output
tensor; `backward()` on a scalar walks the recorded graph once, in
reverse topological order, accumulating gradients into `.grad`.
Recording is single-threaded per graph. Tensors whose parameters are
frozen (requires_grad=False everywhere) build no graph and are safe to
share across threads.

Broadcasting is deliberately restricted to scalar-with-tensor and
equal-shape operands; anything richer must go through explicit
`repeat` / `reshape` ops so the backward rules stay auditable.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "ParamStore",
    "concat",
    "stack",
    "glorot_uniform",
    "gru_cell",
    "linear",
    "matmul",
    "custom",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_SCHEMA_VERSION",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array plus an optional gradient and backward rule."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- graph plumbing ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Populate `.grad` on every tensor reachable from this scalar.

        Iterative topological sort; the graph can be far deeper than the
        Python recursion limit (GRU decoders unroll many steps).
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        order = []
        seen = set()
        stack_ = [(self, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack_.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- elementwise arithmetic ----------------------------------------

    def _binary_prep(self, other, op_name):
        """Return (other_data, reduce) where reduce tells the backward
        rule how to fold the incoming gradient for the `other` operand:
        None for equal shapes, 'sum' for a scalar operand."""
        if isinstance(other, Tensor):
            if other.data.shape == self.data.shape:
                return other, None
            if other.data.size == 1:
                return other, "sum"
            if self.data.size == 1:
                return other, "self_sum"
            raise ShapeError(
                f"{op_name}: shapes {self.data.shape} and {other.data.shape} "
                "differ and neither is scalar"
            )
        return Tensor(np.full((), float(other))), "sum"

    def __add__(self, other):
        other, reduce = self._binary_prep(other, "add")
        out = _node(self.data + other.data, (self, other))
        if out.requires_grad:

            def bw(g):
                if self.requires_grad:
                    self._accumulate(g.sum() if reduce == "self_sum" else g)
                if other.requires_grad:
                    other._accumulate(g.sum() if reduce == "sum" else g)

            out._backward = bw
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other, reduce = self._binary_prep(other, "sub")
        out = _node(self.data - other.data, (self, other))
        if out.requires_grad:

            def bw(g):
                if self.requires_grad:
                    self._accumulate(g.sum() if reduce == "self_sum" else g)
                if other.requires_grad:
                    other._accumulate(-(g.sum() if reduce == "sum" else g))

            out._backward = bw
        return out

    def __rsub__(self, other):
        return Tensor(np.full((), float(other))).__sub__(self)

    def __mul__(self, other):
        other, reduce = self._binary_prep(other, "mul")
        out = _node(self.data * other.data, (self, other))
        if out.requires_grad:

            def bw(g):
                if self.requires_grad:
                    ga = g * other.data
                    self._accumulate(ga.sum() if reduce == "self_sum" else ga)
                if other.requires_grad:
                    gb = g * self.data
                    other._accumulate(gb.sum() if reduce == "sum" else gb)

            out._backward = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other, reduce = self._binary_prep(other, "div")
        out = _node(self.data / other.data, (self, other))
        if out.requires_grad:

            def bw(g):
                if self.requires_grad:
                    ga = g / other.data
                    self._accumulate(ga.sum() if reduce == "self_sum" else ga)
                if other.requires_grad:
                    gb = -g * self.data / (other.data * other.data)
                    other._accumulate(gb.sum() if reduce == "sum" else gb)

            out._backward = bw
        return out

    def __rtruediv__(self, other):
        return Tensor(np.full((), float(other))).__truediv__(self)

    def __neg__(self):
        out = _node(-self.data, (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(-g)
        return out

    # -- elementwise functions -----------------------------------------

    def exp(self):
        y = np.exp(self.data)
        out = _node(y, (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g * y)
        return out

    def tanh(self):
        y = np.tanh(self.data)
        out = _node(y, (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g * (1.0 - y * y))
        return out

    def sigmoid(self):
        y = np.where(
            self.data >= 0,
            1.0 / (1.0 + np.exp(-np.abs(self.data))),
            np.exp(-np.abs(self.data)) / (1.0 + np.exp(-np.abs(self.data))),
        )
        out = _node(y, (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g * y * (1.0 - y))
        return out

    def sqrt(self):
        y = np.sqrt(self.data)
        out = _node(y, (self,))
        if out.requires_grad:

            def bw(g):
                # subgradient 0 at exactly 0, so distances between
                # coincident points don't poison the rest of the graph
                with np.errstate(divide="ignore", invalid="ignore"):
                    gg = np.where(self.data > 0.0, g * 0.5 / y, 0.0)
                self._accumulate(gg)

            out._backward = bw
        return out

    def log(self):
        y = np.log(self.data)
        out = _node(y, (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g / self.data)
        return out

    def clamp(self, lo: float, hi: float):
        """Elementwise clip; gradient passes only inside [lo, hi]."""
        if not lo <= hi:
            raise ValueError(f"clamp: lo {lo} exceeds hi {hi}")
        y = np.clip(self.data, lo, hi)
        out = _node(y, (self,))
        if out.requires_grad:
            inside = (self.data >= lo) & (self.data <= hi)
            out._backward = lambda g: self._accumulate(np.where(inside, g, 0.0))
        return out

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None):
        out = _node(np.sum(self.data, axis=axis), (self,))
        if out.requires_grad:
            shape = self.data.shape

            def bw(g):
                if axis is None:
                    self._accumulate(np.full(shape, g))
                else:
                    self._accumulate(np.broadcast_to(np.expand_dims(g, axis), shape))

            out._backward = bw
        return out

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) / float(n)

    def min(self, axis: int):
        return self._extremum(axis, np.min, np.argmin)

    def max(self, axis: int):
        return self._extremum(axis, np.max, np.argmax)

    def _extremum(self, axis, reducer, arg_reducer):
        out = _node(reducer(self.data, axis=axis), (self,))
        if out.requires_grad:
            # first occurrence wins on ties, matching np.argmin/argmax
            idx = np.expand_dims(arg_reducer(self.data, axis=axis), axis)

            def bw(g):
                buf = np.zeros_like(self.data)
                np.put_along_axis(buf, idx, np.expand_dims(g, axis), axis)
                self._accumulate(buf)

            out._backward = bw
        return out

    def softmax(self, axis: int = -1):
        """Numerically stable softmax along `axis` (max subtraction)."""
        shifted = self.data - np.max(self.data, axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / np.sum(e, axis=axis, keepdims=True)
        out = _node(y, (self,))
        if out.requires_grad:

            def bw(g):
                dot = np.sum(g * y, axis=axis, keepdims=True)
                self._accumulate(y * (g - dot))

            out._backward = bw
        return out

    # -- shape ops -------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _node(self.data.reshape(shape), (self,))
        if out.requires_grad:
            src = self.data.shape
            out._backward = lambda g: self._accumulate(g.reshape(src))
        return out

    def __getitem__(self, key):
        out = _node(self.data[key], (self,))
        if out.requires_grad:

            def bw(g):
                buf = np.zeros_like(self.data)
                np.add.at(buf, key, g)
                self._accumulate(buf)

            out._backward = bw
        return out

    def transpose(self):
        if self.data.ndim != 2:
            raise ShapeError(f"transpose wants a 2-d tensor, got shape {self.data.shape}")
        out = _node(self.data.T.copy(), (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g.T)
        return out

    def repeat(self, n: int, axis: int):
        """Tile a size-1 axis `n` times; backward sums it back."""
        if self.data.shape[axis] != 1:
            raise ShapeError(
                f"repeat: axis {axis} of shape {self.data.shape} must have size 1"
            )
        out = _node(np.repeat(self.data, n, axis=axis), (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(
                g.sum(axis=axis, keepdims=True)
            )
        return out

    def __matmul__(self, other):
        return matmul(self, other)


def _node(data: np.ndarray, parents) -> Tensor:
    """Output tensor wired to its inputs; constant when no parent needs grads."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
    return out


def custom(data, parents, grad_fn) -> Tensor:
    """Graph node with a caller-supplied backward rule.

    grad_fn(g) must return one gradient array (or None) per parent, in
    order. Lets domain modules define ops (e.g. field interpolation)
    without reaching into graph internals.
    """
    parents = tuple(parents)
    out = _node(_as_array(data), parents)
    if out.requires_grad:

        def bw(g):
            grads = grad_fn(g)
            for p, gp in zip(parents, grads):
                if gp is not None and p.requires_grad:
                    p._accumulate(np.asarray(gp, dtype=np.float64))

        out._backward = bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2d@2d, 2d@1d and 1d@2d operands."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")
        out = _node(ad @ bd, (a, b))
        if out.requires_grad:

            def bw(g):
                if a.requires_grad:
                    a._accumulate(g @ bd.T)
                if b.requires_grad:
                    b._accumulate(ad.T @ g)

            out._backward = bw
        return out
    if ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")
        out = _node(ad @ bd, (a, b))
        if out.requires_grad:

            def bw(g):
                if a.requires_grad:
                    a._accumulate(np.outer(g, bd))
                if b.requires_grad:
                    b._accumulate(ad.T @ g)

            out._backward = bw
        return out
    if ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")
        out = _node(ad @ bd, (a, b))
        if out.requires_grad:

            def bw(g):
                if a.requires_grad:
                    a._accumulate(bd @ g)
                if b.requires_grad:
                    b._accumulate(np.outer(ad, g))

            out._backward = bw
        return out
    raise ShapeError(f"matmul: unsupported ranks {ad.shape} and {bd.shape}")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def bw(g):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                if t.requires_grad:
                    t._accumulate(piece)

        out._backward = bw
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = _node(np.stack([t.data for t in tensors], axis=axis), tensors)
    if out.requires_grad:

        def bw(g):
            for i, t in enumerate(tensors):
                if t.requires_grad:
                    t._accumulate(np.take(g, i, axis=axis))

        out._backward = bw
    return out


def linear(w: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """w[out, in] @ x[in] + b[out]."""
    return matmul(w, x) + b


# -- GRU cell ----------------------------------------------------------


def gru_cell(x: Tensor, h: Tensor, p: dict) -> Tensor:
    """One GRU step; gates packed (reset, update, candidate) along rows.

    Follows the original convention: new state = (1-z)*h + z*candidate,
    so saturating the update gate hands the state over to the candidate.

    p holds 'w_ih' [3H, D], 'w_hh' [3H, H], 'b_ih' [3H], 'b_hh' [3H].
    """
    hn = h.data.shape[0]
    gi = linear(p["w_ih"], x, p["b_ih"])
    gh = matmul(p["w_hh"], h) + p["b_hh"]
    r = (gi[0:hn] + gh[0:hn]).sigmoid()
    z = (gi[hn : 2 * hn] + gh[hn : 2 * hn]).sigmoid()
    n = (gi[2 * hn : 3 * hn] + r * gh[2 * hn : 3 * hn]).tanh()
    return (1.0 - z) * h + z * n


def gru_param_shapes(d_in: int, d_h: int) -> dict:
    return {
        "w_ih": (3 * d_h, d_in),
        "w_hh": (3 * d_h, d_h),
        "b_ih": (3 * d_h,),
        "b_hh": (3 * d_h,),
    }


# -- initialization ----------------------------------------------------


def glorot_uniform(rng: np.random.Generator, shape, gain: float = 1.0) -> np.ndarray:
    """uniform(-a, a) with a = gain * sqrt(6 / (fan_in + fan_out))."""
    if len(shape) == 2:
        fan_out, fan_in = shape
    else:
        fan_out, fan_in = shape[0], shape[0]
    a = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class ParamStore:
    """Named trainable tensors, ordered by registration."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(array, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state_arrays(self) -> dict:
        return {k: v.data for k, v in self._params.items()}

    def load_arrays(self, arrays: dict) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ValueError(
                f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for k, t in self._params.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != t.data.shape:
                raise ShapeError(
                    f"checkpoint entry {k}: shape {a.shape} != expected {t.data.shape}"
                )
            t.data = a.copy()


# -- checkpoint format -------------------------------------------------
#
# Flat archive: magic, schema version, entry count, then per entry the
# parameter path string, its shape and raw little-endian float64 data.
# Entries are written in sorted-name order so identical parameter sets
# serialize to identical bytes.

_CKPT_MAGIC = b"TNSR"
CHECKPOINT_SCHEMA_VERSION = 1


def save_checkpoint(path, arrays: dict) -> None:
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_SCHEMA_VERSION, len(arrays)))
        for name in sorted(arrays):
            # not ascontiguousarray: it silently promotes 0-d to 1-d
            data = np.asarray(arrays[name], dtype=np.float64)
            raw_name = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw_name)))
            f.write(raw_name)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.astype("<f8").tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint archive")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint schema {version}")
    off = 12
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        out[name] = data.astype(np.float64)
    return out
