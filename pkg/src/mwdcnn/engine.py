"""Minimal reverse-mode autodiff over dense NCHW tensors.

The engine is a Wengert list: every primitive applied while a `Tape` is
active appends one record (inputs, output, backward rule). `backward`
replays the records in reverse, accumulating gradients into the
`requires_grad` leaves. Only the primitives the denoising model needs
exist; there is no broadcasting and no dynamic shape logic beyond that.

Tensors are either 32- or 64-bit IEEE-754, chosen when the leaf tensors
are created; every operation requires its inputs to agree. Element data
of op outputs is frozen (read-only) once produced - only `.grad`
accumulates.

A tape and the tensors recorded on it belong to a single worker. Tensors
whose data is finalized may be shared read-only between workers.
"""

import numpy as np

DTYPES = {32: np.float32, 64: np.float64}

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of primitive applications, for one forward pass.

    Used as a context manager: primitives executed inside the block are
    recorded, in execution order (which is topological by construction).
    """

    def __init__(self):
        self.entries: list[tuple] = []  # (inputs, output, backward_fn)

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.entries)

    def release(self) -> None:
        """Drop the recorded graph once it has been consumed.

        Records and the tensors they produced reference each other, so a
        finished iteration's graph is reclaimed only by the cycle
        collector, which does not track array memory and runs far too
        rarely for a training loop: the dead graphs pile up by the
        hundred megabytes. Clearing the records breaks the cycle so
        plain reference counting frees everything as soon as the caller
        drops its tensors. `backward` is a no-op afterwards.
        """
        self.entries.clear()


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """Dense n-d value with optional gradient slot and tape linkage.

    `requires_grad` marks a leaf whose gradient should be accumulated by
    `backward`; its `.grad` exists from construction and mirrors the data
    shape. Tensors produced by operations are not leaves: they carry no
    `.grad` slot and their data buffer is read-only.
    """

    __slots__ = ("data", "requires_grad", "grad", "tape", "op", "_tracked")

    def __init__(self, data, dtype=np.float32, requires_grad: bool = False):
        arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.tape = None
        self.op = None
        self._tracked = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        src = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag}{src})"


def _result(op_name: str, inputs: tuple, out_data: np.ndarray, backward_fn) -> Tensor:
    """Wrap an op result, freezing its data and recording it if a tape is live.

    `backward_fn(grad_out) -> tuple of per-input gradient arrays (or None)`.
    """
    dt = inputs[0].data.dtype
    for t in inputs[1:]:
        if t.data.dtype != dt:
            raise ValueError(f"{op_name}: mixed precisions {dt} and {t.data.dtype}")
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(out_data, dtype=dt)  # 0-d arithmetic yields array scalars
    out.data.flags.writeable = False
    out.requires_grad = False
    out.grad = None
    out.op = op_name
    out.tape = None
    out._tracked = False
    tape = _active_tape()
    if tape is not None and any(t._tracked for t in inputs):
        out._tracked = True
        out.tape = tape
        tape.entries.append((inputs, out, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf on the tape.

    The loss must be a scalar produced under a tape. Records are visited
    exactly once, in reverse order; gradients of shared subexpressions sum
    over all paths. Repeated calls keep accumulating into `.grad`.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if loss.tape is None:
        raise ValueError("loss is not connected to a tape; run the forward pass inside `with Tape():`")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    leaves: dict[int, Tensor] = {}
    for inputs, out, backward_fn in reversed(loss.tape.entries):
        g_out = grads.pop(id(out), None)
        if g_out is None:
            continue
        for t, g_in in zip(inputs, backward_fn(g_out)):
            if g_in is None or not t._tracked:
                continue
            tid = id(t)
            if tid in grads:
                grads[tid] = grads[tid] + g_in
            else:
                grads[tid] = g_in
            if t.requires_grad:
                leaves[tid] = t
    for tid, t in leaves.items():
        t.grad += grads[tid]


def zero_grads(params) -> None:
    """Reset the gradient accumulators of an iterable of leaf tensors."""
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# elementwise and shape primitives
# ---------------------------------------------------------------------------

def _check_same_shape(op_name, a, b):
    if a.shape != b.shape:
        raise ValueError(f"{op_name}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return _result("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return _result("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def add_n(tensors) -> Tensor:
    """Sum several same-shape tensors in one tape record."""
    tensors = tuple(tensors)
    for t in tensors[1:]:
        _check_same_shape("add_n", tensors[0], t)
    out = tensors[0].data
    for t in tensors[1:]:
        out = out + t.data
    return _result("add_n", tensors, out, lambda g: (g,) * len(tensors))


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a plain scalar constant."""
    s = float(s)
    return _result("scale", (a,), a.data * s, lambda g: (g * s,))


def add_scalar(a: Tensor, s: float) -> Tensor:
    """Add a plain scalar constant; gradient passes through unchanged."""
    return _result("add_scalar", (a,), a.data + float(s), lambda g: (g,))


def square(a: Tensor) -> Tensor:
    return _result("square", (a,), a.data * a.data, lambda g: (2.0 * a.data * g,))


def sqrt(a: Tensor) -> Tensor:
    root = np.sqrt(a.data)
    return _result("sqrt", (a,), root, lambda g: (g * (0.5 / root),))


_relu_observer = None


def set_relu_observer(fn) -> None:
    """Install a callable receiving every relu sign mask (None to clear).

    Diagnostic hook: gradient checking uses it to notice when a finite
    difference stencil crosses an activation boundary.
    """
    global _relu_observer
    _relu_observer = fn


def relu(a: Tensor) -> Tensor:
    """max(0, x); the subgradient at exactly 0 is taken as 0."""
    mask = a.data > 0
    if _relu_observer is not None:
        _relu_observer(mask)
    return _result("relu", (a,), a.data * mask, lambda g: (g * mask,))


def sum_all(a: Tensor) -> Tensor:
    """Sum of all elements, as a 0-d scalar tensor."""
    out = np.asarray(a.data.sum(), dtype=a.data.dtype)
    return _result("sum_all", (a,), out, lambda g: (np.broadcast_to(g, a.shape),))


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _result("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(a.shape),))


def concat_channels(tensors) -> Tensor:
    """Stack 4-d tensors along the channel axis; N, H, W must agree."""
    tensors = tuple(tensors)
    first = tensors[0]
    for t in tensors[1:]:
        if t.data.ndim != 4 or first.data.ndim != 4:
            raise ValueError("concat_channels expects NCHW tensors")
        same = (t.shape[0], t.shape[2], t.shape[3]) == (first.shape[0], first.shape[2], first.shape[3])
        if not same:
            raise ValueError(f"concat_channels: incompatible shapes {first.shape} and {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=1)
    offsets = np.cumsum([0] + [t.shape[1] for t in tensors])

    def bwd(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(tensors)))

    return _result("concat_channels", tensors, out, bwd)


# ---------------------------------------------------------------------------
# reductions and nonlinearities used by the attention path
# ---------------------------------------------------------------------------

def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax of an (N, K) tensor, max-shifted for stability."""
    if a.data.ndim != 2:
        raise ValueError(f"softmax expects an (N, K) tensor, got shape {a.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _result("softmax", (a,), out, bwd)


def global_avg_pool(a: Tensor) -> Tensor:
    """Mean over the spatial dims of an NCHW tensor, returning (N, C)."""
    if a.data.ndim != 4:
        raise ValueError(f"global_avg_pool expects NCHW, got shape {a.shape}")
    n, c, h, w = a.shape
    out = a.data.mean(axis=(2, 3))

    def bwd(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), a.shape),)

    return _result("global_avg_pool", (a,), out, bwd)


def attention_combine(att: Tensor, stack: Tensor) -> Tensor:
    """Per-sample convex combination of a stack of K parameter tensors.

    `att` is (N, K) and `stack` is (K, ...); the result is (N, ...) with
    out[n] = sum_i att[n, i] * stack[i]. Differentiable in both inputs.
    """
    if att.data.ndim != 2:
        raise ValueError(f"attention_combine: attention must be (N, K), got {att.shape}")
    if att.shape[1] != stack.shape[0]:
        raise ValueError(
            f"attention_combine: {att.shape[1]} weights vs {stack.shape[0]} stacked tensors")
    n, k = att.shape
    rest = stack.shape[1:]
    flat = stack.data.reshape(k, -1)
    out = (att.data @ flat).reshape((n,) + rest)

    def bwd(g):
        g2 = g.reshape(n, -1)
        g_att = g2 @ flat.T
        g_stack = (att.data.T @ g2).reshape(stack.shape)
        return g_att, g_stack

    return _result("attention_combine", (att, stack), out, bwd)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

from . import conv as _conv  # noqa: E402  (kernel helpers on plain arrays)


def _check_conv_args(x, w, padding, batched):
    if x.data.ndim != 4:
        raise ValueError(f"conv2d expects NCHW input, got shape {x.shape}")
    k = w.shape[-1]
    if w.shape[-2] != k or k % 2 != 1:
        raise ValueError(f"conv2d expects square odd kernels, got {w.shape}")
    cin = x.shape[1]
    cin_w = w.shape[2] if batched else w.shape[1]
    if cin != cin_w:
        raise ValueError(f"conv2d: input has {cin} channels but weight expects {cin_w}")
    p = _conv.same_padding(k)
    if padding is not None and padding != p:
        raise ValueError(f"conv2d: stride-1 size-preserving padding must be {p}, got {padding}")
    return p


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, padding: int | None = None) -> Tensor:
    """Stride-1, size-preserving convolution (cross-correlation).

    `x` is (N, Cin, H, W), `w` is (Cout, Cin, k, k) with odd k, `b` is
    (Cout,) or None. Padding defaults to (k-1)/2 and must stay there.
    """
    p = _check_conv_args(x, w, padding, batched=False)
    b_data = b.data if b is not None else None
    out = _conv.conv2d_gemm(x.data, w.data, b_data, p)

    def bwd(g):
        gx, gw, gb = _conv.conv2d_backward(x.data, w.data, g, p)
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return _result("conv2d", inputs, out, bwd)


def batch_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, padding: int | None = None) -> Tensor:
    """Convolution with one kernel per sample: `w` is (N, Cout, Cin, k, k)."""
    if w.data.ndim != 5:
        raise ValueError(f"batch_conv2d expects (N, Cout, Cin, k, k) kernels, got {w.shape}")
    p = _check_conv_args(x, w, padding, batched=True)
    if w.shape[0] != x.shape[0]:
        raise ValueError(f"batch_conv2d: batch {x.shape[0]} vs {w.shape[0]} kernels")
    b_data = b.data if b is not None else None
    out = _conv.batch_conv2d_gemm(x.data, w.data, b_data, p)

    def bwd(g):
        gx, gw, gb = _conv.batch_conv2d_backward(x.data, w.data, g, p)
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return _result("batch_conv2d", inputs, out, bwd)
