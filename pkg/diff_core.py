"""
SleepMeta - Self-Supervised Meta-Learning for Sleep Scoring
--------------------------------------
diff_core.py file for the differentiable compute core
--------------------------------------
A small reverse-mode autodiff engine over numpy arrays: tensors, a tape that
records primitive applications, the layer primitives of the sleep network,
SGD/Adam updates, a finite-difference gradient checker and the named-tensor
checkpoint container.
"""

import json
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import DataError, InvariantError, NumericError, ShapeError, TapeError
from logging_config import get_logger

logger = get_logger(__name__)

PARAM_GROUPS = ("encoder", "sl_head", "ssl_head")
LOG_FLOOR = 1e-12

_settings = threading.local()


# --------------------------------
# Precision and checked mode
# --------------------------------


def current_dtype():
    return getattr(_settings, "dtype", np.float32)


def checked_mode():
    return getattr(_settings, "checked", False)


@contextmanager
def precision(dtype=np.float64, checked=None):
    """Select the working float type (and optionally checked mode) for a block"""
    previous = (current_dtype(), checked_mode())
    _settings.dtype = np.dtype(dtype).type
    if checked is not None:
        _settings.checked = bool(checked)
    try:
        yield
    finally:
        _settings.dtype, _settings.checked = previous


def _check_finite(primitive, values):
    if checked_mode() and not np.all(np.isfinite(values)):
        raise NumericError(f"{primitive}: non-finite value produced")


# --------------------------------
# Tensor and Tape
# --------------------------------


class Tensor:
    """An array value that can take part in a recorded computation"""

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=current_dtype())
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self):
        return self.data

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)

    def __repr__(self):
        label = f" '{self.name}'" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


def _as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class Node:
    primitive: str
    out: Tensor
    inputs: tuple
    backward_fn: object
    kink: object = None


class Tape:
    """Ordered record of primitive applications, activated with `with tape:`"""

    def __init__(self):
        self.nodes = []
        self.leaves = {}

    def __enter__(self):
        stack = getattr(_settings, "tapes", None)
        if stack is None:
            stack = _settings.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _settings.tapes.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, node):
        self.nodes.append(node)

    def watch(self, tensor, params, name):
        self.leaves[id(tensor)] = (tensor, params, name)

    def signature(self):
        """Kink pattern (relu masks, pool argmaxes) of the recorded pass"""
        return tuple(node.kink for node in self.nodes if node.kink is not None)

    def clear(self):
        self.nodes = []
        self.leaves = {}


def active_tape():
    stack = getattr(_settings, "tapes", None)
    return stack[-1] if stack else None


def _emit(primitive, data, inputs, backward_fn, kink=None):
    """Wrap a primitive's output and record it on the active tape"""
    _check_finite(primitive, data)
    tracked = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=tracked)
    tape = active_tape()
    if tape is not None and tracked:
        tape.record(Node(primitive, out, tuple(inputs), backward_fn, kink))
    return out


def backward(tape, loss, accumulate=False):
    """Reverse pass over the tape; gradients land in the owning ParamSets.

    With accumulate=False every ParamSet touched by the tape has its gradients
    zeroed before the new ones are written. The tape is cleared afterwards.
    """
    if not tape.nodes:
        raise TapeError("backward called without a recorded forward pass")
    if loss.size != 1:
        raise ShapeError("backward", "loss must be a scalar", dims=loss.shape)
    try:
        grads = {id(loss): np.ones_like(loss.data)}
        inputs_by_id = {}
        for node in reversed(tape.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            input_grads = node.backward_fn(g)
            for inp, ig in zip(node.inputs, input_grads):
                if ig is None or not inp.requires_grad:
                    continue
                _check_finite(f"{node.primitive}.backward", ig)
                key = id(inp)
                inputs_by_id[key] = inp
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig

        for key, g in grads.items():
            if key in inputs_by_id:
                inputs_by_id[key].grad = g

        if not accumulate:
            for params in {id(p): p for _, p, _ in tape.leaves.values()}.values():
                params.zero_grad()
        for key, (tensor, params, name) in tape.leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            target = params.grads[name]
            target += g.reshape(target.shape).astype(target.dtype, copy=False)
        return float(loss.data.reshape(-1)[0])
    finally:
        tape.clear()


# --------------------------------
# Parameter sets
# --------------------------------


class ParamSet:
    """Named parameter arrays of one group with matching gradient slots"""

    def __init__(self, group, values=None):
        if group not in PARAM_GROUPS:
            raise InvariantError(f"unknown parameter group '{group}', expected one of {PARAM_GROUPS}")
        self.group = group
        self.values = {}
        self.grads = {}
        for name, value in (values or {}).items():
            self.add(name, value)

    def add(self, name, value):
        if name in self.values:
            raise InvariantError(f"{self.group}: duplicate parameter name '{name}'")
        value = np.asarray(value)
        if value.dtype.kind != "f":
            value = value.astype(current_dtype())
        self.values[name] = np.array(value)
        self.grads[name] = np.zeros_like(self.values[name])

    def var(self, name):
        """Leaf tensor for a parameter, watched by the active tape"""
        tensor = Tensor(self.values[name], requires_grad=True, name=f"{self.group}.{name}")
        tape = active_tape()
        if tape is not None:
            tape.watch(tensor, self, name)
        return tensor

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0

    def names(self):
        return list(self.values)

    def items(self):
        return self.values.items()

    def astype(self, dtype):
        return ParamSet(self.group, {k: v.astype(dtype) for k, v in self.values.items()})

    @property
    def n_parameters(self):
        return int(sum(v.size for v in self.values.values()))

    def __getitem__(self, name):
        return self.values[name]

    def __contains__(self, name):
        return name in self.values

    def __len__(self):
        return len(self.values)

    def __repr__(self):
        return f"ParamSet(group={self.group}, tensors={len(self)}, parameters={self.n_parameters})"


def copy_params(src):
    """Deep copy of values; gradients start at zero"""
    out = ParamSet(src.group)
    for name, value in src.values.items():
        out.values[name] = value.copy()
        out.grads[name] = np.zeros_like(value)
    return out


def assign_params(dst, src):
    """Overwrite dst's values with src's in place"""
    if set(dst.values) != set(src.values):
        raise ShapeError(
            "assign_params",
            "parameter names differ",
            dims={"missing": sorted(set(dst.values) - set(src.values)), "extra": sorted(set(src.values) - set(dst.values))},
        )
    for name, value in src.values.items():
        if dst.values[name].shape != value.shape:
            raise ShapeError("assign_params", f"shape mismatch for '{name}'", dims=(dst.values[name].shape, value.shape))
        dst.values[name][...] = value
    return dst


# --------------------------------
# Primitives
# --------------------------------


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", "operands do not broadcast", dims=(a.shape, b.shape)) from None

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", data, (a, b), backward_fn)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", "operands do not broadcast", dims=(a.shape, b.shape)) from None

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit("mul", data, (a, b), backward_fn)


def reduce_sum(x, axis=None):
    x = _as_tensor(x)
    data = x.data.sum(axis=axis)

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _emit("sum", data, (x,), backward_fn)


def mean(x, axis=None):
    x = _as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    if count == 0:
        raise ShapeError("mean", "empty reduction", dims=x.shape)
    return mul(reduce_sum(x, axis), 1.0 / count)


def reshape(x, shape):
    x = _as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", f"cannot reshape to {shape}", dims=x.shape) from None

    def backward_fn(g):
        return (g.reshape(x.shape),)

    return _emit("reshape", data, (x,), backward_fn)


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", "incompatible shapes", dims=[t.shape for t in tensors]) from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit("concat", data, tuple(tensors), backward_fn)


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0
    data = np.where(mask, x.data, 0).astype(x.data.dtype)

    def backward_fn(g):
        # Subgradient at 0 is 0
        return (g * mask,)

    return _emit("relu", data, (x,), backward_fn, kink=np.packbits(mask).tobytes())


def softmax(x, axis=-1):
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", s, (x,), backward_fn)


def clamp_log(x, floor=LOG_FLOOR):
    """log(max(x, floor)); zero gradient where the floor is active"""
    x = _as_tensor(x)
    live = x.data > floor
    data = np.log(np.maximum(x.data, floor))

    def backward_fn(g):
        return (np.where(live, g / np.where(live, x.data, 1), 0).astype(g.dtype),)

    return _emit("clamp_log", data, (x,), backward_fn, kink=np.packbits(live).tobytes())


def dropout(x, p, rng, train=True):
    """Inverted dropout; the identity when train is off"""
    x = _as_tensor(x)
    if not train or p <= 0:
        return x
    if p >= 1:
        mask = np.zeros(x.shape, dtype=x.data.dtype)
    else:
        mask = ((rng.random(x.shape) >= p) / (1.0 - p)).astype(x.data.dtype)
    data = x.data * mask

    def backward_fn(g):
        return (g * mask,)

    return _emit("dropout", data, (x,), backward_fn)


def dense(x, w, b=None):
    """x @ W + b with W shaped (D_in, D_out)"""
    x, w = _as_tensor(x), _as_tensor(w)
    b = _as_tensor(b) if b is not None else None
    squeeze = x.ndim == 1
    xd = x.data[None, :] if squeeze else x.data
    if xd.ndim != 2 or w.ndim != 2 or xd.shape[1] != w.shape[0]:
        raise ShapeError("dense", "input features do not match weight rows", dims=(x.shape, w.shape))
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError("dense", "bias length does not match weight columns", dims=(b.shape, w.shape))
    out = xd @ w.data
    if b is not None:
        out = out + b.data
    data = out[0] if squeeze else out

    def backward_fn(g):
        g2 = g[None, :] if squeeze else g
        gx = g2 @ w.data.T if x.requires_grad else None
        if gx is not None and squeeze:
            gx = gx[0]
        gw = xd.T @ g2
        gb = g2.sum(axis=0) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return _emit("dense", data, inputs, backward_fn)


def _promote(x, name):
    """Lift 1-D / 2-D inputs to (batch, channels, length)"""
    if x.ndim == 1:
        return x.data[None, None, :], 1
    if x.ndim == 2:
        return x.data[None, :, :], 2
    if x.ndim == 3:
        return x.data, 3
    raise ShapeError(name, "expected 1-D, 2-D or 3-D input", dims=x.shape)


def _padding(length, kernel, stride, padding):
    if padding == "valid" or padding is None:
        return 0, 0
    if padding == "same":
        out_len = -(-length // stride)
        total = max((out_len - 1) * stride + kernel - length, 0)
        return total // 2, total - total // 2
    if isinstance(padding, (int, np.integer)) and padding >= 0:
        return int(padding), int(padding)
    raise ShapeError("conv1d", f"unknown padding {padding!r}")


def conv1d(x, kernel, bias=None, stride=1, padding="valid"):
    """1-D cross-correlation with kernel shaped (C_out, C_in, K)"""
    x, w = _as_tensor(x), _as_tensor(kernel)
    b = _as_tensor(bias) if bias is not None else None
    xd, in_rank = _promote(x, "conv1d")
    wd = w.data[None, None, :] if w.ndim == 1 else w.data
    if wd.ndim != 3:
        raise ShapeError("conv1d", "kernel must be 1-D or (C_out, C_in, K)", dims=w.shape)
    n, c_in, length = xd.shape
    c_out, k_in, k = wd.shape
    if k_in != c_in:
        raise ShapeError("conv1d", "input channels do not match kernel", dims={"x": x.shape, "kernel": w.shape})
    if b is not None and b.shape != (c_out,):
        raise ShapeError("conv1d", "bias length does not match output channels", dims={"bias": b.shape, "kernel": w.shape})
    if stride < 1:
        raise ShapeError("conv1d", f"stride must be >= 1, got {stride}")
    pad_l, pad_r = _padding(length, k, stride, padding)
    xp = np.pad(xd, ((0, 0), (0, 0), (pad_l, pad_r))) if pad_l or pad_r else xd
    padded = xp.shape[2]
    if padded < k:
        raise ShapeError("conv1d", "input shorter than kernel", dims={"length": padded, "kernel": k})
    out_len = (padded - k) // stride + 1

    cols = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    cols = cols.transpose(0, 2, 1, 3).reshape(n * out_len, c_in * k)
    wmat = wd.reshape(c_out, c_in * k)
    out = (cols @ wmat.T).reshape(n, out_len, c_out).transpose(0, 2, 1)
    if b is not None:
        out = out + b.data[None, :, None]
    if in_rank == 1 and w.ndim == 1:
        data = out[0, 0]
    elif in_rank < 3:
        data = out[0]
    else:
        data = out

    def backward_fn(g):
        g3 = g.reshape(n, c_out, out_len)
        gmat = g3.transpose(0, 2, 1).reshape(n * out_len, c_out)
        gw = (gmat.T @ cols).reshape(wd.shape).reshape(w.shape)
        gb = g3.sum(axis=(0, 2)) if b is not None else None
        gx = None
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(n, out_len, c_in, k)
            gxp = np.zeros_like(xp)
            if k <= out_len:
                for j in range(k):
                    gxp[:, :, j:j + stride * (out_len - 1) + 1:stride] += dcols[:, :, :, j].transpose(0, 2, 1)
            else:
                for pos in range(out_len):
                    gxp[:, :, pos * stride:pos * stride + k] += dcols[:, pos]
            gx = gxp[:, :, pad_l:pad_l + length].reshape(x.shape)
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return _emit("conv1d", data, inputs, backward_fn)


def maxpool1d(x, window, stride=None):
    """Max over sliding windows along the last axis"""
    x = _as_tensor(x)
    stride = stride or window
    xd, _ = _promote(x, "maxpool1d")
    length = xd.shape[2]
    if window < 1 or length < window:
        raise ShapeError("maxpool1d", "window larger than input", dims={"length": length, "window": window})
    out_len = (length - window) // stride + 1
    view = sliding_window_view(xd, window, axis=2)[:, :, ::stride, :]
    idx = view.argmax(axis=-1)
    out = np.take_along_axis(view, idx[..., None], axis=-1)[..., 0]
    data = out.reshape(x.shape[:-1] + (out_len,))

    def backward_fn(g):
        g3 = g.reshape(out.shape)
        gx = np.zeros_like(xd)
        for j in range(window):
            gx[:, :, j:j + stride * (out_len - 1) + 1:stride] += g3 * (idx == j)
        return (gx.reshape(x.shape),)

    return _emit("maxpool1d", data, (x,), backward_fn, kink=idx.astype(np.int32).tobytes())


def global_maxpool(x):
    """Max over the whole last axis of (N, C, L), giving (N, C)"""
    x = _as_tensor(x)
    pooled = maxpool1d(x, x.shape[-1])
    return reshape(pooled, x.shape[:-1])


# --------------------------------
# Optimizers
# --------------------------------


def sgd_step(params, lr):
    """p <- p - lr * g for every parameter, in place"""
    for name, value in params.values.items():
        value -= lr * params.grads[name]
    return params


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kwargs):
        return cls(
            m={k: np.zeros_like(v) for k, v in params.values.items()},
            v={k: np.zeros_like(v) for k, v in params.values.items()},
            **kwargs,
        )


def adam_step(params, state, lr):
    """Adam update with bias correction, in place on params and state"""
    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for name, value in params.values.items():
        g = params.grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        value -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(value.dtype, copy=False)
    return params, state


# --------------------------------
# Gradient checking
# --------------------------------


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    skipped: list = field(default_factory=list)
    per_tensor: dict = field(default_factory=dict)

    def passed(self, tolerance):
        return self.max_rel_error < tolerance


def _evaluate(f):
    tape = Tape()
    with tape:
        out = f()
    signature = tape.signature()
    tape.clear()
    return float(np.asarray(out.data).reshape(-1)[0]), signature


def grad_check(f, params, h=1e-5, max_coords=None, rng=None, floor=1e-3):
    """Compare backward() against central differences, coordinate by coordinate.

    f builds a scalar Tensor from the given ParamSets under the active tape.
    Coordinates whose perturbation changes a relu mask, a pool argmax or the
    log floor are skipped and reported instead of compared. The checks run in
    64-bit; parameters and gradients get their own dtypes back afterwards.
    """
    if isinstance(params, ParamSet):
        params = [params]
    rng = rng if rng is not None else np.random.default_rng(0)
    dtypes = [{name: ps.values[name].dtype for name in ps.names()} for ps in params]
    try:
        result = _grad_check_64(f, params, h, max_coords, rng, floor)
    finally:
        for ps, original in zip(params, dtypes):
            for name, dtype in original.items():
                ps.values[name] = ps.values[name].astype(dtype, copy=False)
                ps.grads[name] = ps.grads[name].astype(dtype, copy=False)
    if result.skipped:
        logger.debug(f"grad_check: skipped {len(result.skipped)} coordinates at non-differentiable points")
    return result


def _grad_check_64(f, params, h, max_coords, rng, floor):
    with precision(np.float64):
        for ps in params:
            for name in ps.names():
                ps.values[name] = ps.values[name].astype(np.float64)
                ps.grads[name] = np.zeros_like(ps.values[name])
        tape = Tape()
        with tape:
            loss = f()
        baseline = tape.signature()
        backward(tape, loss)

        result = GradCheckResult(max_rel_error=0.0, n_checked=0)
        for ps in params:
            for name in ps.names():
                value = ps.values[name]
                analytic = ps.grads[name].copy()
                coords = np.arange(value.size)
                if max_coords is not None and value.size > max_coords:
                    coords = rng.choice(value.size, size=max_coords, replace=False)
                worst = 0.0
                flat = value.reshape(-1)
                for c in coords:
                    original = flat[c]
                    flat[c] = original + h
                    f_plus, sig_plus = _evaluate(f)
                    flat[c] = original - h
                    f_minus, sig_minus = _evaluate(f)
                    flat[c] = original
                    if sig_plus != baseline or sig_minus != baseline:
                        result.skipped.append((ps.group, name, int(c)))
                        continue
                    numeric = (f_plus - f_minus) / (2 * h)
                    a = analytic.reshape(-1)[c]
                    err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                    worst = max(worst, err)
                    result.n_checked += 1
                result.per_tensor[f"{ps.group}.{name}"] = worst
                result.max_rel_error = max(result.max_rel_error, worst)
    return result


# --------------------------------
# Checkpoint container
# --------------------------------

MANIFEST_FILE = "manifest.txt"
BLOB_FILE = "tensors.bin"


def save_checkpoint(directory, param_sets, adam_states=None, metadata=None):
    """Write ParamSets (and Adam states) as a manifest plus a little-endian blob"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for ps in param_sets:
        for name, value in ps.values.items():
            entries.append((f"param/{ps.group}/{name}", value))
    meta = dict(metadata or {})
    for group, state in (adam_states or {}).items():
        meta[f"adam.{group}.t"] = state.t
        for name in state.m:
            entries.append((f"adam_m/{group}/{name}", state.m[name]))
            entries.append((f"adam_v/{group}/{name}", state.v[name]))

    lines = [f"# {key}={json.dumps(value)}" for key, value in meta.items()]
    offset = 0
    with open(directory / BLOB_FILE, "wb") as blob:
        for name, value in entries:
            dtype = np.dtype(value.dtype).newbyteorder("<")
            raw = np.ascontiguousarray(value, dtype=dtype).tobytes()
            shape = ",".join(str(d) for d in value.shape)
            lines.append(f"{name}\t{shape}\t{dtype.str}\t{offset}\t{len(raw)}")
            blob.write(raw)
            offset += len(raw)
    (directory / MANIFEST_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.debug(f"Saved checkpoint with {len(entries)} tensors to {directory}")
    return directory


def load_checkpoint(directory):
    """Read a checkpoint back into (param sets by group, Adam states by group, metadata)"""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    blob_path = directory / BLOB_FILE
    if not manifest_path.is_file() or not blob_path.is_file():
        raise DataError(f"Checkpoint not found in {directory}")
    blob = blob_path.read_bytes()
    metadata = {}
    param_sets = {}
    moments = {}
    for line in manifest_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            metadata[key] = json.loads(value)
            continue
        try:
            name, shape, dtype, offset, nbytes = line.split("\t")
            offset, nbytes = int(offset), int(nbytes)
        except ValueError:
            raise DataError(f"{manifest_path}: malformed manifest line '{line}'") from None
        if offset + nbytes > len(blob):
            raise DataError(f"{blob_path}: tensor '{name}' extends past the end of the blob")
        dims = tuple(int(d) for d in shape.split(",")) if shape else ()
        value = np.frombuffer(blob, dtype=np.dtype(dtype), count=nbytes // np.dtype(dtype).itemsize, offset=offset)
        value = value.reshape(dims).astype(np.dtype(dtype).newbyteorder("="))
        kind, group, tensor_name = name.split("/", 2)
        if kind == "param":
            param_sets.setdefault(group, ParamSet(group)).add(tensor_name, value)
        else:
            moments.setdefault(group, {}).setdefault(kind, {})[tensor_name] = value

    adam_states = {}
    for group, parts in moments.items():
        adam_states[group] = AdamState(
            m=parts.get("adam_m", {}),
            v=parts.get("adam_v", {}),
            t=int(metadata.pop(f"adam.{group}.t", 0)),
        )
    return param_sets, adam_states, metadata
