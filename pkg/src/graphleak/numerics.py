"""Dense float64 tensor engine with tape-based reverse-mode differentiation.

Everything downstream (GNN training, explainer optimisation, the diffusion
denoiser) runs on these primitives.  Design constraints: 64-bit floats only,
row-major flat storage (numpy arrays, no stride views), broadcasting allowed
only over leading axes, and a hard error on any non-finite intermediate.

Gradients are recorded per-op onto the innermost active ``Tape``.  Ops
executed outside a tape context (or inside ``no_grad``) never record, which
is how eval-mode forward passes stay cheap.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


class NumericsError(ValueError):
    """Raised on non-finite values or invalid primitive usage."""


class ShapeError(NumericsError):
    """Raised when operand shapes are incompatible for a primitive."""


class NonFiniteError(NumericsError):
    """Raised when an operation produces NaN or infinity."""


_STATE = threading.local()


def _tape_stack() -> list:
    stack = getattr(_STATE, "tapes", None)
    if stack is None:
        stack = []
        _STATE.tapes = stack
    return stack


class Tensor:
    """A dense float64 array plus a requires_grad flag.

    Tensors are immutable from the engine's point of view: ops allocate new
    outputs.  In-place edits of ``.data`` (parameter updates) are legal only
    between tapes.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        # a single reduction is far cheaper than isfinite().all(); any NaN or
        # infinity poisons the sum, so finiteness of the sum is equivalent
        if not np.isfinite(arr.sum()):
            raise NonFiniteError("tensor contains non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitives executed while the tape is active.

    Append order is execution order, so it is already a topological order of
    the computation graph; the backward sweep walks it once in reverse.
    """

    def __init__(self):
        self._nodes = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out: Tensor, parents, vjps):
        self._nodes.append((out, tuple(parents), tuple(vjps)))

    def backward(self, output: Tensor) -> dict:
        """Accumulate d(output)/d(input) for every requires_grad tensor.

        ``output`` must be a scalar (size 1).  Returns a map from input
        Tensor (identity-keyed) to its gradient Tensor; tensors that never
        required gradients are absent, and recorded tensors disconnected
        from ``output`` simply accumulate nothing.
        """
        if output.size != 1:
            raise NumericsError("backward requires a scalar output")
        grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        holders: dict[int, Tensor] = {id(output): output}
        for out, parents, vjps in reversed(self._nodes):
            g = grads.get(id(out))
            if g is None:
                continue
            for parent, vjp in zip(parents, vjps):
                if vjp is None or not parent.requires_grad:
                    continue
                contrib = vjp(g)
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + contrib
                else:
                    grads[pid] = contrib
                    holders[pid] = parent
        return {
            holders[pid]: Tensor(g)
            for pid, g in grads.items()
            if holders[pid].requires_grad and holders[pid] is not output
        }


class _NoGrad:
    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False


def no_grad() -> _NoGrad:
    """Context manager suppressing tape recording (eval-mode forwards)."""
    return _NoGrad()


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _make(out_data: np.ndarray, parents, vjps) -> Tensor:
    rg = any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=rg)
    tape = _active_tape()
    if tape is not None and rg:
        tape._record(out, parents, vjps)
    return out


def defop(out_data, parents, vjps) -> Tensor:
    """Build a custom primitive result from precomputed data and VJPs.

    Extension point used by tests and by callers needing a one-off
    primitive; ``vjps[i]`` maps the output gradient to the gradient of
    ``parents[i]`` (or None for non-differentiable parents).
    """
    return _make(np.asarray(out_data, dtype=np.float64), parents, vjps)


# -- broadcasting: equal shapes, scalars, or suffix match (leading axes) ----

def _broadcast_check(a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or a.size == 1 or b.size == 1:
        return
    small, big = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(small) == len(big) or big[len(big) - len(small):] != small:
        raise ShapeError(f"broadcast only over leading axes: {sa} vs {sb}")


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    extra = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(extra))) if extra else grad


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check(a, b)
    return _make(
        a.data + b.data,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check(a, b)
    return _make(
        a.data - b.data,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check(a, b)
    return _make(
        a.data * b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.data, a.shape),
            lambda g: _unbroadcast(g * a.data, b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), (lambda g: -g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        (lambda g: g @ b.data.T, lambda g: a.data.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("transpose expects a 2-D operand")
    return _make(a.data.T.copy(), (a,), (lambda g: g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    return _make(a.data.reshape(shape).copy(), (a,), (lambda g: g.reshape(orig),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _make(np.where(mask, a.data, 0.0), (a,), (lambda g: g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)
    return _make(s, (a,), (lambda g: g * s * (1.0 - s),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), (lambda g: g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), (lambda g: g / a.data,))


def power(a: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    out = np.power(a.data, p)
    return _make(out, (a,), (lambda g: g * p * np.power(a.data, p - 1.0),))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    passed = a.data >= floor
    return _make(np.maximum(a.data, floor), (a,), (lambda g: g * passed,))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    s = expit(x)
    return _make(out, (a,), (lambda g: g * s,))


def tensor_sum(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        return _make(
            np.asarray(a.data.sum()),
            (a,),
            (lambda g: np.broadcast_to(g, a.shape).copy(),),
        )

    def vjp(g):
        return np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()

    return _make(a.data.sum(axis=axis), (a,), (vjp,))


def mean(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        count = a.size
        return _make(
            np.asarray(a.data.mean()),
            (a,),
            (lambda g: np.broadcast_to(g / count, a.shape).copy(),),
        )
    count = a.shape[axis]

    def vjp(g):
        return np.broadcast_to(np.expand_dims(g, axis) / count, a.shape).copy()

    return _make(a.data.mean(axis=axis), (a,), (vjp,))


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, max-subtracted for stability."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return s * (g - (g * s).sum(axis=-1, keepdims=True))

    return _make(s, (a,), (vjp,))


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def vjp(g):
        return g - soft * g.sum(axis=-1, keepdims=True)

    return _make(out, (a,), (vjp,))


def concat(parts, axis: int = 1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def make_vjp(index):
        def vjp(g):
            return np.split(g, offsets, axis=axis)[index]

        return vjp

    return _make(
        np.concatenate([p.data for p in parts], axis=axis),
        tuple(parts),
        tuple(make_vjp(i) for i in range(len(parts))),
    )


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def vjp(g):
        full = np.zeros(a.shape)
        full[index] = g
        return full

    return _make(a.data[index].copy(), (a,), (vjp,))


def forward_eval(expr, inputs):
    """Evaluate a composed-primitive callable on a list of input tensors.

    Recording onto the active tape happens inside the primitives themselves;
    this helper only standardises the calling convention used by gradcheck.
    """
    return expr(list(inputs))


def backward(tape: Tape, output: Tensor) -> dict:
    """Module-level alias for :meth:`Tape.backward`."""
    return tape.backward(output)


@dataclass
class GradCheckReport:
    """Outcome of an autodiff-vs-central-differences comparison."""

    passed: bool
    max_rel_error: float
    tol: float
    step: float
    failures: list = field(default_factory=list)


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale))


def gradcheck(expr, inputs, step: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare tape gradients of ``expr`` against central finite differences.

    ``expr`` takes a list of Tensors and returns a scalar Tensor.  Failures
    are reported, never raised.
    """
    if step <= 0:
        raise NumericsError("gradcheck step must be positive")
    inputs = list(inputs)
    with Tape() as tape:
        out = forward_eval(expr, inputs)
    grads = tape.backward(out)

    failures = []
    max_err = 0.0
    with no_grad():
        for pos, x in enumerate(inputs):
            if not x.requires_grad:
                continue
            analytic = grads[x].data if x in grads else np.zeros(x.shape)
            numeric = np.zeros(x.shape)
            flat = x.data.reshape(-1)
            num_flat = numeric.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                hi = forward_eval(expr, inputs).item()
                flat[i] = orig - step
                lo = forward_eval(expr, inputs).item()
                flat[i] = orig
                num_flat[i] = (hi - lo) / (2.0 * step)
            err = _rel_error(analytic, numeric)
            max_err = max(max_err, err)
            if err >= tol:
                failures.append(f"input {pos}: rel error {err:.3e} >= tol {tol:.1e}")
    return GradCheckReport(
        passed=not failures, max_rel_error=max_err, tol=tol, step=step, failures=failures
    )
