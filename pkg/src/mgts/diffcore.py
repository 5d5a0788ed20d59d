"""Small reverse-mode autodiff over dense float64 arrays.

Only the primitives the model needs are provided. Every shape rule is
explicit; there is no broadcasting. A graph is recorded as tensors are
produced and ``Tensor.backward`` replays it in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

EPS_NORM = 1e-12


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested primitive."""


class DegenerateInputError(ValueError):
    """Input is numerically degenerate (e.g. a zero-norm vector)."""


class ContractError(ValueError):
    """A caller-side precondition was violated."""


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Seeded generator; ``keys`` derive independent sub-streams.

    PCG64 streams produced via ``SeedSequence`` are identical on every
    platform for the same ``(seed, *keys)``.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if not np.all(np.isfinite(arr)):
            raise DegenerateInputError("tensor values must be finite")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        if self.data.size != 1:
            raise ContractError("backward() needs a scalar output")
        if not self.requires_grad:
            return
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: accumulate into .grad
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in node._backward(g):
                if parent.requires_grad:
                    key = id(parent)
                    grads[key] = grads[key] + pg if key in grads else pg


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._parents = tuple(parents) if out.requires_grad else ()
    out._backward = backward if out.requires_grad else None
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        return ((a, g @ B.T), (b, A.T @ g))

    return _result(A @ B, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: ((a, g * mask),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # numerically stable both tails
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(s, (a,), lambda g: ((a, g * s * (1.0 - s)),))


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: ((a, g), (b, g)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: ((a, g), (b, -g)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    A, B = a.data, b.data
    return _result(A * B, (a, b), lambda g: ((a, g * B), (b, g * A)))


_ELEMENTWISE = {"relu": relu, "sigmoid": sigmoid, "add": add, "mul": mul, "sub": sub}


def elementwise(op_kind: str, *inputs: Tensor) -> Tensor:
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op_kind!r}") from None
    return fn(*inputs)


def global_average_pool(f: Tensor) -> Tensor:
    if f.data.ndim != 3 or f.shape[1] < 1 or f.shape[2] < 1:
        raise DimensionError(f"global_average_pool needs c×h×w with h,w ≥ 1, got {f.shape}")
    c, h, w = f.shape
    n = h * w

    def backward(g):
        return ((f, np.broadcast_to((g / n)[:, None, None], (c, h, w)).copy()),)

    # mean of deviations from a reference entry: exact for constant maps
    ref = f.data[:, :1, :1]
    out = ref[:, 0, 0] + (f.data - ref).mean(axis=(1, 2))
    return _result(out, (f,), backward)


def l2_normalize(v: Tensor) -> Tensor:
    if v.data.ndim != 1:
        raise DimensionError(f"l2_normalize expects a vector, got {v.shape}")
    norm = float(np.sqrt(np.dot(v.data, v.data)))
    if norm <= EPS_NORM:
        raise DegenerateInputError(f"l2_normalize: norm {norm:.3g} below {EPS_NORM}")
    y = v.data / norm

    def backward(g):
        return ((v, (g - y * np.dot(y, g)) / norm),)

    return _result(y, (v,), backward)


def channel_scale(f: Tensor, w: Tensor) -> Tensor:
    if f.data.ndim != 3 or w.data.ndim != 1 or f.shape[0] != w.shape[0]:
        raise DimensionError(f"channel_scale: map {f.shape} vs weights {w.shape}")
    F, W = f.data, w.data

    def backward(g):
        return ((f, g * W[:, None, None]), (w, np.einsum("chw,chw->c", g, F)))

    return _result(F * W[:, None, None], (f, w), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise DimensionError(f"concat_channels: {a.shape} vs {b.shape}")
    c1 = a.shape[0]

    def backward(g):
        return ((a, g[:c1]), (b, g[c1:]))

    return _result(np.concatenate([a.data, b.data], axis=0), (a, b), backward)


def avg_pool_2x(f: Tensor) -> Tensor:
    if f.data.ndim != 3 or f.shape[1] < 1 or f.shape[2] < 1:
        raise DimensionError(f"avg_pool_2x needs c×h×w, got {f.shape}")
    c, h, w = f.shape
    oh, ow = -(-h // 2), -(-w // 2)
    ph, pw = 2 * oh - h, 2 * ow - w
    x = np.pad(f.data, ((0, 0), (0, ph), (0, pw)))
    count = np.pad(np.ones((h, w)), ((0, ph), (0, pw)))
    cnt = count.reshape(oh, 2, ow, 2).sum(axis=(1, 3))
    out = x.reshape(c, oh, 2, ow, 2).sum(axis=(2, 4)) / cnt

    def backward(g):
        share = g / cnt
        up = np.repeat(np.repeat(share, 2, axis=1), 2, axis=2)
        return ((f, up[:, :h, :w].copy()),)

    return _result(out, (f,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size:
        raise DimensionError(f"reshape: {a.shape} -> {shape}")
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: ((a, g.reshape(src)),))


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Add a per-row bias: ``a`` is m×n (or m), ``b`` is m."""
    if b.data.ndim != 1 or a.data.ndim not in (1, 2) or a.shape[0] != b.shape[0]:
        raise DimensionError(f"add_bias: {a.shape} with bias {b.shape}")
    if a.data.ndim == 1:
        return add(a, b)
    return _result(a.data + b.data[:, None], (a, b), lambda g: ((a, g), (b, g.sum(axis=1))))


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a scalar tensor."""
    src = a.shape
    return _result(np.array(a.data.sum()), (a,), lambda g: ((a, np.full(src, float(g))),))


def scalar_node(x: Tensor, value: float, grad_x: np.ndarray) -> Tensor:
    """Scalar whose value and gradient w.r.t. ``x`` were computed externally."""
    grad_x = np.asarray(grad_x, dtype=np.float64)
    if grad_x.shape != x.shape:
        raise DimensionError(f"scalar_node: grad {grad_x.shape} vs input {x.shape}")
    return _result(np.array(float(value)), (x,), lambda g: ((x, float(g) * grad_x),))


def scale(a: Tensor, k: float) -> Tensor:
    return _result(a.data * k, (a,), lambda g: ((a, g * k),))


# ---------------------------------------------------------------- checking, updates


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Largest |analytic - central difference| / max(1, |analytic|) over all entries."""
    if not (0.0 < eps <= 1e-2):
        raise ContractError(f"eps must lie in (0, 1e-2], got {eps}")
    for t in inputs:
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)
    out = fn(*inputs)
    if out.data.size != 1:
        raise ContractError("grad_check needs a scalar-valued function")
    out.backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad.copy()
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(fn(*inputs).data)
            flat[i] = orig - eps
            lo = float(fn(*inputs).data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst


def sgd_step(params: Iterable[Tensor], lr: float) -> None:
    if lr < 0:
        raise ContractError(f"learning rate must be non-negative, got {lr}")
    params = list(params)
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter {p.name or p!r} carries no gradient")
    for p in params:
        if lr > 0:
            p.data = p.data - lr * p.grad
        p.grad = np.zeros_like(p.data)
