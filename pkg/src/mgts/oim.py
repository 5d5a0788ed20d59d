"""Online Instance Matching: lookup table, circular queue, loss and gradient."""

from __future__ import annotations

import numpy as np

from .diffcore import ContractError, Tensor, scalar_node

PAPER_TAU = 1.0 / 30.0
PAPER_QUEUE_SIZE = 5000
PAPER_MOMENTUM = 0.5


class OimState:
    """Class centers for ``L`` labeled identities plus a FIFO of unlabeled features.

    Labels are 1-based: identity ``t`` lives in ``lut[t - 1]``.
    """

    def __init__(self, num_classes: int, dim: int, queue_size: int = 64,
                 tau: float = PAPER_TAU, eta: float = PAPER_MOMENTUM):
        if num_classes < 1 or dim < 1 or queue_size < 0:
            raise ContractError("OimState needs num_classes >= 1, dim >= 1, queue_size >= 0")
        if tau <= 0 or not 0.0 <= eta <= 1.0:
            raise ContractError(f"bad tau={tau} or eta={eta}")
        self.lut = np.zeros((num_classes, dim))
        self.queue = np.zeros((queue_size, dim))
        self.head = 0  # next write slot
        self.count = 0
        self.tau = float(tau)
        self.eta = float(eta)

    @property
    def num_classes(self) -> int:
        return self.lut.shape[0]

    @property
    def dim(self) -> int:
        return self.lut.shape[1]

    @property
    def capacity(self) -> int:
        return self.queue.shape[0]

    def queue_contents(self) -> np.ndarray:
        """Stored unlabeled features, oldest first."""
        if self.count < self.capacity:
            return self.queue[: self.count].copy()
        return np.concatenate([self.queue[self.head :], self.queue[: self.head]])

    def copy(self) -> "OimState":
        other = OimState.__new__(OimState)
        other.lut = self.lut.copy()
        other.queue = self.queue.copy()
        other.head, other.count = self.head, self.count
        other.tau, other.eta = self.tau, self.eta
        return other

    def __eq__(self, other) -> bool:
        if not isinstance(other, OimState):
            return NotImplemented
        return (
            np.array_equal(self.lut, other.lut)
            and np.array_equal(self.queue, other.queue)
            and (self.head, self.count, self.tau, self.eta)
            == (other.head, other.count, other.tau, other.eta)
        )


def _check_label(t: int, state: OimState) -> None:
    if not 1 <= t <= state.num_classes:
        raise ContractError(f"label {t} outside 1..{state.num_classes}")


def _logits(x: np.ndarray, state: OimState) -> tuple[np.ndarray, np.ndarray]:
    # only occupied queue slots take part; order inside the queue is irrelevant
    occupied = state.queue if state.count == state.capacity else state.queue[: state.count]
    return state.lut @ x / state.tau, occupied @ x / state.tau


def oim_probs(x: np.ndarray, state: OimState) -> np.ndarray:
    """Softmax over the ``L`` class centers followed by the occupied queue slots.

    The first ``L`` entries are the class probabilities ``p_j``.
    """
    lab, unl = _logits(np.asarray(x, dtype=np.float64), state)
    z = np.concatenate([lab, unl])
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def oim_loss_and_grad(x: np.ndarray, t: int, state: OimState) -> tuple[float, np.ndarray]:
    """``-log p_t`` and its gradient with respect to ``x`` (table and queue held fixed)."""
    _check_label(t, state)
    x = np.asarray(x, dtype=np.float64)
    lab, unl = _logits(x, state)
    z = np.concatenate([lab, unl])
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    loss = float(lse - lab[t - 1])
    p = np.exp(z - lse)
    occupied = state.queue if state.count == state.capacity else state.queue[: state.count]
    expected = p[: state.num_classes] @ state.lut + p[state.num_classes :] @ occupied
    grad = -(state.lut[t - 1] - expected) / state.tau
    return max(loss, 0.0), grad


def oim_loss(x: Tensor, t: int, state: OimState) -> Tensor:
    """Differentiable node for the loss of descriptor ``x`` with label ``t``."""
    loss, grad = oim_loss_and_grad(x.data, t, state)
    return scalar_node(x, loss, grad)


def lut_update(state: OimState, x: np.ndarray, t: int) -> OimState:
    _check_label(t, state)
    state.lut[t - 1] = state.eta * state.lut[t - 1] + (1.0 - state.eta) * np.asarray(x, dtype=np.float64)
    return state


def queue_push(state: OimState, u: np.ndarray) -> OimState:
    if state.capacity == 0:
        return state
    state.queue[state.head] = np.asarray(u, dtype=np.float64)
    state.head = (state.head + 1) % state.capacity
    state.count = min(state.count + 1, state.capacity)
    return state
