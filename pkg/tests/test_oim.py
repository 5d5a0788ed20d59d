import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgts.diffcore import ContractError
from mgts.oim import OimState, lut_update, oim_loss_and_grad, oim_probs, queue_push


def _unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def random_state(rng, L=4, d=8, q=5, pushes=3, tau=1 / 30):
    s = OimState(L, d, q, tau=tau)
    s.lut[:] = np.array([_unit(r) for r in rng.normal(size=(L, d))])
    for _ in range(pushes):
        queue_push(s, _unit(rng.normal(size=d)))
    return s


def test_single_class_is_certain():
    s = OimState(1, 3, 4)
    s.lut[0] = [1.0, 0.0, 0.0]
    x = _unit([0.2, 0.3, 0.1])
    assert oim_probs(x, s).tolist() == [1.0]
    loss, grad = oim_loss_and_grad(x, 1, s)
    assert loss == 0.0 and not grad.any()


def test_two_class_orthogonal_example():
    s = OimState(2, 2, 0, tau=1.0)
    s.lut[:] = [[1.0, 0.0], [0.0, 1.0]]
    x = np.array([1.0, 0.0])
    p = oim_probs(x, s)
    assert abs(p[0] - math.e / (math.e + 1)) <= 1e-12
    loss, _ = oim_loss_and_grad(x, 1, s)
    assert abs(loss - math.log1p(math.exp(-1))) <= 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_probs_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    s = random_state(rng, L=int(rng.integers(1, 9)), pushes=int(rng.integers(0, 8)))
    p = oim_probs(_unit(rng.normal(size=8)), s)
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.all(p > 0)
    assert p.size == s.num_classes + min(s.count, s.capacity)


def test_probs_survive_huge_logits():
    s = OimState(3, 2, 0, tau=1e-4)
    s.lut[:] = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]
    p = oim_probs(np.array([1.0, 0.0]), s)
    assert np.all(np.isfinite(p)) and p[0] == 1.0


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    s = random_state(rng, tau=0.5)
    x = _unit(rng.normal(size=8))
    t = int(rng.integers(1, 5))
    _, grad = oim_loss_and_grad(x, t, s)
    eps = 1e-6
    num = np.zeros(8)
    for i in range(8):
        e = np.zeros(8)
        e[i] = eps
        num[i] = (oim_loss_and_grad(x + e, t, s)[0] - oim_loss_and_grad(x - e, t, s)[0]) / (2 * eps)
    assert np.max(np.abs(grad - num) / np.maximum(1.0, np.abs(grad))) < 1e-6


def test_gradient_closed_form():
    rng = np.random.default_rng(3)
    s = random_state(rng)
    x = _unit(rng.normal(size=8))
    p = oim_probs(x, s)
    _, grad = oim_loss_and_grad(x, 2, s)
    expect = -(s.lut[1] - p[:4] @ s.lut - p[4:] @ s.queue_contents()) / s.tau
    assert np.allclose(grad, expect, atol=1e-12)


def test_invalid_label():
    s = OimState(3, 2)
    for t in (0, 4, -1):
        with pytest.raises(ContractError):
            oim_loss_and_grad(np.array([1.0, 0.0]), t, s)


def test_zero_rows_count_in_denominator():
    s = OimState(3, 2, 0, tau=1.0)
    s.lut[0] = [1.0, 0.0]
    p = oim_probs(np.array([1.0, 0.0]), s)
    assert p[0] == pytest.approx(math.e / (math.e + 2), abs=1e-15)


# ---- lookup table


@pytest.mark.parametrize(
    "eta, expected",
    [(0.5, [0.5, 0.5]), (1.0, [1.0, 0.0]), (0.0, [0.0, 1.0])],
)
def test_lut_update_examples(eta, expected):
    s = OimState(2, 2, eta=eta)
    s.lut[0] = [1.0, 0.0]
    s.lut[1] = [7.0, 7.0]
    lut_update(s, np.array([0.0, 1.0]), 1)
    assert s.lut[0].tolist() == expected
    assert s.lut[1].tolist() == [7.0, 7.0]


@settings(max_examples=50)
@given(st.floats(0, 1), st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_lut_update_is_bit_exact(eta, v, x):
    s = OimState(1, 3, eta=eta)
    s.lut[0] = v
    lut_update(s, np.array(x), 1)
    expect = [eta * a + (1.0 - eta) * b for a, b in zip(v, x)]
    assert s.lut[0].tolist() == expect


# ---- queue


def test_queue_overwrites_oldest():
    s = OimState(1, 1, 4)
    for k in range(5):
        queue_push(s, np.array([float(k)]))
    assert s.queue_contents().ravel().tolist() == [1.0, 2.0, 3.0, 4.0]
    assert s.count == 4


def test_queue_occupancy_grows():
    s = OimState(1, 2, 6)
    for n in range(1, 7):
        queue_push(s, np.ones(2))
        assert s.count == n


def test_queue_matches_list_fifo():
    rng = np.random.default_rng(0)
    for cap in (1, 3, 7, 64):
        s = OimState(2, 2, cap)
        ref = deque(maxlen=cap)
        for op in range(1000):
            if rng.random() < 0.7:
                u = rng.normal(size=2)
                queue_push(s, u)
                ref.append(u.tolist())
            else:
                # a read: contents and probabilities must agree with the oracle
                assert s.queue_contents().tolist() == list(ref)
        assert s.queue_contents().tolist() == list(ref)
        assert s.count == len(ref) <= cap


def test_zero_capacity_queue_is_inert():
    s = OimState(1, 2, 0)
    queue_push(s, np.ones(2))
    assert s.count == 0 and s.queue_contents().shape == (0, 2)


def test_state_copy_is_independent():
    s = random_state(np.random.default_rng(1))
    c = s.copy()
    assert c == s
    lut_update(c, np.ones(8), 1)
    assert c != s
