import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trackforge.errors import InvalidParams, LengthMismatch
from trackforge.metrics import GospaParams, assignment_solve, gospa, mse_curve

from oracles import brute_assignment, brute_gospa


def test_assignment_examples():
    pairs, cost = assignment_solve([[1, 2], [2, 1]])
    assert sorted(pairs) == [(0, 0), (1, 1)] and cost == 2
    perm = [2, 0, 3, 1]
    P = np.ones((4, 4))
    for i, j in enumerate(perm):
        P[i, j] = 0
    pairs, cost = assignment_solve(P)
    assert cost == 0 and dict(pairs) == dict(enumerate(perm))
    assert assignment_solve(np.zeros((0, 3))) == ([], 0.0)


def test_assignment_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        r, c = rng.integers(1, 7, size=2)
        cost = rng.uniform(0, 10, (r, c))
        assert assignment_solve(cost)[1] == pytest.approx(brute_assignment(cost), abs=1e-12)


def test_gospa_examples():
    assert gospa(np.zeros((0, 3)), np.zeros((0, 3))).total == 0
    Y = np.array([[1.0, 2, 3], [4, 5, 6]])
    assert gospa(Y.copy(), Y).total == 0
    assert gospa(np.zeros((0, 3)), [[0, 0, 0]]).total == pytest.approx(math.sqrt(24.5), abs=1e-12)
    assert math.sqrt(24.5) == pytest.approx(4.9497, abs=1e-4)


def test_gospa_brute_force():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    for _ in range(500):
        nx, ny = rng.integers(0, 7, size=2)
        X, Y = rng.uniform(0, 12, (nx, 3)), rng.uniform(0, 12, (ny, 3))
        assert abs(gospa(X, Y).total - brute_gospa(X, Y)) <= 1e-12
    assert time.perf_counter() - t0 < 60


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 100_000), nx=st.integers(0, 5), ny=st.integers(0, 5))
def test_gospa_components_and_symmetry(seed, nx, ny):
    rng = np.random.default_rng(seed)
    X, Y = rng.uniform(0, 10, (nx, 3)), rng.uniform(0, 10, (ny, 3))
    g, h = gospa(X, Y), gospa(Y, X)
    assert g.total == pytest.approx(h.total, abs=1e-12)
    assert g.total ** 2 == pytest.approx(g.localization + g.missed + g.false + g.switch, abs=1e-9)
    assert g.missed == pytest.approx(h.false)


def test_switch_counting():
    Y = np.array([[0.0, 0, 0], [20, 0, 0]])
    X = Y + 0.1
    first = gospa(X, Y, estimate_ids=[10, 11])
    assert first.switches == 0 and first.assignment == {0: 10, 1: 11}
    swapped = gospa(X, Y, previous=first.assignment, estimate_ids=[11, 10])
    assert swapped.switches == 2
    assert swapped.total ** 2 == pytest.approx(2 * 0.03 + 2 * 3.0)
    same = gospa(X, Y, previous=first.assignment, estimate_ids=[10, 11])
    assert same.switches == 0


def test_far_estimate_is_not_matched():
    g = gospa([[100.0, 0, 0]], [[0.0, 0, 0]])
    assert g.assignment == {} and g.total == pytest.approx(7.0)


@pytest.mark.parametrize("kw", [dict(c=0), dict(p=0.5), dict(alpha=3), dict(alpha=0), dict(s=-1)])
def test_invalid_params(kw):
    with pytest.raises(InvalidParams):
        GospaParams(**kw)


def test_mse_curve():
    t = np.random.default_rng(2).normal(size=(20, 3))
    assert not mse_curve(t, t).any()
    np.testing.assert_allclose(mse_curve(t + [3, 0, 0], t), 9.0)
    runs = np.random.default_rng(3).normal(size=(5, 20, 3))
    per_run = [mse_curve(r, t) for r in runs]
    np.testing.assert_allclose(mse_curve(runs, t), np.mean(per_run, axis=0), atol=1e-12)
    with pytest.raises(LengthMismatch):
        mse_curve(t[:5], t)
