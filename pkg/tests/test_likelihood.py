import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpsurv.data import CovariatePath, Dataset, Subject, event_grid
from cpsurv.families import COX, PROPORTIONAL_ODDS, TransformFamily
from cpsurv.likelihood import (CumHazard, RegularParams, Theta, evaluate, h_theta, info_euclidean,
                               info_full, loglik, r_xi, score_A_direction, score_euclidean)

FAMILIES = [COX, PROPORTIONAL_ODDS, TransformFamily("bent", 0.75)]


def random_case(seed, n=10, varying=False):
    rng = np.random.default_rng(seed)
    t = rng.exponential(size=n)
    d = rng.integers(0, 2, n)
    d[0] = 1
    y = rng.normal(size=n)
    subs = []
    for i in range(n):
        if varying:
            bp = np.concatenate([[0.0], np.sort(rng.uniform(0, 2, 2))])
            path = CovariatePath(bp, rng.normal(size=(3, 2)))
        else:
            path = CovariatePath.constant(rng.normal(size=2))
        subs.append(Subject(float(t[i]), int(d[i]), float(y[i]), path, str(i)))
    ds = Dataset(tuple(subs), float(t.max()), 1, 1)
    grid = event_grid(ds)
    A = CumHazard(grid, rng.uniform(0.05, 0.4, grid.size))
    psi = RegularParams.from_gamma(rng.normal(size=4) * 0.5, 1, A)
    zeta = float(np.median(y))
    return ds, psi, zeta


def direct_loglik(psi, zeta, ds, fam):
    """Subject-by-subject summation straight from the model definition."""
    total = 0.0
    for s in ds.subjects:
        th = Theta(psi, zeta)
        H = h_theta(th, s, s.v)
        G, dG, _, _ = (float(x) for x in fam.g_derivs(H))
        li = -G
        if s.delta:
            k = int(np.flatnonzero(psi.A.times == s.v)[0])
            li += math.log(ds.n * psi.A.jumps[k]) + math.log(dG) + r_xi(th, s, s.v)
        total += li
    return total / ds.n


def test_r_xi_examples():
    A = CumHazard([1.0], [0.5])
    psi = RegularParams(0.5, np.array([0.2]), np.array([1.0]), A)
    s_hi = Subject(3.0, 1, 1.0, CovariatePath.constant([2.0]))
    s_lo = Subject(3.0, 1, -1.0, CovariatePath.constant([2.0]))
    assert r_xi(Theta(psi, 0.0), s_hi, 1.0) == pytest.approx(2.9)
    assert r_xi(Theta(psi, 0.0), s_lo, 1.0) == pytest.approx(2.0)
    step = Subject(3.0, 1, -1.0, CovariatePath([0.0, 2.0], [[1.0], [3.0]]))
    assert r_xi(Theta(psi, 0.0), step, 2.0) == pytest.approx(1.0)


def test_h_theta_examples():
    A = CumHazard([1.0], [0.5])
    zero = RegularParams(0.0, np.zeros(1), np.zeros(1), A)
    log2 = zero.replace(beta=np.array([math.log(2.0)]))
    s = Subject(3.0, 0, 0.0, CovariatePath.constant([1.0]))
    assert h_theta(Theta(zero, 0.0), s, 2.0) == pytest.approx(0.5)
    assert h_theta(Theta(log2, 0.0), s, 2.0) == pytest.approx(1.0)
    early = Subject(0.5, 0, 0.0, CovariatePath.constant([1.0]))
    assert h_theta(Theta(zero, 0.0), early, 2.0) == 0.0


def test_single_subject_values():
    psi = RegularParams(0.0, np.zeros(1), np.zeros(1), CumHazard([0.5], [0.3]))
    ds = Dataset.from_arrays([1.0], [0], [0.0], [0.0])
    assert loglik(psi, 0.0, ds, COX) == pytest.approx(-0.3)
    psi = psi.replace(A=CumHazard([1.0], [0.2]))
    ds = Dataset.from_arrays([1.0], [1], [0.0], [0.0])
    assert loglik(psi, 0.0, ds, COX) == pytest.approx(math.log(0.2) - 0.2)


@pytest.mark.parametrize("fam", FAMILIES, ids=str)
@pytest.mark.parametrize("varying", [False, True])
def test_matches_direct_summation(fam, varying):
    for seed in range(3):
        ds, psi, zeta = random_case(seed, n=3 if seed == 0 else 9, varying=varying)
        assert loglik(psi, zeta, ds, fam) == pytest.approx(direct_loglik(psi, zeta, ds, fam), abs=1e-12)


def test_zero_jump_sentinel():
    ds, psi, zeta = random_case(0)
    jumps = psi.A.jumps.copy()
    jumps[0] = 0.0
    assert loglik(psi.replace(A=CumHazard(psi.A.times, jumps)), zeta, ds, COX) == -np.inf
    off_grid = CumHazard(psi.A.times + 1e-3, psi.A.jumps)
    assert loglik(psi.replace(A=off_grid), zeta, ds, COX) == -np.inf


@pytest.mark.parametrize("fam", FAMILIES, ids=str)
@pytest.mark.parametrize("dense", [False, True])
def test_backends_agree(fam, dense):
    ds, psi, zeta = random_case(4, n=15)
    ref = evaluate(psi, zeta, ds, fam, dense=False)
    st_ = evaluate(psi, zeta, ds, fam, dense=dense)
    assert st_.loglik() == pytest.approx(ref.loglik(), abs=1e-13)
    np.testing.assert_allclose(info_full(psi, zeta, ds, fam), info_full(psi, zeta, ds, fam), atol=0)
    np.testing.assert_allclose(st_.score_gamma(), ref.score_gamma(), atol=1e-13)
    np.testing.assert_allclose(st_.info_gamma(), ref.info_gamma(), atol=1e-12)
    np.testing.assert_allclose(st_.info_gamma_s(), ref.info_gamma_s(), atol=1e-12)


def test_cox_weights_are_trivial():
    for seed in range(5):
        ds, psi, zeta = random_case(seed)
        st_ = evaluate(psi, zeta, ds, COX)
        assert np.all(st_.xi0 == 1.0) and np.all(st_.xi1 == 0.0)


@pytest.mark.parametrize("fam", [COX, PROPORTIONAL_ODDS])
def test_xi0_positive(fam):
    for seed in range(5):
        ds, psi, zeta = random_case(seed, n=20)
        assert np.all(evaluate(psi, zeta, ds, fam).xi0 > 0)


def test_permutation_invariance():
    ds, psi, zeta = random_case(2, n=12)
    perm = np.random.default_rng(0).permutation(ds.n)
    shuffled = Dataset(tuple(ds.subjects[i] for i in perm), ds.tau, ds.p, ds.q)
    for fam in FAMILIES:
        assert loglik(psi, zeta, shuffled, fam) == pytest.approx(loglik(psi, zeta, ds, fam), abs=1e-13)


def test_constant_between_order_statistics():
    ds, psi, _ = random_case(3, n=12)
    ys = np.sort(ds.y)
    for lo, hi in zip(ys[:-1], ys[1:]):
        a, b = lo + 0.01 * (hi - lo), lo + 0.99 * (hi - lo)
        assert loglik(psi, a, ds, PROPORTIONAL_ODDS) == loglik(psi, b, ds, PROPORTIONAL_ODDS)


def test_degenerate_cases_give_zeros():
    ds = Dataset.from_arrays([1.0, 2.0, 3.0], [0, 0, 0], [0.0, 1.0, 2.0], [0.5, 1.0, -1.0])
    psi = RegularParams(0.3, np.array([0.1]), np.array([0.2]), CumHazard([], []))
    np.testing.assert_array_equal(score_euclidean(psi, 0.5, ds, COX), np.zeros(3))
    np.testing.assert_array_equal(info_euclidean(psi, 0.5, ds, COX), np.zeros((3, 3)))
    ds2, psi2, zeta2 = random_case(0)
    assert score_A_direction(psi2, zeta2, ds2, COX, 0.0) == 0.0


def _fd_checks(fam, seed, dense):
    ds, psi, zeta = random_case(seed, n=10, varying=dense)
    grid = psi.A.times
    gam = psi.gamma
    f = lambda g, j: evaluate(RegularParams.from_gamma(g, 1, CumHazard(grid, j)), zeta, ds, fam, dense=dense)
    st0 = f(gam, psi.A.jumps)
    h = 1e-6
    fd = np.array([(f(gam + h * e, psi.A.jumps).loglik() - f(gam - h * e, psi.A.jumps).loglik()) / (2 * h)
                   for e in np.eye(4)])
    sc = st0.score_gamma()
    # along A_s = int (1 + s 1{u <= t}) dA for a mid event time t
    t = grid[grid.size // 2]
    keep = grid <= t
    fdA = (f(gam, psi.A.jumps * (1 + h * keep)).loglik() - f(gam, psi.A.jumps * (1 - h * keep)).loglik()) / (2 * h)
    sA = score_A_direction(psi, zeta, ds, fam, t)
    fdI = -np.array([(f(gam + h * e, psi.A.jumps).score_gamma() - f(gam - h * e, psi.A.jumps).score_gamma())
                     / (2 * h) for e in np.eye(4)])
    return sc, fd, sA, fdA, st0.info_gamma(), fdI


@pytest.mark.parametrize("fam", FAMILIES, ids=str)
@given(seed=st.integers(0, 10_000), dense=st.booleans())
@settings(max_examples=10, deadline=None)
def test_finite_differences(fam, seed, dense):
    sc, fd, sA, fdA, info, fdI = _fd_checks(fam, seed, dense)
    np.testing.assert_allclose(sc, fd, rtol=1e-6, atol=1e-8)
    assert sA == pytest.approx(fdA, rel=1e-6, abs=1e-8)
    np.testing.assert_allclose(info, fdI, rtol=1e-4, atol=1e-7)
    np.testing.assert_allclose(info, info.T, atol=1e-10)


def test_full_information_is_negative_hessian():
    ds, psi, zeta = random_case(7, n=8)
    fam = PROPORTIONAL_ODDS
    grid = psi.A.times

    def score(x):
        st_ = evaluate(RegularParams.from_gamma(x[:4], 1, CumHazard(grid, np.exp(x[4:]))), zeta, ds, fam)
        return np.concatenate([st_.score_gamma(), st_.score_s()])

    x0 = np.concatenate([psi.gamma, np.log(psi.A.jumps)])
    h = 1e-6
    fd = -np.array([(score(x0 + h * e) - score(x0 - h * e)) / (2 * h) for e in np.eye(x0.size)])
    np.testing.assert_allclose(info_full(psi, zeta, ds, fam), fd, atol=1e-7)


@given(seed=st.integers(0, 1000), drop=st.integers(0, 9))
@settings(max_examples=25, deadline=None)
def test_zero_weight_equals_removal(seed, drop):
    ds, psi, zeta = random_case(seed, n=10)
    w = np.ones(ds.n)
    w[drop] = 0.0
    kept = Dataset(tuple(s for i, s in enumerate(ds.subjects) if i != drop), ds.tau, ds.p, ds.q)
    full = ds.n * score_euclidean(psi, zeta, ds, PROPORTIONAL_ODDS, weights=w)
    red = kept.n * score_euclidean(psi, zeta, kept, PROPORTIONAL_ODDS)
    np.testing.assert_allclose(full, red, atol=1e-12)
