import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridci.fusion_ci import (
    CIObjective,
    InfeasibleError,
    ci_fuse,
    ici_round,
    lyapunov,
    optimize_weights,
    project_simplex,
)
from hybridci.gaussian import GaussianInfo
from hybridci.info_filter import InfoIncrement
from hybridci.network import GraphSnapshot

from conftest import random_spd


def objective(Ys, w, kind="log_det"):
    S = sum(wi * Y for wi, Y in zip(w, Ys))
    if kind == "log_det":
        return -np.linalg.slogdet(S)[1]
    return np.trace(np.linalg.inv(S))


def simplex_grid(m, step):
    k = int(round(1 / step))
    for c in itertools.product(range(k + 1), repeat=m - 1):
        if sum(c) <= k:
            yield np.array([*c, k - sum(c)]) / k


def test_identical_inputs_tie_break_to_uniform(rng):
    Y = random_spd(rng, 3)
    w = optimize_weights([Y, Y.copy()])
    assert np.array_equal(w, [0.5, 0.5])


def test_scalar_pair_puts_all_weight_on_more_informative():
    w = optimize_weights([np.array([[4.0]]), np.array([[1.0]])])
    grid = np.linspace(0, 1, 10_001)
    best = grid[np.argmin([-np.log(4 * t + (1 - t)) for t in grid])]
    assert best == 1.0
    np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-9)


@pytest.mark.parametrize("kind", list(CIObjective))
def test_pair_beats_fine_grid(kind):
    rng = np.random.default_rng(21)
    for _ in range(20):
        Ys = [random_spd(rng, 3) for _ in range(2)]
        w = optimize_weights(Ys, kind)
        f = objective(Ys, w, kind.value)
        assert all(f <= objective(Ys, g, kind.value) + 1e-10 for g in simplex_grid(2, 1e-3))


def test_triple_beats_grid():
    rng = np.random.default_rng(4)
    for _ in range(5):
        Ys = [random_spd(rng, 3) for _ in range(3)]
        w = optimize_weights(Ys)
        f = objective(Ys, w)
        assert all(f <= objective(Ys, g) + 1e-10 for g in simplex_grid(3, 0.02))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 5))
def test_weights_feasible_and_permutation_invariant(seed, m):
    rng = np.random.default_rng(seed)
    Ys = [random_spd(rng, 4) for _ in range(m)]
    w = optimize_weights(Ys)
    assert np.all(w >= 0)
    assert abs(w.sum() - 1) <= 1e-12
    perm = rng.permutation(m)
    wp = optimize_weights([Ys[i] for i in perm])
    # the objective is strictly convex in the fused matrix, so the optimum value is unique
    assert objective([Ys[i] for i in perm], wp) == pytest.approx(objective(Ys, w), abs=1e-9)


def test_optimum_no_worse_than_any_vertex():
    # a dominant estimate should win outright
    rng = np.random.default_rng(8)
    Y = random_spd(rng, 4)
    w = optimize_weights([Y, 0.5 * Y, 0.25 * Y])
    np.testing.assert_allclose(w, [1.0, 0.0, 0.0], atol=1e-9)


def test_singular_members_are_allowed_if_combination_is_invertible():
    w = optimize_weights([np.diag([1.0, 0.0]), np.diag([0.0, 1.0])])
    np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-8)


def test_all_singular_is_infeasible():
    with pytest.raises(InfeasibleError):
        optimize_weights([np.diag([1.0, 0.0]), np.diag([2.0, 0.0])])


def test_project_simplex():
    np.testing.assert_allclose(project_simplex(np.array([0.2, 0.3, 0.5])), [0.2, 0.3, 0.5])
    np.testing.assert_allclose(project_simplex(np.array([2.0, 0.0])), [1.0, 0.0])
    np.testing.assert_allclose(project_simplex(np.array([1.0, 1.0])), [0.5, 0.5])


def test_ci_fuse_examples(rng):
    a = GaussianInfo(rng.standard_normal(3), random_spd(rng, 3))
    b = GaussianInfo(rng.standard_normal(3), random_spd(rng, 3))
    out = ci_fuse([a, a], np.array([0.3, 0.7]))
    np.testing.assert_allclose(out.info_mat, a.info_mat, rtol=1e-14)
    out = ci_fuse([a, b], np.array([1.0, 0.0]))
    assert np.array_equal(out.info_mat, a.info_mat)
    assert np.array_equal(out.info_vec, a.info_vec)
    s = ci_fuse([GaussianInfo([1.0], [[2.0]]), GaussianInfo([3.0], [[4.0]])], np.array([0.5, 0.5]))
    assert s.info_mat[0, 0] == 3.0
    assert s.info_vec[0] == 2.0


def test_ci_fuse_rejects_bad_weights(rng):
    a = GaussianInfo(np.zeros(2), np.eye(2))
    with pytest.raises(ValueError):
        ci_fuse([a, a], np.array([0.6, 0.6]))
    with pytest.raises(ValueError):
        ci_fuse([a, a], np.array([1.5, -0.5]))
    with pytest.raises(ValueError):
        ci_fuse([a, GaussianInfo(np.zeros(3), np.eye(3))], np.array([0.5, 0.5]))


def test_ici_round_trivial_cases(rng):
    a = GaussianInfo(rng.standard_normal(3), random_spd(rng, 3))
    assert ici_round([[a]])[0] is a
    out = ici_round([[a, a, a]] * 3)
    for o in out:
        np.testing.assert_allclose(o.info_mat, a.info_mat, rtol=1e-14)
        np.testing.assert_allclose(o.info_vec, a.info_vec, rtol=1e-14)
    with pytest.raises(ValueError):
        ici_round([[a], []])


def test_ici_round_with_increments_adds_before_fusing(rng):
    a = GaussianInfo(np.zeros(2), np.eye(2))
    inc = InfoIncrement(np.array([1.0, 0.0]), np.diag([3.0, 0.0]))
    out = ici_round([[a]], increments=[[inc]])[0]
    np.testing.assert_allclose(out.info_mat, np.diag([4.0, 1.0]))
    np.testing.assert_allclose(out.info_vec, [1.0, 0.0])


def test_ici_path_lyapunov_decreases_until_agreement():
    rng = np.random.default_rng(2)
    g = GraphSnapshot.path(4)
    states = [GaussianInfo(rng.standard_normal(3), random_spd(rng, 3)) for _ in range(4)]
    v = lyapunov([s.info_mat for s in states])
    for _ in range(500):
        states = ici_round([[states[j] for j in h] for h in g.neighborhoods()])
        v_new = lyapunov([s.info_mat for s in states])
        assert v_new <= v + 1e-10
        spread = max(np.linalg.norm(s.info_mat - states[0].info_mat) for s in states)
        if spread < 1e-6:
            break
        assert v_new < v
        v = v_new
    assert spread < 1e-6


def test_lyapunov_value():
    Ys = [np.diag([2.0, 3.0]), np.eye(2)]
    assert lyapunov(Ys) == pytest.approx(-np.log(6.0))
    assert lyapunov(Ys, CIObjective.TRACE) == pytest.approx(0.5 + 1 / 3 + 2)


def test_ci_is_conservative_for_correlated_estimates():
    # two estimates of x with correlated errors; CI with the reported
    # covariances must bound the true fused error covariance
    rng = np.random.default_rng(9)
    P1, P2 = np.diag([1.0, 4.0]), np.diag([3.0, 0.5])
    L = np.linalg.cholesky(np.block([[P1, 0.7 * np.sqrt(P1) @ np.sqrt(P2)],
                                     [0.7 * np.sqrt(P2) @ np.sqrt(P1), P2]]))
    Y1, Y2 = np.linalg.inv(P1), np.linalg.inv(P2)
    w = optimize_weights([Y1, Y2])
    Yf = w[0] * Y1 + w[1] * Y2
    Pf = np.linalg.inv(Yf)
    errs = []
    for _ in range(20_000):
        e = L @ rng.standard_normal(4)
        errs.append(Pf @ (w[0] * Y1 @ e[:2] + w[1] * Y2 @ e[2:]))
    errs = np.array(errs)
    mse = errs.T @ errs / len(errs)
    gap = np.linalg.eigvalsh(Pf - mse)
    assert gap[0] >= -0.05 * np.trace(Pf)


def test_trace_objective_supported(rng):
    Ys = [random_spd(rng, 3) for _ in range(3)]
    w = optimize_weights(Ys, CIObjective.TRACE)
    f = objective(Ys, w, "trace")
    assert all(f <= objective(Ys, g, "trace") + 1e-10 for g in simplex_grid(3, 0.05))
