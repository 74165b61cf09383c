import json

import numpy as np
import pytest

from hybridci.fusion_ci import lyapunov, optimize_weights
from hybridci.gaussian import GaussianInfo, is_psd
from hybridci.hybrid_filter import (
    AgentState,
    ConsensusConfig,
    hybrid_consensus,
    hybrid_step,
    mhmc_only_step,
    pure_ci_step,
)
from hybridci.info_filter import ObservationModel, centralized_update, local_increment, predict
from hybridci.network import GraphSnapshot

from conftest import random_model, random_spd, static_model


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def ld_inv(Y):
    return -np.linalg.slogdet(Y)[1]


def point_obs(rng, n, i):
    obs = ObservationModel.point_sensor(n, i, rng.uniform(0.5, 2.0))
    return obs, rng.standard_normal(1)


def test_equal_priors_connected_pair_matches_centralized(rng):
    model = random_model(rng, 4)
    prior = GaussianInfo(rng.standard_normal(4), random_spd(rng, 4))
    obs = [point_obs(rng, 4, 0), point_obs(rng, 4, 2)]
    res = hybrid_step([prior, prior], model, obs, [GraphSnapshot.complete(2)])
    cen = centralized_update(predict(prior, model), [local_increment(*o) for o in obs])
    for post in res.posteriors:
        assert rel(post.info_mat, cen.info_mat) < 1e-6
        assert rel(post.info_vec, cen.info_vec) < 1e-6
    assert res.n_cg == [2, 2]


def test_isolated_agent_is_local_kalman_step(rng):
    model = random_model(rng, 3)
    prior = GaussianInfo(rng.standard_normal(3), random_spd(rng, 3))
    obs = point_obs(rng, 3, 1)
    local = centralized_update(predict(prior, model), [local_increment(*obs)])
    for step in (hybrid_step, pure_ci_step, mhmc_only_step):
        res = step([prior], model, [obs], [GraphSnapshot(1)])
        np.testing.assert_allclose(res.posteriors[0].info_mat, local.info_mat, rtol=1e-14)
        np.testing.assert_allclose(res.posteriors[0].info_vec, local.info_vec, rtol=1e-14)
        assert res.n_cg == [1]


def test_absent_observation_is_zero_increment(rng):
    model = static_model(2, 0.1)
    prior = GaussianInfo(np.zeros(2), np.eye(2))
    obs = [point_obs(rng, 2, 0), None]
    res = hybrid_step([prior, prior], model, obs, [GraphSnapshot.complete(2)])
    cen = centralized_update(predict(prior, model), [local_increment(*obs[0])])
    assert rel(res.posteriors[1].info_mat, cen.info_mat) < 1e-6


def test_hybrid_never_below_ci_at_the_same_weight():
    # the part of the ordering that follows from PSD algebra alone:
    # for any weight, prior fusion plus full increments dominates the CI bundle
    rng = np.random.default_rng(13)
    for _ in range(200):
        Y1, Y2 = random_spd(rng, 4), random_spd(rng, 4)
        h = [rng.standard_normal((1, 4)) for _ in range(2)]
        d1, d2 = (hh.T @ hh for hh in h)
        w = rng.uniform()
        hyb = w * Y1 + (1 - w) * Y2 + d1 + d2
        ci = w * (Y1 + d1) + (1 - w) * (Y2 + d2)
        assert is_psd(hyb - ci)


def test_known_counterexample_to_unconditional_ordering():
    # the prior-only CI weight can be a poor choice once the increments are
    # added; this pair shows the hybrid posterior is not always tighter than CI
    Y1, Y2 = np.diag([10.0, 0.1]), np.diag([0.1, 10.0])
    d1, d2 = np.diag([0.0, 1000.0]), np.zeros((2, 2))
    w = optimize_weights([Y1, Y2])
    hyb = ld_inv(w[0] * Y1 + w[1] * Y2 + d1 + d2)
    grid = np.linspace(0, 1, 1001)
    ci = min(ld_inv(t * (Y1 + d1) + (1 - t) * (Y2 + d2)) for t in grid)
    assert hyb > ci


def test_distinct_priors_pair_hybrid_tighter_than_ci():
    rng = np.random.default_rng(1)
    model = static_model(3)
    p1 = GaussianInfo(rng.standard_normal(3), random_spd(rng, 3) + np.eye(3))
    p2 = GaussianInfo(rng.standard_normal(3), random_spd(rng, 3) + np.eye(3))
    obs = [point_obs(rng, 3, 0), point_obs(rng, 3, 2)]
    g = [GraphSnapshot.complete(2)]
    hyb = hybrid_step([p1, p2], model, obs, g).posteriors
    ci = pure_ci_step([p1, p2], model, obs, g).posteriors
    for a, b in zip(hyb, ci):
        assert ld_inv(a.info_mat) <= ld_inv(b.info_mat) + 1e-9


def test_mhmc_only_matches_hybrid_under_equal_priors(rng):
    model = random_model(rng, 4)
    prior = GaussianInfo(rng.standard_normal(4), random_spd(rng, 4))
    obs = [point_obs(rng, 4, i) for i in range(3)]
    g = [GraphSnapshot.path(3)]
    mh = mhmc_only_step([prior] * 3, model, obs, g)
    hyb = hybrid_step([prior] * 3, model, obs, g)
    cen = centralized_update(predict(prior, model), [local_increment(*o) for o in obs])
    for a, b in zip(mh.posteriors, hyb.posteriors):
        assert rel(a.info_mat, cen.info_mat) < 1e-6
        assert ld_inv(a.info_mat) <= ld_inv(b.info_mat) + 1e-6


def test_mhmc_only_rejects_unequal_priors(rng):
    model = static_model(2)
    a = GaussianInfo(np.zeros(2), np.eye(2))
    b = GaussianInfo(np.zeros(2), 2 * np.eye(2))
    with pytest.raises(ValueError, match="identical priors"):
        mhmc_only_step([a, b], model, [None, None], [GraphSnapshot.complete(2)])


def test_pure_ci_identical_inputs_equal_local_step(rng):
    model = random_model(rng, 3)
    prior = GaussianInfo(rng.standard_normal(3), random_spd(rng, 3))
    obs = point_obs(rng, 3, 0)
    local = centralized_update(predict(prior, model), [local_increment(*obs)])
    res = pure_ci_step([prior] * 3, model, [obs] * 3, [GraphSnapshot.complete(3)])
    for post in res.posteriors:
        np.testing.assert_allclose(post.info_mat, local.info_mat, rtol=1e-12)


def test_disconnected_groups_count_their_own_members(rng):
    model = static_model(3, 0.1)
    prior = GaussianInfo.weak_prior(3, 1.0)
    obs = [point_obs(rng, 3, i % 3) for i in range(5)]
    g = GraphSnapshot(5, frozenset({(0, 1), (1, 2), (3, 4)}))
    res = hybrid_step([prior] * 5, model, obs, [g])
    assert res.n_cg == [3, 3, 3, 2, 2]
    group = centralized_update(predict(prior, model), [local_increment(*o) for o in obs[3:]])
    assert rel(res.posteriors[4].info_mat, group.info_mat) < 1e-6


def test_psd_and_lyapunov_hold_every_iteration():
    rng = np.random.default_rng(6)
    n = 4
    model = static_model(n)
    agents = [AgentState(i, p, p, local_increment(*point_obs(rng, n, i % n)), frozenset({i}))
              for i, p in enumerate(GaussianInfo(rng.standard_normal(n), random_spd(rng, n))
                                    for _ in range(5))]
    values = [lyapunov([a.consensus_prior.info_mat for a in agents])]

    def check(state):
        for a in state:
            assert is_psd(a.consensus_prior.info_mat)
            assert is_psd(a.consensus_inc.dI)
        values.append(lyapunov([a.consensus_prior.info_mat for a in state]))

    hybrid_consensus(agents, [GraphSnapshot.path(5)], ConsensusConfig(), on_iteration=check)
    assert all(b <= a + 1e-10 for a, b in zip(values, values[1:]))


def test_per_iteration_topology_and_trace(rng):
    model = static_model(2)
    prior = GaussianInfo.weak_prior(2, 1.0)
    records = []
    rounds = [GraphSnapshot(3, frozenset({(0, 1)})), GraphSnapshot.path(3)]
    res = hybrid_step([prior] * 3, model, [point_obs(rng, 2, 0)] * 3, rounds,
                      trace=records.append, step=4)
    assert res.n_cg == [3, 3, 3]
    first = [(r["src"], r["dst"]) for r in records if r["iter"] == 0]
    assert sorted(first) == [(0, 1), (1, 0)]
    later = [r for r in records if r["iter"] == 1]
    assert sorted((r["src"], r["dst"]) for r in later) == [(0, 1), (1, 0), (1, 2), (2, 1)]
    r = later[0]
    assert set(r) == {"k", "iter", "src", "dst", "agent_id", "y", "Y", "di", "dI", "ids"}
    assert r["k"] == 4
    json.dumps(r)


def test_deterministic_serialization(rng):
    model = random_model(rng, 3)
    priors = [GaussianInfo(rng.standard_normal(3), random_spd(rng, 3)) for _ in range(3)]
    obs = [point_obs(rng, 3, i) for i in range(3)]
    g = [GraphSnapshot.path(3)]
    a = hybrid_step(priors, model, obs, g).posteriors
    b = hybrid_step(priors, model, obs, g).posteriors
    assert all(x.info_mat.tobytes() == y.info_mat.tobytes() for x, y in zip(a, b))


def test_input_validation(rng):
    model = static_model(2)
    p = GaussianInfo.weak_prior(2)
    with pytest.raises(ValueError):
        hybrid_step([p, p], model, [None], [GraphSnapshot.complete(2)])
    with pytest.raises(ValueError):
        hybrid_step([p, p], model, [None, None], [])
    with pytest.raises(ValueError):
        hybrid_step([p, p], model, [None, None], [GraphSnapshot.complete(3)])
    with pytest.raises(ValueError):
        hybrid_step([GaussianInfo.weak_prior(3)], model, [None], [GraphSnapshot(1)])
    with pytest.raises(ValueError):
        ConsensusConfig(max_iters=0)
    with pytest.raises(ValueError):
        ConsensusConfig(tol=0.0)
