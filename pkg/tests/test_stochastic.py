import math

import numpy as np
import pytest
import scipy.sparse as sp

from kmeanslab.batch import lloyd_run
from kmeanslab.core import Centroids, KMeansError, delta, means, nearest_active, squared_distances, voronoi_cost
from kmeanslab.dataset import Dataset
from kmeanslab.seeding import seed_buckshot, seed_random
from kmeanslab.stochastic import (
    LearningRatePolicy,
    StochasticConfig,
    run,
    step,
    update_probability,
    verify_bbs_running_average,
)

FLAT_HALF = LearningRatePolicy("flat", c_prime=0.5, t0=0.0)  # eta = 0.5 at t = 1
UNIT = LearningRatePolicy("flat", c_prime=1.0, t0=0.5)       # eta = 1 / 1.5 at t = 1


def test_flat_guard():
    with pytest.raises(KMeansError):
        LearningRatePolicy("flat", c_prime=4.0, t0=3.0)
    with pytest.raises(KMeansError):
        LearningRatePolicy("flat", c_prime=0.0, t0=3.0)
    with pytest.raises(KMeansError):
        LearningRatePolicy("adagrad")
    LearningRatePolicy("flat", c_prime=3.999, t0=3.0)


def test_policy_labels():
    assert LearningRatePolicy("bbs").label == "bbs"
    assert LearningRatePolicy("flat", 2.0, 3.0).label == "flat_c2_t3"


def test_flat_rate_in_unit_interval():
    p = LearningRatePolicy("flat", 2.0, 3.0)
    for t in range(1, 500):
        eta, _ = p.rates(t, np.array([1]), None)
        assert 0 < eta[0] < 1


def test_single_sample_midpoint():
    ds = Dataset(np.array([[4.0, 0.0], [100.0, 100.0]]))
    C0 = Centroids(np.array([[0.0, 0.0], [90.0, 90.0]]))
    cfg = StochasticConfig(m=1, policy=FLAT_HALF)
    C1, stats = step(ds, C0, cfg, 1, np.random.default_rng(0), batch=[0])
    np.testing.assert_array_equal(C1.centers[0], [2.0, 0.0])
    np.testing.assert_array_equal(C1.centers[1], C0.centers[1])
    assert stats.n_hat.tolist() == [1, 0]
    assert math.isnan(stats.eta[1])


def test_full_batch_bbs_is_one_lloyd_step(planted3):
    ds = planted3[0]
    C0 = seed_random(ds, 3, np.random.default_rng(2))
    cfg = StochasticConfig(m=ds.n, policy=LearningRatePolicy("bbs"))
    C1, _ = step(ds, C0, cfg, 1, None, batch=np.arange(ds.n))
    lloyd = lloyd_run(ds, C0, max_iters=1).final_centroids
    np.testing.assert_allclose(C1.centers, lloyd.centers, rtol=1e-12, atol=1e-12)


def test_step_sparse_matches_dense(rng):
    X = rng.standard_normal((50, 6))
    X[rng.random(X.shape) < 0.5] = 0
    C0 = Centroids(rng.standard_normal((3, 6)))
    cfg = StochasticConfig(m=10, policy=LearningRatePolicy("flat", 2.0, 3.0))
    a, _ = step(Dataset(X), C0, cfg, 1, np.random.default_rng(1))
    b, _ = step(Dataset(sp.csr_matrix(X)), C0, cfg, 1, np.random.default_rng(1))
    np.testing.assert_allclose(a.centers, b.centers, rtol=1e-12, atol=1e-14)


def test_step_rejects_t0():
    ds = Dataset(np.zeros((2, 1)))
    with pytest.raises(KMeansError):
        step(ds, Centroids(np.zeros((1, 1))), StochasticConfig(), 0, np.random.default_rng(0))


def test_run_determinism(planted3):
    ds = planted3[0]
    C0 = seed_random(ds, 3, np.random.default_rng(0))
    cfg = StochasticConfig(m=10, policy=LearningRatePolicy("flat", 2.0, 3.0), max_iters=5, seed=77)
    Ca, ta = run(ds, C0, cfg)
    Cb, tb = run(ds, C0, cfg)
    assert Ca.equals(Cb)
    assert ta.to_csv() == tb.to_csv()


def test_run_zero_iterations(planted2):
    ds = planted2[0]
    C0 = seed_random(ds, 2, np.random.default_rng(0))
    C, trace = run(ds, C0, StochasticConfig(max_iters=0))
    assert C.equals(C0) and len(trace) == 0


def test_bbs_online_single_cluster_is_running_mean(rng):
    X = rng.standard_normal((30, 3))
    ds = Dataset(X)
    C0 = Centroids(np.full((1, 3), 50.0))
    cfg = StochasticConfig(m=1, policy=LearningRatePolicy("bbs"), max_iters=40, seed=5, tol=None)
    C, trace = run(ds, C0, cfg)
    drawn = np.random.default_rng(5).integers(0, 30, size=40)
    np.testing.assert_allclose(C.centers[0], X[drawn].mean(axis=0), rtol=1e-12, atol=1e-13)
    assert len(trace) == 40


def test_run_on_planted_regression(planted3):
    ds, _, A, Cstar = planted3
    C0 = seed_buckshot(ds, 3, 30, np.random.default_rng(1))
    cfg = StochasticConfig(m=100, policy=LearningRatePolicy("flat", 2.0, 3.0), max_iters=200,
                           seed=1, reference=(Cstar, A), tol=None)
    C, trace = run(ds, C0, cfg)
    assert trace.delta[-1] < trace.delta0
    phi_star = voronoi_cost(ds, Cstar)
    assert voronoi_cost(ds, C) <= 1.05 * phi_star
    assert np.all(trace.phi_array() >= 0)


def test_cost_eval_period(planted2):
    ds = planted2[0]
    C0 = seed_random(ds, 2, np.random.default_rng(0))
    cfg = StochasticConfig(m=5, max_iters=9, cost_eval_every=3, tol=None,
                           policy=LearningRatePolicy("flat", 2.0, 3.0))
    _, trace = run(ds, C0, cfg)
    phi = trace.phi_array()
    assert np.isnan(phi[[0, 1, 3, 4, 6, 7]]).all()
    assert not np.isnan(phi[[2, 5, 8]]).any()
    assert trace.to_csv().splitlines()[1].split(",")[1] == ""


def test_convergence_stop(planted2):
    ds, _, A = planted2
    Cstar = means(ds, A)
    cfg = StochasticConfig(m=ds.n, policy=LearningRatePolicy("bbs"), max_iters=500, tol=1e-6, window=3)
    _, trace = run(ds, Cstar, cfg)
    assert trace.stopped_reason == "converged"
    assert len(trace) < 500


def test_convexity_and_untouched_centers(planted3):
    ds = planted3[0]
    r = np.random.default_rng(6)
    C = Centroids(r.uniform(-50, 150, size=(3, 2)))
    cfg = StochasticConfig(m=4, policy=LearningRatePolicy("flat", 2.0, 3.0))
    for t in range(1, 60):
        C_next, stats = step(ds, C, cfg, t, r)
        for k in range(3):
            if stats.n_hat[k] == 0:
                assert np.array_equal(C_next.centers[k], C.centers[k])
                continue
            c_hat = ds.rows(stats.indices[stats.labels == k]).mean(axis=0)
            seg = c_hat - C.centers[k]
            lam = np.dot(C_next.centers[k] - C.centers[k], seg) / np.dot(seg, seg)
            assert -1e-12 <= lam <= 1 + 1e-12
            np.testing.assert_allclose(C.centers[k] + lam * seg, C_next.centers[k], atol=1e-9)
        C = C_next


def test_verify_bbs_examples():
    C0 = Centroids(np.array([[0.0]]))
    batches = [([[1.0]], [0]), ([[3.0]], [0]), ([[5.0]], [0])]
    assert verify_bbs_running_average(C0, batches) == 0.0


def test_verify_bbs_two_sides_and_empty_batch():
    C0 = Centroids(np.array([[-100.0, 0.0], [100.0, 0.0]]))
    r = np.random.default_rng(1)
    batches = []
    for t in range(30):
        left = r.normal([-100, 0], 1, size=(int(r.integers(0, 3)), 2))
        right = r.normal([100, 0], 1, size=(0 if t % 5 == 0 else 2, 2))
        batches.append((np.vstack([left, right]), [0] * len(left) + [1] * len(right)))
    assert verify_bbs_running_average(C0, batches) <= 1e-10 * 100


def test_verify_bbs_membership_violation():
    C0 = Centroids(np.array([[0.0], [10.0]]))
    with pytest.raises(KMeansError, match="nearest"):
        verify_bbs_running_average(C0, [([[9.0]], [0])])


def test_update_probability_examples():
    assert update_probability(0, 10, 5) == 0.0
    assert update_probability(10, 10, 3) == 1.0
    assert update_probability(25, 100, 4) == 0.68359375
    with pytest.raises(KMeansError):
        update_probability(11, 10, 1)


def test_update_probability_monte_carlo():
    r = np.random.default_rng(0)
    trials = 200_000
    draws = r.integers(0, 100, size=(trials, 4))
    freq = np.mean((draws < 25).any(axis=1))
    p = update_probability(25, 100, 4)
    assert abs(freq - p) <= 3 * math.sqrt(p * (1 - p) / trials)


def test_frozen_center_update_frequency():
    """With centers held fixed, cluster hits follow the update probability."""
    X = np.concatenate([np.zeros(20), np.full(60, 10.0), np.full(20, 20.0)])[:, None]
    ds = Dataset(X)
    C = Centroids(np.array([[0.0], [10.0], [20.0]]))
    cfg = StochasticConfig(m=3, policy=LearningRatePolicy("bbs"))
    r = np.random.default_rng(3)
    steps = 10_000
    hits = np.zeros(3)
    for t in range(1, steps + 1):
        _, stats = step(ds, C, cfg, t, r)
        hits += stats.n_hat > 0
    for k, n_r in enumerate([20, 60, 20]):
        p = update_probability(n_r, 100, 3)
        assert abs(hits[k] / steps - p) <= 3 * math.sqrt(p * (1 - p) / steps)


def test_reference_delta_tracked(planted2):
    ds, _, A = planted2
    Cstar = means(ds, A)
    C0 = seed_random(ds, 2, np.random.default_rng(4))
    cfg = StochasticConfig(m=10, max_iters=3, reference=(Cstar, A), tol=None,
                           policy=LearningRatePolicy("flat", 2.0, 3.0))
    C, trace = run(ds, C0, cfg)
    assert trace.delta0 == delta(C0, Cstar, A.sizes).value
    assert trace.delta[-1] == delta(C, Cstar, A.sizes).value


def test_assignment_uses_lowest_index_tie():
    ds = Dataset(np.array([[5.0]]))
    C0 = Centroids(np.array([[0.0], [10.0]]))
    labels, _ = nearest_active(squared_distances(ds, C0.centers), C0.active)
    _, stats = step(ds, C0, StochasticConfig(policy=UNIT), 1, None, batch=[0])
    assert stats.labels.tolist() == labels.tolist() == [0]
