import math

import numpy as np
import pytest

from fedadp import aggregation, models
from fedadp.aggregation import fedadp_weights, fedavg_weights
from fedadp.data import NodePartition, NodeSpec, PartitionPlan, generate_synthetic_split, parse_shorthand, partition
from fedadp.engine import (
    FederatedEngine,
    TrainConfig,
    global_gradient,
    local_sgd,
    local_update,
    recover_gradients,
    run_experiment,
)
from fedadp.models import ModelSpec


@pytest.fixture(scope="module")
def small():
    train, test = generate_synthetic_split(1200, 400, 6, 4, seed=2)
    return train, test, ModelSpec("MLR", 6, 4)


def cfg(**kw):
    base = dict(rounds=5, batch_size=10, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_config_validation():
    for bad in (dict(eta0=0), dict(decay=1.5), dict(decay=0), dict(local_epochs=0),
                dict(batch_size=0), dict(rounds=0), dict(alpha=0), dict(strategy="FedProx")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_learning_rate_schedule():
    c = TrainConfig(eta0=0.01, decay=0.995)
    assert c.eta(1) == 0.01
    for t in range(2, 300):
        assert c.eta(t) / c.eta(t - 1) == pytest.approx(0.995, rel=1e-14)


def test_single_full_batch_step_is_gradient(small):
    train, _, spec = small
    part = NodePartition(0, train, np.arange(40))
    w = np.random.default_rng(0).normal(size=spec.num_params)
    delta = local_update(spec, w, part, 0.05, 1, 40, round_seed=9)
    g = models.gradient(spec, w, part.as_batch())
    np.testing.assert_allclose(delta, -0.05 * g, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(recover_gradients([delta], 0.05)[0], g, rtol=0, atol=1e-12)


def test_zero_gradient_zero_delta():
    spec = ModelSpec("MLR", 2, 2)
    from fedadp.data import Dataset
    ds = Dataset(np.array([[1.0, 0.0]] * 4), np.ones(4, dtype=int), 2)
    w = np.zeros(spec.num_params)
    w[1] = 1000.0
    delta = local_update(spec, w, NodePartition(0, ds, np.arange(4)), 0.1, 3, 2, 0)
    assert not delta.any()


def test_step_count(small):
    train, _, spec = small
    part = NodePartition(0, train, np.arange(600))
    _, steps = local_sgd(spec, np.zeros(spec.num_params), part, 0.01, 1, 50, [0])
    assert steps == 12
    _, steps = local_sgd(spec, np.zeros(spec.num_params), NodePartition(0, train, np.arange(7)), 0.01, 2, 3, [0, 1])
    assert steps == 6


def test_recover_gradients():
    g = np.array([0.3, -4.0])
    assert np.array_equal(recover_gradients([-0.5 * g], 0.5)[0], g)
    assert not recover_gradients([np.zeros(3)], 0.1)[0].any()
    np.testing.assert_allclose(recover_gradients([np.array([-0.02, 0.01])], 0.01)[0], [2.0, -1.0], rtol=1e-15)


def test_global_gradient():
    g = np.array([1.0, -2.0])
    assert not global_gradient([g, -g], [5, 5]).any()
    assert np.array_equal(global_gradient([g], [17]), g)
    assert global_gradient([np.array([1.0, 0]), np.array([0, 1.0])], [600, 600]).tolist() == [0.5, 0.5]


def test_two_node_hand_geometry():
    eta = 0.01
    deltas = [-eta * np.array([1.0, 0.0]), -eta * np.array([0.0, 1.0])]
    grads = recover_gradients(deltas, eta)
    glob = global_gradient(grads, [600, 600])
    thetas = [aggregation.instantaneous_angle(glob, g) for g in grads]
    assert thetas[0] == pytest.approx(math.pi / 4, abs=1e-12)
    assert thetas[0] == thetas[1]
    assert fedadp_weights(thetas, [600, 600]).weights.tolist() == [0.5, 0.5]


def test_fedavg_round_uniform_weights(small):
    train, test, spec = small
    eng = FederatedEngine(spec, partition(train, parse_shorthand("4IID", 200, 1)), cfg(strategy="FedAvg"), test)
    rec = eng.run_round(1)
    assert rec.weights.tolist() == [0.25] * 4
    with pytest.raises(ValueError):
        eng.run_round(6)


def test_round_update_identity_and_invariants(small):
    train, test, spec = small
    plan = parse_shorthand("2IID+2NonIID(1)", 200, 4)
    eng = FederatedEngine(spec, partition(train, plan), cfg(strategy="FedAdp"), test)
    for t in range(1, 6):
        w_prev = eng.w.copy()
        rec = eng.run_round(t)
        deltas = [s.last_delta for s in eng.states]
        expected = sum(psi * d for psi, d in zip(rec.weights, deltas))
        np.testing.assert_allclose(eng.w - w_prev, expected, rtol=0, atol=1e-12)
        assert abs(rec.weights.sum() - 1) <= 1e-9 and np.all(rec.weights >= 0)
        assert rec.chebyshev_lhs >= rec.chebyshev_rhs - 1e-9
        assert np.all((rec.smoothed_angles >= 0) & (rec.smoothed_angles <= math.pi))
        # triangle inequality: the global gradient is a convex mix of node gradients
        assert rec.empirical_A <= rec.empirical_B and rec.empirical_B >= 1 - 1e-12
        assert all(s.participation_count == t for s in eng.states)


def test_identical_nodes_get_uniform_fedadp_weights(small):
    train, test, spec = small
    sub = NodePartition(0, train, np.arange(100))
    parts = [NodePartition(i, train, sub.indices.copy()) for i in range(5)]
    eng = FederatedEngine(spec, parts, cfg(strategy="FedAdp", shared_shuffle=True), test)
    for t in range(1, 6):
        assert eng.run_round(t).weights.tolist() == [0.2] * 5


def test_degenerate_round_uses_neutral_angle():
    spec = ModelSpec("MLR", 2, 2)
    from fedadp.data import Dataset
    ds = Dataset(np.array([[1.0, 0.0]] * 4), np.ones(4, dtype=int), 2)
    parts = [NodePartition(i, ds, np.arange(4)) for i in range(2)]
    eng = FederatedEngine(spec, parts, cfg(strategy="FedAdp"), None)
    eng.w[1] = 1000.0  # already perfect: every delta is exactly zero
    rec = eng.run_round(1)
    assert rec.instantaneous_angles.tolist() == [math.pi / 2] * 2
    assert math.isnan(rec.empirical_A) and rec.divergence == 0.0
    assert rec.weights.tolist() == [0.5, 0.5]


def test_forced_fedavg_weights_through_fedadp_path(small):
    train, test, spec = small
    plan = PartitionPlan([NodeSpec(100), NodeSpec(250), NodeSpec(150, 1)], seed=8)

    def uniform_contribution(angles, sizes, alpha):
        return fedadp_weights([angles[0]] * len(angles), sizes, alpha)

    avg = run_experiment(train, plan, spec, cfg(strategy="FedAvg", rounds=8), test)
    adp = run_experiment(train, plan, spec, cfg(strategy="FedAdp", rounds=8), test,
                         weight_fn=uniform_contribution)
    for a, b in zip(avg.per_round, adp.per_round):
        assert a.weights.tobytes() == b.weights.tobytes()
        assert a.test_accuracy == b.test_accuracy and a.train_loss == b.train_loss


def test_partial_participation(small):
    train, test, spec = small
    plan = parse_shorthand("6IID", 100, 0)
    eng = FederatedEngine(spec, partition(train, plan), cfg(participation=3, rounds=6), test)
    seen = np.zeros(6, dtype=int)
    for t in range(1, 7):
        rec = eng.run_round(t)
        assert len(rec.participants) == 3
        assert np.count_nonzero(rec.weights) == 3
        assert abs(rec.weights.sum() - 1) < 1e-12
        seen[rec.participants] += 1
    assert [s.participation_count for s in eng.states] == seen.tolist()
    for s in eng.states:
        assert (s.smoothed_angle is None) == (s.participation_count == 0)


def test_experiment_determinism_and_threads(small):
    train, test, spec = small
    plan = parse_shorthand("3IID+3NonIID(1)", 150, 5)
    spec_mlp = ModelSpec("MLP", 6, 4, (8,))
    for s in (spec, spec_mlp):
        a = run_experiment(train, plan, s, cfg(rounds=4), test, targets=[0.5])
        b = run_experiment(train, plan, s, cfg(rounds=4), test, targets=[0.5], threads=4)
        for x, y in zip(a.per_round, b.per_round):
            assert x.weights.tobytes() == y.weights.tobytes()
            assert (x.test_accuracy, x.train_loss, x.divergence) == (y.test_accuracy, y.train_loss, y.divergence)
    one = run_experiment(train, plan, spec, cfg(rounds=1), test)
    assert len(one.per_round) == 1
