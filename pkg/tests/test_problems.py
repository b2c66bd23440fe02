import math

import numpy as np
import pytest
from oracles import fd_grad, logistic_per_sample_grad, penlog_per_sample_grad, rel_err

import fedpd_lab as fl
from fedpd_lab.problems import (
    Chain,
    ChainSpec,
    LinearRegression,
    Logistic,
    PenalizedLogistic,
    Problem,
    QuadraticPair,
    Shard,
    chain_problem,
    phi,
    phi_prime,
    phi_second,
    psi,
    psi_prime,
    quadratic_pair_problem,
)

RNG = np.random.default_rng(20240811)


def small_data_problem(family, n_agents=3, m=25, d=6, seed=5):
    return fl.gen_weak_noniid(n_agents, m, d, seed, family=family)


def all_test_problems():
    spec = ChainSpec(8, 4, 0.01, 27 * math.pi)
    probs = [
        small_data_problem("penalized_logistic"),
        small_data_problem("logistic"),
        quadratic_pair_problem(dim=3),
        chain_problem(spec),
    ]
    shards = [Shard(RNG.standard_normal((20, 6)), RNG.standard_normal(20))]
    probs.append(Problem(LinearRegression(), shards, 6, 1, lipschitz=10.0))
    return probs


# --- values frozen from direct evaluation of the loss formulas


def test_penalized_logistic_at_origin():
    sh = Shard(np.array([[0.3, -0.7]]), np.array([1.0]))
    fam = PenalizedLogistic(alpha=1.0, beta=0.1)
    assert fam.loss(sh, np.zeros(2)) == pytest.approx(math.log(2.0), abs=1e-15)


def test_penalized_logistic_unit_coordinate():
    # zero features kill the data term; penalty contributes beta * 1/(1+1)
    sh = Shard(np.array([[0.0, 0.0]]), np.array([1.0]))
    fam = PenalizedLogistic(alpha=1.0, beta=0.1)
    x = np.array([1.0, 0.0])
    assert fam.loss(sh, x) == pytest.approx(math.log(2.0) + 0.05, abs=1e-15)


def test_generator_defaults_match_experiment_setup():
    prob = fl.gen_weak_noniid(3, 4, 2, seed=0)
    assert isinstance(prob.family, PenalizedLogistic)
    assert prob.family.alpha == 1.0
    assert prob.family.beta == 0.1


def test_quadratic_pair_grads():
    prob = quadratic_pair_problem(dim=1)
    assert prob.grad(0, np.array([3.0]))[0] == 3.0
    assert prob.grad(1, np.array([3.0]))[0] == -3.0
    for x in RNG.standard_normal((5, 1)):
        assert np.all(prob.mean_grad(x) == 0.0)


# --- gradient consistency against finite differences


@pytest.mark.parametrize("problem", all_test_problems(), ids=lambda p: p.name or p.family.kind)
def test_grad_matches_finite_differences(problem):
    for _ in range(100 // problem.n_agents + 1):
        agent = int(RNG.integers(problem.n_agents))
        x = RNG.standard_normal(problem.dim)
        if isinstance(problem.family, Chain):
            # keep off the measure-zero kink set
            x[np.abs(x) < 1e-3] += 0.01
        g = problem.grad(agent, x)
        ref = fd_grad(lambda y: problem.loss(agent, y), x)
        assert rel_err(g, ref) <= 1e-5


def test_input_validation():
    prob = small_data_problem("logistic")
    with pytest.raises(ValueError, match="dimension"):
        prob.loss(0, np.zeros(3))
    with pytest.raises(ValueError, match="finite"):
        prob.grad(0, np.array([np.nan] * prob.dim))
    with pytest.raises(ValueError):
        prob.loss(7, np.zeros(prob.dim))
    with pytest.raises(ValueError, match="batch"):
        prob.stoch_grad(0, np.zeros(prob.dim), [])


def test_classification_labels_validated():
    with pytest.raises(fl.ConfigError, match="labels"):
        Problem(Logistic(), [Shard(np.eye(2), np.array([0.5, 1.0]))], 2, 1, 1.0)


# --- stochastic gradients


@pytest.mark.parametrize("family", ["penalized_logistic", "logistic"])
def test_stoch_grad_full_batch_is_exact(family):
    prob = small_data_problem(family)
    x = RNG.standard_normal(prob.dim)
    full = np.arange(prob.n_samples(1))
    assert np.array_equal(prob.stoch_grad(1, x, full), prob.grad(1, x))


def test_stoch_grad_singleton_matches_hand_formula():
    prob = small_data_problem("logistic")
    sh = prob.shards[0]
    x = RNG.standard_normal(prob.dim)
    for k in (0, 3, 11):
        got = prob.stoch_grad(0, x, [k])
        ref = logistic_per_sample_grad(sh.features[k], sh.labels[k], x)
        assert np.allclose(got, ref, rtol=1e-12, atol=1e-14)

    prob2 = small_data_problem("penalized_logistic")
    sh2 = prob2.shards[0]
    for k in (1, 7):
        got = prob2.stoch_grad(0, x, [k])
        ref = penlog_per_sample_grad(sh2.features[k], sh2.labels[k], x,
                                     prob2.family.alpha, prob2.family.beta)
        assert np.allclose(got, ref, rtol=1e-12, atol=1e-14)


def test_stoch_grad_monte_carlo_unbiased():
    prob = small_data_problem("penalized_logistic", n_agents=1, m=40)
    x = RNG.standard_normal(prob.dim) * 0.5
    exact = prob.grad(0, x)
    rng = np.random.default_rng(99)
    draws = np.stack([
        prob.stoch_grad(0, x, rng.integers(0, 40, size=1)) for _ in range(10_000)
    ])
    mean = draws.mean(axis=0)
    se = draws.std(axis=0, ddof=1) / math.sqrt(draws.shape[0])
    assert np.all(np.abs(mean - exact) <= 3.0 * se + 1e-12)


# --- chain component functions


def test_psi_phi_reference_points():
    assert psi(-1.0) == 0.0
    assert psi_prime(-1.0) == 0.0
    assert psi_prime(0.0) == 0.0
    assert float(phi(0.0)) == pytest.approx(2.0 * math.pi, abs=1e-15)
    gate = float(psi(1.0) * phi_prime(0.5))
    assert gate == pytest.approx((1.0 - math.exp(-1.0)) * 3.2, abs=1e-14)
    assert gate > 1.0


def test_chain_grad_at_origin():
    spec = ChainSpec(8, 4, 0.01, 27 * math.pi)
    fam = chain_problem(spec).family
    expected = 4.0 * (1.0 - math.exp(-1.0))
    for agent in range(4):
        g = fam._g_grad(agent, np.zeros(spec.dim))
        assert abs(g[0]) == pytest.approx(expected, abs=1e-14)
        assert np.all(g[1:] == 0.0)


def test_chain_exact_zero_outside_support():
    spec = ChainSpec(12, 4, 0.01, 27 * math.pi)
    prob = chain_problem(spec)
    x = np.zeros(spec.dim)
    x[:4] = RNG.standard_normal(4) + 0.5
    for agent in range(4):
        g = prob.grad(agent, x)
        # coordinates beyond the active block plus one neighbor stay exact zeros
        assert np.all(g[5:] == 0.0)


def test_chain_scaling_relation():
    # grad f = sqrt(2 eps) * grad g evaluated at x * L / (pi sqrt(2 eps))
    spec = ChainSpec(8, 2, 0.05, 10.0)
    prob = chain_problem(spec)
    fam = prob.family
    x = RNG.standard_normal(spec.dim)
    scale = spec.lipschitz / (math.pi * math.sqrt(2 * spec.eps))
    for agent in range(2):
        ref = math.sqrt(2 * spec.eps) * fam._g_grad(agent, scale * x)
        assert np.allclose(prob.grad(agent, x), ref, rtol=1e-13, atol=1e-15)


def test_chain_bounds_probe_clean():
    rep = fl.chain_bounds_probe(10_000, seed=7)
    assert rep.violations == 0
    assert rep.min_gate_product > 1.0


def test_chain_lower_boundedness():
    spec = ChainSpec(8, 4, 0.01, 27 * math.pi)
    fam = chain_problem(spec).family
    allowed = 5.0 * math.pi * spec.length / spec.n_agents
    U = RNG.standard_normal((100_000, spec.dim)) * 3.0
    for agent in range(4):
        drop = fam._g_value(agent, np.zeros(spec.dim)) - fam.g_value_batch(agent, U).min()
        assert drop <= allowed
    drop, bound = fl.chain_value_range_probe(spec, 100_000, seed=11)
    assert drop <= bound


def test_chain_gradient_floor():
    spec = ChainSpec(8, 4, 0.01, 27 * math.pi)
    prob = chain_problem(spec)
    floor = math.sqrt(2 * spec.eps) / spec.n_agents
    scale = spec.lipschitz / (math.pi * math.sqrt(2 * spec.eps))
    for _ in range(50):
        x = RNG.standard_normal(spec.dim) / scale
        u = scale * x
        if not np.any(np.abs(u[: spec.length]) < 1.0):
            k = int(RNG.integers(spec.length))
            x[k] = 0.5 / scale
        g = prob.mean_grad(x)
        assert float(np.linalg.norm(g)) > floor


def test_chain_sgd_pseudo_samples():
    spec = ChainSpec(8, 4, 0.01, 27 * math.pi)
    prob = chain_problem(spec)
    x = RNG.standard_normal(spec.dim)
    full = np.arange(prob.sgd_pool(0))
    assert np.array_equal(prob.stoch_grad(0, x, full), prob.grad(0, x))
    single = prob.stoch_grad(0, x, [2])
    # scaled copy of the exact gradient: support is unchanged
    assert np.array_equal(single == 0.0, prob.grad(0, x) == 0.0)


def test_chain_spec_validation():
    with pytest.raises(fl.ConfigError):
        ChainSpec(9, 4, 0.01, 1.0)
    with pytest.raises(fl.ConfigError):
        ChainSpec(4, 8, 0.01, 1.0)
    with pytest.raises(fl.ConfigError):
        ChainSpec(8, 4, -0.01, 1.0)


def test_quadratic_pair_agent_count():
    with pytest.raises(fl.ConfigError):
        QuadraticPair(3)
