"""수락 기준: 이론 인증서, 에폭 축약, 선형 수렴, 퇴화 동등성, 기준 알고리즘 대비"""
import time

import numpy as np
import pytest
from scipy.stats import linregress

from analysis import (TheoryParams, certify_rate, check_rate_conditions, epoch_contraction,
                      max_step_size, period_floor, sampling_rate_bound)
from baselines import BaselineConfig, run_dgd, run_gradient_tracking
from engine import EngineConfig, initialize, run, step, theory_params
from metrics_recorder import average_records, records_to_frame
from problems import FiniteSumProblem, generate_problem
from topology import Graph, make_graph, metropolis_weights, spectral_gap, validate_mixing

pytestmark = pytest.mark.slow


def _compliant_draw(rng) -> TheoryParams:
    sigma = rng.uniform(0.0, 0.95)
    L = rng.uniform(1.0, 50.0)
    mu = L / rng.uniform(1.0, 100.0)
    M1 = rng.uniform(0.05, 1.0)
    M2 = M1 * rng.uniform(1.0, 10.0)
    base = TheoryParams(alpha=1.0, T=1, B=0.0, L=L, mu=mu, sigma=sigma, M1=M1, M2=M2)
    alpha = rng.uniform(0.001, 1.0) * max_step_size(L, mu, sigma, M1, M2)
    B = rng.uniform(0.0, 1.0) * sampling_rate_bound(base)
    params = TheoryParams(alpha=alpha, T=1, B=B, L=L, mu=mu, sigma=sigma, M1=M1, M2=M2)
    params.T = period_floor(params) + int(rng.integers(0, 1000))
    return params


def test_certificate_sweep():
    rng = np.random.default_rng(2024)
    draws = [_compliant_draw(rng) for _ in range(1000)]
    started = time.perf_counter()
    failures = []
    for params in draws:
        cert = certify_rate(params)
        assert cert.gate.passed
        if not cert.passed:
            failures.append(params)
    assert not failures
    assert time.perf_counter() - started < 10.0


def test_epoch_contraction_on_well_conditioned_quadratic():
    base = generate_problem('quadratic', n=3, m=20, d=2, seed=11)
    top = max(float(np.max(np.sum(a ** 2, axis=1))) for a in base.features)
    problem = FiniteSumProblem('quadratic', base.features, base.targets, regularizer=10.0 * top)
    mixing = metropolis_weights(make_graph('complete', 3))

    L, mu = problem.smoothness_constants()
    assert L / mu <= 1.1
    assert mixing.sigma == pytest.approx(0.0, abs=1e-12)

    base = theory_params(problem, mixing, EngineConfig(alpha=1.0, T=1, batch_sizes=[18] * 3))
    base.alpha = max_step_size(L, mu, base.sigma, 1.0, 1.0)
    T = period_floor(base)
    base.T = T
    assert check_rate_conditions(base).passed

    runs = []
    for seed in range(5):
        config = EngineConfig(alpha=base.alpha, T=T, batch_sizes=[18] * 3, seed=seed, max_iter=5 * T,
                              log_every=0, diagnostics=True)
        result = run(problem, mixing, config)
        assert result.transcript.diagnostics_max['avg_preservation'] <= 1e-10
        runs.append(result.records)

    averaged = average_records(runs)
    epochs = epoch_contraction(records_to_frame(averaged), T, base.q, floor=1e-24)
    assert len(epochs.ratios) == 5
    assert epochs.numeric_ratios()
    assert all(ratio <= 0.9 for ratio in epochs.numeric_ratios())


def test_logistic_ring_converges_geometrically():
    problem = generate_problem('l2_logistic', n=5, m=200, d=5, seed=7, regularizer=0.5)
    mixing = metropolis_weights(make_graph('ring', 5))
    L, _ = problem.smoothness_constants()
    config = EngineConfig(alpha=0.1 / L, T=100, batch_sizes=[4] * 5, seed=1, max_iter=50000,
                          gap_target=1e-11, diagnostics=True, log_every=0)
    result = run(problem, mixing, config)

    last = result.records[-1]
    assert result.stop_reason == 'gap_target'
    assert last.opt_gap_raw <= 1e-10 and last.consensus_err <= 1e-10
    assert result.transcript.diagnostics_max['avg_preservation'] <= 1e-10

    gaps = np.array([r.opt_gap_raw for r in result.records])
    ks = np.array([r.k for r in result.records], dtype=float)
    tail = slice(len(gaps) // 5, None)
    positive = gaps[tail] > 0
    fit = linregress(ks[tail][positive], np.log(gaps[tail][positive]))
    assert fit.slope < 0
    assert fit.rvalue ** 2 >= 0.98


@pytest.mark.parametrize('seed', range(5))
def test_full_batch_identity_matches_gradient_tracking(seed):
    problem = generate_problem('quadratic', n=4, m=8, d=3, seed=100 + seed, regularizer=0.1)
    mixing = metropolis_weights(make_graph('erdos_renyi', 4, p=0.7, seed=seed))
    config = EngineConfig(alpha=0.02, T=7, batch_sizes=list(problem.m), strategy='identity', seed=seed,
                          max_iter=500, record_iterates=True, log_every=0)
    engine_result = run(problem, mixing, config)
    baseline = run_gradient_tracking(problem, mixing,
                                     BaselineConfig(method='gradient_tracking', alpha=0.02, K=500,
                                                    record_history=True))
    assert len(engine_result.transcript.iterates) == len(baseline.x_history) == 501
    for X_engine, X_baseline in zip(engine_result.transcript.iterates, baseline.x_history):
        np.testing.assert_array_equal(X_engine, X_baseline)


def test_dgd_plateaus_while_tracking_is_exact():
    problem = generate_problem('quadratic', n=5, m=10, d=3, seed=21, regularizer=0.5, heterogeneity=5.0)
    mixing = metropolis_weights(make_graph('ring', 5))

    dgd = run_dgd(problem, mixing, BaselineConfig(method='dgd', alpha=0.05, K=5000))
    assert min(r.opt_gap_raw for r in dgd.records[-1000:]) >= 1e-6

    config = EngineConfig(alpha=0.02, T=20, batch_sizes=[5] * 5, strategy='clipped_secant', M1=0.5, M2=2.0,
                          seed=3, max_iter=30000, gap_target=1e-11, diagnostics=True, log_every=0)
    result = run(problem, mixing, config)
    assert result.records[-1].opt_gap_raw <= 1e-10
    assert result.transcript.diagnostics_max['avg_preservation'] <= 1e-10


def test_topology_reference_values():
    assert spectral_gap(metropolis_weights(make_graph('ring', 4))) == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert spectral_gap(metropolis_weights(make_graph('complete', 6))) == pytest.approx(0.0, abs=1e-12)
    for kind, kwargs in (('ring', {}), ('star', {}), ('complete', {}),
                         ('erdos_renyi', {'p': 0.4, 'seed': 5}), ('grid', {'rows': 2, 'cols': 4})):
        graph = make_graph(kind, 8, **kwargs)
        assert validate_mixing(metropolis_weights(graph).W, graph).passed

    identity = validate_mixing(np.eye(2), Graph(n=2, edges=frozenset({(0, 1)})))
    assert 'null_space' in identity.failures()
    asymmetric = validate_mixing(np.array([[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.25, 0.0, 0.75]]))
    assert not asymmetric.passed
    assert 'symmetry' in asymmetric.failures()


def test_gradient_evaluation_formula():
    rng = np.random.default_rng(99)
    for _ in range(20):
        m = int(rng.integers(2, 30))
        b = int(rng.integers(1, m + 1))
        T = int(rng.integers(1, 16))
        k = int(rng.integers(0, 41))
        problem = generate_problem('quadratic', n=2, m=m, d=2, seed=int(rng.integers(1000)), regularizer=0.1)
        mixing = metropolis_weights(make_graph('complete', 2))
        config = EngineConfig(alpha=0.01, T=T, batch_sizes=[b, b])
        network = initialize(problem, mixing, config)
        for _ in range(k):
            network = step(network, problem, mixing, config)
        expected = m + b * k + m * (k // T)
        assert [node.grad_evals for node in network.nodes] == [expected, expected]
