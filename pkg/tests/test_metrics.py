import numpy as np
import pytest
from oracles import brute_force_prefix_min

import fedpd_lab as fl
from fedpd_lab.metrics import TraceRow, consensus_error, min_gap_curve, stationarity_gap
from fedpd_lab.problems import quadratic_pair_problem

RNG = np.random.default_rng(3141)


def row(r, gap):
    return TraceRow(r, r, r, r, gap, 0.0, 0.0, False, 0)


def test_gap_zero_on_saddle_pair():
    prob = quadratic_pair_problem(dim=3)
    for _ in range(5):
        assert stationarity_gap(prob, RNG.standard_normal(3)) == 0.0


def test_gap_single_agent():
    prob = quadratic_pair_problem(dim=2, n_agents=1)
    x = np.array([3.0, 4.0])
    assert stationarity_gap(prob, x) == pytest.approx(25.0, abs=1e-12)


def test_gap_matches_reordered_summation():
    prob = fl.gen_weak_noniid(5, 20, 4, seed=2)
    x = RNG.standard_normal(4)
    # accumulate in reversed agent order as an independent reduction
    acc = np.zeros(4)
    for i in reversed(range(prob.n_agents)):
        acc += prob.grad(i, x)
    ref = float((acc / prob.n_agents) @ (acc / prob.n_agents))
    assert stationarity_gap(prob, x) == pytest.approx(ref, abs=1e-12)


def test_consensus_error_basics():
    pts = [np.zeros(2)] * 4
    assert consensus_error(pts) == 0.0
    assert consensus_error([np.zeros(1), np.array([3.0])]) == 3.0


def test_consensus_error_brute_force():
    pts = [RNG.standard_normal(3) for _ in range(5)]
    ref = max(
        float(np.linalg.norm(pts[i] - pts[j]))
        for i in range(5)
        for j in range(i + 1, 5)
    )
    assert consensus_error(pts) == ref


def test_min_gap_curve_shapes():
    const = [row(r, 2.0) for r in range(5)]
    assert [v for _, v in min_gap_curve(const)] == [2.0] * 5

    falling = [row(r, 10.0 - r) for r in range(5)]
    assert [v for _, v in min_gap_curve(falling)] == [10.0 - r for r in range(5)]

    gaps = list(RNG.uniform(0, 1, size=50))
    rows = [row(r, g) for r, g in enumerate(gaps)]
    got = [v for _, v in min_gap_curve(rows)]
    assert got == brute_force_prefix_min(gaps)
    assert all(a >= b for a, b in zip(got, got[1:]))


def test_min_gap_curve_empty():
    with pytest.raises(ValueError):
        min_gap_curve([])


def test_trace_row_formatting():
    r = TraceRow(3, 2, 10, 100, 0.125, 0.0, 1.5, True, 7)
    fields = r.csv_fields()
    assert fields[0] == "3"
    assert fields[4] == "0.125"
    assert fields[7] == "true"
