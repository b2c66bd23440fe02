"""Per-round trace records and the convergence/resource metrics they carry."""

from dataclasses import dataclass

import numpy as np

from .problems import Problem

TRACE_COLUMNS = (
    "round",
    "comm_rounds_cum",
    "local_iters_cum",
    "samples_cum",
    "gap",
    "consensus_err",
    "al_mean",
    "diverged",
    "wall_ms",
)


@dataclass
class TraceRow:
    """One round of metrics; cumulative counters follow the RC/LC/AS axes."""

    round: int
    comm_rounds_cum: int
    local_iters_cum: int
    samples_cum: int
    gap: float
    consensus_err: float
    al_mean: float
    diverged: bool
    wall_ms: int

    def csv_fields(self):
        return (
            str(self.round),
            str(self.comm_rounds_cum),
            str(self.local_iters_cum),
            str(self.samples_cum),
            format(self.gap, ".17g"),
            format(self.consensus_err, ".17g"),
            format(self.al_mean, ".17g"),
            "true" if self.diverged else "false",
            str(self.wall_ms),
        )


def stationarity_gap(problem: Problem, x) -> float:
    """Squared norm of the exact mean gradient, ||(1/N) sum_i grad f_i(x)||^2."""
    g = problem.mean_grad(x)
    return float(g @ g)


def consensus_error(points) -> float:
    """Exact max pairwise distance among the agents' center-model copies."""
    points = list(points)
    if not points:
        raise ValueError("need at least one agent")
    worst = 0.0
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            worst = max(worst, float(np.linalg.norm(points[i] - points[j])))
    return worst


def min_gap_curve(rows):
    """Prefix-minimum of the gap column: [(round, min-so-far)], nonincreasing."""
    if not rows:
        raise ValueError("empty trace")
    out = []
    best = float("inf")
    for row in rows:
        best = min(best, row.gap)
        out.append((row.round, best))
    return out
