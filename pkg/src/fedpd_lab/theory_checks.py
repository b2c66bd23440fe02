"""Executable certificates for the hard-instance and divergence claims.

The chain certificate tracks the support frontier of the server model with
exact-zero semantics (the closed-form chain partials are exactly zero
outside the support rules, so tol=0 is legitimate).  Communication rounds
are counted protocol-style: the initial distribution of the starting model
is round 1, and round k >= 2 aggregates the local models computed after
receipt k-1.  Under that count the averaged tail coordinate T can first
wake up at round T, for any number of local steps.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .metrics import stationarity_gap
from .problems import ChainSpec, chain_problem, phi, phi_prime, psi

CHAIN_CURVATURE_BOUND = 27.0 * math.pi


def support_frontier(x, tol=0.0):
    """Largest 1-based index j with |x[j]| > tol; 0 when none."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    hits = np.nonzero(np.abs(x) > tol)[0]
    return int(hits[-1]) + 1 if hits.size else 0


@dataclass
class FrontierReport:
    comm_rounds: int
    frontier: int
    tail_zero: bool
    local_frontier: int
    gap: float


def _report(problem, spec, t, x_server, local_frontier):
    return FrontierReport(
        comm_rounds=t,
        frontier=support_frontier(x_server, 0.0),
        tail_zero=bool(x_server[spec.length - 1] == 0.0),
        local_frontier=local_frontier,
        gap=stationarity_gap(problem, x_server),
    )


def lower_bound_history(spec: ChainSpec, algo="fedavg-gd", local_steps=1, eta=0.01,
                        t_comm=None, seed=0):
    """Run averaged local-(S)GD on the chain instance from zero init.

    Returns one FrontierReport per communication round t = 0..t_comm, where
    the report holds the server model the agents would receive at round
    t+1 (zeros for t <= 1, since round 1 only distributes the start)."""
    if algo not in ("fedavg-gd", "fedavg-sgd"):
        raise ConfigError("lower bound covers the averaged local-GD/SGD instances")
    if local_steps < 1:
        raise ConfigError("need at least one local step")
    if t_comm is None:
        t_comm = spec.length
    problem = chain_problem(spec)
    use_sgd = algo == "fedavg-sgd"
    children = np.random.SeedSequence(seed).spawn(spec.n_agents)
    rngs = [np.random.Generator(np.random.Philox(c)) for c in children]

    x_server = np.zeros(spec.dim)
    reports = [_report(problem, spec, 0, x_server, 0)]
    local_frontier = 0
    for t in range(1, t_comm + 1):
        reports.append(_report(problem, spec, t, x_server, local_frontier))
        # local phase driven by the model just received at round t
        locals_ = []
        for agent in range(spec.n_agents):
            x = x_server.copy()
            for _ in range(local_steps):
                if use_sgd:
                    batch = rngs[agent].integers(0, problem.sgd_pool(agent), size=1)
                    g = problem.stoch_grad(agent, x, batch)
                else:
                    g = problem.grad(agent, x)
                x = x - eta * g
            locals_.append(x)
        x_server = np.mean(np.stack(locals_), axis=0)
        local_frontier = max(support_frontier(x) for x in locals_)
    return reports[: t_comm + 1]


def lower_bound_run(spec: ChainSpec, algo="fedavg-gd", local_steps=1, eta=0.01,
                    t_comm=16, seed=0) -> FrontierReport:
    """Frontier/tail certificate after `t_comm` communication rounds."""
    return lower_bound_history(spec, algo, local_steps, eta, t_comm, seed)[-1]


@dataclass
class DivergenceFactor:
    value: float
    eigenvalues: np.ndarray


def divergence_factor(eta, local_steps) -> DivergenceFactor:
    """Per-cycle amplification ((1+eta)^Q + (1-eta)^Q)/2 of averaged local GD
    on the saddle pair, with the numerically computed spectrum of the
    explicit 2x2 cycle matrix for cross-validation."""
    if eta <= 0:
        raise ConfigError("eta must be positive")
    if local_steps < 2:
        raise ConfigError("amplification needs at least 2 local steps")
    Q = local_steps
    value = 0.5 * ((1.0 + eta) ** Q + (1.0 - eta) ** Q)
    D = np.diag([1.0 - eta, 1.0 + eta])
    M = 0.5 * np.linalg.matrix_power(D, Q - 1) @ np.ones((2, 2)) @ D
    return DivergenceFactor(value, np.linalg.eigvals(M))


def diminishing_cycle_matrix(k, local_steps) -> np.ndarray:
    """Explicit 2x2 map of cycle k under steps 1/sqrt(r), with the step
    right after each averaging pinned to 1/2."""
    Q = local_steps
    M = 0.5 * np.ones((2, 2)) @ np.diag(
        [1.0 - 1.0 / math.sqrt(k * Q), 1.0 + 1.0 / math.sqrt(k * Q)]
    )
    for r in range(k * Q + 1, (k + 1) * Q):
        step = 0.5 if r == k * Q + 1 else 1.0 / math.sqrt(r)
        M = np.diag([1.0 - step, 1.0 + step]) @ M
    return M


def diminishing_divergence_factor(k, local_steps) -> float:
    """Nonzero eigenvalue of cycle k's product map; strictly above 1, which
    rules out the 1/sqrt(r) schedule with a periodically revived step."""
    if k < 1:
        raise ConfigError("cycle index starts at 1")
    if local_steps < 2:
        raise ConfigError("need at least 2 local steps")
    Q = local_steps
    lo = hi = 1.0
    for r in range(k * Q + 2, (k + 1) * Q):
        s = 1.0 / math.sqrt(r)
        lo *= 1.0 - s
        hi *= 1.0 + s
    s0 = 1.0 / math.sqrt(k * Q)
    lam = 0.25 * lo * (1.0 - s0) + 0.75 * hi * (1.0 + s0)
    if not lam > 1.0:
        raise RuntimeError(f"cycle factor {lam} unexpectedly at or below 1")
    return lam


def _chain_probe_points(spec, n_probes, rng, scale=2.0):
    pts = rng.standard_normal((n_probes, spec.dim)) * scale
    # keep off the 1e-9 kink bands around every x[j] = 0
    small = np.abs(pts) < 1e-9
    pts[small] = np.sign(pts[small] + 0.5) * (1e-3 + np.abs(pts[small]))
    return pts


def chain_lipschitz_probe(spec: ChainSpec, n_probes=10_000, seed=0, step=1e-4):
    """Max directional second-difference quotient of the unscaled chain
    function over random points/directions; must stay below 27*pi.
    Alternates between the averaged function and single-agent components."""
    if n_probes < 1:
        raise ConfigError("need at least one probe")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    fam = chain_problem(spec).family
    pts = _chain_probe_points(spec, n_probes, rng)
    dirs = rng.standard_normal((n_probes, spec.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    agents = rng.integers(0, spec.n_agents, size=n_probes)
    worst = 0.0
    for group in ("mean", *range(spec.n_agents)):
        if group == "mean":
            mask = np.arange(n_probes) % 2 == 0
            value = fam.g_mean_value_batch
        else:
            mask = (np.arange(n_probes) % 2 == 1) & (agents == group)
            value = lambda U, a=group: fam.g_value_batch(a, U)  # noqa: E731
        if not mask.any():
            continue
        X, V = pts[mask], dirs[mask]
        quot = np.abs(
            value(X + step * V) - 2.0 * value(X) + value(X - step * V)
        ) / (step * step)
        worst = max(worst, float(quot.max()))
    return worst


@dataclass
class ChainBoundsReport:
    probes: int
    violations: int
    min_gate_product: float


def chain_bounds_probe(n_probes=10_000, seed=0, span=6.0) -> ChainBoundsReport:
    """Sampled component-function bounds: 0 <= psi < 1, 0 < phi < 4*pi,
    0 < phi' <= 4, and the gate product psi(w)*phi'(v) > 1 on w >= 1, |v| < 1."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    w = rng.uniform(-span, span, size=n_probes)
    violations = 0
    pw, fw, fpw = psi(w), phi(w), phi_prime(w)
    violations += int(np.sum((pw < 0.0) | (pw >= 1.0)))
    violations += int(np.sum((fw <= 0.0) | (fw >= 4.0 * math.pi)))
    violations += int(np.sum((fpw <= 0.0) | (fpw > 4.0)))
    wg = rng.uniform(1.0, 1.0 + span, size=n_probes)
    vg = rng.uniform(-1.0, 1.0, size=n_probes)
    gate = psi(wg) * phi_prime(vg)
    violations += int(np.sum(gate <= 1.0))
    return ChainBoundsReport(n_probes, violations, float(gate.min()))


def chain_value_range_probe(spec: ChainSpec, n_probes=100_000, seed=0, scale=3.0):
    """(f(0) - min over probes f, allowed bound 10*pi^2*eps*T/(L*N))."""
    problem = chain_problem(spec)
    fam = problem.family
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    vscale = 2.0 * math.pi * spec.eps / spec.lipschitz
    f0 = problem.mean_loss(np.zeros(spec.dim))
    U = rng.standard_normal((n_probes, spec.dim)) * scale
    best = float(vscale * fam.g_mean_value_batch(U).min())
    best = min(best, f0)
    bound = 10.0 * math.pi**2 * spec.eps * spec.length / (spec.lipschitz * spec.n_agents)
    return f0 - best, bound
