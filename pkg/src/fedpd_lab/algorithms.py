"""Federated runs under computation-then-aggregation.

One round = every agent updates locally from its own state and RNG stream,
then the server (maybe) averages.  The only inter-agent data flow is the
aggregation step.  Agent updates may execute on any number of worker
threads; per-agent counter-based RNG streams and ordered reductions make
the numbers independent of scheduling.

Algorithms: plain local GD/SGD averaging, proximal local objectives, and
the primal-dual loop (local AL solve, dual ascent, tentative center, one
shared Bernoulli draw deciding aggregate-vs-continue).
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, SolverDiverged
from .local_solvers import (
    OracleIConfig,
    OracleIIConfig,
    VrState,
    al_value,
    oracle1_solve,
    oracle2_step,
    vr_update,
)
from .metrics import TraceRow, consensus_error, stationarity_gap
from .problems import Problem, check_vec

ALGORITHMS = (
    "fedavg-gd",
    "fedavg-sgd",
    "fedprox",
    "fedpd-gd",
    "fedpd-sgd",
    "fedpd-vr",
)

ETA_SAFE_FRACTION = (math.sqrt(5.0) - 1.0) / 4.0  # stability margin for the PD loop


@dataclass
class AgentState:
    """One agent's model/dual/center triple plus its private stream."""

    x: np.ndarray
    lam: np.ndarray
    x0_local: np.ndarray
    rng: np.random.Generator
    local_iters: int = 0
    samples: int = 0
    vr: Optional[VrState] = None
    x0_plus: Optional[np.ndarray] = None
    oracle_converged: bool = True


@dataclass
class RoundOutcome:
    x0: np.ndarray
    communicated: bool
    gap: float
    comm_rounds_cum: int
    local_iters_cum: int
    samples_cum: int
    diverged: bool


# ---------------------------------------------------------------------------
# stepsize schedules


def build_schedule(spec, eta, local_steps, lipschitz) -> Callable[[int, int], float]:
    """Map a schedule spec to a callable (round r, local step q) -> stepsize.

    constant        eta
    inv_sqrt        eta / sqrt(r*Q + q + 1)
    bounded_grad    eta at q=0, min(1/(2(Q-1)L), eta/Q)/sqrt(r+1) after
    cycle_divergence 1/2 at global steps s = 1 mod Q, else 1/sqrt(s)
    custom          values[min(global step, last)]
    """
    kind = spec.get("kind", "constant") if spec else "constant"
    Q = local_steps
    if kind == "constant":
        return lambda r, q: eta
    if kind == "inv_sqrt":
        return lambda r, q: eta / math.sqrt(r * Q + q + 1)
    if kind == "bounded_grad":
        if Q > 1:
            cap = min(1.0 / (2.0 * (Q - 1) * lipschitz), eta / Q)
        else:
            cap = eta
        return lambda r, q: eta if q == 0 else cap / math.sqrt(r + 1)
    if kind == "cycle_divergence":
        if Q < 2:
            raise ConfigError("cycle_divergence schedule needs at least 2 local steps")

        def sched(r, q):
            s = r * Q + q + 1
            return 0.5 if s % Q == 1 else 1.0 / math.sqrt(s)

        return sched
    if kind == "custom":
        values = spec.get("values")
        if not values:
            raise ConfigError("custom schedule needs a nonempty 'values' list")
        vals = [float(v) for v in values]

        def sched(r, q):
            return vals[min(r * Q + q, len(vals) - 1)]

        return sched
    raise ConfigError(f"unknown schedule kind {kind!r}")


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    algorithm: str
    rounds: int
    eta: float
    local_steps: int = 1
    skip_prob: float = 0.0
    prox_weight: float = 1.0
    sgd_batch: int = 1
    schedule: Optional[dict] = None
    init: object = "zeros"
    seed: int = 0
    diverge_threshold: float = 1e8
    trace_every: int = 1
    oracle1: OracleIConfig = field(default_factory=OracleIConfig)
    oracle2: Optional[OracleIIConfig] = None

    def validate(self, problem: Problem):
        """Raise ConfigError on hard violations; return lint warnings."""
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.rounds < 0:
            raise ConfigError("rounds must be nonnegative")
        if self.eta <= 0:
            raise ConfigError("eta must be positive")
        if not 0.0 <= self.skip_prob < 1.0:
            raise ConfigError("skip probability must lie in [0, 1)")
        if self.local_steps < 1 or self.sgd_batch < 1:
            raise ConfigError("local_steps and sgd_batch must be at least 1")
        if self.diverge_threshold <= 0 or self.trace_every < 1:
            raise ConfigError("diverge_threshold and trace_every must be positive")
        if self.algorithm == "fedprox" and self.prox_weight < 0:
            raise ConfigError("prox weight must be nonnegative")
        if self.algorithm == "fedpd-vr" and self.oracle2 is None:
            raise ConfigError("fedpd-vr needs an oracle2 config")
        warnings = []
        L = problem.lipschitz
        if self.algorithm.startswith("fedpd"):
            limit = ETA_SAFE_FRACTION / L
            if not self.eta < limit:
                warnings.append(
                    f"eta={self.eta:g} is outside the guaranteed-stable range "
                    f"(0, {limit:g}) for L={L:g}"
                )
        if self.algorithm in ("fedpd-gd", "fedpd-sgd") and self.eta * L >= 1.0:
            raise ConfigError(
                f"eta={self.eta:g} with L={L:g} makes the local AL nonconvex"
            )
        return warnings

    def initial_point(self, dim):
        if isinstance(self.init, str):
            if self.init != "zeros":
                raise ConfigError(f"unknown init {self.init!r}")
            return np.zeros(dim)
        if np.isscalar(self.init):
            return np.full(dim, float(self.init))
        return check_vec(self.init, dim).copy()


@dataclass
class Trace:
    rows: list
    diverged: bool
    final_x0: np.ndarray
    comm_rounds: int
    local_iters: int
    samples: int
    lint: list


# ---------------------------------------------------------------------------
# rounds


def _guard(x, threshold):
    return bool(np.max(np.abs(x)) > threshold) if x.size else False


def _fedavg_local(problem, agent, st, x_start, schedule, r, local_steps, use_sgd,
                  sgd_batch, threshold):
    x = x_start.copy()
    diverged = False
    m = problem.n_samples(agent)
    pool = problem.sgd_pool(agent)
    for q in range(local_steps):
        if use_sgd:
            batch = st.rng.integers(0, pool, size=sgd_batch)
            g = problem.stoch_grad(agent, x, batch)
            st.samples += sgd_batch if m else 0
        else:
            g = problem.grad(agent, x)
            st.samples += m
        x = x - schedule(r, q) * g
        st.local_iters += 1
        if _guard(x, threshold):
            diverged = True
            break
    return x, diverged


def fedavg_round(problem, states, x_server, schedule, r, local_steps, use_sgd,
                 sgd_batch, threshold, pmap):
    """Q local (stochastic) gradient steps per agent, then exact averaging."""

    def work(agent):
        return _fedavg_local(problem, agent, states[agent], x_server, schedule,
                             r, local_steps, use_sgd, sgd_batch, threshold)

    results = pmap(work, range(problem.n_agents))
    locals_, flags = zip(*results)
    x_next = np.mean(np.stack(locals_), axis=0)
    diverged = any(flags) or _guard(x_next, threshold)
    return x_next, diverged


def fedprox_round(problem, states, x_server, schedule, r, local_steps, prox_weight,
                  threshold, pmap):
    """Q GD steps on f_i(x) + (rho/2)||x - x_server||^2, then averaging."""

    def work(agent):
        st = states[agent]
        x = x_server.copy()
        m = problem.n_samples(agent)
        diverged = False
        for q in range(local_steps):
            g = problem.grad(agent, x) + prox_weight * (x - x_server)
            st.samples += m
            x = x - schedule(r, q) * g
            st.local_iters += 1
            if _guard(x, threshold):
                diverged = True
                break
        return x, diverged

    results = pmap(work, range(problem.n_agents))
    locals_, flags = zip(*results)
    x_next = np.mean(np.stack(locals_), axis=0)
    diverged = any(flags) or _guard(x_next, threshold)
    return x_next, diverged


def _fedpd_local(problem, agent, st, eta, cfg: RunConfig, r):
    if cfg.algorithm == "fedpd-vr":
        o2 = cfg.oracle2
        pool = problem.sgd_pool(agent)
        m = problem.n_samples(agent)
        if r % o2.full_grad_period == 0:
            st.vr = vr_update(st.vr, problem, agent, st.x, refresh=True)
            st.samples += m
        x = st.x
        for _ in range(o2.local_steps):
            x_next = oracle2_step(x, st.x0_local, st.lam, st.vr.g, eta, o2.gamma)
            batch = st.rng.integers(0, pool, size=o2.batch_size)
            st.vr = vr_update(st.vr, problem, agent, x_next, batch)
            st.samples += 2 * o2.batch_size if m else 0
            x = x_next
        st.x = x
        st.local_iters += o2.local_steps
        st.oracle_converged = True
    else:
        cfg1 = cfg.oracle1
        if cfg.algorithm == "fedpd-gd" and cfg1.variant != "gd":
            cfg1 = replace(cfg1, variant="gd")
        elif cfg.algorithm == "fedpd-sgd" and cfg1.variant != "sgd":
            cfg1 = replace(cfg1, variant="sgd")
        res = oracle1_solve(problem, agent, st.x, st.x0_local, st.lam, eta, cfg1, st.rng)
        st.x = res.x
        st.local_iters += res.inner_iters
        st.samples += res.samples_used
        st.oracle_converged = res.converged
    st.lam = st.lam + (st.x - st.x0_local) / eta
    st.x0_plus = st.x + eta * st.lam


def fedpd_round(problem, states, eta, cfg: RunConfig, r, server_rng, pmap):
    """Primal oracle solve, dual ascent, tentative center; one shared
    Bernoulli(1-p) draw decides aggregation versus local continuation."""

    def work(agent):
        _fedpd_local(problem, agent, states[agent], eta, cfg, r)

    list(pmap(work, range(problem.n_agents)))
    communicated = bool(server_rng.random() < 1.0 - cfg.skip_prob)
    if communicated:
        x0_bar = np.mean(np.stack([st.x0_plus for st in states]), axis=0)
        for st in states:
            st.x0_local = x0_bar.copy()
    else:
        for st in states:
            st.x0_local = st.x0_plus
    diverged = any(_guard(st.x0_local, cfg.diverge_threshold) for st in states) or any(
        _guard(st.x, cfg.diverge_threshold) for st in states
    )
    return communicated, diverged


# ---------------------------------------------------------------------------
# communication-skip selection


@dataclass
class SkipChoice:
    p: float
    regime: str
    c3: float


def dual_drift_factor(p, eta, lipschitz) -> float:
    """C3 = (p(1+L*eta) + L*eta) / (1 - L*eta), the per-round consensus
    contraction factor; below 1 the skipped-round error stays bounded."""
    le = lipschitz * eta
    if le >= 1.0:
        raise ConfigError("need eta * L < 1 for the drift factor to make sense")
    return (p * (1.0 + le) + le) / (1.0 - le)


def select_skip_probability(eps, delta, eta, lipschitz) -> SkipChoice:
    """Admissible skip probability for accuracy eps under heterogeneity delta.

    Piecewise in eps/delta^2: linear p = (eps/delta^2)/(36 eta) while it
    stays below the drift threshold (1-2L*eta)/(1+L*eta); logarithmic
    p = 1 - 2/log((eps/delta^2)/(42 eta)) beyond.  Clamped to [0, 1-1e-6).
    """
    if min(eps, delta, eta, lipschitz) <= 0:
        raise ConfigError("eps, delta, eta and L must all be positive")
    le = lipschitz * eta
    if le >= 1.0:
        raise ConfigError("need eta * L < 1")
    ratio = eps / (delta * delta)
    p_threshold = (1.0 - 2.0 * le) / (1.0 + le)
    p_lin = ratio / (36.0 * eta)
    if p_lin < p_threshold:
        p, regime = p_lin, "linear"
    else:
        arg = ratio / (42.0 * eta)
        p_log = 1.0 - 2.0 / math.log(arg) if arg > 1.0 else p_threshold
        p, regime = max(p_log, p_threshold), "log"
    p = min(max(p, 0.0), 1.0 - 1e-6)
    return SkipChoice(p, regime, dual_drift_factor(p, eta, lipschitz))


# ---------------------------------------------------------------------------
# the driver


def _pmap_factory(threads, executor):
    if executor is None:
        return lambda fn, it: [fn(i) for i in it]
    return lambda fn, it: list(executor.map(fn, it))


def make_states(problem, config) -> tuple:
    """Initial agent states plus the dedicated server stream."""
    x0 = config.initial_point(problem.dim)
    children = np.random.SeedSequence(config.seed).spawn(problem.n_agents + 1)
    server_rng = np.random.Generator(np.random.Philox(children[0]))
    states = []
    for i in range(problem.n_agents):
        states.append(
            AgentState(
                x=x0.copy(),
                lam=np.zeros_like(x0),
                x0_local=x0.copy(),
                rng=np.random.Generator(np.random.Philox(children[i + 1])),
            )
        )
    return states, server_rng, x0


def run(problem: Problem, config: RunConfig, threads=1, round_hook=None) -> Trace:
    """Drive `config.rounds` rounds; deterministic given (problem, config).

    Divergence (any iterate norm above the threshold, or a local solve
    blowing up) terminates the run cleanly with the flag recorded on the
    final row.  `round_hook(r, states, outcome)` is called after each round.
    """
    lint = config.validate(problem)
    states, server_rng, x_server = make_states(problem, config)
    is_fedpd = config.algorithm.startswith("fedpd")
    schedule = build_schedule(config.schedule, config.eta, config.local_steps,
                              problem.lipschitz)

    rows = []
    comm = 0
    t0 = time.perf_counter()
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    pmap = _pmap_factory(threads, executor)
    diverged = False
    try:
        for r in range(config.rounds):
            communicated = True
            if config.algorithm in ("fedavg-gd", "fedavg-sgd"):
                x_server, diverged = fedavg_round(
                    problem, states, x_server, schedule, r, config.local_steps,
                    config.algorithm == "fedavg-sgd", config.sgd_batch,
                    config.diverge_threshold, pmap,
                )
                comm += 1
                x_eval = x_server
                cons = 0.0
                al_mean = problem.mean_loss(x_eval)
            elif config.algorithm == "fedprox":
                x_server, diverged = fedprox_round(
                    problem, states, x_server, schedule, r, config.local_steps,
                    config.prox_weight, config.diverge_threshold, pmap,
                )
                comm += 1
                x_eval = x_server
                cons = 0.0
                al_mean = problem.mean_loss(x_eval)
            else:
                try:
                    communicated, diverged = fedpd_round(
                        problem, states, config.eta, config, r, server_rng, pmap
                    )
                except SolverDiverged:
                    communicated, diverged = False, True
                comm += 1 if communicated else 0
                x_eval = np.mean(np.stack([st.x0_local for st in states]), axis=0)
                cons = consensus_error([st.x0_local for st in states])
                al_mean = float(
                    np.mean([
                        al_value(problem, i, st.x, st.x0_local, st.lam, config.eta)
                        for i, st in enumerate(states)
                    ])
                )
            gap = stationarity_gap(problem, x_eval)
            outcome = RoundOutcome(
                x0=x_eval,
                communicated=communicated,
                gap=gap,
                comm_rounds_cum=comm,
                local_iters_cum=sum(st.local_iters for st in states),
                samples_cum=sum(st.samples for st in states),
                diverged=diverged,
            )
            if r % config.trace_every == 0 or r == config.rounds - 1 or diverged:
                rows.append(
                    TraceRow(
                        round=r,
                        comm_rounds_cum=outcome.comm_rounds_cum,
                        local_iters_cum=outcome.local_iters_cum,
                        samples_cum=outcome.samples_cum,
                        gap=gap,
                        consensus_err=cons,
                        al_mean=al_mean,
                        diverged=diverged,
                        wall_ms=int((time.perf_counter() - t0) * 1000),
                    )
                )
            if round_hook is not None:
                round_hook(r, states, outcome)
            if diverged:
                break
    finally:
        if executor is not None:
            executor.shutdown()

    final_x0 = x_server if not is_fedpd else np.mean(
        np.stack([st.x0_local for st in states]), axis=0
    )
    return Trace(
        rows=rows,
        diverged=diverged,
        final_x0=final_x0,
        comm_rounds=comm,
        local_iters=sum(st.local_iters for st in states),
        samples=sum(st.samples for st in states),
        lint=lint,
    )
