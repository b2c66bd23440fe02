"""Local oracles: inexact AL minimization and the linearized VR step.

Oracle 1 runs (stochastic) gradient descent on the local augmented
Lagrangian until the exact AL gradient-norm-square drops to `tol`, matching
the stopping contract the outer loop relies on.  Oracle 2 is a single
closed-form step on the linearized AL; its running gradient estimate is
maintained SARAH-style by `vr_update` and refreshed to the exact gradient
on schedule.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, SolverDiverged
from .problems import Problem, check_vec


def al_value(problem: Problem, agent, x_i, x0, lam, eta) -> float:
    """f_i(x_i) + <lam, x_i - x0> + ||x_i - x0||^2 / (2*eta)."""
    if eta <= 0:
        raise ConfigError("eta must be positive")
    x_i = check_vec(x_i, problem.dim)
    x0 = check_vec(x0, problem.dim)
    lam = check_vec(lam, problem.dim)
    diff = x_i - x0
    return problem.loss(agent, x_i) + float(lam @ diff) + float(diff @ diff) / (2.0 * eta)


def al_grad(problem: Problem, agent, x_i, x0, lam, eta) -> np.ndarray:
    """grad f_i(x_i) + lam + (x_i - x0)/eta."""
    if eta <= 0:
        raise ConfigError("eta must be positive")
    return problem.grad(agent, x_i) + lam + (x_i - x0) / eta


@dataclass
class OracleIConfig:
    """Inexact AL solver: GD, or SGD with the exact gradient checked
    every `check_every` steps (the in-expectation stopping rule is not
    observable online).  `inner_stepsize`/`max_inner` default to the
    strongly-convex heuristics eta/(1+eta*L) and
    10*ceil((1 + 1/(eta*mu))*ln(1/tol)), mu = 1/eta - L."""

    variant: str = "gd"
    tol: float = 1e-8
    inner_stepsize: Optional[float] = None
    max_inner: Optional[int] = None
    batch_size: int = 1
    check_every: int = 10

    def __post_init__(self):
        if self.variant not in ("gd", "sgd"):
            raise ConfigError(f"oracle 1 variant must be 'gd' or 'sgd', got {self.variant!r}")
        if self.tol <= 0:
            raise ConfigError("oracle 1 tolerance must be positive")
        if self.inner_stepsize is not None and self.inner_stepsize <= 0:
            raise ConfigError("inner stepsize must be positive")
        if self.max_inner is not None and self.max_inner < 1:
            raise ConfigError("max_inner must be at least 1")
        if self.batch_size < 1 or self.check_every < 1:
            raise ConfigError("batch_size and check_every must be at least 1")

    def resolved_stepsize(self, eta, lipschitz):
        if self.inner_stepsize is not None:
            return self.inner_stepsize
        return eta / (1.0 + eta * lipschitz)

    def resolved_max_inner(self, eta, lipschitz):
        if self.max_inner is not None:
            return self.max_inner
        mu = 1.0 / eta - lipschitz
        bound = (1.0 + 1.0 / (eta * mu)) * math.log(1.0 / self.tol)
        return max(1, 10 * math.ceil(max(bound, 1.0)))


@dataclass
class OracleResult:
    x: np.ndarray
    inner_iters: int
    samples_used: int
    converged: bool


_GUARD = 1e8


def oracle1_solve(problem, agent, x_start, x0, lam, eta, cfg: OracleIConfig, rng=None):
    """Minimize the local AL from `x_start` until ||grad AL||^2 <= cfg.tol.

    Requires eta < 1/L so the AL is strongly convex.  Returns the first
    iterate passing the exact check, or the max_inner-th iterate with
    `converged=False`.  `samples_used` counts every per-sample gradient
    access (full evaluations cost the shard size).
    """
    L = problem.lipschitz
    if eta * L >= 1.0:
        raise ConfigError(
            f"eta={eta} with L={L} makes eta*L >= 1: augmented Lagrangian may be nonconvex"
        )
    x = check_vec(x_start, problem.dim).copy()
    x0 = check_vec(x0, problem.dim)
    lam = check_vec(lam, problem.dim)

    step = cfg.resolved_stepsize(eta, L)
    max_inner = cfg.resolved_max_inner(eta, L)
    m = problem.n_samples(agent)
    pool = problem.sgd_pool(agent)
    stochastic = cfg.variant == "sgd" and cfg.batch_size < pool
    if cfg.variant == "sgd" and rng is None and stochastic:
        raise ConfigError("sgd oracle needs an rng stream")

    samples = 0
    iters = 0
    if not stochastic:
        # full-batch descent; the step direction doubles as the check
        while True:
            g = al_grad(problem, agent, x, x0, lam, eta)
            samples += m
            if float(g @ g) <= cfg.tol:
                return OracleResult(x, iters, samples, True)
            if iters >= max_inner:
                return OracleResult(x, iters, samples, False)
            x = x - step * g
            iters += 1
            if np.max(np.abs(x)) > _GUARD:
                raise SolverDiverged(f"local AL solve diverged (|x| > {_GUARD:g})")

    g = al_grad(problem, agent, x, x0, lam, eta)
    samples += m
    if float(g @ g) <= cfg.tol:
        return OracleResult(x, iters, samples, True)
    while iters < max_inner:
        batch = rng.integers(0, pool, size=cfg.batch_size)
        h = problem.stoch_grad(agent, x, batch)
        x = x - step * (h + lam + (x - x0) / eta)
        iters += 1
        samples += cfg.batch_size
        if np.max(np.abs(x)) > _GUARD:
            raise SolverDiverged(f"local AL solve diverged (|x| > {_GUARD:g})")
        if iters % cfg.check_every == 0:
            g = al_grad(problem, agent, x, x0, lam, eta)
            samples += m
            if float(g @ g) <= cfg.tol:
                return OracleResult(x, iters, samples, True)
    g = al_grad(problem, agent, x, x0, lam, eta)
    samples += m
    return OracleResult(x, iters, samples, float(g @ g) <= cfg.tol)


@dataclass
class OracleIIConfig:
    """Linearized-AL oracle: Q closed-form steps per round, gradient
    estimate refreshed to the exact gradient every `full_grad_period`
    rounds, minibatch corrections of size `batch_size` in between."""

    gamma: float
    local_steps: int = 2
    full_grad_period: int = 20
    batch_size: int = 1

    def __post_init__(self):
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if self.local_steps < 1 or self.full_grad_period < 1 or self.batch_size < 1:
            raise ConfigError("oracle 2 counts must be at least 1")


def oracle2_step(x_q, x0, lam, g, eta, gamma) -> np.ndarray:
    """Closed-form minimizer of the linearized AL around x_q:

        x+ = eta/(eta+gamma) * x_q + gamma/(eta+gamma) * x0
             - eta*gamma/(eta+gamma) * (g + lam)

    Its stationarity residual lam + (x+ - x0)/eta + g + (x+ - x_q)/gamma
    vanishes to rounding.
    """
    if eta <= 0 or gamma <= 0:
        raise ConfigError("eta and gamma must be positive")
    w = eta + gamma
    return (eta / w) * x_q + (gamma / w) * x0 - (eta * gamma / w) * (g + lam)


@dataclass
class VrState:
    """Running gradient estimate g tied to the point it was formed at."""

    g: np.ndarray
    last_x: np.ndarray


def vr_update(state, problem, agent, x_new, batch=None, refresh=False) -> VrState:
    """Advance the VR estimate to `x_new`.

    refresh: g becomes the exact full gradient (bit-equal to problem.grad).
    otherwise: SARAH correction with the same batch at both points,
    associated as (g - h_old) + h_new so that a full-batch correction
    telescopes exactly.
    """
    x_new = check_vec(x_new, problem.dim)
    if refresh:
        return VrState(problem.grad(agent, x_new), x_new.copy())
    if batch is None or len(batch) == 0:
        raise ValueError("non-refresh VR update needs a nonempty batch")
    if np.array_equal(x_new, state.last_x):
        # correction is identically zero; skip the cancellation arithmetic
        return VrState(state.g.copy(), x_new.copy())
    h_old = problem.stoch_grad(agent, state.last_x, batch)
    h_new = problem.stoch_grad(agent, x_new, batch)
    return VrState((state.g - h_old) + h_new, x_new.copy())
