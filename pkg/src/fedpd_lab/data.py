"""Synthetic dataset generators, CSV ingest, sharding, and heterogeneity.

Both generators draw standard-normal features.  The weak regime labels
uniformly at random; the strong regime labels by a per-agent ground-truth
model drawn uniformly from [-10, 10]^d with additive uniform noise inside
the sign, which drives the pairwise gradient gap delta up.  Everything is a
pure function of (parameters, seed).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DataFormatError
from .problems import LinearRegression, Logistic, PenalizedLogistic, Problem, Shard

_FAMILIES = {
    "penalized_logistic": PenalizedLogistic,
    "logistic": Logistic,
    "linear_regression": LinearRegression,
}


def make_family(name, alpha=1.0, beta=0.1):
    if name not in _FAMILIES:
        raise ConfigError(f"unknown loss family {name!r}")
    if name == "penalized_logistic":
        return PenalizedLogistic(alpha=alpha, beta=beta)
    return _FAMILIES[name]()


def _rng(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def spectral_norm(A, iters=1000, tol=1e-13, seed=0):
    """Largest singular value of A by power iteration on A^T A.

    Stops after `iters` rounds or when the Rayleigh estimate moves by less
    than `tol` relatively.  The budget is sized so near-degenerate leading
    singular pairs still resolve to ~1e-8.
    """
    A = np.asarray(A, dtype=np.float64)
    v = _rng(seed).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    last = 0.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        est = float(np.sqrt(norm))
        if last > 0.0 and abs(est - last) <= tol * last:
            return est
        last = est
    return last


def _sq_norm(A):
    s = spectral_norm(A)
    return s * s


def _assemble(family, shards, d, name):
    lip = family.lipschitz_estimate(shards, _sq_norm)
    return Problem(family, shards, d, len(shards), lipschitz=lip, name=name)


def gen_weak_noniid(
    n_agents,
    samples_per_agent,
    d,
    seed,
    family="penalized_logistic",
    alpha=1.0,
    beta=0.1,
    identical_shards=False,
) -> Problem:
    """I.i.d. features, uniformly random +-1 labels on every agent.

    `identical_shards` hands every agent a copy of the first shard, giving
    an exactly homogeneous (delta = 0) instance.
    """
    if n_agents < 1 or samples_per_agent < 1 or d < 1:
        raise ConfigError("agent count, samples per agent and dimension must be positive")
    rng = _rng(seed)
    fam = make_family(family, alpha, beta)
    shards = []
    n_draw = 1 if identical_shards else n_agents
    for _ in range(n_draw):
        A = rng.standard_normal((samples_per_agent, d))
        b = rng.choice((-1.0, 1.0), size=samples_per_agent)
        shards.append(Shard(A, b))
    if identical_shards:
        shards = [shards[0]] * n_agents
    return _assemble(fam, shards, d, "weak_noniid")


def gen_strong_noniid(
    n_agents,
    samples_per_agent,
    d,
    seed,
    noise_halfwidth=1.0,
    family="penalized_logistic",
    alpha=1.0,
    beta=0.1,
) -> Problem:
    """Per-agent ground-truth models in [-10, 10]^d; labels sign(x_i^T a + u)."""
    if n_agents < 1 or samples_per_agent < 1 or d < 1:
        raise ConfigError("agent count, samples per agent and dimension must be positive")
    if noise_halfwidth < 0:
        raise ConfigError("noise halfwidth must be nonnegative")
    rng = _rng(seed)
    fam = make_family(family, alpha, beta)
    shards = []
    for _ in range(n_agents):
        truth = rng.uniform(-10.0, 10.0, size=d)
        A = rng.standard_normal((samples_per_agent, d))
        u = rng.uniform(-noise_halfwidth, noise_halfwidth, size=samples_per_agent)
        z = A @ truth + u
        b = np.where(z >= 0.0, 1.0, -1.0)
        shards.append(Shard(A, b))
    return _assemble(fam, shards, d, "strong_noniid")


def load_csv(path, family="penalized_logistic", alpha=1.0, beta=0.1) -> Problem:
    """Read `label,f1,...,fd` rows (no header) into a single-agent problem."""
    rows = []
    dim = None
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"{path}: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 2:
                raise DataFormatError(f"{path}:{lineno}: need label plus features")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if dim is None:
                dim = len(vals) - 1
            elif len(vals) - 1 != dim:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {dim} features, got {len(vals) - 1}"
                )
            rows.append(vals)
    if not rows:
        raise DataFormatError(f"{path}: empty dataset")
    arr = np.asarray(rows, dtype=np.float64)
    shard = Shard(arr[:, 1:], arr[:, 0])
    return _assemble(make_family(family, alpha, beta), [shard], dim, "csv")


def save_csv(problem: Problem, path, order="round_robin"):
    """Write the samples in the load_csv row format.

    `round_robin` interleaves rows so load_csv + shard_round_robin with the
    same agent count reproduces the shards exactly (needs equal shard
    sizes); `agent_major` dumps shard after shard.
    """
    if problem.analytic:
        raise ConfigError("analytic problems have no samples to serialize")
    if order == "round_robin":
        sizes = {len(s) for s in problem.shards}
        if len(sizes) > 1:
            raise ConfigError("round_robin serialization needs equal shard sizes")
        rows = (
            (s.labels[j], s.features[j])
            for j in range(sizes.pop())
            for s in problem.shards
        )
    elif order == "agent_major":
        rows = ((s.labels[j], s.features[j]) for s in problem.shards for j in range(len(s)))
    else:
        raise ConfigError(f"unknown row order {order!r}")
    with open(path, "w", encoding="utf-8") as fh:
        for b, a in rows:
            fields = [format(b, ".17g")] + [format(v, ".17g") for v in a]
            fh.write(",".join(fields) + "\n")


def shard_round_robin(problem: Problem, n_agents) -> Problem:
    """Deal samples across agents round-robin, preserving order within each."""
    if problem.analytic:
        raise ConfigError("cannot re-shard an analytic problem")
    if n_agents < 1:
        raise ConfigError("need at least one agent")
    A = np.concatenate([s.features for s in problem.shards])
    b = np.concatenate([s.labels for s in problem.shards])
    if len(b) < n_agents:
        raise ConfigError(f"{len(b)} samples cannot cover {n_agents} agents")
    shards = [Shard(A[k::n_agents], b[k::n_agents]) for k in range(n_agents)]
    return _assemble(problem.family, shards, problem.dim, problem.name)


@dataclass
class HeterogeneityReport:
    """Max pairwise gradient gap over probe points, with the analytic bound
    (spectral-norm based; only available for the sigmoid logistic family)."""

    measured_delta: float
    analytic_bound: Optional[float]
    probes_used: int


def default_probe_points(dim, n_probes=50, seed=0):
    """The origin plus standard-normal probes; fixed so reports compare."""
    pts = [np.zeros(dim)]
    rng = _rng(seed)
    for _ in range(n_probes):
        pts.append(rng.standard_normal(dim))
    return pts


def estimate_delta(problem: Problem, probe_points) -> HeterogeneityReport:
    """Max over probes and agent pairs of ||grad_i(x) - grad_j(x)||."""
    probe_points = list(probe_points)
    if not probe_points:
        raise ValueError("need at least one probe point")
    worst = 0.0
    for x in probe_points:
        grads = [problem.grad(i, x) for i in range(problem.n_agents)]
        for i in range(problem.n_agents):
            for j in range(i + 1, problem.n_agents):
                worst = max(worst, float(np.linalg.norm(grads[i] - grads[j])))
    bound = None
    if isinstance(problem.family, Logistic):
        bound = delta_bound_logistic(problem)
    return HeterogeneityReport(worst, bound, len(probe_points))


def delta_bound_logistic(problem: Problem, tanh_variant=False) -> float:
    """Uniform gradient-gap bound max_{i,j} ||A_i||/sqrt(m_i) + ||A_j||/sqrt(m_j).

    Valid for the sigmoid logistic family, whose per-sample weights lie in
    (0, 1).  The rescaled tanh loss carries an extra factor of 4.
    """
    if not isinstance(problem.family, Logistic):
        raise ConfigError("delta bound applies to the logistic family only")
    scores = [
        spectral_norm(s.features) / np.sqrt(len(s)) for s in problem.shards
    ]
    bound = 2.0 * max(scores)
    return 4.0 * bound if tanh_variant else bound
