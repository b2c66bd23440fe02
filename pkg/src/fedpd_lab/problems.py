"""Loss families behind one uniform per-agent gradient interface.

A `Problem` bundles N agent objectives f_i and exposes `loss`, `grad`,
`stoch_grad` and `mean_grad`.  Data-backed families (penalized logistic,
sigmoid logistic, linear regression) evaluate per-sample means over a
`Shard`; analytic families (the quadratic saddle pair and the coupled
chain) are closed-form.  All arithmetic is float64 and every public entry
point rejects non-finite input.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import ConfigError

TWO_PI = 2.0 * math.pi


def check_vec(x, dim=None):
    """Validate a parameter vector: float64, 1-d, finite. Returns the array."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-d parameter vector, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite entries in parameter vector")
    return x


@dataclass
class Shard:
    """One agent's local dataset: features (m, d) and labels (m,)."""

    features: np.ndarray
    labels: np.ndarray
    signed: np.ndarray = field(init=False, repr=False)
    full_idx: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("shard needs 2-d features and 1-d labels")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features/labels length mismatch")
        if self.features.shape[0] == 0:
            raise ValueError("empty shard")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.labels))):
            raise ValueError("non-finite entries in shard")
        # label-scaled feature rows b_k * a_k, used by the penalized family
        self.signed = np.ascontiguousarray(self.labels[:, None] * self.features)
        self.full_idx = np.arange(len(self.labels), dtype=np.int64)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


def _as_idx(batch, m):
    idx = np.ascontiguousarray(batch, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ValueError("batch must be a nonempty 1-d index list")
    if idx.min() < 0 or idx.max() >= m:
        raise ValueError(f"batch index out of range for shard of size {m}")
    return idx


# ---------------------------------------------------------------------------
# data-backed families


class PenalizedLogistic:
    """Logistic log-loss with a smooth nonconvex coordinate penalty.

    Per sample: F(x; (a,b)) = log(1 + exp(-b x^T a))
                              + sum_j beta*alpha*x_j^2 / (1 + alpha*x_j^2).
    """

    kind = "penalized_logistic"
    classification = True

    def __init__(self, alpha=1.0, beta=0.1):
        if alpha <= 0 or beta < 0:
            raise ConfigError("penalized logistic needs alpha > 0 and beta >= 0")
        self.alpha = float(alpha)
        self.beta = float(beta)

    def loss(self, shard, x):
        return K.penlog_value(shard.signed, x, self.alpha, self.beta)

    def grad(self, shard, x):
        return K.penlog_grad(shard.signed, x, self.alpha, self.beta)

    def batch_grad(self, shard, idx, x):
        return K.penlog_batch_grad(shard.signed, idx, x, self.alpha, self.beta)

    def lipschitz_estimate(self, shards, sq_norm_fn):
        # log-loss curvature <= lam_max(A^T A)/(4m); penalty curvature <= 2*alpha*beta
        worst = max(sq_norm_fn(s.features) / (4.0 * len(s)) for s in shards)
        return worst + 2.0 * self.alpha * self.beta


class Logistic:
    """Saturating sigmoid loss: F(x; (a,b)) = 1 / (1 + exp(b - a^T x)).

    Gradients are uniformly bounded by ||A_i|| / sqrt(m_i), which makes this
    the family of choice for bounded-gradient experiments and for the
    spectral-norm heterogeneity bound.
    """

    kind = "logistic"
    classification = True

    def loss(self, shard, x):
        return K.siglog_value(shard.features, shard.labels, x)

    def grad(self, shard, x):
        return K.siglog_grad(shard.features, shard.labels, x)

    def batch_grad(self, shard, idx, x):
        return K.siglog_batch_grad(shard.features, shard.labels, idx, x)

    def lipschitz_estimate(self, shards, sq_norm_fn):
        # |d^2/dt^2 sigma(t)| <= 1/(6*sqrt(3))
        c = 1.0 / (6.0 * math.sqrt(3.0))
        return max(c * sq_norm_fn(s.features) / len(s) for s in shards)


class LinearRegression:
    """Least squares, per sample F(x; (a,b)) = 0.5*(a^T x + b)^2."""

    kind = "linear_regression"
    classification = False

    def loss(self, shard, x):
        r = shard.features @ x + shard.labels
        return float(0.5 * np.mean(r * r))

    def grad(self, shard, x):
        r = shard.features @ x + shard.labels
        return (shard.features.T @ r) / len(shard)

    def batch_grad(self, shard, idx, x):
        A = shard.features[idx]
        r = A @ x + shard.labels[idx]
        return (A.T @ r) / len(idx)

    def lipschitz_estimate(self, shards, sq_norm_fn):
        return max(sq_norm_fn(s.features) / len(s) for s in shards)


# ---------------------------------------------------------------------------
# analytic families


class QuadraticPair:
    """The two-agent saddle pair f_1 = 0.5*||x||^2, f_2 = -0.5*||x||^2.

    The global average is identically zero, yet multi-step local gradient
    descent amplifies |x| stage by stage.  With one agent only the convex
    half remains (used for single-machine reduction checks).
    """

    kind = "quadratic_pair"
    analytic = True

    def __init__(self, n_agents=2):
        if n_agents not in (1, 2):
            raise ConfigError("quadratic pair supports 1 or 2 agents")
        self.n_agents = n_agents
        self.signs = (1.0, -1.0)[:n_agents]

    def loss(self, agent, x):
        return self.signs[agent] * 0.5 * float(x @ x)

    def grad(self, agent, x):
        return self.signs[agent] * x

    def sgd_pool(self, agent):
        return 1

    def batch_grad(self, agent, idx, x):
        return self.grad(agent, x)


def psi(w):
    """0 for w <= 0, 1 - exp(-w^2) for w > 0 (exact zero on the flat side)."""
    w = np.asarray(w, dtype=np.float64)
    return np.where(w > 0.0, -np.expm1(-(w * w)), 0.0)


def psi_prime(w):
    w = np.asarray(w, dtype=np.float64)
    return np.where(w > 0.0, 2.0 * w * np.exp(-(w * w)), 0.0)


def phi(w):
    w = np.asarray(w, dtype=np.float64)
    return 4.0 * np.arctan(w) + TWO_PI


def phi_prime(w):
    w = np.asarray(w, dtype=np.float64)
    return 4.0 / (1.0 + w * w)


def phi_second(w):
    w = np.asarray(w, dtype=np.float64)
    s = 1.0 + w * w
    return -8.0 * w / (s * s)


@dataclass(frozen=True)
class ChainSpec:
    """Parameters of the coupled-chain hard instance.

    `length` is the number of chain links (problem dimension is length+1);
    it must be a positive multiple of `n_agents` and at least `n_agents`.
    `eps` is the stationarity target the instance is scaled to; `lipschitz`
    the nominal smoothness scale.
    """

    length: int
    n_agents: int
    eps: float
    lipschitz: float

    def __post_init__(self):
        if self.n_agents < 1 or self.length < self.n_agents:
            raise ConfigError("chain needs length >= n_agents >= 1")
        if self.length % self.n_agents != 0:
            raise ConfigError("chain length must be divisible by n_agents")
        if self.eps <= 0 or self.lipschitz <= 0:
            raise ConfigError("chain needs eps > 0 and lipschitz > 0")

    @property
    def dim(self):
        return self.length + 1


class Chain:
    """Adversarial chain: each aggregation can awaken at most one coordinate.

    Agent a (0-based) owns the link couplings at 0-based coordinate pairs
    (a + l*N, a + l*N + 1); every agent shares the driving term on
    coordinate 0.  Values/gradients come from the closed-form piecewise
    partials, so coordinates outside the support rules stay exactly zero.
    """

    kind = "chain"
    analytic = True

    # pseudo-samples for the stochastic variant: the agent function is
    # split as f_i = (1/s) * sum_k F_k with F_k = s*w_k*f_i, sum w_k = 1
    PSEUDO_SAMPLES = 4

    def __init__(self, spec: ChainSpec):
        self.spec = spec
        self.n_agents = spec.n_agents
        per = spec.length // spec.n_agents
        self._left = [
            agent + spec.n_agents * np.arange(per) for agent in range(spec.n_agents)
        ]
        self._scale = spec.lipschitz / (math.pi * math.sqrt(2.0 * spec.eps))
        self._value_scale = TWO_PI * spec.eps / spec.lipschitz
        self._grad_scale = math.sqrt(2.0 * spec.eps)
        w = np.arange(1, self.PSEUDO_SAMPLES + 1, dtype=np.float64)
        self._pseudo_weights = self.PSEUDO_SAMPLES * w / w.sum()

    def _g_value(self, agent, u):
        ls = self._left[agent]
        ul, ur = u[ls], u[ls + 1]
        core = psi(-ul) * phi(-ur) - psi(ul) * phi(ur)
        drive = -psi(np.float64(1.0)) * phi(u[0])
        return float(drive + core.sum())

    def g_value_batch(self, agent, U):
        """Unscaled component values for a (n, dim) batch of points."""
        U = np.asarray(U, dtype=np.float64)
        ls = self._left[agent]
        ul, ur = U[:, ls], U[:, ls + 1]
        core = psi(-ul) * phi(-ur) - psi(ul) * phi(ur)
        return -psi(np.float64(1.0)) * phi(U[:, 0]) + core.sum(axis=1)

    def g_mean_value_batch(self, U):
        acc = self.g_value_batch(0, U)
        for a in range(1, self.n_agents):
            acc = acc + self.g_value_batch(a, U)
        return acc / self.n_agents

    def _g_grad(self, agent, u):
        g = np.zeros_like(u)
        g[0] = -psi(np.float64(1.0)) * phi_prime(u[0])
        ls = self._left[agent]
        ul, ur = u[ls], u[ls + 1]
        dl = -psi_prime(-ul) * phi(-ur) - psi_prime(ul) * phi(ur)
        dr = -psi(-ul) * phi_prime(-ur) - psi(ul) * phi_prime(ur)
        np.add.at(g, ls, dl)
        np.add.at(g, ls + 1, dr)
        return g

    def g_mean_value(self, u):
        return sum(self._g_value(a, u) for a in range(self.n_agents)) / self.n_agents

    def loss(self, agent, x):
        return self._value_scale * self._g_value(agent, self._scale * x)

    def grad(self, agent, x):
        return self._grad_scale * self._g_grad(agent, self._scale * x)

    def sgd_pool(self, agent):
        return self.PSEUDO_SAMPLES

    def batch_grad(self, agent, idx, x):
        g = self.grad(agent, x)
        if len(idx) == self.PSEUDO_SAMPLES and np.array_equal(
            idx, np.arange(self.PSEUDO_SAMPLES)
        ):
            return g
        return float(np.mean(self._pseudo_weights[idx])) * g


# ---------------------------------------------------------------------------
# the problem bundle


@dataclass
class Problem:
    """N per-agent objectives behind a uniform gradient interface.

    `shards` is empty for analytic families.  `lipschitz` is the smoothness
    estimate used by stepsize rules and validity lints; for data families it
    comes from the generator, for user data it is a caller-supplied bound.
    """

    family: object
    shards: list
    dim: int
    n_agents: int
    lipschitz: float
    name: str = ""

    def __post_init__(self):
        if self.n_agents < 1:
            raise ConfigError("need at least one agent")
        if self.lipschitz <= 0:
            raise ConfigError("lipschitz estimate must be positive")
        if self.shards:
            if len(self.shards) != self.n_agents:
                raise ConfigError("one shard per agent required")
            for s in self.shards:
                if s.dim != self.dim:
                    raise ConfigError("inconsistent feature dimension across shards")
                if getattr(self.family, "classification", False):
                    bad = ~np.isin(s.labels, (-1.0, 1.0))
                    if bad.any():
                        raise ConfigError("classification labels must be -1 or +1")

    @property
    def analytic(self):
        return not self.shards

    def _target(self, agent):
        if not 0 <= agent < self.n_agents:
            raise ValueError(f"agent index {agent} out of range")
        return agent if self.analytic else self.shards[agent]

    def loss(self, agent, x) -> float:
        x = check_vec(x, self.dim)
        return float(self.family.loss(self._target(agent), x))

    def grad(self, agent, x) -> np.ndarray:
        x = check_vec(x, self.dim)
        return self.family.grad(self._target(agent), x)

    def stoch_grad(self, agent, x, batch) -> np.ndarray:
        x = check_vec(x, self.dim)
        tgt = self._target(agent)
        idx = _as_idx(batch, self.sgd_pool(agent))
        return self.family.batch_grad(tgt, idx, x)

    def mean_grad(self, x) -> np.ndarray:
        x = check_vec(x, self.dim)
        acc = self.family.grad(self._target(0), x).copy()
        for agent in range(1, self.n_agents):
            acc += self.family.grad(self._target(agent), x)
        return acc / self.n_agents

    def mean_loss(self, x) -> float:
        return sum(self.loss(a, x) for a in range(self.n_agents)) / self.n_agents

    def n_samples(self, agent) -> int:
        """Real samples on the agent (0 for analytic families; drives AS counts)."""
        return 0 if self.analytic else len(self.shards[agent])

    def sgd_pool(self, agent) -> int:
        """Index pool stochastic batches are drawn from."""
        if self.analytic:
            return self.family.sgd_pool(agent)
        return len(self.shards[agent])


def quadratic_pair_problem(dim=1, n_agents=2) -> Problem:
    fam = QuadraticPair(n_agents)
    return Problem(fam, [], dim, n_agents, lipschitz=1.0, name="quadratic_pair")


def chain_problem(spec: ChainSpec) -> Problem:
    fam = Chain(spec)
    return Problem(
        fam, [], spec.dim, spec.n_agents, lipschitz=spec.lipschitz, name="chain"
    )
