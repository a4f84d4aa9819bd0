"""Synthetic objective suite with per-agent data shards.

Three problem kinds share the finite-sum structure f = (1/n) sum_i f_i:

  least_squares      0.5 * (a^T x - b)^2            (planted ground truth)
  logistic           log(1 + exp(-y a^T x))         (binary, labels +-1)
  sigmoid_nonconvex  (1 - sigmoid(y a^T x))^2       (smooth, bounded, nonconvex)

All kinds add an optional ridge term lam/2 ||x||^2. Classification kinds draw
class-conditional Gaussian features so Dirichlet label skew induces genuine
heterogeneity across shards.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ProblemSet",
    "PartitionPlan",
    "ProblemError",
    "make_problem",
    "stochastic_grad",
    "local_grad_and_loss",
    "full_grad_and_loss",
    "dirichlet_partition",
    "smoothness_constant",
    "dump_csv",
    "load_csv",
]

PROBLEM_KINDS = ("least_squares", "logistic", "sigmoid_nonconvex")

# max |d^2/du^2 (1 - sigmoid(u))^2| over u; the exact supremum of
# 2 s (1-s)^2 |1-3s| with s = sigmoid(u) is below 0.16
SIGMOID_SQ_CURVATURE = 0.16


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class PartitionPlan:
    scheme: str = "iid"           # "iid" or "dirichlet"
    alpha: float | None = None    # dirichlet concentration
    seed: int | None = None       # defaults to the problem seed

    def __post_init__(self):
        if self.scheme not in ("iid", "dirichlet"):
            raise ProblemError(f"unknown partition scheme {self.scheme!r}")
        if self.scheme == "dirichlet" and (self.alpha is None or self.alpha <= 0):
            raise ProblemError(f"dirichlet needs alpha > 0, got {self.alpha}")


@dataclass(frozen=True)
class ProblemSet:
    kind: str
    d: int
    lam: float
    features: tuple[np.ndarray, ...]   # one (N_i, d) matrix per agent
    targets: tuple[np.ndarray, ...]    # per-agent targets (reals or +-1 labels)
    clip_b_inf: float | None = None
    x_star: np.ndarray | None = None   # planted parameter (least_squares)
    meta: dict = field(default_factory=dict)

    @property
    def n_agents(self) -> int:
        return len(self.features)

    def shard_sizes(self) -> list[int]:
        return [a.shape[0] for a in self.features]

    def data_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.kind}|{self.d}|{self.lam!r}|{self.n_agents}".encode())
        for A, y in zip(self.features, self.targets):
            h.update(np.ascontiguousarray(A).tobytes())
            h.update(np.ascontiguousarray(y).tobytes())
        return h.hexdigest()[:16]


def dirichlet_partition(labels: np.ndarray, n_agents: int, alpha: float,
                        seed: int, max_retries: int = 100) -> np.ndarray:
    """Assign each sample to an agent with per-class Dirichlet proportions.

    For every class the agent proportions are drawn Dirichlet(alpha * 1_n) and
    the class's samples are assigned multinomially. Redrawn (bounded retries)
    until every agent holds at least one sample.
    """
    if alpha <= 0:
        raise ProblemError(f"dirichlet needs alpha > 0, got {alpha}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    for _ in range(max_retries):
        assign = np.empty(labels.size, dtype=int)
        for c in classes:
            idx = np.nonzero(labels == c)[0]
            props = rng.dirichlet(np.full(n_agents, alpha))
            assign[idx] = rng.choice(n_agents, size=idx.size, p=props)
        counts = np.bincount(assign, minlength=n_agents)
        if counts.min() > 0:
            return assign
    raise ProblemError(
        f"could not produce nonempty shards for all {n_agents} agents "
        f"after {max_retries} draws")


def _iid_partition(n_samples: int, n_agents: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_samples)
    assign = np.empty(n_samples, dtype=int)
    for i in range(n_agents):
        assign[perm[i::n_agents]] = i
    return assign


def make_problem(kind: str, d: int, n_agents: int, samples_per_agent: int,
                 partition: PartitionPlan | None = None, seed: int = 0,
                 lam: float = 0.0, noise: float = 0.1,
                 clip_b_inf: float | None = None) -> ProblemSet:
    """Generate a deterministic synthetic problem with per-agent shards."""
    if kind not in PROBLEM_KINDS:
        raise ProblemError(f"unknown problem kind {kind!r}")
    if d < 1 or n_agents < 2 or samples_per_agent < 1:
        raise ProblemError(
            f"invalid sizes d={d}, n_agents={n_agents}, "
            f"samples_per_agent={samples_per_agent}")
    if lam < 0:
        raise ProblemError(f"lambda must be >= 0, got {lam}")
    partition = partition or PartitionPlan()
    rng = np.random.default_rng(seed)
    total = n_agents * samples_per_agent

    x_star = None
    if kind == "least_squares":
        x_star = rng.standard_normal(d)
        A = rng.standard_normal((total, d))
        y = A @ x_star + noise * rng.standard_normal(total)
        part_labels = (y > np.median(y)).astype(int)
    else:
        labels = rng.integers(0, 2, size=total)
        mu = rng.standard_normal(d)
        mu *= 1.5 / max(np.linalg.norm(mu), 1e-12)
        signs = 2.0 * labels - 1.0
        A = signs[:, None] * mu[None, :] + rng.standard_normal((total, d))
        y = signs
        part_labels = labels

    part_seed = partition.seed if partition.seed is not None else seed + 1
    if partition.scheme == "iid":
        assign = _iid_partition(total, n_agents, part_seed)
    else:
        assign = dirichlet_partition(part_labels, n_agents, partition.alpha,
                                     part_seed)
    feats, targs = [], []
    for i in range(n_agents):
        idx = np.nonzero(assign == i)[0]
        feats.append(A[idx])
        targs.append(y[idx])
    return ProblemSet(kind=kind, d=d, lam=lam,
                      features=tuple(feats), targets=tuple(targs),
                      clip_b_inf=clip_b_inf, x_star=x_star,
                      meta={"seed": seed, "noise": noise,
                            "partition": partition.scheme,
                            "alpha": partition.alpha})


def _sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _per_sample_losses_grads(problem: ProblemSet, A: np.ndarray, y: np.ndarray,
                             x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Losses (N,) and gradients (N, d) excluding the ridge term."""
    z = A @ x
    if problem.kind == "least_squares":
        r = z - y
        return 0.5 * r * r, r[:, None] * A
    u = y * z
    s = _sigmoid(u)
    if problem.kind == "logistic":
        # log(1 + exp(-u)) computed stably
        losses = np.logaddexp(0.0, -u)
        coeff = -(1.0 - s) * y
        return losses, coeff[:, None] * A
    # sigmoid_nonconvex: (1 - s)^2
    losses = (1.0 - s) ** 2
    coeff = -2.0 * s * (1.0 - s) ** 2 * y
    return losses, coeff[:, None] * A


def local_grad_and_loss(problem: ProblemSet, agent: int,
                        x: np.ndarray) -> tuple[float, np.ndarray]:
    """Exact f_i(x) and grad f_i(x) over agent i's full shard."""
    A, y = problem.features[agent], problem.targets[agent]
    losses, grads = _per_sample_losses_grads(problem, A, y, x)
    loss = float(losses.mean()) + 0.5 * problem.lam * float(x @ x)
    grad = grads.mean(axis=0) + problem.lam * x
    return loss, grad


def full_grad_and_loss(problem: ProblemSet,
                       x: np.ndarray) -> tuple[float, np.ndarray]:
    """Exact global objective f(x) = (1/n) sum_i f_i(x) and its gradient."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ProblemError("non-finite iterate")
    loss, grad = 0.0, np.zeros(problem.d)
    for i in range(problem.n_agents):
        li, gi = local_grad_and_loss(problem, i, x)
        loss += li
        grad += gi
    n = problem.n_agents
    return loss / n, grad / n


def stochastic_grad(problem: ProblemSet, agent: int, x: np.ndarray,
                    batch: int | None, rng: np.random.Generator) -> np.ndarray:
    """Minibatch gradient of f_i, sampled with replacement; batch=None means a
    full pass over the shard (each point exactly once), which equals the exact
    gradient. Elementwise clipping, when configured, is applied after
    averaging."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ProblemError("non-finite iterate")
    A, y = problem.features[agent], problem.targets[agent]
    if batch is None:
        _, g = local_grad_and_loss(problem, agent, x)
    else:
        if batch < 1:
            raise ProblemError(f"batch must be >= 1, got {batch}")
        idx = rng.integers(0, A.shape[0], size=batch)
        _, grads = _per_sample_losses_grads(problem, A[idx], y[idx], x)
        g = grads.mean(axis=0) + problem.lam * x
    if problem.clip_b_inf is not None:
        g = np.clip(g, -problem.clip_b_inf, problem.clip_b_inf)
    return g


def smoothness_constant(problem: ProblemSet) -> float:
    """Global L = max over agents of the closed-form per-agent bound.

    least_squares: lambda_max(A_i^T A_i / N_i) + lam (exact).
    logistic: curvature of log(1+e^-u) is at most 1/4, so L_i <=
        lambda_max(A_i^T A_i) / (4 N_i) + lam.
    sigmoid_nonconvex: |d^2/du^2 (1-sigmoid(u))^2| <= 0.16, same shape.
    """
    if problem.kind == "least_squares":
        c = 1.0
    elif problem.kind == "logistic":
        c = 0.25
    else:
        c = SIGMOID_SQ_CURVATURE
    L = 0.0
    for A in problem.features:
        lam_max = float(np.linalg.eigvalsh(A.T @ A / A.shape[0])[-1])
        L = max(L, c * lam_max + problem.lam)
    return L


def dump_csv(problem: ProblemSet, path) -> None:
    """One row per sample: agent_id, target, features..."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["agent_id", "target"] + [f"x{j}" for j in range(problem.d)])
        for i in range(problem.n_agents):
            for a, t in zip(problem.features[i], problem.targets[i]):
                w.writerow([i, repr(float(t))] + [repr(float(v)) for v in a])


def load_csv(path, kind: str, lam: float = 0.0,
             clip_b_inf: float | None = None) -> ProblemSet:
    by_agent: dict[int, list[tuple[float, list[float]]]] = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        d = len(header) - 2
        for row in r:
            by_agent.setdefault(int(row[0]), []).append(
                (float(row[1]), [float(v) for v in row[2:]]))
    agents = sorted(by_agent)
    if agents != list(range(len(agents))):
        raise ProblemError(f"agent ids not contiguous in {path}")
    feats = tuple(np.array([f for _, f in by_agent[i]]) for i in agents)
    targs = tuple(np.array([t for t, _ in by_agent[i]]) for i in agents)
    return ProblemSet(kind=kind, d=d, lam=lam, features=feats, targets=targs,
                      clip_b_inf=clip_b_inf)
