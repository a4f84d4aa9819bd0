"""Training loop: K local adaptive steps per compressed gossip round.

Iterates follow the schedule where communication fires at every iteration t
with mod(t+1, K) = 0. Two communication implementations are kept side by
side: a direct reference that reads neighbor compression references, and the
accumulator ("y-vector") formulation in which only compressed deltas cross
agent boundaries. Under shared compressor randomness they produce identical
trajectories, which the test suite asserts.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import localopt, problems
from .compression import CompressorSpec, compress, eta_of
from .localopt import OptimizerSpec
from .problems import ProblemSet
from .topology import Graph, MixingMatrix, build_topology

__all__ = [
    "RunConfig",
    "RunRecord",
    "TheoryModeError",
    "EngineError",
    "run",
    "comm_round_direct",
    "comm_round_bookkeeping",
    "z_sequence_probe",
    "default_gamma",
]


class EngineError(ValueError):
    pass


class TheoryModeError(RuntimeError):
    """A theory-mode step-size or gamma condition is violated."""


def default_gamma(rho: float, eta: float, theory_mode: bool) -> float:
    if theory_mode:
        return (1.0 - rho) * (1.0 - eta**2) / 100.0
    return 1.0


@dataclass(frozen=True)
class RunConfig:
    optimizer: OptimizerSpec
    compressor: CompressorSpec
    topology_kind: str
    n: int
    K: int
    T: int
    gamma: float | None = None       # None -> theory ceiling / 1.0 for identity
    seed: int = 0
    batch: int | None = None         # None -> full-batch gradients
    theory_mode: bool = False
    theory_strict: bool = True
    record_every: int | None = None  # None -> every iter for TK <= 1e4, else K
    record_history: bool = False     # keep xbar / z-identity series
    comm_variant: str = "bookkeeping"
    workers: int = 1
    graph: Graph | None = None       # for topology_kind == "custom"

    def __post_init__(self):
        if self.K < 1 or self.T < 1:
            raise EngineError(f"need K >= 1 and T >= 1, got K={self.K}, T={self.T}")
        if self.gamma is not None and not (0.0 < self.gamma <= 1.0):
            raise EngineError(f"gamma must be in (0,1], got {self.gamma}")
        if self.comm_variant not in ("direct", "bookkeeping"):
            raise EngineError(f"unknown comm variant {self.comm_variant!r}")
        if self.workers < 1:
            raise EngineError(f"workers must be >= 1, got {self.workers}")

    @property
    def total_steps(self) -> int:
        return self.T * self.K


@dataclass
class RunRecord:
    """Per-iteration time series plus end-of-run summaries."""

    config_echo: dict
    rho: float
    eta: float
    gamma: float
    problem_hash: str
    rec_t: list[int] = field(default_factory=list)
    rec_round: list[int] = field(default_factory=list)
    rec_loss: list[float] = field(default_factory=list)
    rec_grad_sq: list[float] = field(default_factory=list)
    rec_cons: list[float] = field(default_factory=list)
    rec_bytes: list[int] = field(default_factory=list)
    cons_sq_full: np.ndarray | None = None   # ||X_perp^t||_F^2, t = 0..TK-1
    bytes_total: int = 0
    bytes_per_link: int = 0
    avg_drift_max: float = 0.0
    inv_sqrt_diff_mean: float = 0.0
    grad_inf_max: float = 0.0
    grad_norm_max: float = 0.0
    smoothness_L: float = 0.0
    final_loss: float = 0.0
    final_grad_sq: float = 0.0
    best_grad_sq: float = float("inf")
    final_consensus: float = 0.0
    theory: dict = field(default_factory=dict)
    history: dict | None = None
    X_final: np.ndarray | None = None

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,round,loss,grad_norm_sq,consensus_err,bytes_cumulative\n")
            for row in zip(self.rec_t, self.rec_round, self.rec_loss,
                           self.rec_grad_sq, self.rec_cons, self.rec_bytes):
                fh.write("%d,%d,%s,%s,%s,%d\n"
                         % (row[0], row[1], repr(float(row[2])),
                            repr(float(row[3])), repr(float(row[4])), row[5]))

    def summary(self) -> dict:
        return {
            "config": self.config_echo,
            "problem_hash": self.problem_hash,
            "rho": self.rho,
            "eta": self.eta,
            "gamma": self.gamma,
            "bytes_total": self.bytes_total,
            "bytes_per_link": self.bytes_per_link,
            "final_loss": self.final_loss,
            "final_grad_sq": self.final_grad_sq,
            "best_grad_sq": self.best_grad_sq,
            "final_consensus": self.final_consensus,
            "avg_drift_max": self.avg_drift_max,
            "inv_sqrt_diff_mean": self.inv_sqrt_diff_mean,
            "grad_inf_max": self.grad_inf_max,
            "grad_norm_max": self.grad_norm_max,
            "smoothness_L": self.smoothness_L,
            "theory": self.theory,
        }

    def save_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _compress_columns(X_half: np.ndarray, X_under: np.ndarray,
                      spec: CompressorSpec,
                      rngs: list[np.random.Generator]):
    """One compressor draw per agent, reused for every receiving neighbor."""
    d, n = X_half.shape
    D = np.empty((d, n))
    payloads = []
    for i in range(n):
        delta = compress(spec, X_half[:, i] - X_under[:, i], rngs[i])
        D[:, i] = delta.dense
        payloads.append(delta.payload_bytes)
    return D, payloads


def comm_round_direct(X_half, X_under, W, gamma, spec, rngs):
    """Reference mixing step that reads neighbor references directly.

    All compression references advance first, then every iterate mixes against
    the completed column set.
    """
    D, payloads = _compress_columns(X_half, X_under, spec, rngs)
    X_under_new = X_under + D
    X_new = X_half + gamma * (X_under_new @ (W - np.eye(W.shape[0])))
    return X_new, X_under_new, payloads


def comm_round_bookkeeping(X_half, X_under, Y, W, gamma, spec, rngs):
    """Accumulator formulation: neighbors only ever see compressed deltas.

    y_i accumulates sum_j W_ji Q[x_j^{half} - xref_j]; the iterate update
    x_i <- x_i^{half} + gamma (y_i - xref_i) is then local.
    """
    D, payloads = _compress_columns(X_half, X_under, spec, rngs)
    X_under_new = X_under + D
    Y_new = Y + D @ W
    X_new = X_half + gamma * (Y_new - X_under_new)
    return X_new, X_under_new, Y_new, payloads


def _theory_checks(config: RunConfig, problem: ProblemSet, rho: float,
                   eta: float, gamma: float, L: float) -> dict:
    gamma_ceiling = (1.0 - rho) * (1.0 - eta**2) / 100.0
    clip = problem.clip_b_inf
    b_u = clip**2 if clip is not None else None
    checks = {
        "gamma": gamma,
        "gamma_ceiling": gamma_ceiling,
        "gamma_ok": gamma <= gamma_ceiling + 1e-15,
        "b_inf_source": "clip" if clip is not None else "empirical (non-rigorous)",
    }
    if b_u is not None:
        delta = config.optimizer.delta
        alpha_ceiling = delta / (48.0 * L * float(np.sqrt(b_u + delta)))
        checks["alpha"] = config.optimizer.alpha
        checks["alpha_ceiling"] = alpha_ceiling
        checks["alpha_ok"] = bool(config.optimizer.alpha
                                  <= alpha_ceiling + 1e-15)
    else:
        checks["alpha_ok"] = None  # not checkable without a gradient bound
    return checks


def run(config: RunConfig, problem: ProblemSet,
        mixing: MixingMatrix | None = None) -> RunRecord:
    """Execute T*K iterations of the framework and collect metrics.

    Deterministic given config.seed: every agent owns independent sampling and
    compression streams spawned from it, so neither the comm variant's caller
    order nor the worker count can change results.
    """
    if mixing is None:
        mixing = build_topology(config.topology_kind, config.n, config.graph)
    n, d = config.n, problem.d
    if mixing.n != n or problem.n_agents != n:
        raise EngineError(
            f"agent counts disagree: topology {mixing.n}, config {config.n}, "
            f"problem {problem.n_agents}")
    W = mixing.W
    rho = mixing.rho
    eta = eta_of(config.compressor, d)
    gamma = (config.gamma if config.gamma is not None
             else default_gamma(rho, eta, config.theory_mode))
    opt_spec = config.optimizer
    if config.record_history and opt_spec.kind == "matrix_adagrad":
        raise EngineError("history recording covers vector optimizers only")
    TK = config.total_steps
    opt_spec.check_run_length(TK)
    L = problems.smoothness_constant(problem)

    theory = {}
    if config.theory_mode:
        theory = _theory_checks(config, problem, rho, eta, gamma, L)
        bad = [k for k in ("gamma_ok", "alpha_ok") if theory.get(k) is False]
        if bad:
            msg = f"theory-mode conditions violated: {', '.join(bad)} ({theory})"
            if config.theory_strict:
                raise TheoryModeError(msg)
            warnings.warn(msg, stacklevel=2)

    ss = np.random.SeedSequence(config.seed)
    children = ss.spawn(2 * n)
    sample_rngs = [np.random.default_rng(c) for c in children[:n]]
    comm_rngs = [np.random.default_rng(c) for c in children[n:]]

    x0 = np.zeros(d)
    X = np.tile(x0[:, None], (1, n))
    X_under = X.copy()
    Y = X_under.copy()
    opts = [localopt.init_state(opt_spec, d) for _ in range(n)]
    out_degrees = [mixing.out_degree(i) for i in range(n)]

    record_every = config.record_every
    if record_every is None:
        record_every = 1 if TK <= 10_000 else config.K

    rec = RunRecord(
        config_echo=_config_echo(config),
        rho=rho, eta=eta, gamma=gamma,
        problem_hash=problem.data_hash(),
        smoothness_L=L, theory=theory,
    )
    cons_sq_full = np.empty(TK)
    if config.record_history:
        xbar_hist = np.empty((TK + 1, d))
        xbar_hist[0] = X.mean(axis=1)
        z_rhs = np.empty((TK, d))

    beta1, delta = opt_spec.beta1, opt_spec.delta
    alpha = opt_spec.alpha
    pool = (ThreadPoolExecutor(max_workers=config.workers)
            if config.workers > 1 else None)

    def local_phase(i: int, t: int):
        g = problems.stochastic_grad(problem, i, X[:, i], config.batch,
                                     sample_rngs[i])
        st = opts[i]
        m_prev, u_pp, u_p = st.m, st.u_prev, st.u   # pre-update references
        localopt.update_first_moment(st, g, beta1)
        localopt.update_second_moment(opt_spec, st, g)
        x_half = localopt.local_step(st, X[:, i], opt_spec)
        return g, m_prev, u_pp, u_p, x_half

    try:
        for t in range(TK):
            Xp = X - X.mean(axis=1, keepdims=True)
            cons_sq_full[t] = float(np.sum(Xp * Xp))
            if t % record_every == 0:
                _record_metrics(rec, problem, X, t, config.K, rec.bytes_total,
                                cons_sq_full[t] / n)

            if pool is not None:
                results = list(pool.map(lambda i: local_phase(i, t), range(n)))
            else:
                results = [local_phase(i, t) for i in range(n)]

            X_half = np.empty_like(X)
            for i, (g, _, _, _, x_half) in enumerate(results):
                X_half[:, i] = x_half
                gi = float(np.max(np.abs(g)))
                rec.grad_inf_max = max(rec.grad_inf_max, gi)
                rec.grad_norm_max = max(rec.grad_norm_max,
                                        float(np.linalg.norm(g)))

            if config.record_history:
                rhs = np.zeros(d)
                for g, m_prev, u_pp, u_p, _ in results:
                    if beta1 > 0:
                        rhs += (beta1 / (1.0 - beta1)) * m_prev * (
                            1.0 / np.sqrt(u_pp + delta)
                            - 1.0 / np.sqrt(u_p + delta))
                    rhs -= g / np.sqrt(u_p + delta)
                z_rhs[t] = alpha / n * rhs

            if (t + 1) % config.K == 0:
                if config.comm_variant == "direct":
                    X_new, X_under, payloads = comm_round_direct(
                        X_half, X_under, W, gamma, config.compressor, comm_rngs)
                else:
                    X_new, X_under, Y, payloads = comm_round_bookkeeping(
                        X_half, X_under, Y, W, gamma, config.compressor,
                        comm_rngs)
                drift = float(np.max(np.abs(
                    X_new.mean(axis=1) - X_half.mean(axis=1))))
                rec.avg_drift_max = max(rec.avg_drift_max, drift)
                rec.bytes_total += sum(p * od
                                       for p, od in zip(payloads, out_degrees))
                rec.bytes_per_link += sum(payloads)
                X = X_new
            else:
                X = X_half

            if config.record_history:
                xbar_hist[t + 1] = X.mean(axis=1)
    finally:
        if pool is not None:
            pool.shutdown()

    _record_metrics(rec, problem, X, TK, config.K, rec.bytes_total,
                    _consensus_of(X))
    rec.cons_sq_full = cons_sq_full
    rec.inv_sqrt_diff_mean = float(np.mean([s.inv_sqrt_diff_sum for s in opts]))
    rec.final_loss = rec.rec_loss[-1]
    rec.final_grad_sq = rec.rec_grad_sq[-1]
    rec.final_consensus = rec.rec_cons[-1]
    rec.X_final = X
    if config.record_history:
        rec.history = {"xbar": xbar_hist, "z_rhs": z_rhs}
    return rec


def _consensus_of(X: np.ndarray) -> float:
    Xp = X - X.mean(axis=1, keepdims=True)
    return float(np.sum(Xp * Xp)) / X.shape[1]


def _record_metrics(rec: RunRecord, problem: ProblemSet, X: np.ndarray,
                    t: int, K: int, bytes_cum: int, cons: float) -> None:
    xbar = X.mean(axis=1)
    loss, grad = problems.full_grad_and_loss(problem, xbar)
    gsq = float(grad @ grad)
    rec.rec_t.append(t)
    rec.rec_round.append(t // K)
    rec.rec_loss.append(loss)
    rec.rec_grad_sq.append(gsq)
    rec.rec_cons.append(cons)
    rec.rec_bytes.append(bytes_cum)
    rec.best_grad_sq = min(rec.best_grad_sq, gsq)


def _config_echo(config: RunConfig) -> dict:
    opt, comp = config.optimizer, config.compressor
    return {
        "optimizer": {"kind": opt.kind, "alpha": opt.alpha, "beta1": opt.beta1,
                      "beta2": opt.beta2, "delta": opt.delta},
        "compressor": {"kind": comp.kind, "k": comp.k, "s": comp.s, "p": comp.p},
        "topology": {"kind": config.topology_kind, "n": config.n},
        "K": config.K, "T": config.T, "gamma": config.gamma,
        "seed": config.seed, "batch": config.batch,
        "theory_mode": config.theory_mode,
        "record_every": config.record_every,
        "comm_variant": config.comm_variant,
        "workers": config.workers,
    }


def z_sequence_probe(record: RunRecord, beta1: float) -> float:
    """Max residual of the averaged-iterate difference identity.

    With z^t = xbar^t + beta1/(1-beta1) (xbar^t - xbar^{t-1}) and
    xbar^{-1} = xbar^0, the per-step change of z must equal the recorded
    momentum-lag correction minus the scaled gradient average.
    """
    if record.history is None:
        raise EngineError("run was executed without record_history")
    xbar = record.history["xbar"]
    rhs = record.history["z_rhs"]
    TK = rhs.shape[0]
    coef = beta1 / (1.0 - beta1)
    prev = np.vstack([xbar[0], xbar[:-1]])       # xbar^{t-1} with the t=0 convention
    z = xbar + coef * (xbar - prev)
    resid = z[1:TK + 1] - z[:TK] - rhs
    return float(np.max(np.linalg.norm(resid, axis=1)))
