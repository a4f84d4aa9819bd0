"""Theoretical constants and post-hoc verification of recorded runs.

Every bound here is checked as an inequality and reported as a ratio
(empirical / bound): the constants are worst-case and deliberately loose, so
ratios well below one are expected and nothing is asserted tighter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .compression import CompressorSpec, payload_bytes_of
from .engine import RunRecord
from .topology import MixingMatrix

__all__ = [
    "TheoryParams",
    "consensus_error",
    "cbar",
    "check_consensus_bound",
    "stepsize_schedule",
    "comm_cost_model",
    "second_moment_drift_check",
    "inv_sqrt_diff_ceiling",
]


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class TheoryParams:
    rho: float
    eta: float
    gamma: float
    alpha: float
    delta: float
    B: float          # Euclidean gradient bound
    B_inf: float      # per-coordinate gradient bound
    L: float
    n: int
    K: int
    T: int

    @property
    def b_u(self) -> float:
        # ||u||_inf never exceeds B_inf^2 for any of the second-moment rules
        return self.B_inf**2

    @property
    def gamma_ceiling(self) -> float:
        return (1.0 - self.rho) * (1.0 - self.eta**2) / 100.0


def consensus_error(X: np.ndarray) -> float:
    """(1/n) ||X (I - J)||_F^2 — the spread of agent columns about their mean."""
    X = np.asarray(X, dtype=float)
    n = X.shape[1]
    if n < 2:
        raise AnalysisError(f"need at least 2 agents, got {n}")
    Xp = X - X.mean(axis=1, keepdims=True)
    return float(np.sum(Xp * Xp)) / n


def cbar(gamma: float, rho: float, eta: float, B: float, delta: float) -> float:
    """Consensus-bound constant: 56/(g rh) (80/(g rh) + 15/(1-eta^2)) B^2 / delta
    with rh = 1 - rho."""
    g_rh = gamma * (1.0 - rho)
    if g_rh <= 0:
        raise AnalysisError(f"need gamma (1-rho) > 0, got {g_rh}")
    if not (0.0 <= eta < 1.0):
        raise AnalysisError(f"need eta in [0,1), got {eta}")
    if delta <= 0:
        raise AnalysisError(f"need delta > 0, got {delta}")
    return 56.0 / g_rh * (80.0 / g_rh + 15.0 / (1.0 - eta**2)) * B**2 / delta


def check_consensus_bound(run: RunRecord, params: TheoryParams) -> dict:
    """Time-averaged ||X_perp||^2 against alpha^2 n K^2 Cbar."""
    if run.cons_sq_full is None:
        raise AnalysisError("run lacks the per-iteration consensus series")
    empirical = float(np.mean(run.cons_sq_full))
    c = cbar(params.gamma, params.rho, params.eta, params.B, params.delta)
    bound = params.alpha**2 * params.n * params.K**2 * c
    ratio = empirical / bound if bound > 0 else (0.0 if empirical == 0 else float("inf"))
    return {
        "empirical_mean_cons_sq": empirical,
        "bound": bound,
        "cbar": c,
        "ratio": ratio,
        "holds": empirical <= bound or bound == empirical == 0.0,
    }


def stepsize_schedule(n: int, T: int, K: int, B_inf: float, delta: float,
                      theta: float, L: float) -> dict:
    """Horizon-dependent step size alpha = 4 theta sqrt(n (B_inf^2+delta)) / sqrt(TK)
    plus feasibility against its ceiling min{delta/(48 L sqrt(B_inf^2+delta)), 1}."""
    tk = T * K
    alpha = 4.0 * theta * math.sqrt(n * (B_inf**2 + delta)) / math.sqrt(tk)
    ceiling_smooth = delta / (48.0 * L * math.sqrt(B_inf**2 + delta))
    ceiling = min(ceiling_smooth, 1.0)
    return {
        "alpha": alpha,
        "ceiling": ceiling,
        "ceiling_smoothness": ceiling_smooth,
        "feasible": alpha <= ceiling,
    }


def comm_cost_model(T: int, compressor: CompressorSpec, d: int,
                    mixing: MixingMatrix) -> int:
    """Predicted total network bytes: rounds x per-agent payload x out-degree.

    Exact for deterministic-size payloads (identity, top_k, random_k, qsgd);
    gossip_drop payload depends on the keep draws, so this is an upper value.
    """
    if T < 0:
        raise AnalysisError(f"need T >= 0, got {T}")
    per_round = sum(payload_bytes_of(compressor, d) * mixing.out_degree(i)
                    for i in range(mixing.n))
    return T * per_round


def inv_sqrt_diff_ceiling(kind: str, d: int, delta: float, B_inf: float,
                          TK: int, beta2: float | None = None) -> float:
    """Ceiling on the summed inverse-sqrt second-moment differences.

    amsgrad: d/delta. adam/adam_mini: TK d (1-beta2)^2 B_inf^4 / delta^3.
    avg_adagrad: 2 d B_inf^4 / delta^3. matrix_adagrad: 2 d^2 B_inf^4 / delta^3.
    SGD kinds keep u = 0, so the sum is exactly zero.
    """
    if kind in ("vanilla_sgd", "momentum_sgd"):
        return 0.0
    if kind == "amsgrad":
        return d / delta
    if kind in ("adam", "adam_mini"):
        if beta2 is None:
            raise AnalysisError(f"{kind} ceiling needs beta2")
        return TK * d * (1.0 - beta2)**2 * B_inf**4 / delta**3
    if kind == "avg_adagrad":
        return 2.0 * d * B_inf**4 / delta**3
    if kind == "matrix_adagrad":
        return 2.0 * d**2 * B_inf**4 / delta**3
    raise AnalysisError(f"unknown optimizer kind {kind!r}")


def second_moment_drift_check(run: RunRecord, kind: str, d: int, delta: float,
                   B_inf: float, TK: int, beta2: float | None = None) -> dict:
    """Measured accumulator sum against the per-optimizer ceiling."""
    measured = run.inv_sqrt_diff_mean
    ceiling = inv_sqrt_diff_ceiling(kind, d, delta, B_inf, TK, beta2)
    if kind in ("vanilla_sgd", "momentum_sgd"):
        holds = measured == 0.0
    else:
        holds = measured <= ceiling * (1.0 + 1e-12)
    return {"measured": measured, "ceiling": ceiling, "holds": holds}
