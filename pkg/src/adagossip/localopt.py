"""Per-agent local adaptive-gradient updates.

Implements the shared first-moment recursion, the per-optimizer second-moment
rules (vanilla/momentum SGD, AMSGrad, Adam, Adam-mini, averaged AdaGrad, and
the matrix-form AdaGrad variant), and the parameter step that divides by the
lagged second moment. No bias correction is applied anywhere.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "OptimizerSpec",
    "OptimizerState",
    "OptimizerError",
    "init_state",
    "update_first_moment",
    "update_second_moment",
    "local_step",
    "adam_beta2_floor",
    "OPTIMIZER_KINDS",
]

OPTIMIZER_KINDS = (
    "vanilla_sgd",
    "momentum_sgd",
    "amsgrad",
    "adam",
    "adam_mini",
    "avg_adagrad",
    "matrix_adagrad",
)

MATRIX_DIM_LIMIT = 64  # eigendecomposition cost grows as d^3


class OptimizerError(ValueError):
    pass


def adam_beta2_floor(total_steps: int) -> float:
    """Smallest beta2 admitted by the adam/adam_mini run-length constraint."""
    r = math.sqrt(total_steps)
    return r / (r + 1.0)


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str
    alpha: float
    beta1: float = 0.0
    beta2: float = 0.999
    delta: float = 1e-8

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise OptimizerError(f"unknown optimizer kind {self.kind!r}")
        if self.alpha <= 0:
            raise OptimizerError(f"step size must be positive, got {self.alpha}")
        if self.delta <= 0:
            raise OptimizerError(f"stabilizer delta must be positive, got {self.delta}")
        if not (0.0 <= self.beta1 < 1.0):
            raise OptimizerError(f"beta1 must be in [0,1), got {self.beta1}")
        if self.kind == "vanilla_sgd" and self.beta1 != 0.0:
            raise OptimizerError("vanilla_sgd requires beta1 = 0")
        if self.uses_beta2 and not (0.0 < self.beta2 < 1.0):
            raise OptimizerError(f"beta2 must be in (0,1), got {self.beta2}")

    @property
    def uses_beta2(self) -> bool:
        return self.kind in ("amsgrad", "adam", "adam_mini")

    def check_run_length(self, total_steps: int) -> None:
        """Warn if beta2 violates the adam/adam_mini run-length condition."""
        if self.kind in ("adam", "adam_mini"):
            floor = adam_beta2_floor(total_steps)
            if self.beta2 < floor:
                warnings.warn(
                    f"{self.kind}: beta2={self.beta2} below the run-length "
                    f"floor {floor:.6f} for {total_steps} steps",
                    stacklevel=2,
                )


@dataclass
class OptimizerState:
    """Moments for one agent. u lags by one step in the parameter update, so
    both u (the latest) and u_prev (the divisor) are retained, plus u_prevprev
    for the inverse-sqrt difference accumulator."""

    m: np.ndarray
    u: np.ndarray          # second moment (d-vector, or d x d for matrix kind)
    u_prev: np.ndarray
    u_hat: np.ndarray | None = None   # amsgrad only
    t: int = 0
    inv_sqrt_diff_sum: float = 0.0


def init_state(spec: OptimizerSpec, d: int) -> OptimizerState:
    if spec.kind == "matrix_adagrad":
        if d > MATRIX_DIM_LIMIT:
            raise OptimizerError(
                f"matrix_adagrad limited to d <= {MATRIX_DIM_LIMIT}, got d={d}")
        u = np.zeros((d, d))
    else:
        u = np.zeros(d)
    u_hat = np.zeros(d) if spec.kind == "amsgrad" else None
    return OptimizerState(m=np.zeros(d), u=u, u_prev=u.copy(), u_hat=u_hat)


def update_first_moment(state: OptimizerState, g: np.ndarray,
                        beta1: float) -> np.ndarray:
    if g.shape != state.m.shape:
        raise OptimizerError(f"gradient shape {g.shape} != moment shape {state.m.shape}")
    state.m = beta1 * state.m + (1.0 - beta1) * g
    return state.m


def _inv_sqrt(u: np.ndarray, delta: float) -> np.ndarray:
    return 1.0 / np.sqrt(u + delta)


def _matrix_inv_sqrt(U: np.ndarray, delta: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(U + delta * np.eye(U.shape[0]))
    return (vecs / np.sqrt(vals)) @ vecs.T


def update_second_moment(spec: OptimizerSpec, state: OptimizerState,
                         g: np.ndarray) -> np.ndarray:
    """Advance u by one step per the optimizer rule.

    Also accumulates ||1/sqrt(u^{t-2}+delta) - 1/sqrt(u^{t-1}+delta)||^2 from
    the pair retained before the update, which downstream bound checks sum.
    """
    if spec.kind != "matrix_adagrad" and g.shape != state.m.shape:
        raise OptimizerError(f"gradient shape {g.shape} != moment shape {state.m.shape}")

    # entering step t the state holds u_prev = u^{t-2} and u = u^{t-1}
    if spec.kind == "matrix_adagrad":
        diff = (_matrix_inv_sqrt(state.u_prev, spec.delta)
                - _matrix_inv_sqrt(state.u, spec.delta))
    else:
        diff = _inv_sqrt(state.u_prev, spec.delta) - _inv_sqrt(state.u, spec.delta)
    state.inv_sqrt_diff_sum += float(np.sum(diff * diff))

    state.u_prev = state.u
    t = state.t
    g2 = g * g
    if spec.kind in ("vanilla_sgd", "momentum_sgd"):
        pass  # u stays identically zero
    elif spec.kind == "amsgrad":
        state.u_hat = spec.beta2 * state.u_hat + (1.0 - spec.beta2) * g2
        state.u = np.maximum(state.u, state.u_hat)
    elif spec.kind == "adam":
        state.u = spec.beta2 * state.u + (1.0 - spec.beta2) * g2
    elif spec.kind == "adam_mini":
        state.u = spec.beta2 * state.u + (1.0 - spec.beta2) * float(np.mean(g2))
    elif spec.kind == "avg_adagrad":
        state.u = state.u + (g2 - state.u) / (t + 1.0)
    elif spec.kind == "matrix_adagrad":
        outer = np.outer(g, g)
        state.u = state.u + (outer - state.u) / (t + 1.0)
    state.t = t + 1
    return state.u


def local_step(state: OptimizerState, x: np.ndarray,
               spec: OptimizerSpec) -> np.ndarray:
    """x - alpha * m / sqrt(u_prev + delta); the divisor is the second moment
    produced one step earlier (u_prev), matching the one-step lag of the
    update rule. For the matrix kind the divisor is (U_prev + delta I)^{-1/2}.
    """
    if spec.delta <= 0:
        raise OptimizerError("delta must be positive")
    if spec.kind == "matrix_adagrad":
        return x - spec.alpha * (_matrix_inv_sqrt(state.u_prev, spec.delta) @ state.m)
    return x - spec.alpha * state.m * _inv_sqrt(state.u_prev, spec.delta)
