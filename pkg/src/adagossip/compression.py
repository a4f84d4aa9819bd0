"""Contractive compression operators with payload accounting.

Each operator Q satisfies E||x - Q[x]||^2 <= eta^2 ||x||^2 for the eta
returned by :func:`eta_of`. Operators may be biased (Top-k is); no
unbiasedness is assumed anywhere downstream.

Payload accounting (bit-exact, used by the communication-cost model):
  identity / qsgd_rescaled -> d * VALUE_WIDTH
  top_k / random_k         -> k * (VALUE_WIDTH + INDEX_WIDTH)
  gossip_drop              -> d * VALUE_WIDTH when kept, 0 when dropped
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CompressorSpec",
    "CompressedDelta",
    "CertReport",
    "CompressionError",
    "eta_of",
    "compress",
    "certify_contraction",
    "VALUE_WIDTH",
    "INDEX_WIDTH",
]

VALUE_WIDTH = 8   # bytes per transmitted real
INDEX_WIDTH = 4   # bytes per transmitted coordinate index

KINDS = ("identity", "top_k", "random_k", "qsgd_rescaled", "gossip_drop")
RANDOMIZED_KINDS = ("random_k", "qsgd_rescaled", "gossip_drop")


class CompressionError(ValueError):
    pass


@dataclass(frozen=True)
class CompressorSpec:
    kind: str
    k: int | None = None      # top_k / random_k
    s: int | None = None      # qsgd_rescaled quantization levels
    p: float | None = None    # gossip_drop keep-probability

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CompressionError(f"unknown compressor kind {self.kind!r}")
        if self.kind in ("top_k", "random_k"):
            if self.k is None or self.k < 1:
                raise CompressionError(f"{self.kind} needs k >= 1, got {self.k}")
        elif self.kind == "qsgd_rescaled":
            if self.s is None or self.s < 1:
                raise CompressionError(f"qsgd_rescaled needs s >= 1, got {self.s}")
        elif self.kind == "gossip_drop":
            if self.p is None or not (0.0 < self.p <= 1.0):
                raise CompressionError(f"gossip_drop needs p in (0,1], got {self.p}")

    @property
    def randomized(self) -> bool:
        return self.kind in RANDOMIZED_KINDS


@dataclass(frozen=True)
class CompressedDelta:
    """Dense reconstruction Q[x] plus the bytes a real transport would carry."""

    dense: np.ndarray
    payload_bytes: int


def _check_dim(spec: CompressorSpec, d: int) -> None:
    if d < 1:
        raise CompressionError(f"dimension must be >= 1, got {d}")
    if spec.kind in ("top_k", "random_k") and spec.k > d:
        raise CompressionError(f"k={spec.k} exceeds dimension d={d}")


def qsgd_tau(s: int, d: int) -> float:
    return 1.0 + min(d / s**2, math.sqrt(d) / s)


def eta_of(spec: CompressorSpec, d: int) -> float:
    """Analytic contraction factor eta in [0, 1) for dimension d.

    Sparsification uses eta = sqrt((d-k)/d), the value certified exactly by
    subset enumeration for random-k (and an upper bound for top-k). The
    rescaled quantizer uses eta = sqrt(1 - 1/tau) from its provable
    mean-squared-error bound; gossip drop uses sqrt(1-p).
    """
    _check_dim(spec, d)
    if spec.kind == "identity":
        return 0.0
    if spec.kind in ("top_k", "random_k"):
        return math.sqrt((d - spec.k) / d)
    if spec.kind == "qsgd_rescaled":
        return math.sqrt(1.0 - 1.0 / qsgd_tau(spec.s, d))
    # gossip_drop
    return math.sqrt(1.0 - spec.p)


def payload_bytes_of(spec: CompressorSpec, d: int, kept: bool = True) -> int:
    """Deterministic payload size per message; gossip_drop depends on the draw."""
    _check_dim(spec, d)
    if spec.kind in ("identity", "qsgd_rescaled"):
        return d * VALUE_WIDTH
    if spec.kind in ("top_k", "random_k"):
        return spec.k * (VALUE_WIDTH + INDEX_WIDTH)
    return d * VALUE_WIDTH if kept else 0


def expected_payload_bytes(spec: CompressorSpec, d: int) -> float:
    """Mean payload per message; equals payload_bytes_of except for gossip_drop."""
    if spec.kind == "gossip_drop":
        return spec.p * d * VALUE_WIDTH
    return float(payload_bytes_of(spec, d))


def compress(spec: CompressorSpec, x: np.ndarray,
             rng: np.random.Generator | None = None) -> CompressedDelta:
    """Apply the operator to x; randomized kinds consume one draw from rng."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise CompressionError("input vector contains non-finite entries")
    d = x.size
    _check_dim(spec, d)
    if spec.randomized and rng is None:
        raise CompressionError(f"{spec.kind} requires a random stream")

    if spec.kind == "identity":
        return CompressedDelta(x.copy(), payload_bytes_of(spec, d))

    if spec.kind == "top_k":
        # stable argsort on -|x|: among equal magnitudes the lower index wins
        order = np.argsort(-np.abs(x), kind="stable")
        keep = order[: spec.k]
        dense = np.zeros(d)
        dense[keep] = x[keep]
        return CompressedDelta(dense, payload_bytes_of(spec, d))

    if spec.kind == "random_k":
        keep = rng.choice(d, size=spec.k, replace=False)
        dense = np.zeros(d)
        dense[keep] = x[keep]
        return CompressedDelta(dense, payload_bytes_of(spec, d))

    if spec.kind == "qsgd_rescaled":
        norm = float(np.linalg.norm(x))
        if norm == 0.0:
            return CompressedDelta(np.zeros(d), payload_bytes_of(spec, d))
        xi = rng.uniform(size=d)
        levels = np.floor(spec.s * np.abs(x) / norm + xi)
        dense = np.sign(x) * (norm / spec.s) * levels / qsgd_tau(spec.s, d)
        return CompressedDelta(dense, payload_bytes_of(spec, d))

    # gossip_drop
    kept = bool(rng.uniform() < spec.p)
    dense = x.copy() if kept else np.zeros(d)
    return CompressedDelta(dense, payload_bytes_of(spec, d, kept=kept))


@dataclass(frozen=True)
class ProbeResult:
    probe: str
    mean_ratio: float
    std_error: float
    eta_sq: float

    @property
    def margin(self) -> float:
        """eta^2 + 3 SE minus the empirical mean; nonnegative means pass."""
        return self.eta_sq + 3.0 * self.std_error - self.mean_ratio

    @property
    def passed(self) -> bool:
        return self.margin >= -1e-12


@dataclass(frozen=True)
class CertReport:
    spec: CompressorSpec
    d: int
    trials: int
    results: list[ProbeResult] = field(default_factory=list)

    @property
    def all_pass(self) -> bool:
        return all(r.passed for r in self.results)


def _probe_vectors(d: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    probes = {
        "gaussian_a": rng.standard_normal(d),
        "gaussian_b": rng.standard_normal(d),
        "one_hot": np.eye(d)[0] if d > 0 else np.zeros(d),
        "constant": np.ones(d),
        "geometric_decay": 0.5 ** np.arange(d),
    }
    return probes


def certify_contraction(spec: CompressorSpec, d: int, trials: int,
                        rng: np.random.Generator) -> CertReport:
    """Monte-Carlo check of the contraction inequality on fixed probe shapes.

    Deterministic kinds use a single trial; randomized kinds estimate the mean
    squared-error ratio over `trials` draws and report margin versus eta^2.
    """
    if trials < 100:
        raise CompressionError(f"need trials >= 100, got {trials}")
    eta_sq = eta_of(spec, d) ** 2
    n_trials = trials if spec.randomized else 1
    results = []
    for name, x in _probe_vectors(d, rng).items():
        nx2 = float(x @ x)
        ratios = np.empty(n_trials)
        for t in range(n_trials):
            q = compress(spec, x, rng).dense
            err = x - q
            ratios[t] = float(err @ err) / nx2
        mean = float(ratios.mean())
        se = float(ratios.std(ddof=1) / math.sqrt(n_trials)) if n_trials > 1 else 0.0
        results.append(ProbeResult(name, mean, se, eta_sq))
    return CertReport(spec=spec, d=d, trials=n_trials, results=results)
