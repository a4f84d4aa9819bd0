"""Experiment configuration: strict JSON schema, defaults, grid expansion.

Unknown keys are rejected with the offending field path so sweep-axis typos
cannot silently drop an axis. A config describes either a single run or a
grid; grids expand to a deterministic run list whose seeds derive from
(base seed, run index).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compression import CompressorSpec
from .engine import RunConfig
from .localopt import OptimizerSpec
from .problems import PartitionPlan
from .topology import Graph, load_edge_list

__all__ = ["ExperimentConfig", "RunPlan", "ConfigError", "parse_config",
           "load_config", "derive_seed"]

DEFAULT_GRID_CAP = 512


class ConfigError(ValueError):
    pass


def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise ConfigError(f"{path}.{key}: required key missing")
    return obj[key]


def _check_keys(obj: dict, allowed: set[str], path: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    for k in obj:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}: unknown key")


def _typed(obj: dict, key: str, types, path: str, default=None,
           required: bool = False):
    if key not in obj:
        if required:
            raise ConfigError(f"{path}.{key}: required key missing")
        return default
    v = obj[key]
    if v is None and not required:
        return None
    if types is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if not isinstance(v, types) or isinstance(v, bool) and types is not bool:
        raise ConfigError(f"{path}.{key}: expected {types}, got {type(v).__name__}")
    return v


@dataclass(frozen=True)
class RunPlan:
    """One fully resolved run: engine config plus problem parameters."""

    name: str
    run_config: RunConfig
    problem_kind: str
    d: int
    samples_per_agent: int
    lam: float
    noise: float
    clip_b_inf: float | None
    partition: PartitionPlan
    problem_seed: int


@dataclass(frozen=True)
class ExperimentConfig:
    base: dict
    runs: tuple[RunPlan, ...]
    formats: tuple[str, ...] = ("csv", "json")

    @property
    def n_runs(self) -> int:
        return len(self.runs)


def derive_seed(base_seed: int, index: int) -> int:
    ss = np.random.SeedSequence([base_seed, index])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _parse_problem(obj: dict, path: str = "problem") -> dict:
    _check_keys(obj, {"kind", "d", "samples_per_agent", "lambda", "noise",
                      "clip_b_inf", "partition", "batch"}, path)
    kind = _typed(obj, "kind", str, path, required=True)
    if kind not in ("least_squares", "logistic", "sigmoid_nonconvex"):
        raise ConfigError(f"{path}.kind: unknown problem kind {kind!r}")
    d = _typed(obj, "d", int, path, required=True)
    if d < 1:
        raise ConfigError(f"{path}.d: must be >= 1")
    spa = _typed(obj, "samples_per_agent", int, path, default=25)
    if spa < 1:
        raise ConfigError(f"{path}.samples_per_agent: must be >= 1")
    lam = _typed(obj, "lambda", float, path, default=0.0)
    if lam < 0:
        raise ConfigError(f"{path}.lambda: must be >= 0")
    noise = _typed(obj, "noise", float, path, default=0.1)
    clip = _typed(obj, "clip_b_inf", float, path, default=None)
    if clip is not None and clip <= 0:
        raise ConfigError(f"{path}.clip_b_inf: must be positive")
    batch = _typed(obj, "batch", int, path, default=None)
    if batch is not None and batch < 1:
        raise ConfigError(f"{path}.batch: must be >= 1")
    part = obj.get("partition", {"scheme": "iid"})
    _check_keys(part, {"scheme", "alpha", "seed"}, f"{path}.partition")
    scheme = _typed(part, "scheme", str, f"{path}.partition", default="iid")
    if scheme not in ("iid", "dirichlet"):
        raise ConfigError(f"{path}.partition.scheme: unknown scheme {scheme!r}")
    alpha = _typed(part, "alpha", float, f"{path}.partition", default=None)
    if scheme == "dirichlet" and (alpha is None or alpha <= 0):
        raise ConfigError(f"{path}.partition.alpha: must be > 0 for dirichlet")
    pseed = _typed(part, "seed", int, f"{path}.partition", default=None)
    return {"kind": kind, "d": d, "samples_per_agent": spa, "lam": lam,
            "noise": noise, "clip_b_inf": clip, "batch": batch,
            "partition_scheme": scheme, "partition_alpha": alpha,
            "partition_seed": pseed}


def _parse_optimizer(obj: dict, path: str = "optimizer") -> dict:
    _check_keys(obj, {"kind", "alpha", "beta1", "beta2", "delta"}, path)
    kind = _typed(obj, "kind", str, path, required=True)
    alpha = _typed(obj, "alpha", float, path, required=True)
    beta1 = _typed(obj, "beta1", float, path,
                   default=0.0 if kind in ("vanilla_sgd",) else 0.9)
    beta2 = _typed(obj, "beta2", float, path, default=0.999)
    delta = _typed(obj, "delta", float, path, default=1e-8)
    for name, v, lo, hi in (("beta1", beta1, 0.0, 1.0), ("beta2", beta2, 0.0, 1.0)):
        if not (lo <= v < hi) and not (name == "beta2" and v == hi):
            if not (lo <= v < hi):
                raise ConfigError(f"{path}.{name}: out of range [0,1): {v}")
    if alpha <= 0:
        raise ConfigError(f"{path}.alpha: must be positive")
    if delta <= 0:
        raise ConfigError(f"{path}.delta: must be positive")
    return {"kind": kind, "alpha": alpha, "beta1": beta1, "beta2": beta2,
            "delta": delta}


def _parse_compressor(obj: dict, d: int, path: str = "compressor") -> dict:
    _check_keys(obj, {"kind", "k", "fraction", "s", "p"}, path)
    kind = _typed(obj, "kind", str, path, default="identity")
    k = _typed(obj, "k", int, path, default=None)
    frac = _typed(obj, "fraction", float, path, default=None)
    if frac is not None:
        if not (0.0 < frac <= 1.0):
            raise ConfigError(f"{path}.fraction: must be in (0,1]")
        if k is not None:
            raise ConfigError(f"{path}.fraction: give either k or fraction")
        k = max(1, round(frac * d))
    s = _typed(obj, "s", int, path, default=None)
    p = _typed(obj, "p", float, path, default=None)
    return {"kind": kind, "k": k, "s": s, "p": p}


def _parse_topology(obj: dict, path: str = "topology") -> tuple[str, int, Graph | None]:
    _check_keys(obj, {"kind", "n", "edgelist"}, path)
    kind = _typed(obj, "kind", str, path, required=True)
    if kind not in ("ring", "grid2d", "complete", "custom"):
        raise ConfigError(f"{path}.kind: unknown topology kind {kind!r}")
    graph = None
    if kind == "custom":
        edgelist = _typed(obj, "edgelist", str, path, required=True)
        graph = load_edge_list(edgelist)
        n = _typed(obj, "n", int, path, default=graph.n)
        if n != graph.n:
            raise ConfigError(f"{path}.n: edge list implies n={graph.n}, got {n}")
    else:
        n = _typed(obj, "n", int, path, required=True)
    if n < 2:
        raise ConfigError(f"{path}.n: must be >= 2")
    return kind, n, graph


def _parse_run(obj: dict, path: str = "run") -> dict:
    _check_keys(obj, {"K", "T", "gamma", "theory_mode", "theory_strict",
                      "record_every", "record_history", "comm_variant",
                      "workers"}, path)
    out = {
        "K": _typed(obj, "K", int, path, default=1),
        "T": _typed(obj, "T", int, path, required=True),
        "gamma": _typed(obj, "gamma", float, path, default=None),
        "theory_mode": _typed(obj, "theory_mode", bool, path, default=False),
        "theory_strict": _typed(obj, "theory_strict", bool, path, default=True),
        "record_every": _typed(obj, "record_every", int, path, default=None),
        "record_history": _typed(obj, "record_history", bool, path, default=False),
        "comm_variant": _typed(obj, "comm_variant", str, path,
                               default="bookkeeping"),
        "workers": _typed(obj, "workers", int, path, default=1),
    }
    if out["K"] < 1 or out["T"] < 1:
        raise ConfigError(f"{path}: K and T must be >= 1")
    return out


GRID_AXES = ("K", "top_k_fraction", "optimizer_kind", "n", "dirichlet_alpha")


def _expand_grid(grid: dict, cap: int) -> list[dict]:
    _check_keys(grid, set(GRID_AXES), "grid")
    axes = []
    for name in GRID_AXES:
        if name in grid:
            vals = grid[name]
            if not isinstance(vals, list) or not vals:
                raise ConfigError(f"grid.{name}: expected a nonempty list")
            axes.append((name, vals))
    combos = [{}]
    for name, vals in axes:
        combos = [dict(c, **{name: v}) for c in combos for v in vals]
    if len(combos) > cap:
        raise ConfigError(
            f"grid expands to {len(combos)} runs, above the cap {cap}; "
            f"raise max_runs to override")
    return combos


def _run_name(overrides: dict, base_k: int, comp_kind: str) -> str:
    parts = []
    k = overrides.get("K", base_k)
    parts.append(f"K{k}")
    if "top_k_fraction" in overrides:
        f = overrides["top_k_fraction"]
        parts.append("identity" if f is None else f"topk{int(round(f * 100))}")
    else:
        parts.append(comp_kind)
    if "optimizer_kind" in overrides:
        parts.append(overrides["optimizer_kind"])
    if "n" in overrides:
        parts.append(f"n{overrides['n']}")
    if "dirichlet_alpha" in overrides:
        a = overrides["dirichlet_alpha"]
        parts.append("iid" if a is None else f"dir{a}")
    return "_".join(str(p) for p in parts)


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a config document and expand it into concrete run plans."""
    _check_keys(doc, {"seed", "problem", "optimizer", "compressor", "topology",
                      "run", "grid", "max_runs", "formats"}, "config")
    seed = _typed(doc, "seed", int, "config", default=0)
    prob = _parse_problem(_require(doc, "problem", "config"))
    opt = _parse_optimizer(_require(doc, "optimizer", "config"))
    topo_kind, topo_n, graph = _parse_topology(_require(doc, "topology", "config"))
    comp = _parse_compressor(doc.get("compressor", {}), prob["d"])
    runp = _parse_run(_require(doc, "run", "config"))
    cap = _typed(doc, "max_runs", int, "config", default=DEFAULT_GRID_CAP)
    formats = tuple(doc.get("formats", ["csv", "json"]))
    for f in formats:
        if f not in ("csv", "json"):
            raise ConfigError(f"formats: unknown format {f!r}")

    combos = _expand_grid(doc.get("grid", {}), cap) if "grid" in doc else [{}]
    plans = []
    for idx, ov in enumerate(combos):
        p = dict(prob)
        o = dict(opt)
        c = dict(comp)
        r = dict(runp)
        n = topo_n
        if "K" in ov:
            r["K"] = ov["K"]
        if "optimizer_kind" in ov:
            o["kind"] = ov["optimizer_kind"]
            if o["kind"] == "vanilla_sgd":
                o["beta1"] = 0.0
        if "n" in ov:
            n = ov["n"]
        if "top_k_fraction" in ov:
            f = ov["top_k_fraction"]
            if f is None:
                c = {"kind": "identity", "k": None, "s": None, "p": None}
            else:
                if not (0.0 < f <= 1.0):
                    raise ConfigError(f"grid.top_k_fraction: must be in (0,1]")
                c = {"kind": "top_k", "k": max(1, round(f * p["d"])),
                     "s": None, "p": None}
        if "dirichlet_alpha" in ov:
            a = ov["dirichlet_alpha"]
            if a is None:
                p["partition_scheme"], p["partition_alpha"] = "iid", None
            else:
                if a <= 0:
                    raise ConfigError("grid.dirichlet_alpha: must be > 0")
                p["partition_scheme"], p["partition_alpha"] = "dirichlet", float(a)

        try:
            opt_spec = OptimizerSpec(kind=o["kind"], alpha=o["alpha"],
                                     beta1=o["beta1"], beta2=o["beta2"],
                                     delta=o["delta"])
        except ValueError as e:
            raise ConfigError(f"optimizer: {e}") from e
        try:
            comp_spec = CompressorSpec(kind=c["kind"], k=c["k"], s=c["s"],
                                       p=c["p"])
        except ValueError as e:
            raise ConfigError(f"compressor: {e}") from e
        run_seed = derive_seed(seed, idx)
        try:
            rc = RunConfig(optimizer=opt_spec, compressor=comp_spec,
                           topology_kind=topo_kind, n=n, K=r["K"], T=r["T"],
                           gamma=r["gamma"], seed=run_seed, batch=p["batch"],
                           theory_mode=r["theory_mode"],
                           theory_strict=r["theory_strict"],
                           record_every=r["record_every"],
                           record_history=r["record_history"],
                           comm_variant=r["comm_variant"],
                           workers=r["workers"], graph=graph)
        except ValueError as e:
            raise ConfigError(f"run: {e}") from e
        partition = PartitionPlan(scheme=p["partition_scheme"],
                                  alpha=p["partition_alpha"],
                                  seed=p["partition_seed"])
        name = _run_name(ov, runp["K"], comp_spec.kind) if len(combos) > 1 \
            else _run_name(ov, r["K"], comp_spec.kind)
        plans.append(RunPlan(
            name=f"run{idx:03d}_{name}",
            run_config=rc,
            problem_kind=p["kind"], d=p["d"],
            samples_per_agent=p["samples_per_agent"], lam=p["lam"],
            noise=p["noise"], clip_b_inf=p["clip_b_inf"],
            partition=partition,
            problem_seed=seed,
        ))
    return ExperimentConfig(base=doc, runs=tuple(plans), formats=formats)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return parse_config(doc)
