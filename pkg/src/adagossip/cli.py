"""Command-line entry points.

Verbs:
  validate            parse a config and echo the expanded run list
  run                 execute the run list, writing per-run CSV + summary JSON
  report              aligned comparison table, series CSV, and PNG figures
  certify-compressors Monte-Carlo contraction certification table
  check-topology      mixing-matrix validation for an edge-list file

Exit codes: 0 success, 1 config/usage error, 2 runtime failure,
3 theory-mode assertion failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import analysis, engine, problems
from .compression import CompressorSpec, certify_contraction, eta_of
from .config import ConfigError, ExperimentConfig, load_config
from .engine import TheoryModeError
from .topology import (TopologyError, build_topology, load_edge_list,
                       validate_mixing)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_THEORY = 3


def _build_problem(plan) -> problems.ProblemSet:
    return problems.make_problem(
        kind=plan.problem_kind, d=plan.d, n_agents=plan.run_config.n,
        samples_per_agent=plan.samples_per_agent, partition=plan.partition,
        seed=plan.problem_seed, lam=plan.lam, noise=plan.noise,
        clip_b_inf=plan.clip_b_inf)


def run_experiments(cfg: ExperimentConfig, outdir) -> tuple[dict, int]:
    """Execute every planned run; one failure does not abort the rest.

    Returns the combined summary document and the worst exit code seen.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    entries = []
    worst = EXIT_OK
    for plan in cfg.runs:
        entry = {"name": plan.name}
        try:
            problem = _build_problem(plan)
            rec = engine.run(plan.run_config, problem)
            csv_name = f"{plan.name}.csv"
            if "csv" in cfg.formats:
                rec.to_csv(outdir / csv_name)
                entry["csv"] = csv_name
            s = rec.summary()
            b = (plan.clip_b_inf if plan.clip_b_inf is not None
                 else rec.grad_norm_max)
            try:
                s["cbar"] = analysis.cbar(rec.gamma, rec.rho, rec.eta, b,
                                          plan.run_config.optimizer.delta)
            except analysis.AnalysisError:
                s["cbar"] = None
            entry.update(status="ok", **s)
        except TheoryModeError as e:
            entry.update(status="theory_violation", error=str(e))
            worst = EXIT_THEORY
        except Exception as e:  # noqa: BLE001 - grid runs must not abort peers
            entry.update(status="failed", error=f"{type(e).__name__}: {e}")
            if worst != EXIT_THEORY:
                worst = EXIT_RUNTIME
        entries.append(entry)
    doc = {"n_runs": len(entries), "runs": entries}
    if "json" in cfg.formats:
        with open(outdir / "summary.json", "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return doc, worst


def _cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"ok: {cfg.n_runs} run(s)")
    for plan in cfg.runs:
        rc = plan.run_config
        print(f"  {plan.name}: {rc.optimizer.kind} K={rc.K} T={rc.T} "
              f"n={rc.n} {rc.compressor.kind} {plan.problem_kind} "
              f"partition={plan.partition.scheme}")
    return EXIT_OK


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        doc, worst = run_experiments(cfg, args.outdir)
    except Exception:
        traceback.print_exc()
        return EXIT_RUNTIME
    for entry in doc["runs"]:
        if entry["status"] == "ok":
            print(f"{entry['name']}: loss={entry['final_loss']:.6g} "
                  f"grad_sq={entry['final_grad_sq']:.6g} "
                  f"bytes={entry['bytes_total']}")
        else:
            print(f"{entry['name']}: {entry['status']} ({entry['error']})",
                  file=sys.stderr)
    return worst


def _fmt_table(rows: list[list[str]], header: list[str]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


def _cmd_report(args) -> int:
    entries = []
    csv_paths: dict[str, Path] = {}
    hashes = set()
    for spath in args.summaries:
        p = Path(spath)
        if not p.exists():
            print(f"no such summary: {spath}", file=sys.stderr)
            return EXIT_CONFIG
        doc = json.loads(p.read_text())
        for entry in doc.get("runs", []):
            entries.append(entry)
            if entry.get("csv"):
                csv_paths[entry["name"]] = p.parent / entry["csv"]
            if entry.get("problem_hash"):
                hashes.add(entry["problem_hash"])
    if not entries:
        print("no runs found in the given summaries", file=sys.stderr)
        return EXIT_CONFIG
    if len(hashes) > 1:
        print("warning: runs cover different datasets "
              f"({len(hashes)} distinct problem hashes); loss columns are "
              "not directly comparable", file=sys.stderr)

    baseline = None
    for e in entries:
        if (e.get("status") == "ok"
                and e.get("config", {}).get("K") == 1
                and e.get("config", {}).get("compressor", {}).get("kind")
                == "identity"):
            baseline = e
            break

    rows = []
    for e in entries:
        if e.get("status") != "ok":
            rows.append([e["name"], "-", "-", "-",
                         e.get("status", "failed"), "-", "-", "-", "-"])
            continue
        c = e["config"]
        rel = "-"
        if baseline is not None and baseline["bytes_total"] > 0:
            rel = f"{e['bytes_total'] / baseline['bytes_total']:.4f}"
        rows.append([
            e["name"], str(c["K"]), c["compressor"]["kind"],
            str(c["topology"]["n"]), f"{e['final_loss']:.6g}",
            f"{e['final_grad_sq']:.4g}", f"{e['final_consensus']:.4g}",
            str(e["bytes_total"]), rel,
        ])
    header = ["run", "K", "compressor", "n", "final_loss", "grad_sq",
              "consensus", "bytes", "bytes_rel"]
    print(_fmt_table(rows, header))

    outdir = Path(args.outdir) if args.outdir else Path(args.summaries[0]).parent
    outdir.mkdir(parents=True, exist_ok=True)

    series = {}
    for name, cpath in csv_paths.items():
        if cpath.exists():
            from .plotting import load_series
            series[name] = load_series(cpath)
    if series:
        stride = max(1, args.stride)
        with open(outdir / "report_series.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run", "t", "round", "loss", "grad_norm_sq",
                        "consensus_err", "bytes_cumulative"])
            for name, s in series.items():
                for j in range(0, len(s["t"]), stride):
                    w.writerow([name, int(s["t"][j]), int(s["round"][j]),
                                repr(s["loss"][j]), repr(s["grad_norm_sq"][j]),
                                repr(s["consensus_err"][j]),
                                int(s["bytes_cumulative"][j])])
        from .plotting import render_report_figures
        written = render_report_figures(series, outdir)
        for pth in written:
            print(f"wrote {pth}")
        print(f"wrote {outdir / 'report_series.csv'}")
    return EXIT_OK


def _default_cert_specs(d: int) -> list[CompressorSpec]:
    return [
        CompressorSpec(kind="identity"),
        CompressorSpec(kind="top_k", k=max(1, d // 4)),
        CompressorSpec(kind="top_k", k=max(1, d // 2)),
        CompressorSpec(kind="random_k", k=max(1, d // 4)),
        CompressorSpec(kind="random_k", k=max(1, d // 2)),
        CompressorSpec(kind="qsgd_rescaled", s=1),
        CompressorSpec(kind="qsgd_rescaled", s=4),
        CompressorSpec(kind="gossip_drop", p=0.5),
        CompressorSpec(kind="gossip_drop", p=0.9),
    ]


def _cmd_certify(args) -> int:
    rng = np.random.default_rng(args.seed)
    rows = []
    all_passed = True
    for spec in _default_cert_specs(args.d):
        rep = certify_contraction(spec, args.d, args.trials, rng)
        for probe in rep.results:
            ok = "pass" if probe.passed else "FAIL"
            all_passed &= probe.passed
            label = spec.kind + (f" k={spec.k}" if spec.k else "") + \
                (f" s={spec.s}" if spec.s else "") + \
                (f" p={spec.p}" if spec.p else "")
            rows.append([label, probe.probe, f"{eta_of(spec, args.d):.6f}",
                         f"{probe.mean_ratio:.6f}", f"{probe.margin:.2e}", ok])
    print(_fmt_table(rows, ["compressor", "probe", "eta", "mean_ratio",
                            "margin", "result"]))
    return EXIT_OK if all_passed else EXIT_RUNTIME


def _cmd_check_topology(args) -> int:
    try:
        if args.edgelist:
            graph = load_edge_list(args.edgelist)
            mixing = build_topology("custom", graph.n, graph)
        else:
            mixing = build_topology(args.kind, args.n)
    except (TopologyError, OSError) as e:
        print(f"topology error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    report = validate_mixing(mixing.W, mixing.graph)
    print(f"n = {mixing.n}")
    print(f"spectral gap parameter rho = {mixing.rho:.12f}")
    print(f"nonnegative entries        = {report.nonnegative}")
    print(f"row-sum residual           = {report.row_sum_residual:.3e}")
    print(f"col-sum residual           = {report.col_sum_residual:.3e}")
    print(f"sparsity matches graph     = {report.respects_mask}")
    print(f"rho < 1                    = {report.rho_ok}")
    print(f"eigenvalue 1 simple        = {report.eigenvalue_one_simple}")
    print("result: " + ("pass" if report.all_pass else "FAIL"))
    return EXIT_OK if report.all_pass else EXIT_RUNTIME


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="adagossip",
        description="Decentralized adaptive-gradient training laboratory")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("validate", help="parse a config and list its runs")
    p.add_argument("config")
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("run", help="execute a config's run list")
    p.add_argument("config")
    p.add_argument("-o", "--outdir", default="results")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("report", help="compare runs: table, series CSV, figures")
    p.add_argument("summaries", nargs="+")
    p.add_argument("-o", "--outdir", default=None)
    p.add_argument("--stride", type=int, default=1,
                   help="downsample factor for the combined series CSV")
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("certify-compressors",
                       help="Monte-Carlo contraction certification")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_certify)

    p = sub.add_parser("check-topology", help="validate a mixing matrix")
    p.add_argument("edgelist", nargs="?", default=None)
    p.add_argument("--kind", default="ring",
                   choices=["ring", "grid2d", "complete"])
    p.add_argument("--n", type=int, default=4)
    p.set_defaults(fn=_cmd_check_topology)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
