import json

import pytest

from adagossip.cli import main
from adagossip.config import ConfigError, derive_seed, parse_config


def base_doc(**over):
    doc = {
        "seed": 2,
        "problem": {"kind": "logistic", "d": 6, "samples_per_agent": 10},
        "optimizer": {"kind": "adam", "alpha": 0.05},
        "topology": {"kind": "ring", "n": 4},
        "run": {"T": 5, "K": 2, "gamma": 0.8},
    }
    doc.update(over)
    return doc


def test_minimal_config_defaults():
    doc = {
        "problem": {"kind": "least_squares", "d": 4},
        "optimizer": {"kind": "amsgrad", "alpha": 0.1},
        "topology": {"kind": "complete", "n": 3},
        "run": {"T": 3},
    }
    cfg = parse_config(doc)
    assert cfg.n_runs == 1
    plan = cfg.runs[0]
    assert plan.run_config.K == 1
    assert plan.run_config.compressor.kind == "identity"
    assert plan.run_config.gamma is None
    assert plan.partition.scheme == "iid"


def test_unknown_key_reports_path():
    with pytest.raises(ConfigError, match=r"optimizer\.beta3"):
        parse_config(base_doc(optimizer={"kind": "adam", "alpha": 0.1,
                                         "beta3": 0.5}))
    with pytest.raises(ConfigError, match=r"config\.warmup"):
        parse_config(base_doc(warmup=10))
    with pytest.raises(ConfigError, match=r"problem\.partition\.schema"):
        parse_config(base_doc(problem={"kind": "logistic", "d": 4,
                                       "partition": {"schema": "iid"}}))


def test_bad_values_rejected():
    with pytest.raises(ConfigError):
        parse_config(base_doc(problem={"kind": "mystery", "d": 4}))
    with pytest.raises(ConfigError):
        parse_config(base_doc(optimizer={"kind": "adam", "alpha": -1}))
    with pytest.raises(ConfigError):
        parse_config(base_doc(topology={"kind": "ring", "n": 1}))
    with pytest.raises(ConfigError, match="fraction"):
        parse_config(base_doc(compressor={"kind": "top_k", "k": 2,
                                          "fraction": 0.5}))


def test_grid_expansion_and_names():
    cfg = parse_config(base_doc(grid={"K": [1, 5],
                                      "top_k_fraction": [None, 0.5]}))
    assert cfg.n_runs == 4
    names = [p.name for p in cfg.runs]
    assert names[0].endswith("K1_identity")
    assert names[3].endswith("K5_topk50")
    ks = sorted({p.run_config.K for p in cfg.runs})
    assert ks == [1, 5]
    # fraction 0.5 of d=6 -> k=3
    topk = [p for p in cfg.runs if p.run_config.compressor.kind == "top_k"]
    assert all(p.run_config.compressor.k == 3 for p in topk)


def test_grid_cap():
    with pytest.raises(ConfigError, match="cap"):
        parse_config(base_doc(grid={"K": list(range(1, 30)),
                                    "n": [4] * 20},
                              max_runs=100))
    cfg = parse_config(base_doc(grid={"K": [1, 2]}, max_runs=2))
    assert cfg.n_runs == 2


def test_seeds_deterministic_and_distinct():
    cfg1 = parse_config(base_doc(grid={"K": [1, 2, 5]}))
    cfg2 = parse_config(base_doc(grid={"K": [1, 2, 5]}))
    seeds1 = [p.run_config.seed for p in cfg1.runs]
    assert seeds1 == [p.run_config.seed for p in cfg2.runs]
    assert len(set(seeds1)) == 3
    assert derive_seed(2, 0) != derive_seed(3, 0)


def test_dirichlet_axis():
    cfg = parse_config(base_doc(grid={"dirichlet_alpha": [None, 0.5]}))
    schemes = [p.partition.scheme for p in cfg.runs]
    assert schemes == ["iid", "dirichlet"]
    assert cfg.runs[1].partition.alpha == 0.5


def write_cfg(tmp_path, doc):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(doc))
    return str(p)


def test_cli_validate_ok_and_error(tmp_path, capsys):
    path = write_cfg(tmp_path, base_doc())
    assert main(["validate", path]) == 0
    assert "ok: 1 run(s)" in capsys.readouterr().out
    bad = write_cfg(tmp_path, base_doc(extra=1))
    assert main(["validate", bad]) == 1
    assert main(["validate", str(tmp_path / "missing.json")]) == 1


def test_cli_run_and_report(tmp_path, capsys):
    doc = base_doc(grid={"K": [1, 2], "top_k_fraction": [None, 0.5]})
    path = write_cfg(tmp_path, doc)
    out = tmp_path / "results"
    assert main(["run", path, "-o", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_runs"] == 4
    assert all(e["status"] == "ok" for e in summary["runs"])
    assert all((out / e["csv"]).exists() for e in summary["runs"])
    capsys.readouterr()

    rep_dir = tmp_path / "report"
    assert main(["report", str(out / "summary.json"), "-o", str(rep_dir),
                 "--stride", "2"]) == 0
    text = capsys.readouterr().out
    assert "bytes_rel" in text
    assert (rep_dir / "loss_vs_round.png").exists()
    assert (rep_dir / "loss_vs_bytes.png").exists()
    assert (rep_dir / "report_series.csv").exists()


def test_cli_run_theory_violation_exit_code(tmp_path):
    doc = base_doc()
    doc["problem"]["clip_b_inf"] = 1.0
    doc["run"] = {"T": 5, "K": 2, "gamma": 0.9, "theory_mode": True}
    path = write_cfg(tmp_path, doc)
    assert main(["run", path, "-o", str(tmp_path / "r")]) == 3


def test_cli_run_partial_failure_exit_code(tmp_path):
    # matrix_adagrad beyond its dimension limit fails at run time; the grid
    # sibling still completes
    doc = base_doc()
    doc["problem"]["d"] = 70
    doc["grid"] = {"optimizer_kind": ["adam", "matrix_adagrad"]}
    path = write_cfg(tmp_path, doc)
    out = tmp_path / "r"
    assert main(["run", path, "-o", str(out)]) == 2
    summary = json.loads((out / "summary.json").read_text())
    statuses = {e["name"].split("_")[-1]: e["status"]
                for e in summary["runs"]}
    assert list(sorted(statuses.values())) == ["failed", "ok"]


def test_cli_certify_and_topology(capsys):
    assert main(["certify-compressors", "--d", "6", "--trials", "500"]) == 0
    out = capsys.readouterr().out
    assert "pass" in out and "FAIL" not in out
    assert main(["check-topology", "--kind", "ring", "--n", "4"]) == 0
    out = capsys.readouterr().out
    assert "0.333333333333" in out


def test_cli_check_topology_edgelist(tmp_path, capsys):
    p = tmp_path / "g.txt"
    p.write_text("0 1\n1 2\n2 0\n")
    assert main(["check-topology", str(p)]) == 0
    assert main(["check-topology", str(tmp_path / "nope.txt")]) == 1
