import math

import numpy as np
import pytest

from adagossip.analysis import (AnalysisError, TheoryParams, cbar,
                                check_consensus_bound, comm_cost_model,
                                consensus_error, inv_sqrt_diff_ceiling,
                                second_moment_drift_check, stepsize_schedule)
from adagossip.compression import CompressorSpec
from adagossip.engine import RunConfig, run
from adagossip.localopt import OptimizerSpec
from adagossip.problems import make_problem
from adagossip.topology import build_topology


def test_consensus_error_direct():
    X = np.array([[1.0, 3.0], [0.0, 0.0]])
    # columns (1,0) and (3,0); mean (2,0); spread 1+1 = 2; /n = 1
    assert consensus_error(X) == pytest.approx(1.0)
    assert consensus_error(np.ones((3, 5))) == 0.0
    with pytest.raises(AnalysisError):
        consensus_error(np.ones((3, 1)))


def test_cbar_hand_value():
    # gamma (1-rho) = 0.5, eta^2 = 0.5, B = 2, delta = 0.1:
    # 56/0.5 * (80/0.5 + 15/0.5) * 4 / 0.1 = 112 * 190 * 40
    val = cbar(gamma=0.5, rho=0.0, eta=math.sqrt(0.5), B=2.0, delta=0.1)
    assert val == pytest.approx(112 * 190 * 40)
    with pytest.raises(AnalysisError):
        cbar(0.0, 0.0, 0.0, 1.0, 1.0)
    with pytest.raises(AnalysisError):
        cbar(0.5, 0.0, 1.0, 1.0, 1.0)


def test_gamma_ceiling_property():
    p = TheoryParams(rho=1 / 3, eta=math.sqrt(0.5), gamma=1e-3, alpha=1e-3,
                     delta=1.0, B=1.0, B_inf=1.0, L=1.0, n=4, K=5, T=20)
    assert p.gamma_ceiling == pytest.approx((2 / 3) * 0.5 / 100)
    assert p.b_u == 1.0


def test_stepsize_schedule_scaling():
    s1 = stepsize_schedule(n=4, T=100, K=5, B_inf=1.0, delta=1.0, theta=1e-3,
                           L=2.0)
    s2 = stepsize_schedule(n=4, T=400, K=5, B_inf=1.0, delta=1.0, theta=1e-3,
                           L=2.0)
    # alpha ~ 1/sqrt(TK)
    assert s1["alpha"] / s2["alpha"] == pytest.approx(2.0)
    assert s1["alpha"] == pytest.approx(
        4 * 1e-3 * math.sqrt(4 * 2.0) / math.sqrt(500))
    assert s1["ceiling"] == pytest.approx(
        min(1.0, 1.0 / (48 * 2.0 * math.sqrt(2.0))))
    assert s1["feasible"]


def test_comm_cost_model_matches_engine_bytes():
    d, n = 6, 4
    mixing = build_topology("ring", n)
    prob = make_problem("least_squares", d=d, n_agents=n, samples_per_agent=10,
                        seed=1)
    for comp in (CompressorSpec(kind="identity"),
                 CompressorSpec(kind="top_k", k=2)):
        cfg = RunConfig(optimizer=OptimizerSpec(kind="adam", alpha=0.05,
                                                beta1=0.9),
                        compressor=comp, topology_kind="ring", n=n, K=2, T=7,
                        gamma=0.5, seed=0)
        rec = run(cfg, prob)
        assert rec.bytes_total == comm_cost_model(7, comp, d, mixing)


def test_inv_sqrt_diff_ceilings():
    assert inv_sqrt_diff_ceiling("vanilla_sgd", 10, 1.0, 1.0, 500) == 0.0
    assert inv_sqrt_diff_ceiling("amsgrad", 10, 1.0, 1.0, 500) == 10.0
    assert inv_sqrt_diff_ceiling("avg_adagrad", 10, 1.0, 1.0, 500) == 20.0
    assert inv_sqrt_diff_ceiling("matrix_adagrad", 10, 1.0, 1.0, 500) == 200.0
    b2 = 0.99
    assert inv_sqrt_diff_ceiling("adam", 10, 1.0, 1.0, 500, beta2=b2) == \
        pytest.approx(500 * 10 * (1 - b2) ** 2)
    with pytest.raises(AnalysisError):
        inv_sqrt_diff_ceiling("adam", 10, 1.0, 1.0, 500)
    with pytest.raises(AnalysisError):
        inv_sqrt_diff_ceiling("nope", 10, 1.0, 1.0, 500)


def test_second_moment_drift_check_on_run():
    prob = make_problem("least_squares", d=5, n_agents=4, samples_per_agent=10,
                        seed=2, clip_b_inf=1.0)
    cfg = RunConfig(optimizer=OptimizerSpec(kind="amsgrad", alpha=0.01,
                                            beta1=0.9, beta2=0.99, delta=1.0),
                    compressor=CompressorSpec(kind="identity"),
                    topology_kind="ring", n=4, K=2, T=25, gamma=0.8, seed=3)
    rec = run(cfg, prob)
    out = second_moment_drift_check(rec, "amsgrad", d=5, delta=1.0,
                                    B_inf=1.0, TK=50)
    assert out["holds"]
    assert out["measured"] <= out["ceiling"]


def test_consensus_bound_check_structure():
    prob = make_problem("least_squares", d=5, n_agents=4, samples_per_agent=10,
                        seed=4, clip_b_inf=1.0)
    cfg = RunConfig(optimizer=OptimizerSpec(kind="adam", alpha=1e-4, beta1=0.9,
                                            delta=1.0),
                    compressor=CompressorSpec(kind="top_k", k=2),
                    topology_kind="ring", n=4, K=5, T=20, gamma=None,
                    theory_mode=True, seed=5)
    rec = run(cfg, prob)
    params = TheoryParams(rho=rec.rho, eta=rec.eta, gamma=rec.gamma,
                          alpha=1e-4, delta=1.0, B=math.sqrt(5) * 1.0,
                          B_inf=1.0, L=rec.smoothness_L, n=4, K=5, T=20)
    out = check_consensus_bound(rec, params)
    assert out["holds"]
    assert out["ratio"] <= 1.0
    assert out["bound"] == pytest.approx(
        params.alpha**2 * 4 * 25 * out["cbar"])
