import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from adagossip.compression import (INDEX_WIDTH, VALUE_WIDTH, CompressionError,
                                   CompressorSpec, certify_contraction,
                                   compress, eta_of, expected_payload_bytes,
                                   payload_bytes_of, qsgd_tau)

RNG = np.random.default_rng(1234)


def test_eta_values():
    assert eta_of(CompressorSpec(kind="identity"), 7) == 0.0
    assert eta_of(CompressorSpec(kind="top_k", k=5), 10) == math.sqrt(0.5)
    assert eta_of(CompressorSpec(kind="random_k", k=1), 3) == math.sqrt(2 / 3)
    assert eta_of(CompressorSpec(kind="gossip_drop", p=0.75), 4) == 0.5
    # s=1, d=1: tau = 2, eta = sqrt(1 - 1/2)
    assert eta_of(CompressorSpec(kind="qsgd_rescaled", s=1), 1) == math.sqrt(0.5)


def test_qsgd_tau():
    assert qsgd_tau(1, 1) == 2.0
    assert qsgd_tau(2, 16) == 1.0 + 2.0  # min(16/4, 4/2) = 2
    assert qsgd_tau(100, 4) == 1.0 + 4 / 100**2


def test_qsgd_scalar_example():
    # s=1 on x=(1,): level floor(1 + xi) = 1 always, output 1/tau = 0.5
    spec = CompressorSpec(kind="qsgd_rescaled", s=1)
    out = compress(spec, np.array([1.0]), np.random.default_rng(0))
    assert out.dense[0] == pytest.approx(0.5)
    err = (1.0 - out.dense[0]) ** 2
    assert err == pytest.approx(0.25)


def test_payload_accounting():
    assert payload_bytes_of(CompressorSpec(kind="identity"), 10) == 10 * VALUE_WIDTH
    assert payload_bytes_of(CompressorSpec(kind="top_k", k=3), 10) == \
        3 * (VALUE_WIDTH + INDEX_WIDTH)
    assert payload_bytes_of(CompressorSpec(kind="qsgd_rescaled", s=4), 10) == 80
    assert payload_bytes_of(CompressorSpec(kind="gossip_drop", p=0.5), 10,
                            kept=False) == 0
    assert expected_payload_bytes(CompressorSpec(kind="gossip_drop", p=0.5),
                                  10) == 40.0


def test_top_k_deterministic_tie_break():
    spec = CompressorSpec(kind="top_k", k=2)
    x = np.array([1.0, -1.0, 1.0, 0.5])
    out = compress(spec, x).dense
    # equal magnitudes: lowest indices win
    assert np.array_equal(out, np.array([1.0, -1.0, 0.0, 0.0]))


def test_random_k_exact_enumeration_d3():
    # d=3, k=1: each coordinate kept w.p. 1/3, E err = (2/3)||x||^2
    spec = CompressorSpec(kind="random_k", k=1)
    x = np.array([1.0, 2.0, 3.0])
    rng = np.random.default_rng(7)
    trials = 30000
    errs = np.empty(trials)
    for t in range(trials):
        q = compress(spec, x, rng).dense
        errs[t] = np.sum((x - q) ** 2) / np.sum(x * x)
    se = errs.std(ddof=1) / math.sqrt(trials)
    assert abs(errs.mean() - 2 / 3) <= 3 * se


def test_spec_validation_errors():
    with pytest.raises(CompressionError):
        CompressorSpec(kind="nope")
    with pytest.raises(CompressionError):
        CompressorSpec(kind="top_k")
    with pytest.raises(CompressionError):
        CompressorSpec(kind="qsgd_rescaled", s=0)
    with pytest.raises(CompressionError):
        CompressorSpec(kind="gossip_drop", p=0.0)
    with pytest.raises(CompressionError):
        compress(CompressorSpec(kind="top_k", k=5), np.ones(3))
    with pytest.raises(CompressionError):
        compress(CompressorSpec(kind="random_k", k=1), np.ones(3), None)
    with pytest.raises(CompressionError):
        compress(CompressorSpec(kind="identity"), np.array([np.nan]))


def test_zero_vector_safe():
    for spec in [CompressorSpec(kind="qsgd_rescaled", s=2),
                 CompressorSpec(kind="top_k", k=1),
                 CompressorSpec(kind="gossip_drop", p=0.5)]:
        out = compress(spec, np.zeros(4), np.random.default_rng(0))
        assert np.all(out.dense == 0.0)


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float64, st.integers(2, 20),
                  elements=st.floats(-1e6, 1e6, allow_nan=False)),
       st.integers(1, 5))
def test_top_k_contraction_holds_pointwise(x, k):
    # top-k error is the sum of the d-k smallest squares, a deterministic
    # inequality against ((d-k)/d) ||x||^2
    d = x.size
    k = min(k, d)
    spec = CompressorSpec(kind="top_k", k=k)
    q = compress(spec, x).dense
    err = float(np.sum((x - q) ** 2))
    assert err <= (d - k) / d * float(np.sum(x * x)) + 1e-9 * max(1.0, np.sum(x * x))


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 12),
                  elements=st.floats(-100, 100, allow_nan=False)),
       st.integers(0, 2**31 - 1))
def test_qsgd_error_never_exceeds_norm(x, seed):
    # the rescaled quantizer is a contraction pathwise in expectation; the
    # worst pathwise error is still bounded by ||x|| * (1 + 1/tau) levels
    spec = CompressorSpec(kind="qsgd_rescaled", s=2)
    q = compress(spec, x, np.random.default_rng(seed)).dense
    assert np.all(np.isfinite(q))
    assert np.all(np.sign(q) * np.sign(x) >= 0)  # signs preserved or zero


def test_certify_small_all_pass():
    rng = np.random.default_rng(5)
    for spec in [CompressorSpec(kind="identity"),
                 CompressorSpec(kind="top_k", k=2),
                 CompressorSpec(kind="random_k", k=2),
                 CompressorSpec(kind="qsgd_rescaled", s=2),
                 CompressorSpec(kind="gossip_drop", p=0.7)]:
        rep = certify_contraction(spec, 8, 2000, rng)
        assert len(rep.results) >= 5
        assert rep.all_pass, spec


def test_certify_requires_enough_trials():
    with pytest.raises(CompressionError):
        certify_contraction(CompressorSpec(kind="identity"), 4, 50,
                            np.random.default_rng(0))
