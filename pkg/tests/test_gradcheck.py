import time

import numpy as np
import pytest

from fckit import gradcheck


def test_single_primitive_reports():
    rng = np.random.default_rng(0)
    rep = gradcheck.check_primitive("dense", rng)
    assert rep.op == "dense"
    assert rep.passed
    assert rep.max_rel_err <= 1e-4
    assert rep.param_errors  # per-input breakdown present


@pytest.mark.parametrize("op", gradcheck.PRIMITIVES)
def test_each_primitive_passes(op):
    rng = np.random.default_rng(42)
    rep = gradcheck.check_primitive(op, rng)
    assert rep.passed, f"{op}: max rel err {rep.max_rel_err:.3e}"


def test_suite_covers_all_primitives():
    assert set(gradcheck.PRIMITIVES) == {
        "conv2d", "maxpool2", "dense", "relu", "tanh", "sigmoid",
        "softmax", "lstm_step", "mse", "cross_entropy",
    }


def test_full_suite_passes_within_budget():
    t0 = time.time()
    reports = gradcheck.run_suite(seeds=10)
    elapsed = time.time() - t0
    assert elapsed < 60.0
    assert len(reports) == 10
    for rep in reports:
        assert rep.passed, f"{rep.op}: {rep.max_rel_err:.3e}"


def test_suite_is_deterministic():
    a = gradcheck.run_suite(seeds=2, names=["relu", "mse"])
    b = gradcheck.run_suite(seeds=2, names=["relu", "mse"])
    assert [(r.op, r.max_rel_err) for r in a] == [(r.op, r.max_rel_err) for r in b]


def test_unknown_primitive_rejected():
    with pytest.raises(Exception):
        gradcheck.check_primitive("nonesuch", np.random.default_rng(0))
