"""Tape semantics and finite-difference verification of every backward rule."""

import numpy as np
import pytest

from fuseseg import tensor as T
from fuseseg import gradcheck
from fuseseg.errors import ContractError, NumericError


def _leaf(arr):
    t = T.Tensor(np.asarray(arr), dtype=np.float64)
    t.requires_grad = True
    return t


def test_backward_sum_gives_ones():
    x = _leaf(np.arange(6.0).reshape(2, 3))
    with T.Tape() as tape:
        loss = T.tsum(x)
    tape.backward(loss)
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_half_square_gives_x():
    x = _leaf([3.0, -1.0, 0.5])
    with T.Tape() as tape:
        loss = T.tsum(x * x) * 0.5
    tape.backward(loss)
    assert np.allclose(x.grad, x.data, atol=1e-15)


def test_repeated_backward_accumulates():
    x = _leaf([1.0, 2.0])
    with T.Tape() as tape:
        loss = T.tsum(x * x)
    tape.backward(loss)
    once = x.grad.copy()
    tape.backward(loss)
    assert np.array_equal(x.grad, 2.0 * once)


def test_unreachable_input_gets_zero_grad():
    x = _leaf([1.0, 2.0])
    y = _leaf([3.0, 4.0])
    with T.Tape() as tape:
        dead = T.tsum(y * 2.0)  # noqa: F841  recorded but not part of loss
        loss = T.tsum(x)
    tape.backward(loss)
    assert np.array_equal(x.grad, np.ones(2))
    assert np.array_equal(y.grad, np.zeros(2))


def test_backward_contract_errors():
    x = _leaf([1.0, 2.0])
    with T.Tape() as tape:
        vec = x * 2.0
        loss = T.tsum(x)
    with pytest.raises(ContractError):
        tape.backward(vec)  # not scalar
    off_tape = T.tsum(_leaf([1.0]))  # built outside any tape
    with pytest.raises(ContractError):
        tape.backward(off_tape)
    tape.backward(loss)  # the valid one still works


def test_no_recording_without_tape():
    x = _leaf([1.0, 2.0])
    out = T.tsum(x * x)
    assert out._tape is None
    with T.Tape() as tape:
        assert len(tape.nodes) == 0
        T.tsum(x)
        assert len(tape.nodes) == 1
    # leaving the context stops recording again
    T.tsum(x * 3.0)
    assert len(tape.nodes) == 1


def test_every_op_passes_fd_check():
    results = gradcheck.op_checks(seed=0, tol=1e-5)
    failed = [r.name for r in results if not r.passed]
    assert not failed, f"ops failing FD check: {failed}"


def test_every_loss_passes_fd_check():
    results = gradcheck.loss_checks(seed=0, tol=1e-5)
    failed = [r.name for r in results if not r.passed]
    assert not failed, f"losses failing FD check: {failed}"


def test_corrupted_backward_is_caught(monkeypatch):
    # negative control: a 1% error in the sigmoid input gradient must blow
    # well past the op tolerance
    orig = T._sigmoid_input_grad
    monkeypatch.setattr(T, "_sigmoid_input_grad", lambda y, g: 1.01 * orig(y, g))
    rng = np.random.default_rng(0)
    x = _leaf(rng.standard_normal(12))

    def f(t):
        return T.tsum(T.sigmoid(t))

    rep = T.grad_check(f, [x], eps=1e-4, tol=1e-5)
    # a 1% corruption reads as ~0.01/1.01 relative error, orders past tol
    assert not rep.passed
    assert rep.max_rel_error > 5e-3


def test_linearity_of_backward():
    rng = np.random.default_rng(1)
    x = _leaf(rng.standard_normal((3, 3)))
    with T.Tape() as tape:
        loss = T.tsum(T.sigmoid(x))
    tape.backward(loss)
    base = x.grad.copy()

    x.grad = None
    with T.Tape() as tape2:
        scaled = T.tsum(T.sigmoid(x)) * 4.0
    tape2.backward(scaled)
    assert np.allclose(x.grad, 4.0 * base, rtol=1e-12, atol=0)


def test_gradients_deterministic():
    rng = np.random.default_rng(2)
    xv = rng.standard_normal((2, 4, 4, 4))
    wv = rng.standard_normal((3, 2, 3, 3, 3))

    def run():
        x = _leaf(xv)
        w = _leaf(wv)
        with T.Tape() as tape:
            h = T.conv3d(x, w, None, 1, 1)
            loss = T.tsum(T.leaky_relu(h, 0.01))
        tape.backward(loss)
        return x.grad.copy(), w.grad.copy()

    gx1, gw1 = run()
    gx2, gw2 = run()
    assert np.array_equal(gx1, gx2)
    assert np.array_equal(gw1, gw2)


def test_single_precision_composite_within_loose_tol():
    rng = np.random.default_rng(3)
    x = T.Parameter(rng.standard_normal(8), dtype=np.float32)
    w = T.Parameter(rng.standard_normal((4, 8)) * 0.5, dtype=np.float32)
    b = T.Parameter(np.zeros(4), dtype=np.float32)

    def f(xt, wt, bt):
        return T.tsum(T.sigmoid(T.fully_connected(xt, wt, bt)))

    # float32 loss evaluation leaves ~|f|*ulp/(2*eps) of FD noise, so the
    # achievable tolerance here is two decades looser than the float64 checks
    rep = T.grad_check(f, [x, w, b], eps=1e-2, tol=1e-2)
    assert rep.passed, f"single-precision FD error {rep.max_rel_error:.2e}"


def test_finite_checks_name_the_op():
    x = T.Tensor(np.array([800.0]), dtype=np.float64)
    with T.finite_checks():
        with pytest.raises(NumericError, match="exp"):
            T.texp(x)
    # default mode stays permissive
    with np.errstate(over="ignore"):
        out = T.texp(x)
    assert np.isinf(out.data[0])


def test_grad_check_linear_is_machine_exact():
    x = _leaf(np.arange(5.0))
    rep = T.grad_check(lambda t: T.tsum(t * 3.0), [x], eps=1e-4, tol=1e-5)
    assert rep.max_rel_error < 1e-10


def test_grad_check_rejects_frozen_inputs():
    x = T.Tensor(np.arange(5.0), dtype=np.float64)
    with pytest.raises(ContractError):
        T.grad_check(lambda t: T.tsum(t * 3.0), [x])


def test_param_grad_check_negative_control(monkeypatch):
    # the end-to-end directional check must also catch a corrupted rule
    rng = np.random.default_rng(4)
    w = T.Parameter(rng.standard_normal((4, 6)), dtype=np.float64)
    b = T.Parameter(np.zeros(4), dtype=np.float64)
    xv = rng.standard_normal(6)

    def f():
        x = T.Tensor(xv, dtype=np.float64)
        return T.tsum(T.sigmoid(T.fully_connected(x, w, b)))

    rep = T.param_grad_check(f, [("w", w), ("b", b)], np.random.default_rng(0))
    assert rep.passed

    orig = T._sigmoid_input_grad
    monkeypatch.setattr(T, "_sigmoid_input_grad", lambda y, g: 1.01 * orig(y, g))
    rep_bad = T.param_grad_check(f, [("w", w), ("b", b)], np.random.default_rng(0))
    assert not rep_bad.passed
