"""Autodiff engine: analytic trivial cases, finite-difference oracles,
determinism, and tape isolation."""

import threading

import numpy as np
import pytest

from grnlab import autodiff as ad
from grnlab.linalg import ShapeError
from grnlab.oracles import check_gradient
from grnlab.rng import Rng
from grnlab.verify import default_op_cases


def test_relu_values_and_zero_subgradient():
    tape = ad.Tape()
    x = tape.leaf(np.array([-1.0, 0.0, 2.0]))
    y = ad.relu(x)
    assert (y.value == [0.0, 0.0, 2.0]).all()
    ad.backward(ad.sum_(y))
    assert (x.grad == [0.0, 0.0, 1.0]).all()


def test_softmax_symmetry_and_empty_axis():
    tape = ad.Tape()
    s = ad.softmax(tape.leaf(np.array([[0.0, 0.0]])))
    assert (s.value == 0.5).all()
    with pytest.raises(ShapeError):
        ad.softmax(tape.leaf(np.zeros((2, 0))))


def test_cross_entropy_uniform_logits_is_log_vocab():
    tape = ad.Tape()
    ce = ad.cross_entropy(tape.leaf(np.zeros((3, 7))), np.array([0, 3, 6]))
    assert np.abs(ce.value - np.log(7.0)).max() == 0.0
    with pytest.raises(ValueError, match="out of range"):
        ad.cross_entropy(tape.leaf(np.zeros((1, 7))), np.array([7]))


def test_gather_out_of_range():
    tape = ad.Tape()
    with pytest.raises(ValueError, match="out of range"):
        ad.gather(tape.leaf(np.zeros((4, 2))), np.array([4]))


def test_backward_sum_gives_ones():
    tape = ad.Tape()
    x = tape.leaf(Rng(1).normals((3, 4)))
    ad.backward(ad.sum_(x))
    assert (x.grad == 1.0).all()


def test_backward_quadratic_analytic_gradient():
    tape = ad.Tape()
    rng = Rng(2)
    w = tape.leaf(rng.normals((5, 5)))
    xv = rng.normals((5, 1))
    y = ad.matmul(w, tape.constant(xv))
    loss = ad.scale(ad.sum_(ad.hadamard(y, y)), 0.5)
    ad.backward(loss)
    want = (w.value @ xv) @ xv.T
    assert np.abs(w.grad - want).max() <= 1e-12


def test_backward_rejects_nonscalar():
    tape = ad.Tape()
    x = tape.leaf(np.ones((2, 2)))
    with pytest.raises(ShapeError):
        ad.backward(ad.relu(x))


def test_every_op_passes_finite_differences():
    for name, (build, make_inputs) in default_op_cases().items():
        worst = 0.0
        for seed in range(3):
            worst = max(worst, check_gradient(build, make_inputs(Rng(seed)),
                                              seed=seed))
        assert worst <= 1e-5, f"{name}: {worst}"


def test_repeated_backward_is_bit_identical():
    def run():
        tape = ad.Tape()
        x = tape.leaf(Rng(3).normals((4, 4)))
        w = tape.leaf(Rng(4).normals((4, 4)))
        y = ad.relu(ad.matmul(x, w))
        ad.backward(ad.sum_(ad.hadamard(y, y)))
        return x.grad.copy(), w.grad.copy()

    g1 = run()
    g2 = run()
    assert (g1[0] == g2[0]).all() and (g1[1] == g2[1]).all()


def test_tapes_do_not_mix_even_across_threads():
    results = {}

    def build(tag, seed):
        tape = ad.Tape()
        x = tape.leaf(Rng(seed).normals((6, 6)))
        loss = ad.sum_(ad.hadamard(x, x))
        ad.backward(loss)
        results[tag] = (x.grad.copy(), x.value.copy())

    threads = [threading.Thread(target=build, args=(i, 10 + i)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for tag, (grad, value) in results.items():
        assert (grad == 2.0 * value).all()


def test_mixing_tapes_is_rejected():
    t1, t2 = ad.Tape(), ad.Tape()
    a = t1.leaf(np.ones(2))
    b = t2.leaf(np.ones(2))
    with pytest.raises(ValueError):
        ad.add(a, b)


def test_add_shape_mismatch_reported():
    tape = ad.Tape()
    with pytest.raises(ShapeError):
        ad.add(tape.leaf(np.ones((2, 3))), tape.leaf(np.ones((4, 5))))


def test_jacobian_identity_and_fixed_linear():
    jac = ad.jacobian(lambda tape, xn: xn, np.zeros(4))
    assert (jac == np.eye(4)).all()

    m = Rng(5).normals((6, 6))

    def linear(tape, xn):
        return ad.reshape(
            ad.matmul(ad.reshape(xn, (1, 6)), tape.constant(m.T)), (6,))

    jac = ad.jacobian(linear, Rng(6).normals(6))
    assert np.abs(jac - m).max() <= 1e-10


def test_jacobian_rejects_nonsquare_map():
    def wide(tape, xn):
        return ad.narrow(xn, 0, 0, 2)

    with pytest.raises(ShapeError):
        ad.jacobian(wide, np.zeros(4))
