"""Jacobian-rank caps for residual and baseline networks.

A residual network's map minus the identity factors through the layers'
low-rank bottlenecks, so numeric_rank(J - I) is at most the collective rank;
a baseline chain is capped by its narrowest layer.  Checked for the linear
models (where the Jacobian is the model matrix) and for relu MLP blocks at
random points.
"""

import numpy as np

from grnlab import autodiff as ad
from grnlab.grn import LinearModel
from grnlab.linalg import numeric_rank
from grnlab.rng import Rng

RANK_TOL = 1e-6


def model_jacobian(model, x):
    def f(tape, xn):
        binding = model.params.bind(tape)
        out = model.forward(tape, binding, ad.reshape(xn, (1, model.d)))
        return ad.reshape(out, (model.d,))

    return ad.jacobian(f, x)


def randomized(model, seed, scale=0.7):
    noise = Rng(seed)
    for p in model.params:
        p.value = p.value + noise.normals(p.value.shape) * scale
    return model


def test_linear_residual_model_matrix_rank_cap():
    # 20 random parameter draws, d=10, ranks (2, 2): rank(M - I) <= 4
    for seed in range(20):
        model = randomized(LinearModel("resnet", 10, 2, [2, 2], Rng(seed)), 500 + seed)
        jac = model_jacobian(model, np.zeros(10))
        assert numeric_rank(jac - np.eye(10), RANK_TOL) <= 4


def test_relu_residual_mlp_jacobian_rank_cap():
    model = randomized(
        LinearModel("resnet", 8, 2, [2, 2], Rng(3), activation="relu"), 77)
    points = Rng(99)
    for _ in range(10):
        x = points.normals(8)
        jac = model_jacobian(model, x)
        assert numeric_rank(jac - np.eye(8), RANK_TOL) <= 4


def test_baseline_rank_capped_by_narrowest_layer():
    for activation in ("none", "relu"):
        model = randomized(
            LinearModel("baseline", 10, 3, [4, 2, 5], Rng(7),
                        activation=activation), 301)
        points = Rng(31)
        for _ in range(5):
            jac = model_jacobian(model, points.normals(10))
            assert numeric_rank(jac, RANK_TOL) <= 2
