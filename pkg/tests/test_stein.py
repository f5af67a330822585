"""Monte-Carlo adjudication of the Gaussian relu-moment identities.

The matrix moment has a single closed form; the scalar moment has two
candidate constants, (d+1)/2 and (d+2)/2, and the sampler decides between
them (the elementary computation E[x^4 1(x>=0)] = 3/2 plus (d-1)/2 predicts
(d+2)/2).  All runs are seeded, so the 3-standard-error gates are
deterministic.
"""

import numpy as np
import pytest

from grnlab.oracles import (adjudicate_stein_scalar, stein_matrix_closed_form,
                            stein_moments_mc, stein_scalar_candidates)
from grnlab.rng import Rng


def test_d1_matrix_moment_matches_half_third_absolute_moment():
    # E[relu(x) x^2] = E|x|^3 / 2 = sqrt(2/pi)
    _, mat, _, mat_se = stein_moments_mc(np.array([1.0]), 10**6, seed=11)
    want = np.sqrt(2.0 / np.pi)
    assert abs(mat[0, 0] - want) <= 3 * mat_se[0, 0]
    closed = stein_matrix_closed_form(np.array([1.0]))
    assert abs(closed[0, 0] - want) <= 1e-15


def test_zero_direction_gives_exactly_zero_moments():
    s, m, s_se, m_se = stein_moments_mc(np.zeros(3), 10**4, seed=3)
    assert s == 0.0 and np.abs(m).max() == 0.0


def test_scalar_adjudication_selects_d_plus_2():
    for d in (1, 3, 10):
        winner, est, se, cands = adjudicate_stein_scalar(d, n=10**6, seed=2024)
        assert winner == "(d+2)/2", (d, est, se, cands)
        # the rejected candidate is far outside the band
        assert abs(est - cands["(d+1)/2"]) > 10 * se


def test_matrix_closed_form_at_random_direction():
    w = Rng(8).normals(3)
    _, mat, _, mat_se = stein_moments_mc(w, 10**6, seed=77)
    closed = stein_matrix_closed_form(w)
    assert float((np.abs(mat - closed) / mat_se).max()) <= 3.0


def test_scalar_candidates_scale_with_direction_norm():
    w = np.array([2.0, 0.0])
    cands = stein_scalar_candidates(w, 2)
    assert cands["(d+1)/2"] == 4.0 * 1.5
    assert cands["(d+2)/2"] == 4.0 * 2.0


def test_sample_floor_enforced():
    with pytest.raises(ValueError):
        stein_moments_mc(np.ones(2), 10**3, seed=0)
