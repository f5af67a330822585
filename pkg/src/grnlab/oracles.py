"""Independent verification routines.

Everything in this module is an oracle: a slower, simpler, or statistical
second route used to check the production code.  Formula modules never
import this one, so each check compares two genuinely separate paths.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Node, Tape, _backward_from, backward
from .rng import Rng


def matmul_triple_loop(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Naive i-j-k triple loop; the bitwise reference for matmul."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for kk in range(k):
                s += a[i, kk] * b[kk, j]
            out[i, j] = s
    return out


def fd_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def check_gradient(build, inputs: list[np.ndarray], h: float = 1e-5,
                   seed: int = 0) -> float:
    """Max relative error between backward() and central differences.

    ``build(tape, nodes)`` returns an output node; the scalar objective is a
    fixed random projection of that output so every output entry carries
    gradient signal.  Relative error is |ad - fd| / max(1, |fd|) per entry.
    """
    tape = Tape()
    nodes = [tape.leaf(x) for x in inputs]
    out = build(tape, nodes)
    proj = Rng(seed ^ 0x5EED).normals(out.value.shape)

    def objective_from(values: list[np.ndarray]) -> float:
        t = Tape()
        ns = [t.leaf(v) for v in values]
        o = build(t, ns)
        return float((o.value * proj).sum())

    loss_seed = proj if out.value.shape != () else np.asarray(float(proj))
    _backward_from(out, np.asarray(loss_seed))
    worst = 0.0
    for idx, x in enumerate(inputs):
        ad = nodes[idx].grad
        assert ad is not None and ad.shape == x.shape

        def f_of(xv, _idx=idx):
            vals = [v.copy() for v in inputs]
            vals[_idx] = xv
            return objective_from(vals)

        fd = fd_gradient(f_of, x.copy(), h=h)
        err = np.abs(ad - fd) / np.maximum(1.0, np.abs(fd))
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst


def mc_excess_risk(target: np.ndarray, est: np.ndarray, n: int,
                   seed: int) -> tuple[float, float]:
    """Monte-Carlo estimate (and standard error) of E||(A - Ahat) x||^2."""
    d = target.shape[0]
    diff = target - est
    rng = Rng(seed)
    total = 0.0
    total_sq = 0.0
    chunk = 20000
    done = 0
    while done < n:
        b = min(chunk, n - done)
        x = rng.normals((b, d))
        vals = ((x @ diff.T) ** 2).sum(axis=1)
        total += vals.sum()
        total_sq += (vals * vals).sum()
        done += b
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    return mean, math.sqrt(var / n)


def stein_moments_mc(w: np.ndarray, n: int, seed: int):
    """Monte-Carlo moments of relu(w.x) under x ~ N(0, I).

    Returns ``(scalar_moment, matrix_moment, scalar_se, matrix_se)`` where
    the scalar moment estimates E[relu(w.x)^2 ||x||^2] and the matrix moment
    estimates E[relu(w.x) x x^T], each with standard errors.
    """
    if n < 10**4:
        raise ValueError("stein_moments_mc: need at least 1e4 samples")
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    d = w.size
    rng = Rng(seed)
    s1 = 0.0
    s1_sq = 0.0
    s2 = np.zeros((d, d))
    s2_sq = np.zeros((d, d))
    chunk = 20000
    done = 0
    while done < n:
        b = min(chunk, n - done)
        x = rng.normals((b, d))
        act = np.maximum(x @ w, 0.0)
        norms = (x * x).sum(axis=1)
        vals = act * act * norms
        s1 += vals.sum()
        s1_sq += (vals * vals).sum()
        outer = (act[:, None] * x)[:, :, None] * x[:, None, :]
        s2 += outer.sum(axis=0)
        s2_sq += (outer * outer).sum(axis=0)
        done += b
    scalar = s1 / n
    scalar_se = math.sqrt(max(s1_sq / n - scalar * scalar, 0.0) / n)
    matrix = s2 / n
    matrix_se = np.sqrt(np.maximum(s2_sq / n - matrix * matrix, 0.0) / n)
    return scalar, matrix, scalar_se, matrix_se


def stein_scalar_candidates(w: np.ndarray, d: int) -> dict[str, float]:
    """The two closed-form candidates for the scalar moment."""
    w2 = float(np.asarray(w) @ np.asarray(w))
    return {"(d+1)/2": w2 * (d + 1) / 2.0, "(d+2)/2": w2 * (d + 2) / 2.0}


def stein_matrix_closed_form(w: np.ndarray) -> np.ndarray:
    """Closed form (1/sqrt(2 pi)) (||w|| I + w w^T / ||w||)."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    d = w.size
    norm = float(np.sqrt(w @ w))
    if norm == 0.0:
        return np.zeros((d, d))
    return (norm * np.eye(d) + np.outer(w, w) / norm) / math.sqrt(2.0 * math.pi)


def adjudicate_stein_scalar(d: int, n: int = 10**6, seed: int = 2024):
    """Pick the scalar-moment constant supported by Monte Carlo at 3 SE.

    Returns ``(winner, estimate, se, candidates)`` where winner is the label
    of the unique candidate within 3 standard errors (or "ambiguous"/"none").
    """
    w = np.zeros(d)
    w[0] = 1.0
    est, _, se, _ = stein_moments_mc(w, n, seed)
    cands = stein_scalar_candidates(w, d)
    hits = [name for name, val in cands.items() if abs(est - val) <= 3.0 * se]
    if len(hits) == 1:
        winner = hits[0]
    elif len(hits) == 0:
        winner = "none"
    else:
        winner = "ambiguous"
    return winner, est, se, cands


def _bisect_decreasing(h, lo: float, hi: float, iters: int = 200) -> float:
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if h(mid) >= 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def threshold_v1_by_bisection(kappa: float, d: int) -> float:
    """Largest r*/d allowed by the raw sufficient-condition chain for v1.

    Independently re-derives the closed-form threshold: find the largest r
    with r <= d kappa^2 + (1 - kappa^2) (r - (sqrt(d + r) - sqrt(d))^2).
    """

    def h(r: float) -> float:
        rp = r - (math.sqrt(d + r) - math.sqrt(d)) ** 2
        return d * kappa * kappa + (1 - kappa * kappa) * rp - r

    return _bisect_decreasing(h, 0.0, float(d) + 1.0) / d


def threshold_v2_by_bisection(kappa: float, d: int) -> float:
    """Largest r* allowed by the raw sufficient-condition chain for v2."""

    def h(r: float) -> float:
        rp = r - (math.sqrt(1 + r) - 1.0) ** 2
        return d * kappa * kappa + (1 - kappa * kappa) * rp - r

    return _bisect_decreasing(h, 0.0, float(d) + 1.0)


def percentile_sorted(values: np.ndarray, q: float) -> float:
    """Linear-interpolation percentile, written independently of numpy.

    Matches the 'linear' method: rank = q/100 * (n - 1), interpolate between
    the floor and ceil order statistics.
    """
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    n = v.size
    if n == 0:
        raise ValueError("percentile of empty array")
    rank = (q / 100.0) * (n - 1)
    lo = int(math.floor(rank))
    hi = int(math.ceil(rank))
    if lo == hi:
        return float(v[lo])
    frac = rank - lo
    return float(v[lo] * (1.0 - frac) + v[hi] * frac)


def exhaustive_equal_param_rank(d: int, r_star: int, variant: str,
                                budget: int | None = None):
    """Brute-force the best collective rank under the parameter budget.

    Independent re-implementation used to cross-check the production search;
    scans every (layers, rank) pair instead of maximizing analytically.
    """
    if budget is None:
        budget = 2 * d * r_star
    best = None
    for t in range(1, 4 * r_star + 8):
        if variant == "v1":
            extra = t * (t - 1) // 2
        elif variant == "v2":
            extra = d * (t * (t - 1) // 2)
        elif variant == "v3":
            extra = d * (t * (t + 1) // 2)
        else:
            raise ValueError(variant)
        if 2 * d * t + extra > budget:
            break
        for r in range(t, r_star + 1):
            if 2 * d * r + extra <= budget:
                if best is None or r > best[0]:
                    best = (r, t)
    return best


def grad_check_suite(op_cases: dict[str, tuple], seeds: list[int],
                     tol: float = 1e-5):
    """Run finite-difference checks for each named op case.

    ``op_cases`` maps a name to ``(build, make_inputs)`` where ``make_inputs``
    takes an Rng and returns the list of input arrays.  Returns a list of
    (name, worst_error, passed) triples.
    """
    results = []
    for name, (build, make_inputs) in op_cases.items():
        worst = 0.0
        for s in seeds:
            inputs = make_inputs(Rng(s))
            worst = max(worst, check_gradient(build, inputs, seed=s))
        results.append((name, worst, worst <= tol))
    return results
