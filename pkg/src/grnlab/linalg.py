"""Dense tensor arithmetic and the small linear-algebra kernels.

Tensors are contiguous 64-bit float numpy arrays.  All operations here are
pure functions with explicit shape contracts; they never mutate their inputs
and hold no global state, so they are safe to call from any thread.

``matmul`` accumulates over the inner index in a fixed order (k = 0, 1, ...),
which makes the result bit-identical to a naive triple loop and therefore
bit-reproducible across runs.  The decomposition kernels are Jacobi methods:
a cyclic two-sided Jacobi eigensolver for symmetric matrices and a one-sided
Jacobi SVD.  Both declare convergence when the relevant off-diagonal
Frobenius mass falls below 1e-14 of the input scale and fail loudly after 60
sweeps instead of returning a half-converged answer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """An operation received tensors whose extents do not fit its contract."""


class NonFiniteError(ValueError):
    """An operation received NaN or infinite entries."""


class ConvergenceError(RuntimeError):
    """A Jacobi iteration hit the sweep cap before reaching its tolerance."""


Tensor = np.ndarray

_MAX_SWEEPS = 60
_OFF_TOL = 1e-14


def as_tensor(values) -> Tensor:
    """Coerce ``values`` to a contiguous float64 array (no copy if already one).

    0-d inputs stay 0-d (``ascontiguousarray`` would promote them to 1-d).
    """
    return np.asarray(values, dtype=np.float64, order="C")


def _require_finite(m: np.ndarray, op: str) -> None:
    if not np.isfinite(m).all():
        raise NonFiniteError(f"{op}: input contains non-finite entries")


def _require_matrix(m: np.ndarray, op: str) -> None:
    if m.ndim != 2:
        raise ShapeError(f"{op}: expected a 2-d tensor, got shape {m.shape}")


def matmul(a, b) -> Tensor:
    """Matrix product with a fixed inner-loop summation order.

    Accumulating rank-1 updates in k order reproduces the naive triple loop
    bit for bit, which pins gradient and replay determinism.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    _require_matrix(a, "matmul")
    _require_matrix(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner extents differ: {a.shape[0]}x{a.shape[1]} @ "
            f"{b.shape[0]}x{b.shape[1]}"
        )
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


@dataclass
class SvdResult:
    """Factors of M = u @ diag(s) @ vt with s sorted descending."""

    u: Tensor
    s: Tensor
    vt: Tensor


@dataclass
class EigResult:
    """Eigenvalues (descending) and orthonormal column eigenvectors."""

    values: Tensor
    vectors: Tensor


def eigh(m) -> EigResult:
    """Symmetric eigendecomposition by cyclic two-sided Jacobi rotations.

    The input must be symmetric to within 1e-12 (relative to its largest
    entry); it is symmetrized exactly before iterating.
    """
    m = as_tensor(m)
    _require_matrix(m, "eigh")
    _require_finite(m, "eigh")
    d0, d1 = m.shape
    if d0 != d1:
        raise ShapeError(f"eigh: expected a square matrix, got {d0}x{d1}")
    scale = max(1.0, float(np.abs(m).max())) if m.size else 1.0
    if m.size and float(np.abs(m - m.T).max()) > 1e-12 * scale:
        raise ShapeError("eigh: input is not symmetric within 1e-12")
    a = (m + m.T) / 2.0
    d = d0
    v = np.eye(d)
    fro = float(np.sqrt((a * a).sum()))
    if fro == 0.0 or d < 2:
        return EigResult(np.diag(a).copy(), v)
    target = _OFF_TOL * fro

    def off_mass() -> float:
        # Sum the off-diagonal entries directly; total minus diagonal would
        # cancel catastrophically once the mass is near machine precision.
        off = a - np.diag(np.diag(a))
        return float(np.sqrt((off * off).sum()))

    for _ in range(_MAX_SWEEPS):
        if off_mass() <= target:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = float(a[p, q])
                if apq == 0.0:
                    continue
                c, s = _jacobi_rotation(float(a[p, p]), float(a[q, q]), apq)
                _rotate_columns(a, p, q, c, s)
                _rotate_rows(a, p, q, c, s)
                _rotate_columns(v, p, q, c, s)
    else:
        if off_mass() > target:
            raise ConvergenceError(
                f"eigh: off-diagonal mass {off_mass():.3e} above target "
                f"{target:.3e} after {_MAX_SWEEPS} sweeps"
            )
    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    return EigResult(values[order], np.ascontiguousarray(v[:, order]))


def math_sign(x: float) -> float:
    return 1.0 if x >= 0.0 else -1.0


def _jacobi_rotation(app: float, aqq: float, apq: float) -> tuple[float, float]:
    """Cosine/sine of the plane rotation annihilating the (p, q) entry of
    the symmetric 2x2 block [[app, apq], [apq, aqq]]."""
    theta = (aqq - app) / (2.0 * apq)
    if abs(theta) < 1e150:
        t = math_sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
    else:
        t = 1.0 / (2.0 * theta)
    c = 1.0 / np.sqrt(t * t + 1.0)
    return c, t * c


def _rotate_columns(m: np.ndarray, p: int, q: int, c: float, s: float) -> None:
    cp = m[:, p].copy()
    cq = m[:, q].copy()
    m[:, p] = c * cp - s * cq
    m[:, q] = s * cp + c * cq


def _rotate_rows(m: np.ndarray, p: int, q: int, c: float, s: float) -> None:
    rp = m[p, :].copy()
    rq = m[q, :].copy()
    m[p, :] = c * rp - s * rq
    m[q, :] = s * rp + c * rq


def svd(m) -> SvdResult:
    """One-sided Jacobi SVD.

    Right plane rotations orthogonalize the columns of M; singular values are
    the resulting column norms.  Convergence is declared when the
    off-diagonal Frobenius mass of the implicit Gram matrix M^T M drops below
    1e-14 * ||M||_F^2.  Sign convention: the first nonzero entry of every
    left singular vector is nonnegative (zero-norm columns are completed to
    an orthonormal basis from canonical vectors).
    """
    m = as_tensor(m)
    _require_matrix(m, "svd")
    _require_finite(m, "svd")
    rows, cols = m.shape
    if rows < cols:
        r = svd(m.T)
        return SvdResult(
            u=np.ascontiguousarray(r.vt.T),
            s=r.s,
            vt=np.ascontiguousarray(r.u.T),
        )
    w = m.copy()
    v = np.eye(cols)
    fro2 = float((m * m).sum())
    if fro2 > 0.0 and cols > 1:
        target = _OFF_TOL * fro2
        for _ in range(_MAX_SWEEPS):
            off2 = 0.0
            for p in range(cols - 1):
                for q in range(p + 1, cols):
                    g = float(w[:, p] @ w[:, q])
                    off2 += 2.0 * g * g
                    if g == 0.0:
                        continue
                    app = float(w[:, p] @ w[:, p])
                    aqq = float(w[:, q] @ w[:, q])
                    c, s = _jacobi_rotation(app, aqq, g)
                    _rotate_columns(w, p, q, c, s)
                    _rotate_columns(v, p, q, c, s)
            if np.sqrt(off2) <= target:
                break
        else:
            raise ConvergenceError(
                f"svd: Gram off-diagonal mass above target after {_MAX_SWEEPS} sweeps"
            )
    s = np.sqrt((w * w).sum(axis=0))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    w = w[:, order]
    v = v[:, order]
    u = np.zeros((rows, cols))
    tiny = np.sqrt(fro2) * 1e-15
    degenerate = []
    for j in range(cols):
        if s[j] > tiny:
            u[:, j] = w[:, j] / s[j]
        else:
            degenerate.append(j)
    _complete_basis(u, degenerate)
    for j in range(cols):
        nz = np.nonzero(u[:, j])[0]
        if nz.size and u[nz[0], j] < 0.0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    return SvdResult(u=u, s=s, vt=np.ascontiguousarray(v.T))


def _complete_basis(u: np.ndarray, columns: list[int]) -> None:
    # Fill the listed (zero) columns with unit vectors orthogonal to the rest.
    if not columns:
        return
    rows = u.shape[0]
    for j in columns:
        for k in range(rows):
            cand = np.zeros(rows)
            cand[k] = 1.0
            cand -= u @ (u.T @ cand)
            norm = float(np.sqrt(cand @ cand))
            if norm > 0.5:
                u[:, j] = cand / norm
                break
        else:
            raise ConvergenceError("svd: failed to complete an orthonormal basis")


def best_rank_r(m, r: int) -> Tensor:
    """Frobenius-optimal rank-``r`` approximation via truncated SVD."""
    m = as_tensor(m)
    _require_matrix(m, "best_rank_r")
    d = min(m.shape)
    if not 0 <= r <= d:
        raise ShapeError(f"best_rank_r: rank {r} outside [0, {d}]")
    if r == 0:
        return np.zeros_like(m)
    res = svd(m)
    return (res.u[:, :r] * res.s[:r]) @ res.vt[:r, :]


def numeric_rank(m, rel_tol: float = 1e-8) -> int:
    """Number of singular values above ``rel_tol`` times the largest one."""
    if not 0.0 < rel_tol < 1.0:
        raise ValueError(f"numeric_rank: rel_tol {rel_tol} outside (0, 1)")
    s = svd(m).s
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int((s > rel_tol * s[0]).sum())
