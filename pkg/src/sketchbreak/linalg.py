"""Orthonormal subspaces, projections, subspace distance and power iteration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg import null_space, subspace_angles

ORTHO_TOL = 1e-10
DEGENERACY_THRESHOLD = 1e-8
REORTH_TRIGGER = 1e-9
REPAIR_LIMIT = 1e-6  # larger deviations are errors, not drift


class DegenerateDirection(ValueError):
    """The vector to append lies (numerically) inside the subspace."""


class NoConvergence(RuntimeError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


class DimensionMismatch(ValueError):
    pass


def _mgs(basis: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt on the columns of ``basis``."""
    q = np.array(basis, dtype=float, copy=True)
    for j in range(q.shape[1]):
        for i in range(j):
            q[:, j] -= (q[:, i] @ q[:, j]) * q[:, i]
        q[:, j] /= np.linalg.norm(q[:, j])
    return q


@dataclass(frozen=True)
class Subspace:
    """Span of the orthonormal columns of ``basis`` (shape n x t) inside R^n."""
    ambient_dim: int
    basis: np.ndarray = field(repr=False)

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float).reshape(self.ambient_dim, -1)
        if b.shape[1] > self.ambient_dim:
            raise DimensionMismatch("more basis vectors than ambient dimensions")
        if b.shape[1]:
            dev = np.abs(b.T @ b - np.eye(b.shape[1])).max()
            if not np.isfinite(dev) or dev > REPAIR_LIMIT:
                raise ValueError(f"basis not orthonormal (deviation {dev:.2e})")
            if dev > REORTH_TRIGGER:
                b = _mgs(b)
                dev = np.abs(b.T @ b - np.eye(b.shape[1])).max()
            if dev > ORTHO_TOL:
                raise ValueError(f"basis not orthonormal (deviation {dev:.2e})")
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def zero(cls, n: int) -> "Subspace":
        return cls(n, np.zeros((n, 0)))

    @classmethod
    def full(cls, n: int) -> "Subspace":
        return cls(n, np.eye(n))

    @classmethod
    def span(cls, vectors, tol: float = 1e-10) -> "Subspace":
        """Orthonormal basis of the span of the given vectors (rows)."""
        v = np.atleast_2d(np.asarray(vectors, dtype=float))
        n = v.shape[1]
        if v.size == 0:
            return cls.zero(n)
        u, s, _ = np.linalg.svd(v.T, full_matrices=False)
        rank = int(np.sum(s > tol * max(1.0, s[0])))
        return cls(n, u[:, :rank])

    @classmethod
    def random(cls, n: int, t: int, rng: np.random.Generator) -> "Subspace":
        if t == 0:
            return cls.zero(n)
        q, _ = np.linalg.qr(rng.standard_normal((n, t)))
        return cls(n, q)

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def project(self, x: np.ndarray) -> np.ndarray:
        """Project a vector or the rows of a matrix onto the subspace."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.ambient_dim:
            raise DimensionMismatch(f"expected last axis {self.ambient_dim}, got {x.shape[-1]}")
        return (x @ self.basis) @ self.basis.T

    def project_out(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) - self.project(x)


def project(v: np.ndarray, s: Subspace) -> np.ndarray:
    return s.project(v)


def orthogonal_complement(s: Subspace) -> Subspace:
    n = s.ambient_dim
    if s.dim == 0:
        return Subspace.full(n)
    if s.dim == n:
        return Subspace.zero(n)
    return Subspace(n, null_space(s.basis.T))


def extend_orthonormal(s: Subspace, v: np.ndarray,
                       threshold: float = DEGENERACY_THRESHOLD) -> Subspace:
    """Append the normalized component of ``v`` orthogonal to ``s``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (s.ambient_dim,):
        raise DimensionMismatch("vector does not match ambient dimension")
    r = s.project_out(v)
    # second pass keeps the new column orthogonal to working precision
    r = s.project_out(r)
    norm = np.linalg.norm(r)
    if norm <= threshold * max(1.0, np.linalg.norm(v)):
        raise DegenerateDirection(f"residual norm {norm:.3e} below threshold")
    return Subspace(s.ambient_dim, np.column_stack([s.basis, r / norm]))


def direct_sum_blocks(block: Subspace, q: int) -> Subspace:
    """The subspace I_q (x) block of R^{qn}: the same block subspace in every coordinate block."""
    n, t = block.ambient_dim, block.dim
    return Subspace(q * n, np.kron(np.eye(q), block.basis) if t else np.zeros((q * n, 0)))


def intersection(a: Subspace, b: Subspace, tol: float = 1e-8) -> Subspace:
    """a intersected with b."""
    if a.ambient_dim != b.ambient_dim:
        raise DimensionMismatch("subspaces live in different spaces")
    if a.dim == 0 or b.dim == 0:
        return Subspace.zero(a.ambient_dim)
    # x = A c lies in b iff its component outside b vanishes
    resid = b.project_out(a.basis.T).T
    _, s, vt = np.linalg.svd(resid, full_matrices=True)
    s_full = np.zeros(a.dim)
    s_full[:len(s)] = s
    coeffs = vt[s_full <= tol].T
    return Subspace.span((a.basis @ coeffs).T) if coeffs.size else Subspace.zero(a.ambient_dim)


def subspace_distance(a: Subspace, b: Subspace) -> float:
    """Operator norm of P_a - P_b."""
    if a.ambient_dim != b.ambient_dim:
        raise DimensionMismatch("subspaces live in different spaces")
    diff = a.projector() - b.projector()
    return float(np.linalg.norm(diff, 2))


def principal_angles(a: Subspace, b: Subspace) -> np.ndarray:
    """Principal angles between a and b (diagnostics only)."""
    if a.dim == 0 or b.dim == 0:
        return np.zeros(0)
    return subspace_angles(a.basis, b.basis)


def top_singular_vector(g: np.ndarray, tol: float = 1e-10, max_iters: int = 10000,
                        seed: int = 0, fallback: bool = True) -> tuple[np.ndarray, float]:
    """Maximise z(v) = (1/m') sum_i <v, g_i>^2 over unit v by power iteration.

    Iterates on the n x n second-moment matrix G^T G / m' from a seeded random
    start and stops once the Rayleigh quotient stagnates to relative ``tol``.
    When the top of the spectrum is nearly degenerate the iteration can stall;
    with ``fallback`` the dense symmetric eigensolver finishes the job, otherwise
    NoConvergence is raised.
    """
    g = np.atleast_2d(np.asarray(g, dtype=float))
    m, n = g.shape
    if m < 1:
        raise ValueError("need at least one row")
    gram = g.T @ g / m
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    obj = float(v @ gram @ v)
    resid = np.inf
    change = np.inf
    for _ in range(max_iters):
        w = gram @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # all rows vanish; every direction is optimal
            return v, 0.0
        v_new = w / norm
        new_obj = float(v_new @ gram @ v_new)
        resid = np.linalg.norm(gram @ v_new - new_obj * v_new)
        change = abs(new_obj - obj)
        if change <= tol * max(new_obj, 1e-300) and resid <= np.sqrt(tol) * max(new_obj, 1e-300):
            return v_new, new_obj
        v, obj = v_new, new_obj
    # Rayleigh quotient stagnated even if the vector is slowly rotating in a
    # near-degenerate top eigenspace; only give up if the value still moves.
    if change <= tol * max(obj, 1e-300):
        return v, obj
    if fallback:
        lam, vec = scipy.linalg.eigh(gram, subset_by_index=[n - 1, n - 1])
        u = vec[:, 0]
        return (u if u @ v >= 0 else -u), float(lam[0])
    raise NoConvergence("power iteration did not converge", resid)


def objective(g: np.ndarray, v: np.ndarray) -> float:
    g = np.atleast_2d(g)
    return float(np.mean((g @ v) ** 2))
