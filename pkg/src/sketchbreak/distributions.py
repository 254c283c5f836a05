"""Seeded Gaussian samplers for the attack's query distributions and TV bounds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .linalg import Subspace, intersection, orthogonal_complement, subspace_distance

NOISE_VAR = 0.25


def make_rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def split_rng(seed: int, roles: tuple[str, ...]) -> dict[str, np.random.Generator]:
    """One independent generator per named role, derived from a single seed."""
    children = np.random.SeedSequence(seed).spawn(len(roles))
    return {r: np.random.default_rng(c) for r, c in zip(roles, children)}


@dataclass(frozen=True)
class ComplementGaussianSpec:
    """G(V^perp, sigma^2): P_{V^perp} g1 + g2 with g1 ~ N(0, sigma^2), g2 ~ N(0, noise_var)."""
    subspace_v: Subspace
    sigma_sq: float
    noise_var: float = NOISE_VAR

    def __post_init__(self):
        if self.sigma_sq < 0:
            raise ValueError("sigma_sq must be nonnegative")
        if self.noise_var <= 0:
            raise ValueError("noise_var must be positive")

    @property
    def ambient_dim(self) -> int:
        return self.subspace_v.ambient_dim


def sample_gaussian(n: int, var: float, rng: np.random.Generator, size=None) -> np.ndarray:
    if var < 0:
        raise ValueError("variance must be nonnegative")
    shape = (n,) if size is None else (size, n)
    if var == 0:
        return np.zeros(shape)
    return rng.normal(scale=np.sqrt(var), size=shape)


def sample_complement(spec: ComplementGaussianSpec, rng: np.random.Generator, size=None,
                      noise_rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw from G(V^perp, sigma^2); rows of the result are samples when ``size`` is given.

    ``noise_rng`` lets g2 come from its own stream; by default both parts share ``rng``.
    """
    n = spec.ambient_dim
    noise_rng = rng if noise_rng is None else noise_rng
    g1 = sample_gaussian(n, spec.sigma_sq, rng, size)
    g2 = sample_gaussian(n, spec.noise_var, noise_rng, size)
    if spec.sigma_sq == 0:
        return g2
    return spec.subspace_v.project_out(g1) + g2


def sample_subspace_gaussian(a: Subspace, tau: float, v: Subspace, rng: np.random.Generator,
                             size=None, noise_var: float = NOISE_VAR) -> np.ndarray:
    """Draw g_tau = P_A g from the family G(A cap V^perp).

    ``v`` must lie inside ``a``.  With d = dim(A) - dim(V), g ~ G(V^perp, tau/d - noise_var)
    when tau/d exceeds noise_var and g ~ N(0, tau/d)^n otherwise.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    d = a.dim - v.dim
    if d <= 0:
        raise ValueError("A cap V^perp is trivial")
    level = tau / d
    if level > noise_var:
        g = sample_complement(ComplementGaussianSpec(v, level - noise_var, noise_var), rng, size)
    else:
        g = sample_gaussian(a.ambient_dim, level, rng, size)
    return a.project(g)


def designated_subspace(a: Subspace, v: Subspace) -> Subspace:
    """U = A cap V^perp."""
    return intersection(a, orthogonal_complement(v))


def tv_bound_shifted(v_norm: float, sigma: float) -> float:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return min(1.0, v_norm / sigma)


def tv_bound_complements(v: Subspace, w: Subspace, sigma_sq: float, B: float, n: int) -> float:
    """20 sqrt(Bn log(Bn)) d(V, W) + (Bn)^-5, valid for sigma^2 in (0, B]."""
    if not 0 < sigma_sq <= B:
        raise ValueError(f"sigma_sq must lie in (0, {B}]")
    bn = B * n
    return 20 * np.sqrt(bn * np.log(bn)) * subspace_distance(v, w) + bn ** -5.0


def tv_shifted_exact(shift_norm, noise_var: float):
    """Exact TV between N(0, s I) and N(u, s I) as a function of ||u||."""
    return 2 * stats.norm.cdf(np.asarray(shift_norm) / (2 * np.sqrt(noise_var))) - 1


def coupled_disagreement(v: Subspace, w: Subspace, sigma_sq: float, couples: int,
                         rng: np.random.Generator, noise_var: float = NOISE_VAR,
                         batch: int = 20000) -> float:
    """Disagreement frequency of the shared-g1 coupling of G(V^perp) and G(W^perp).

    x = P_{V^perp} g1 + g2 and y = P_{W^perp} g1 + g2'.  Given g1, the noise parts
    are joined by the maximal coupling of N(0, s) and N(u, s) with
    u = P_{V^perp} g1 - P_{W^perp} g1, so x != y with probability TV(u).  The
    returned frequency upper bounds the TV distance of the two laws.
    """
    n = v.ambient_dim
    hits = 0
    done = 0
    while done < couples:
        k = min(batch, couples - done)
        g1 = sample_gaussian(n, sigma_sq, rng, k)
        u = w.project(g1) - v.project(g1)  # = P_{V^perp} g1 - P_{W^perp} g1
        p = tv_shifted_exact(np.linalg.norm(u, axis=1), noise_var)
        hits += int(np.sum(rng.random(k) < p))
        done += k
    return hits / couples if couples else 0.0


def conditioned_shell_samples(a: Subspace, v: Subspace, tau: float, shell: tuple[float, float],
                              count: int, rng: np.random.Generator, batch: int = 50000,
                              max_draws: int = 50_000_000):
    """Rejection-sample g_tau conditioned on ||P_U g_tau||^2 in the shell.

    Returns (coords_in_U, coords_outside_U) where the first block is expressed in
    an orthonormal basis of U = A cap V^perp and the second in a basis of A cap V.
    """
    u = designated_subspace(a, v)
    rest = intersection(a, v)
    lo, hi = shell
    keep_u, keep_r = [], []
    got = drawn = 0
    while got < count:
        if drawn >= max_draws:
            raise RuntimeError("shell too thin for the draw budget")
        g = sample_subspace_gaussian(a, tau, v, rng, batch)
        cu = g @ u.basis
        s = np.sum(cu**2, axis=1)
        sel = (s >= lo) & (s < hi)
        keep_u.append(cu[sel])
        keep_r.append(g[sel] @ rest.basis)
        got += int(sel.sum())
        drawn += batch
    return np.vstack(keep_u)[:count], np.vstack(keep_r)[:count]


def suffstat_ks(a: Subspace, v: Subspace, tau1: float, tau2: float, shell, count: int,
                rng: np.random.Generator) -> dict:
    """Two-sample KS tests of the conditional law of g_tau given ||P_U g||^2 in a shell."""
    u1, r1 = conditioned_shell_samples(a, v, tau1, shell, count, rng)
    u2, r2 = conditioned_shell_samples(a, v, tau2, shell, count, rng)
    dir1 = u1[:, 0] / np.linalg.norm(u1, axis=1)
    dir2 = u2[:, 0] / np.linalg.norm(u2, axis=1)
    out = {"direction": stats.ks_2samp(dir1, dir2).pvalue}
    if r1.shape[1]:
        out["outside"] = stats.ks_2samp(r1[:, 0], r2[:, 0]).pvalue
    return out
