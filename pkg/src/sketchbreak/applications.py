"""Reductions from l_p estimation and l2/l2 sparse recovery to the GapNorm attack."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .attack import AttackConfig, AttackResult, Branch, run_attack
from .distributions import ComplementGaussianSpec, sample_complement, split_rng
from .linalg import Subspace
from .oracles import OracleContract, lp_norm


def tail_norm(x, k: int) -> float:
    """||x_tail(k)||_2: zero the k largest-magnitude entries (ties: lower index counts as larger)."""
    x = np.asarray(x, dtype=float)
    if not 0 <= k <= x.size:
        raise ValueError(f"k must lie in [0, {x.size}]")
    order = np.argsort(-np.abs(x), kind="stable")
    return float(np.linalg.norm(x[order[k:]]))


class Side(str, Enum):
    UNDER = "UnderEstimate"
    OVER = "OverEstimate"


@dataclass
class LpViolation:
    x: np.ndarray
    z_value: float
    p: float
    C: float
    side: Side
    seed: int | None = None

    @property
    def lhs(self) -> float:
        return self.z_value

    @property
    def rhs(self) -> float:
        norm = float(lp_norm(self.x, self.p))
        return norm if self.side is Side.UNDER else self.C * norm

    def recheck(self, oracle: OracleContract | None = None) -> bool:
        """Recompute both sides (re-querying the estimator if given)."""
        z = float(oracle.query(self.x)) if oracle is not None else self.z_value
        norm = float(lp_norm(self.x, self.p))
        return z < norm if self.side is Side.UNDER else z > self.C * norm

    def to_json(self) -> dict:
        return {"x": self.x.tolist(), "z_value": self.z_value, "lhs": self.lhs, "rhs": self.rhs,
                "parameters": {"p": self.p, "C": self.C, "side": self.side.value}, "seed": self.seed}


@dataclass
class RecoveryViolation:
    x: np.ndarray
    x_prime: np.ndarray
    k: int
    C: float
    seed: int | None = None
    parameters: dict = field(default_factory=dict)

    @property
    def lhs(self) -> float:
        return float(np.linalg.norm(self.x_prime - self.x))

    @property
    def rhs(self) -> float:
        return self.C * tail_norm(self.x, self.k)

    def recheck(self, oracle: OracleContract | None = None) -> bool:
        xp = oracle.query(self.x) if oracle is not None else self.x_prime
        return float(np.linalg.norm(xp - self.x)) > self.C * tail_norm(self.x, self.k)

    def to_json(self) -> dict:
        return {"x": self.x.tolist(), "x_prime": self.x_prime.tolist(), "lhs": self.lhs,
                "rhs": self.rhs, "parameters": {"k": self.k, "C": self.C, **self.parameters},
                "seed": self.seed}


# ---------------------------------------------------------------- l_p

def _lp_factors(n: int, p: float) -> tuple[float, float]:
    """(low, up) with low ||x||_2 <= ||x||_p <= up ||x||_2 on R^n."""
    e = (0.0 if np.isinf(p) else 1 / p) - 0.5
    return n ** min(0.0, e), n ** max(0.0, e)


class ThresholdedEstimator(OracleContract):
    """Binary f(x) = 1 iff Z(x) >= threshold, for a real-valued estimator Z."""

    def __init__(self, estimator: OracleContract, threshold: float):
        super().__init__(estimator.ambient_dim)
        self.estimator = estimator
        self.threshold = float(threshold)

    def _answer(self, X):
        return (np.asarray(self.estimator.query_batch(X)) >= self.threshold).astype(np.int8)

    def reveal_rowspace(self):
        return self.estimator.reveal_rowspace()


def lp_gap_parameters(n: int, p: float, C: float, slack: float = 16.0) -> tuple[float, float]:
    """(B, threshold) turning a C-approximate l_p estimator into a GapNorm decider.

    Queries with sigma^2 <= 2 have ||x||_2^2 near 2.25 n and those with
    sigma^2 >= B/2 near (B/2 + 1/4) n.  Norm equivalence brackets Z on each side;
    B = slack * C^2 * (up/low)^2 separates the brackets and the threshold is their
    geometric mean.
    """
    low, up = _lp_factors(n, p)
    B = slack * C**2 * (up / low) ** 2
    z_small = C * up * np.sqrt(2.25 * n)
    z_large = low * np.sqrt((B / 2 + 0.25) * n)
    return B, float(np.sqrt(z_small * z_large))


def attack_lp(oracle: OracleContract, C: float, p: float, budget: int, seed: int = 0,
              cfg: AttackConfig | None = None, r_bound: int | None = None,
              rowspace: Subspace | None = None, candidates: int = 1000):
    """Attack an l_p estimator; return (LpViolation or None, AttackResult)."""
    n = oracle.ambient_dim
    B, thr = lp_gap_parameters(n, p, C)
    f = ThresholdedEstimator(oracle, thr)
    if cfg is None:
        # only the few cells around the threshold carry signal, so pooling over the
        # whole grid dilutes it; take the first accepted direction instead
        cfg = AttackConfig(n=n, B=B, r_bound=r_bound or n // 2, epsilon=B / 64, seed=seed,
                           direction="first")
    res = run_attack(f, cfg, rowspace)
    used = oracle.queries_used
    if res.certificate is None or used >= budget:
        return None, res
    cert = res.certificate
    rng = split_rng(seed, ("lp-candidates",))["lp-candidates"]
    spec = ComplementGaussianSpec(cert.subspace_v, cert.sigma_sq, cert.noise_var)
    n_cand = int(min(candidates, budget - used))
    X = sample_complement(spec, rng, n_cand)
    Z = np.asarray(oracle.query_batch(X), dtype=float)
    norms = lp_norm(X, p)
    if cert.branch is Branch.HIGH_NORM_REJECTED:
        hits = np.flatnonzero(Z < norms)
        side = Side.UNDER
    else:
        hits = np.flatnonzero(Z > C * norms)
        side = Side.OVER
    if not len(hits):
        return None, res
    i = int(hits[0])
    return LpViolation(X[i], float(Z[i]), p, C, side, seed), res


# ---------------------------------------------------------------- sparse recovery

class RecoveryPreconditionError(ValueError):
    pass


def markov_heavy_count(diag: np.ndarray, C: float, alpha: float) -> int:
    """Number of i with (P_{V^perp})_ii > 1 - alpha / C^2."""
    return int(np.sum(np.asarray(diag) > 1 - alpha / C**2))


def markov_kappa(n: int, r: int, C: float, fraction: float = 1 / 3) -> float:
    """Smallest kappa for which Markov's bound keeps |S| >= fraction * n when dim V <= r.

    |{i : (P_V)_ii >= alpha / C^2}| <= C^2 dim(V) / alpha, so alpha = C^2 r / ((1 - fraction) n).
    """
    return float(np.sqrt(C**2 * r / ((1 - fraction) * n)))


class RecoveryGapNorm(OracleContract):
    """GapNorm decider built from a sparse-recovery sketch.

    For the attacker's current V, S = {i : (P_{V^perp})_ii >= (1 - kappa^2/C^2)^{1/2}}.
    On input x the decider probes ``probes`` random indices i of S with
    y^i = x + 4 C sqrt(n) P_{V^perp} e_i, decodes z^i from A y^i and answers 0 iff
    every probed |z^i_i| >= C sqrt(n).  Each decode is charged to the recovery
    oracle's query counter.
    """

    def __init__(self, recovery, C: float, kappa: float = 0.1, B: float | None = None,
                 probes: int = 32, rng: np.random.Generator | None = None,
                 min_fraction: float = 1 / 3):
        n = recovery.ambient_dim
        super().__init__(n)
        if kappa <= 0 or kappa >= C:
            raise ValueError("kappa must lie in (0, C)")
        self.recovery = recovery
        self.C, self.kappa = float(C), float(kappa)
        self.B = 4.0 * n if B is None else float(B)
        self.probes = int(probes)
        self.rng = np.random.default_rng(0) if rng is None else rng
        self.min_fraction = min_fraction
        self.spike = 4 * self.C * np.sqrt(n)
        self.observe_subspace(Subspace.zero(n))

    def observe_subspace(self, v: Subspace) -> None:
        n = self.ambient_dim
        diag = 1.0 - np.sum(v.basis**2, axis=1)
        cut = np.sqrt(1 - self.kappa**2 / self.C**2)
        S = np.flatnonzero(diag >= cut)
        if len(S) < self.min_fraction * n:
            raise RecoveryPreconditionError(
                f"|S| = {len(S)} < n/3 at dim V = {v.dim}; the sketch has too many rows "
                f"for C = {self.C}, kappa = {self.kappa}")
        self.v, self.S = v, S
        self.spikes = self.spike * v.project_out(np.eye(n)[S])  # row k: 4C sqrt(n) P_{V^perp} e_{S[k]}
        self._spike_sketch = self.recovery.sketch(self.spikes)

    def probe(self, X: np.ndarray, picks: np.ndarray):
        """Decoded support and value of z^i for each row of X and each probed slot of S.

        Returns (support, value, hit) with hit[a, b] = |z^i_i| where i = S[picks[a, b]].
        """
        m, k = picks.shape
        Y = self.recovery.sketch(X)[:, None, :] + self._spike_sketch[picks]
        self.recovery.charge(m * k)
        idx, val = self.recovery.decode_sketch(Y.reshape(m * k, -1))
        target = self.S[picks].reshape(-1, 1)
        zi = np.where(idx == target, val, 0.0).sum(axis=1).reshape(m, k)
        return idx, val, np.abs(zi)

    def _answer(self, X):
        m = X.shape[0]
        k = min(self.probes, len(self.S))
        picks = self.rng.random((m, len(self.S))).argsort(axis=1)[:, :k]
        _, _, zi = self.probe(X, picks)
        return (zi < self.C * np.sqrt(self.ambient_dim)).any(axis=1).astype(np.int8)

    def reveal_rowspace(self):
        return self.recovery.reveal_rowspace()


def build_recovery_gapnorm(recovery, C: float, kappa: float = 0.1, B: float | None = None,
                           probes: int = 32, rng=None) -> RecoveryGapNorm:
    return RecoveryGapNorm(recovery, C, kappa, B, probes, rng)


def pair_candidates(v: Subspace, limit: int) -> list[tuple[int, int, float]]:
    """Pairs (i, j) whose difference e_i - e_j has the smallest component in V.

    If V is the sketch's row space, x = c e_i + c P_V (e_j - e_i) has the same
    sketch as c e_j; when ||P_V (e_i - e_j)|| is small x is nearly c e_i, so a
    decoder that answers c e_j errs by about c sqrt(2) against a tiny tail.
    """
    n = v.ambient_dim
    if v.dim == 0:
        return []
    G = v.projector()
    d = np.diag(G)
    dist = d[:, None] + d[None, :] - 2 * G
    iu = np.triu_indices(n, 1)
    flat = dist[iu]
    order = np.argsort(flat, kind="stable")[:limit]
    return [(int(iu[0][o]), int(iu[1][o]), float(flat[o])) for o in order]


def pad_to_k_sparse(x: np.ndarray, k: int, C: float, avoid=()) -> np.ndarray:
    """Append k - 1 coordinates of size 1e6 C sqrt(n); they enter x_tail(k) as the k-1 largest."""
    if k <= 1:
        return x
    x = np.array(x, dtype=float, copy=True)
    big = 1e6 * C * np.sqrt(len(x))
    banned = set(int(a) for a in avoid)
    free = [i for i in range(len(x)) if i not in banned][: k - 1]
    x[free] = big
    return x


@dataclass
class RecoveryAttackOutcome:
    violation: RecoveryViolation | None
    attack: AttackResult | None
    status: str
    queries: int
    search: dict = field(default_factory=dict)


def _spec_for(res: AttackResult, n: int, noise_var: float):
    if res.certificate is not None:
        c = res.certificate
        return ComplementGaussianSpec(c.subspace_v, c.sigma_sq, c.noise_var)
    return ComplementGaussianSpec(res.subspace if res.subspace is not None else Subspace.zero(n),
                                  0.75, noise_var)


def attack_sparse_recovery(recovery, C: float, k: int = 1, budget: int = 10**6, seed: int = 0,
                           cfg: AttackConfig | None = None, kappa: float | None = None,
                           B: float | None = None, probes: int = 32, r_bound: int | None = None,
                           candidates: int = 200, pair_limit: int = 500,
                           rowspace: Subspace | None = None) -> RecoveryAttackOutcome:
    """Attack an l2/l2 sparse-recovery oracle through the GapNorm reduction.

    Runs the attack against the decider of ``build_recovery_gapnorm`` (B = 4n by
    default, kappa from ``markov_kappa`` when None), then searches for a concrete
    violation: first the probes y^i = x + 4C sqrt(n) P_{V^perp} e_i for x drawn
    from the certificate (or final) distribution, then the pair vectors of
    ``pair_candidates`` built from the learned V.  A candidate is reported only
    if ||x' - x||_2 > C ||x_tail(k)||_2 holds on recomputation.  Every decode,
    inside the decider or not, counts against ``budget``.
    """
    n = recovery.ambient_dim
    streams = split_rng(seed, ("decider", "candidates", "probes"))
    kappa = markov_kappa(n, recovery.r, C) if kappa is None else kappa
    f = build_recovery_gapnorm(recovery, C, kappa, B, probes, streams["decider"])
    if cfg is None:
        cfg = AttackConfig(n=n, B=f.B, r_bound=r_bound or recovery.r, epsilon=f.B / 16, seed=seed)
    start = recovery.queries_used
    search = {"kappa": kappa, "B": f.B, "probe_candidates": 0, "pair_candidates": 0}

    def spent():
        return recovery.queries_used - start

    try:
        res = run_attack(f, cfg, rowspace)
    except RecoveryPreconditionError as exc:
        search["error"] = str(exc)
        return RecoveryAttackOutcome(None, None, "precondition-failed", spent(), search)

    def check(x, xp, params):
        viol = RecoveryViolation(x, np.asarray(xp, dtype=float), k, C, seed, params)
        return viol if viol.lhs > viol.rhs and viol.recheck(None) else None

    # probes of the decider on samples of the certificate's distribution
    spec = _spec_for(res, n, cfg.noise_var)
    rng = streams["candidates"]
    try:
        f.observe_subspace(spec.subspace_v)
    except RecoveryPreconditionError as exc:
        search["error"] = str(exc)
    else:
        left = budget - spent()
        per = min(len(f.S), f.probes)
        count = int(min(candidates, max(0, left // max(per, 1))))
        if count:
            X = sample_complement(spec, rng, count)
            picks = streams["probes"].random((count, len(f.S))).argsort(axis=1)[:, :per]
            idx, val, _ = f.probe(X, picks)
            search["probe_candidates"] = count * per
            for a in range(count):
                for b in range(per):
                    row = a * per + b
                    y = X[a] + f.spikes[picks[a, b]]
                    z = np.zeros(n)
                    z[idx[row]] = val[row]
                    hit = check(y, z, {"construction": "probe", "i": int(f.S[picks[a, b]]),
                                       "sigma_sq": spec.sigma_sq})
                    if hit is not None:
                        return RecoveryAttackOutcome(hit, res, "violation", spent(), search)
    # pair vectors built from the learned subspace
    v = res.subspace
    scale = 4 * C * np.sqrt(n)
    eye = np.eye(n)
    for i, j, dist in pair_candidates(v, pair_limit):
        for a, b in ((i, j), (j, i)):
            if spent() >= budget:
                return RecoveryAttackOutcome(None, res, "exhausted", spent(), search)
            x = scale * eye[a] + scale * v.project(eye[b] - eye[a])
            x = pad_to_k_sparse(x, k, C, (a, b))
            search["pair_candidates"] += 1
            hit = check(x, recovery.query(x), {"construction": "pair", "i": a, "j": b, "dist": dist})
            if hit is not None:
                return RecoveryAttackOutcome(hit, res, "violation", spent(), search)
    return RecoveryAttackOutcome(None, res, "exhausted", spent(), search)
