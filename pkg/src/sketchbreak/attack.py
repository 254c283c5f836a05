"""Adaptive reconstruction attack against linear sketches.

Round t sweeps sigma^2 over a grid S, queries the oracle on fresh draws of
G(V_t^perp, sigma^2), stops with a failure certificate when the answer rate
contradicts correctness, and otherwise grows V_t by a direction that carries
excess second moment among the positively labelled samples.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, NamedTuple

import numpy as np
from scipy import stats

from .distributions import NOISE_VAR, ComplementGaussianSpec, sample_complement, split_rng
from .linalg import (DegenerateDirection, Subspace, direct_sum_blocks, extend_orthonormal,
                     top_singular_vector)
from .oracles import OracleContract

TW1_99 = 2.0234  # 99% quantile of the Tracy-Widom (beta = 1) law
STRONG_HIGH = 2 / 3
STRONG_LOW = 1 / 3


class Branch(str, Enum):
    HIGH_NORM_REJECTED = "HighNormRejected"
    LOW_NORM_ACCEPTED = "LowNormAccepted"


class BlockDecompositionError(ValueError):
    pass


@dataclass
class AttackConfig:
    n: int = 64
    B: float = 8.0
    r_bound: int = 16
    m: int = 4000
    epsilon: float = 0.25  # sigma^2 grid spacing
    cert_tolerance: float = 0.3  # fires at rate <= 1 - tol (high) or >= tol (low)
    delta_gain: float | None = None  # None: 1 / (7 B r_bound) times delta_multiplier
    delta_multiplier: float = 1.0
    min_positive_fraction: float = 0.05
    max_rounds: int | None = None  # None: r_bound + 1
    seed: int = 0
    gate: str = "finite"  # "finite" (Wishart edge) or "asymptotic" (sigma^2 + 1/4 + delta)
    direction: str = "pooled"  # "pooled" over the round's cells or "first" accepted cell
    verify_samples: int = 20000
    noise_var: float = NOISE_VAR
    block_size: int = 1  # q > 1 ties directions across q coordinate blocks
    sigma_max: float | None = None  # top of the grid, default B

    def __post_init__(self):
        if self.B < 8:
            raise ValueError("B must be at least 8")
        if self.m < 100:
            raise ValueError("m must be at least 100")
        if not 0 < self.epsilon:
            raise ValueError("epsilon must be positive")
        if not 0 < self.cert_tolerance < 0.5:
            raise ValueError("cert_tolerance must lie in (0, 1/2)")
        if self.gate not in ("finite", "asymptotic"):
            raise ValueError(f"unknown gate {self.gate!r}")
        if self.direction not in ("pooled", "first"):
            raise ValueError(f"unknown direction rule {self.direction!r}")
        if self.n % self.block_size:
            raise ValueError("n must be a multiple of block_size")
        if self.delta_gain is not None and self.delta_gain <= 0:
            raise ValueError("delta_gain must be positive")

    @property
    def gain(self) -> float:
        if self.delta_gain is not None:
            return self.delta_gain
        return self.delta_multiplier / (7 * self.B * self.r_bound)

    @property
    def rounds(self) -> int:
        return self.r_bound + 1 if self.max_rounds is None else self.max_rounds

    def grid(self) -> np.ndarray:
        top = self.B if self.sigma_max is None else self.sigma_max
        lo = np.ceil(0.75 / self.epsilon - 1e-9)
        hi = np.floor(top / self.epsilon + 1e-9)
        return np.arange(lo, hi + 1) * self.epsilon

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FailureCertificate:
    subspace_v: Subspace
    sigma_sq: float
    branch: Branch
    strong: bool = False
    empirical_rate: float = float("nan")
    verify_samples: int = 0
    threshold: float = 0.5  # rate at or beyond which the branch counts as a failure
    noise_var: float = NOISE_VAR
    B: float = 8.0

    def __post_init__(self):
        self.branch = Branch(self.branch)
        if self.branch is Branch.HIGH_NORM_REJECTED and not self.B / 2 <= self.sigma_sq <= 50 * self.B:
            raise ValueError("high-norm certificate needs sigma^2 in [B/2, 50B]")
        if self.branch is Branch.LOW_NORM_ACCEPTED and self.sigma_sq > 2:
            raise ValueError("low-norm certificate needs sigma^2 <= 2")

    @property
    def ambient_dim(self) -> int:
        return self.subspace_v.ambient_dim

    def summary(self) -> dict:
        return {"branch": self.branch.value, "sigma_sq": self.sigma_sq, "dim_v": self.subspace_v.dim,
                "strong": self.strong, "empirical_rate": self.empirical_rate,
                "verify_samples": self.verify_samples, "threshold": self.threshold}


class BoostResult(NamedTuple):
    direction: np.ndarray | None
    objective: float
    threshold: float


@dataclass
class AttackResult:
    status: str  # "certificate" or "exhausted"
    certificate: FailureCertificate | None
    trace: list
    rounds: int
    subspace: Subspace
    queries: int
    alignments: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.certificate is not None


def check_certificate_condition(rate: float, sigma_sq: float, B: float, epsilon: float) -> Branch | None:
    if sigma_sq >= B / 2 and rate <= 1 - epsilon:
        return Branch.HIGH_NORM_REJECTED
    if sigma_sq <= 2 and rate >= epsilon:
        return Branch.LOW_NORM_ACCEPTED
    return None


def estimate_label_rate(oracle: OracleContract, spec: ComplementGaussianSpec, m: int,
                        rng: np.random.Generator) -> tuple[float, np.ndarray]:
    if m < 1:
        raise ValueError("m must be positive")
    X = sample_complement(spec, rng, m)
    a = np.asarray(oracle.query_batch(X))
    return float(a.mean()), X[a == 1]


def wishart_edge(m_prime: int, p: int, scale: float) -> float:
    """99% point of the top eigenvalue of (1/m') Y^T Y for m' white rows of variance ``scale`` in R^p."""
    if m_prime < 2 or p < 1:
        return np.inf
    a, b = np.sqrt(m_prime - 1), np.sqrt(p)
    mu = (a + b) ** 2
    sd = (a + b) * (1 / a + 1 / b) ** (1 / 3)
    return scale * (mu + TW1_99 * sd) / m_prime


def acceptance_threshold(m_prime: int, sigma_sq: float, delta_gain: float, p: int,
                         gate: str = "finite", noise_var: float = NOISE_VAR) -> float:
    s = sigma_sq + noise_var
    if gate == "asymptotic":
        return s + delta_gain
    return wishart_edge(m_prime, p, s) + delta_gain


def boost_direction(positives: np.ndarray, sigma_sq: float, delta_gain: float,
                    subspace_v: Subspace | None = None, gate: str = "finite",
                    noise_var: float = NOISE_VAR, seed: int = 0) -> BoostResult:
    """Top singular direction of the positives (projected off V) if its objective clears the gate."""
    P = np.atleast_2d(np.asarray(positives, dtype=float))
    if P.shape[0] < 1:
        raise ValueError("need at least one positive sample")
    n = P.shape[1]
    if subspace_v is not None and subspace_v.dim:
        P = subspace_v.project_out(P)
    p = n - (subspace_v.dim if subspace_v is not None else 0)
    u, obj = top_singular_vector(P, seed=seed)
    thr = acceptance_threshold(P.shape[0], sigma_sq, delta_gain, p, gate, noise_var)
    return BoostResult(u if obj >= thr else None, obj, thr)


def binomial_ci(k: int, n: int, level: float = 0.99) -> tuple[float, float]:
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


def verify_certificate(cert: FailureCertificate, oracle: OracleContract, samples: int,
                       rng: np.random.Generator, level: float = 0.99) -> tuple[float, bool]:
    """Fresh non-adaptive queries from G(V^perp, sigma^2); violated iff the whole CI is on the failing side."""
    if samples < 100:
        raise ValueError("need at least 100 verification samples")
    if cert.ambient_dim != oracle.ambient_dim:
        raise ValueError("certificate and oracle dimensions differ")
    spec = ComplementGaussianSpec(cert.subspace_v, cert.sigma_sq, cert.noise_var)
    rate, pos = estimate_label_rate(oracle, spec, samples, rng)
    lo, hi = binomial_ci(len(pos), samples, level)
    if cert.branch is Branch.HIGH_NORM_REJECTED:
        violated = hi <= cert.threshold
    else:
        violated = lo >= cert.threshold
    return rate, bool(violated)


def block_projector_blocks(w: Subspace, q: int) -> list[np.ndarray]:
    n = w.ambient_dim // q
    P = w.projector()
    return [P[i * n:(i + 1) * n, i * n:(i + 1) * n] for i in range(q)]


def decompose_blocks(w: Subspace, q: int, tol: float = 1e-6) -> list[Subspace]:
    """Split a product subspace W = W_1 + ... + W_q along the q coordinate blocks."""
    if w.ambient_dim % q:
        raise BlockDecompositionError("dimension not divisible by q")
    n = w.ambient_dim // q
    P = w.projector()
    parts = []
    for i, Pi in enumerate(block_projector_blocks(w, q)):
        lam, U = np.linalg.eigh(Pi)
        resid = float(np.max(np.minimum(np.abs(lam), np.abs(1 - lam)))) if len(lam) else 0.0
        if resid > tol:
            raise BlockDecompositionError(f"block {i} projector has eigenvalue residual {resid:.2e}")
        parts.append(Subspace(n, U[:, lam > 0.5]))
    off = P.copy()
    for i in range(q):
        off[i * n:(i + 1) * n, i * n:(i + 1) * n] = 0
    if np.abs(off).max(initial=0.0) > tol:
        raise BlockDecompositionError("subspace couples different blocks")
    return parts


def extract_strong_certificate(product_cert: FailureCertificate, oracle: OracleContract, q: int,
                               rng: np.random.Generator) -> FailureCertificate:
    """Certificate for the base oracle obtained from one random block of a product certificate."""
    if q == 1:
        parts = [product_cert.subspace_v]
    else:
        parts = decompose_blocks(product_cert.subspace_v, q)
    if parts[0].ambient_dim != oracle.ambient_dim:
        raise ValueError("oracle does not match the block dimension")
    i = int(rng.integers(q))
    high = product_cert.branch is Branch.HIGH_NORM_REJECTED
    return FailureCertificate(parts[i], product_cert.sigma_sq, product_cert.branch, strong=True,
                              threshold=STRONG_HIGH if high else STRONG_LOW,
                              noise_var=product_cert.noise_var, B=product_cert.B)


def _sample_cell(g1_rng, g2_rng, m: int, q: int, v_block: Subspace, sigma_sq: float,
                 noise_var: float) -> np.ndarray:
    """m draws from G(V^perp, sigma^2) with V = I_q (x) v_block, flattened to rows of R^{qn}."""
    nb = v_block.ambient_dim
    g1 = g1_rng.normal(scale=np.sqrt(sigma_sq), size=(m, q, nb))
    if v_block.dim:
        g1 = v_block.project_out(g1)
    g2 = g2_rng.normal(scale=np.sqrt(noise_var), size=(m, q, nb))
    return (g1 + g2).reshape(m, q * nb)


def run_attack(oracle: OracleContract, cfg: AttackConfig, rowspace: Subspace | None = None,
               certificate_filter: Callable[[FailureCertificate], FailureCertificate | None] | None = None,
               ) -> AttackResult:
    """Run the round-by-round attack.

    ``rowspace`` is only used for diagnostics (alignment of accepted directions).
    ``certificate_filter`` may post-process a verified certificate; returning
    None makes the attack keep going.
    """
    if oracle.ambient_dim != cfg.n:
        raise ValueError("oracle dimension does not match cfg.n")
    q = cfg.block_size
    nb = cfg.n // q
    streams = split_rng(cfg.seed, ("g1", "g2", "verify", "extract"))
    g1_rng, g2_rng, ver_rng = streams["g1"], streams["g2"], streams["verify"]
    v_block = Subspace.zero(nb)
    grid = cfg.grid()
    trace: list = []
    alignments: list = []
    start_queries = oracle.queries_used
    min_pos = max(2, int(np.ceil(cfg.min_positive_fraction * cfg.m)))

    for t in range(1, cfg.rounds + 1):
        v_full = direct_sum_blocks(v_block, q) if q > 1 else v_block
        oracle.observe_subspace(v_full)
        pooled = np.zeros((nb, nb))
        first_dir = None
        first_rec = None
        p_free = nb - v_block.dim
        for s2 in grid:
            s2 = float(s2)
            X = _sample_cell(g1_rng, g2_rng, cfg.m, q, v_block, s2, cfg.noise_var)
            a = np.asarray(oracle.query_batch(X))
            rate = float(a.mean())
            rec = {"t": t, "sigma_sq": s2, "rate": rate, "m_prime": int(a.sum()),
                   "objective": None, "accepted": False}
            trace.append(rec)
            branch = check_certificate_condition(rate, s2, cfg.B, cfg.cert_tolerance)
            if branch is not None:
                high = branch is Branch.HIGH_NORM_REJECTED
                cert = FailureCertificate(v_full, s2, branch, threshold=(1 - cfg.cert_tolerance) if high
                                          else cfg.cert_tolerance, noise_var=cfg.noise_var, B=cfg.B)
                vrate, violated = verify_certificate(cert, oracle, cfg.verify_samples, ver_rng)
                cert.empirical_rate, cert.verify_samples = vrate, cfg.verify_samples
                rec["certificate"] = branch.value
                rec["verified_rate"] = vrate
                rec["verified"] = violated
                if violated:
                    final = cert if certificate_filter is None else certificate_filter(cert)
                    if final is not None:
                        rec["final_certificate"] = final.summary()
                        return AttackResult("certificate", final, trace, t, v_full,
                                            oracle.queries_used - start_queries, alignments)
                # unverified or filtered out: keep sweeping
            m_prime = int(a.sum())
            if m_prime < min_pos:
                continue
            # each block of a positive is a sample of the (tied) block distribution
            Y = X[a == 1].reshape(m_prime * q, nb)
            if v_block.dim:
                Y = v_block.project_out(Y)
            res = boost_direction(Y, s2, cfg.gain, None, cfg.gate, cfg.noise_var, seed=cfg.seed + t)
            # V-components were removed, so the free dimension is n - dim V
            res = res._replace(threshold=acceptance_threshold(Y.shape[0], s2, cfg.gain, p_free,
                                                              cfg.gate, cfg.noise_var))
            accepted = res.objective >= res.threshold
            rec["objective"] = res.objective
            rec["accepted"] = bool(accepted)
            if accepted and first_dir is None:
                first_dir, first_rec = top_singular_vector(Y, seed=cfg.seed + t)[0], rec
            pooled += Y.T @ Y / (s2 + cfg.noise_var) - Y.shape[0] * (np.eye(nb) - v_block.projector())
        if first_dir is None:
            continue  # no direction found: V_{t+1} = V_t
        if cfg.direction == "pooled":
            direction = np.linalg.eigh(pooled)[1][:, -1]
        else:
            direction = first_dir
        try:
            v_block = extend_orthonormal(v_block, direction)
        except DegenerateDirection:
            continue
        if rowspace is not None:
            u = v_block.basis[:, -1]
            align = float(np.sum(rowspace.project(u) ** 2))
            first_rec["proj_onto_A"] = align
            alignments.append(align)
    v_full = direct_sum_blocks(v_block, q) if q > 1 else v_block
    return AttackResult("exhausted", None, trace, cfg.rounds, v_full,
                        oracle.queries_used - start_queries, alignments)


def run_strong_attack(base: OracleContract, cfg: AttackConfig, q: int,
                      rowspace: Subspace | None = None, tie_blocks: bool = True) -> AttackResult:
    """Attack the majority product f^{(x)q} and return a verified strong certificate for f."""
    from .oracles import amplify_majority

    product = amplify_majority(base, q)
    n = q * base.ambient_dim
    pcfg = AttackConfig(**{**cfg.to_dict(), "n": n, "block_size": q if tie_blocks else 1})
    ext_rng = split_rng(cfg.seed, ("g1", "g2", "verify", "extract"))["extract"]

    def strong_filter(cert: FailureCertificate):
        try:
            block = extract_strong_certificate(cert, base, q, ext_rng)
        except BlockDecompositionError:
            return None
        rate, violated = verify_certificate(block, base, cfg.verify_samples, ext_rng)
        block.empirical_rate, block.verify_samples = rate, cfg.verify_samples
        return block if violated else None

    diag = None
    if rowspace is not None:
        diag = rowspace if tie_blocks else direct_sum_blocks(rowspace, q)
    return run_attack(product, pcfg, diag, strong_filter)
