"""Scaled chi-squared densities, Gamma interval masses and the advantage function.

For a candidate expectation ``tau`` the squared norm of a spherical Gaussian in
``d`` dimensions with ``E ||g||^2 = tau`` has density ``nu_{tau,d}``.  The
function ``delta_advantage`` integrates ``(s - tau) nu_tau(s)`` over the
band ``tau in [d, B d]``; its sign pattern drives the conditional expectation
argument used by the attack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gammainc, gammaincc, gammaln


class Chi2DomainError(ValueError):
    """Raised when a chi-squared routine is called outside its domain."""


@dataclass(frozen=True)
class ChiSquareParams:
    d: int
    tau: float = 1.0
    B: float = 8.0

    def __post_init__(self):
        if self.d < 1:
            raise Chi2DomainError(f"d must be >= 1, got {self.d}")
        if not self.tau > 0:
            raise Chi2DomainError(f"tau must be positive, got {self.tau}")

    def with_tau(self, tau: float) -> "ChiSquareParams":
        return ChiSquareParams(self.d, tau, self.B)


@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_subdivisions: int = 200
    cells: int = 4096  # resolution used for tabulated step functions

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0 or self.max_subdivisions < 1:
            raise ValueError("quadrature tolerances must be positive")


DEFAULT_QUAD = QuadratureSpec()


def log_nu_density(s, d: int, tau: float):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise Chi2DomainError("s must be nonnegative")
    if tau <= 0:
        raise Chi2DomainError("tau must be positive")
    x = s * d / tau
    with np.errstate(divide="ignore", invalid="ignore"):
        return (np.log(d) + (d / 2 - 1) * np.log(x) - x / 2
                - np.log(tau) - (d / 2) * np.log(2.0) - gammaln(d / 2))


def nu_density(s, params: ChiSquareParams):
    """Density of (tau/d) * chi^2_d evaluated at s (vectorised over s)."""
    d, tau = params.d, params.tau
    s_arr = np.asarray(s, dtype=float)
    out = np.exp(log_nu_density(s_arr, d, tau))
    if d == 2:
        # x**0 at s = 0 is 1, log-space gives 0 * -inf
        out = np.where(s_arr == 0, d / (tau * 2.0), out)
    return out if out.ndim else float(out)


def gamma_interval_mass(k: float, a: float, b: float) -> float:
    """Gamma_k([a, b]) with unit scale, using the regularized incomplete gamma."""
    if k <= 0:
        raise Chi2DomainError(f"shape must be positive, got {k}")
    if a < 0 or a > b:
        raise Chi2DomainError(f"invalid interval [{a}, {b}]")
    if np.isinf(b):
        return float(gammaincc(k, a))
    # pick the complementary form that avoids cancellation
    if a > k:
        return float(gammaincc(k, a) - gammaincc(k, b))
    return float(gammainc(k, b) - gammainc(k, a))


def _check_band(a, b, d):
    if d < 5:
        raise Chi2DomainError(f"closed forms need d >= 5, got {d}")
    if a < 0 or a > b:
        raise Chi2DomainError(f"invalid band [{a}, {b}]")


def weighted_interval_integrals(s: float, a: float, b: float,
                                params: ChiSquareParams) -> tuple[float, float]:
    """Closed forms of int_a^b s nu_tau(s) dtau and int_a^b tau nu_tau(s) dtau."""
    d = params.d
    _check_band(a, b, d)
    if s < 0:
        raise Chi2DomainError("s must be nonnegative")
    if s == 0:
        return 0.0, 0.0
    lo = s * d / (2 * b)
    hi = np.inf if a == 0 else s * d / (2 * a)
    i_s = s / (1 - 2 / d) * gamma_interval_mass(d / 2 - 1, lo, hi)
    i_tau = s / (1 - 6 / d + 8 / d**2) * gamma_interval_mass(d / 2 - 2, lo, hi)
    return i_s, i_tau


def weighted_interval_integrals_quad(s: float, a: float, b: float, params: ChiSquareParams,
                                     quad: QuadratureSpec = DEFAULT_QUAD) -> tuple[float, float]:
    """Same integrals by adaptive quadrature over tau (reference implementation)."""
    d = params.d
    _check_band(a, b, d)
    if s == 0:
        return 0.0, 0.0

    def nu(tau):
        return float(np.exp(log_nu_density(s, d, tau)))

    # the integrand in tau peaks near tau = s; give quad that breakpoint
    pts = [p for p in (s * (1 - 4 / np.sqrt(d)), s, s * (1 + 4 / np.sqrt(d))) if a < p < b]
    kw = dict(epsabs=quad.abs_tol, epsrel=quad.rel_tol, limit=quad.max_subdivisions)
    i_s = integrate.quad(lambda t: s * nu(t), a, b, points=pts or None, **kw)[0]
    i_tau = integrate.quad(lambda t: t * nu(t), a, b, points=pts or None, **kw)[0]
    return i_s, i_tau


def delta_advantage(s, params: ChiSquareParams):
    """Delta(s) = int_d^{Bd} (s - tau) nu_tau(s) dtau; vectorised over s."""
    d, B = params.d, params.B
    if B < 4:
        raise Chi2DomainError(f"B must be at least 4, got {B}")
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s_arr < 0):
        raise Chi2DomainError("s must be nonnegative")
    _check_band(d, B * d, d)
    lo = s_arr * d / (2 * B * d)
    hi = s_arr * d / (2 * d)
    k1, k2 = d / 2 - 1, d / 2 - 2
    m1 = np.where(lo > k1, gammaincc(k1, lo) - gammaincc(k1, hi), gammainc(k1, hi) - gammainc(k1, lo))
    m2 = np.where(lo > k2, gammaincc(k2, lo) - gammaincc(k2, hi), gammainc(k2, hi) - gammainc(k2, lo))
    out = s_arr / (1 - 2 / d) * m1 - s_arr / (1 - 6 / d + 8 / d**2) * m2
    return out if np.ndim(s) else float(out[0])


def delta_upper_limit(params: ChiSquareParams) -> float:
    """Point beyond which the mass of every nu_tau, tau <= Bd, is negligible."""
    d, B = params.d, params.B
    return B * d * (1 + 20 / np.sqrt(d))


def delta_total_integral(params: ChiSquareParams, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """int_0^inf Delta(s) ds by adaptive quadrature (should vanish)."""
    d, B = params.d, params.B
    f = lambda s: delta_advantage(s, params)
    kw = dict(epsabs=quad.abs_tol, epsrel=quad.rel_tol, limit=quad.max_subdivisions)
    top = delta_upper_limit(params)
    pts = [d, 2 * d, B * d / 2, B * d]
    body = integrate.quad(f, 0, top, points=pts, **kw)[0]
    tail = integrate.quad(f, top, np.inf, **kw)[0]
    return body + tail


def delta_antiderivative(s, params: ChiSquareParams, quad: QuadratureSpec = DEFAULT_QUAD):
    """D(s) = int_0^s Delta.

    Swapping the order of integration, the inner s-integral of (s - tau) nu_tau
    collapses to -tau x^{d/2} e^{-x} / Gamma(d/2 + 1) with x = s d / 2 tau,
    leaving one tau-quadrature.
    """
    d, B = params.d, params.B
    k = d / 2
    kw = dict(epsabs=quad.abs_tol, epsrel=quad.rel_tol, limit=quad.max_subdivisions)

    def one(sv):
        if sv == 0:
            return 0.0
        if np.isinf(sv):
            return 0.0

        def integrand(tau):
            x = sv * d / (2 * tau)
            return -tau * np.exp(k * np.log(x) - x - gammaln(k + 1))

        return integrate.quad(integrand, d, B * d, **kw)[0]

    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.array([one(v) for v in s_arr])
    return out if np.ndim(s) else float(out[0])


@dataclass(frozen=True)
class TabulatedFunction:
    """Piecewise constant h on a uniform grid over [0, s_max]; h = tail_value beyond."""
    s_max: float
    values: np.ndarray
    tail_value: float

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.s_max, len(self.values) + 1)

    @classmethod
    def from_callable(cls, fn, s_max: float, cells: int = DEFAULT_QUAD.cells, tail_value=None):
        edges = np.linspace(0.0, s_max, cells + 1)
        mids = 0.5 * (edges[1:] + edges[:-1])
        vals = np.clip(np.asarray([fn(m) for m in mids], dtype=float), 0.0, 1.0)
        tail = float(fn(s_max + 1.0)) if tail_value is None else float(tail_value)
        return cls(s_max, vals, tail)

    @classmethod
    def step(cls, at: float, s_max: float, cells: int = DEFAULT_QUAD.cells):
        """0 below ``at``, 1 from ``at`` on."""
        return cls.from_callable(lambda s: float(s >= at), s_max, cells, tail_value=1.0)

    @classmethod
    def constant(cls, value: float, s_max: float, cells: int = 16):
        return cls(s_max, np.full(cells, float(value)), float(value))

    def integral(self, lo: float, hi: float) -> float:
        """int_lo^hi h(s) ds, exact for the piecewise constant representation."""
        e = self.edges
        overlap = np.clip(np.minimum(e[1:], hi) - np.maximum(e[:-1], lo), 0.0, None)
        total = float(overlap @ self.values)
        if hi > self.s_max:
            total += self.tail_value * (hi - max(lo, self.s_max))
        return total


@dataclass
class HSoundnessResult:
    value: float
    upper_gap: float  # int_{Bd/2}^{2Bd} (1 - h)  minus its allowance 1/(Bd)
    lower_mass: float  # int_0^{2d} h minus its allowance 1/d
    violations: list

    @property
    def conforming(self) -> bool:
        return not self.violations


def check_h_soundness_inequality(h: TabulatedFunction, params: ChiSquareParams,
                                 quad: QuadratureSpec = DEFAULT_QUAD) -> HSoundnessResult:
    """Evaluate int h Delta and report which conditions on h fail.

    Condition 1: int_{Bd/2}^{2Bd} (1 - h) <= 1/(Bd).
    Condition 2: int_0^{2d} h <= 1/d.
    For conforming h the value should be at least d/4 once d is large enough.
    """
    d, B = params.d, params.B
    if np.any(h.values < 0) or np.any(h.values > 1) or not 0 <= h.tail_value <= 1:
        raise Chi2DomainError("h must map into [0, 1]")
    lo, hi = B * d / 2, 2 * B * d
    gap = (hi - lo) - h.integral(lo, hi) - 1 / (B * d)
    low = h.integral(0, 2 * d) - 1 / d
    violations = []
    if gap > 0:
        violations.append(("condition 1", gap))
    if low > 0:
        violations.append(("condition 2", low))

    D = delta_antiderivative(h.edges, params, quad)
    value = float(np.diff(D) @ h.values)
    # D(inf) = 0 since Delta integrates to zero
    value += h.tail_value * (0.0 - D[-1])
    return HSoundnessResult(value, gap, low, violations)
