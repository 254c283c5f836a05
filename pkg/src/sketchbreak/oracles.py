"""Black-box sketch oracles: the attack only ever calls ``query``/``query_batch``."""

from __future__ import annotations

import json
import shlex
import subprocess
import threading

import numpy as np
from scipy import stats

from .linalg import Subspace


class CalibrationError(RuntimeError):
    pass


class OracleProtocolError(RuntimeError):
    pass


class OracleContract:
    """Base class.  Subclasses implement ``_answer(X)`` for a 2-d batch of queries."""

    binary = True

    def __init__(self, ambient_dim: int):
        self.ambient_dim = int(ambient_dim)
        self._queries = 0
        self._lock = threading.Lock()

    @property
    def queries_used(self) -> int:
        return self._queries

    def _answer(self, X: np.ndarray):
        raise NotImplementedError

    def query_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.ambient_dim:
            raise ValueError(f"query has dimension {X.shape[1]}, oracle expects {self.ambient_dim}")
        with self._lock:
            self._queries += X.shape[0]
            return self._answer(X)

    def query(self, x):
        return self.query_batch(np.asarray(x, dtype=float)[None, :])[0]

    def charge(self, count: int) -> None:
        """Count queries answered through a side channel (e.g. a decider evaluating the sketch itself)."""
        with self._lock:
            self._queries += int(count)

    def observe_subspace(self, v: Subspace) -> None:
        """Hook for oracles whose decision rule may depend on the attacker's current V."""

    def reveal_rowspace(self) -> Subspace:
        """Ground-truth row space, for diagnostics only."""
        raise NotImplementedError


class SketchOracle(OracleContract):
    """Any oracle answering from Ax for a fixed matrix A (rows need not be orthonormal)."""

    def __init__(self, sketch_rows: np.ndarray):
        super().__init__(sketch_rows.shape[1])
        self.sketch_rows = np.asarray(sketch_rows, dtype=float)

    @property
    def r(self) -> int:
        return self.sketch_rows.shape[0]

    def sketch(self, X: np.ndarray) -> np.ndarray:
        return X @ self.sketch_rows.T

    def reveal_rowspace(self) -> Subspace:
        return Subspace.span(self.sketch_rows)


class GapNormOracle(SketchOracle):
    """Answers 1 iff (n/r) ||Ax||^2 >= threshold, A with orthonormal rows."""

    def __init__(self, sketch_rows: np.ndarray, threshold: float, B: float):
        super().__init__(sketch_rows)
        self.threshold = float(threshold)
        self.B = float(B)

    def estimate(self, X: np.ndarray) -> np.ndarray:
        return (self.ambient_dim / self.r) * np.sum(self.sketch(X) ** 2, axis=1)

    def _answer(self, X):
        return (self.estimate(X) >= self.threshold).astype(np.int8)


class ConstantOracle(OracleContract):
    def __init__(self, n: int, value: int):
        super().__init__(n)
        self.value = int(value)

    def _answer(self, X):
        return np.full(X.shape[0], self.value, dtype=np.int8)

    def reveal_rowspace(self) -> Subspace:
        return Subspace.zero(self.ambient_dim)


def gapnorm_calibration(oracle: GapNormOracle, rng: np.random.Generator, probes: int = 10000):
    """Empirical error rates on fresh N(0,1)^n (should answer 0) and N(0,B)^n (should answer 1)."""
    n, B = oracle.ambient_dim, oracle.B
    lo = rng.standard_normal((probes, n))
    hi = rng.normal(scale=np.sqrt(B), size=(probes, n))
    # calibrate on the raw decision rule so the query counter stays at zero
    err_lo = float(np.mean(oracle.estimate(lo) >= oracle.threshold))
    err_hi = float(np.mean(oracle.estimate(hi) < oracle.threshold))
    return err_lo, err_hi


def gapnorm_exact_error(n: int, r: int, B: float, threshold: float) -> tuple[float, float]:
    """Exact error rates of the Gaussian-sketch rule: (n/r) var chi2_r vs threshold."""
    err_lo = stats.chi2.sf(threshold * r / n, r)
    err_hi = stats.chi2.cdf(threshold * r / (n * B), r)
    return float(err_lo), float(err_hi)


def make_gapnorm_oracle(n: int, r: int, B: float, rng: np.random.Generator,
                        max_error: float = 0.02, probes: int = 10000,
                        threshold: float | None = None) -> GapNormOracle:
    """Random sketch with orthonormalised Gaussian rows and a geometric-mean threshold.

    Construction fails loudly if the empirical error on fresh N(0,1)^n or N(0,B)^n
    inputs exceeds ``max_error``.
    """
    if not 0 < r < n:
        raise ValueError(f"need 0 < r < n, got r={r}, n={n}")
    if B < 8:
        raise ValueError("B must be at least 8")
    g = rng.normal(scale=1 / np.sqrt(n), size=(r, n))
    q, _ = np.linalg.qr(g.T)
    oracle = GapNormOracle(q.T, np.sqrt(B) * n if threshold is None else threshold, B)
    err_lo, err_hi = gapnorm_calibration(oracle, rng, probes)
    if max(err_lo, err_hi) > max_error:
        raise CalibrationError(f"calibration errors {err_lo:.4f}/{err_hi:.4f} exceed {max_error}")
    oracle.calibration = (err_lo, err_hi)
    return oracle


def make_fullspace_oracle(n: int, B: float) -> GapNormOracle:
    """True-norm thresholding on all of R^n (r = n); nothing is hidden from it."""
    return GapNormOracle(np.eye(n), np.sqrt(B) * n, B)


class RandomizedOracle(OracleContract):
    """Flips each binary answer independently with probability ``answer_noise``."""

    def __init__(self, inner: OracleContract, answer_noise: float, rng: np.random.Generator):
        if not 0 <= answer_noise < 0.5:
            raise ValueError("answer_noise must lie in [0, 1/2)")
        super().__init__(inner.ambient_dim)
        self.inner = inner
        self.answer_noise = float(answer_noise)
        self.rng = rng

    def _answer(self, X):
        a = self.inner.query_batch(X)
        if self.answer_noise == 0:
            return a
        flip = self.rng.random(len(a)) < self.answer_noise
        return np.where(flip, 1 - a, a).astype(np.int8)

    def observe_subspace(self, v):
        self.inner.observe_subspace(v)

    def reveal_rowspace(self):
        return self.inner.reveal_rowspace()


def wrap_randomized(oracle: OracleContract, answer_noise: float, rng) -> OracleContract:
    return RandomizedOracle(oracle, answer_noise, rng)


class MajorityProductOracle(OracleContract):
    """f^{(x)q}: split x in R^{qn} into q blocks and take the majority of f on the blocks."""

    def __init__(self, inner: OracleContract, q: int):
        if q < 1 or q % 2 == 0:
            raise ValueError("q must be a positive odd integer")
        super().__init__(q * inner.ambient_dim)
        self.inner = inner
        self.q = q

    def _answer(self, X):
        m, n = X.shape[0], self.inner.ambient_dim
        votes = self.inner.query_batch(X.reshape(m * self.q, n)).reshape(m, self.q)
        return (votes.sum(axis=1) * 2 > self.q).astype(np.int8)

    def reveal_rowspace(self):
        base = self.inner.reveal_rowspace()
        from .linalg import direct_sum_blocks
        return direct_sum_blocks(base, self.q)


def amplify_majority(oracle: OracleContract, q: int) -> OracleContract:
    return MajorityProductOracle(oracle, q)


class LpOracle(SketchOracle):
    """Real-valued estimate Z(x) = scale * sqrt(n/r) ||Ax|| of ||x||_p."""

    binary = False

    def __init__(self, sketch_rows, p: float, C: float, scale: float):
        super().__init__(sketch_rows)
        self.p, self.C, self.scale = float(p), float(C), float(scale)

    def _answer(self, X):
        return self.scale * np.sqrt(self.ambient_dim / self.r) * np.linalg.norm(self.sketch(X), axis=1)


def lp_norm(x, p: float):
    return np.linalg.norm(x, ord=p, axis=-1)


def make_lp_oracle(n: int, r: int, p: float, C: float, rng: np.random.Generator,
                   probes: int = 10000, min_success: float = 0.99) -> LpOracle:
    """Sketch-based estimator of ||x||_p, calibrated on fresh N(0,1)^n inputs.

    For p = 2 this is the scaled sketch norm; for other p the same statistic is
    rescaled by the Gaussian ratio ||x||_p / ||x||_2, a surrogate with no
    worst-case guarantee.  The scale centres the ratio Z/||x||_p geometrically
    inside [1, C].
    """
    if not 0 < r < n:
        raise ValueError("need 0 < r < n")
    if not (p >= 1):
        raise ValueError("p must lie in [1, inf]")
    if C <= 1:
        raise ValueError("C must exceed 1")
    g = rng.normal(size=(r, n))
    q, _ = np.linalg.qr(g.T)
    oracle = LpOracle(q.T, p, C, 1.0)
    x = rng.standard_normal((probes, n))
    ratio = oracle._answer(x) / lp_norm(x, p)
    oracle.scale = np.sqrt(C) / np.exp(np.mean(np.log(ratio)))
    ratio = ratio * oracle.scale
    success = float(np.mean((ratio >= 1) & (ratio <= C)))
    if success < min_success:
        raise CalibrationError(f"l_p estimator meets its bracket on only {success:.4f} of probes")
    oracle.calibration = success
    return oracle


class CountSketchRecovery(SketchOracle):
    """Count-sketch with median estimates; keeps the k best candidates.

    For k = 1 the candidate among the ``pool`` largest median estimates with the
    smallest sketch residual is returned.  Coordinates that collide with a spike
    in a majority of rows tie with it on the median, and the residual check
    keeps the decoder exact on 1-sparse inputs.
    """

    binary = False

    def __init__(self, n: int, depth: int, width: int, k: int, C: float, rng: np.random.Generator,
                 pool: int = 8, max_redraws: int = 100):
        self.depth, self.width, self.k, self.C = depth, width, k, float(C)
        self.pool = pool
        for _ in range(max_redraws):
            self.buckets = rng.integers(0, width, size=(depth, n))
            self.signs = rng.choice(np.array([-1.0, 1.0]), size=(depth, n))
            if not self._has_twins():
                break
        else:
            raise CalibrationError("could not draw hashes without parallel columns")
        rows = np.zeros((depth * width, n))
        for j in range(depth):
            rows[j * width + self.buckets[j], np.arange(n)] = self.signs[j]
        super().__init__(rows)

    def _has_twins(self) -> bool:
        """True if two columns coincide up to sign; such coordinates are indistinguishable."""
        rel = self.signs * self.signs[:1]  # sign pattern relative to the first row
        keys = np.vstack([self.buckets, rel]).T
        return len(np.unique(keys, axis=0)) < keys.shape[0]

    def _per_row(self, Y: np.ndarray) -> list:
        """Signed bucket value of every coordinate, one (m, n) array per sketch row."""
        return [Y[:, j * self.width + self.buckets[j]] * self.signs[j] for j in range(self.depth)]

    def estimates(self, Y: np.ndarray) -> np.ndarray:
        """Median count-sketch estimate of every coordinate, for each sketch row of Y."""
        return _median_of(self._per_row(np.atleast_2d(Y)))

    def decode_sketch(self, Y: np.ndarray, chunk: int = 4096):
        """Support (m, k) and values (m, k) of the decoded vector for each sketch row of Y."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        parts = [self._decode(Y[lo:lo + chunk]) for lo in range(0, Y.shape[0], chunk)]
        if not parts:
            return np.zeros((0, self.k), dtype=int), np.zeros((0, self.k))
        return np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts])

    def recover_from_sketch(self, Y: np.ndarray, chunk: int = 4096) -> np.ndarray:
        idx, val = self.decode_sketch(Y, chunk)
        out = np.zeros((idx.shape[0], self.ambient_dim))
        np.put_along_axis(out, idx, val, axis=1)
        return out

    def _decode(self, Y: np.ndarray):
        """Support (m, k) and values (m, k) of the decoded vectors.

        k = 1 takes the best residual candidate.  Larger k runs orthogonal
        matching pursuit: pick one coordinate, refit all picked values by least
        squares on the sketch, subtract, repeat.
        """
        Y = np.asarray(Y, dtype=float)
        if self.k == 1:
            c, v = self._decode_one(Y)
            return c[:, None], v[:, None]
        m = Y.shape[0]
        idx = np.zeros((m, self.k), dtype=int)
        R = Y
        for t in range(self.k):
            idx[:, t] = self._decode_one(R)[0]
            cols = self.sketch_rows.T[idx[:, :t + 1]]  # (m, t+1, r)
            gram = cols @ cols.transpose(0, 2, 1)
            rhs = (cols @ Y[:, :, None])[:, :, 0]
            # a repeated pick makes the system singular; lstsq per row is rare enough
            val = np.empty((m, t + 1))
            ok = np.abs(np.linalg.det(gram)) > 1e-9
            val[ok] = np.linalg.solve(gram[ok], rhs[ok][:, :, None])[:, :, 0]
            for a in np.flatnonzero(~ok):
                val[a] = np.linalg.lstsq(cols[a].T, Y[a], rcond=None)[0]
            R = Y - (val[:, None, :] @ cols)[:, 0, :]
        return idx, val

    def _decode_one(self, Y: np.ndarray):
        m, n = Y.shape[0], self.ambient_dim
        per = self._per_row(Y)
        est = _median_of(per)
        pool = min(n, self.pool)
        if pool < n:
            cand = np.argpartition(-np.abs(est), pool - 1, axis=1)[:, :pool]
        else:
            cand = np.broadcast_to(np.arange(n), (m, n))
        vals = np.take_along_axis(est, cand, axis=1)
        # ||Y - v A_c||^2 = ||Y||^2 - 2 v <A_c, Y> + v^2 depth, and <A_c, Y> = sum of per-row values
        corr = np.take_along_axis(sum(per), cand, axis=1)
        resid = -2 * vals * corr + vals**2 * self.depth
        # break exact ties towards the larger estimate, then the lower index
        order = np.lexsort((cand, -np.abs(vals), np.round(resid, 9)), axis=1)[:, 0]
        return cand[np.arange(m), order], vals[np.arange(m), order]

    def _answer(self, X):
        return self.recover_from_sketch(self.sketch(X))

    def recover(self, x) -> np.ndarray:
        return self.query(x)


def _median_of(arrays: list) -> np.ndarray:
    """Elementwise median of a few equally shaped arrays (odd-even transposition network).

    Elementwise min/max over whole arrays is much faster than np.median's
    per-lane partition when there are only a handful of arrays.
    """
    d = len(arrays)
    v = list(arrays)
    for rnd in range(d):
        for i in range(rnd % 2, d - 1, 2):
            lo, hi = np.minimum(v[i], v[i + 1]), np.maximum(v[i], v[i + 1])
            v[i], v[i + 1] = lo, hi
    if d % 2:
        return v[d // 2].copy()
    return 0.5 * (v[d // 2 - 1] + v[d // 2])


def tail_norm_rows(X: np.ndarray, k: int) -> np.ndarray:
    a = np.sort(np.abs(np.atleast_2d(X)), axis=1)
    return np.linalg.norm(a[:, : a.shape[1] - k], axis=1)


def make_countsketch_recovery_oracle(n: int, r: int, k: int, C: float, rng: np.random.Generator,
                                     depth: int = 6, probes: int = 1000,
                                     min_success: float = 0.99) -> CountSketchRecovery:
    """Count-sketch recovery with ``depth`` rows of width r // depth, calibrated on spiked Gaussians."""
    if r % depth:
        raise ValueError("r must be a multiple of depth")
    width = r // depth
    if width < 2 * k or r < 2 * k * np.log(max(n / k, 2.0)):
        raise CalibrationError("too few rows to calibrate a count-sketch")
    oracle = CountSketchRecovery(n, depth, width, k, C, rng)
    x = rng.standard_normal((probes, n))
    idx = rng.integers(0, n, size=(probes, k))
    np.put_along_axis(x, idx, 10 * np.sqrt(n) * rng.choice([-1.0, 1.0], size=(probes, k)), axis=1)
    xp = oracle.recover_from_sketch(oracle.sketch(x))
    ok = np.linalg.norm(xp - x, axis=1) <= C * tail_norm_rows(x, k)
    success = float(ok.mean())
    if success < min_success:
        raise CalibrationError(f"recovery guarantee met on only {success:.4f} of probes")
    oracle.calibration = success
    return oracle


class ProcessOracle(OracleContract):
    """Oracle answered by an external process over newline-delimited JSON.

    Each request is ``{"query": [...]}``; the reply is ``{"answer": 0|1}`` or
    ``{"recovered": [...]}``.
    """

    def __init__(self, argv, n: int, binary: bool = True):
        super().__init__(n)
        self.binary = binary
        if isinstance(argv, str):
            argv = shlex.split(argv)
        self.proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                     text=True, bufsize=1)

    def _roundtrip(self, x):
        self.proc.stdin.write(json.dumps({"query": [float(v) for v in x]}) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise OracleProtocolError("oracle process closed its output")
        msg = json.loads(line)
        if "answer" in msg:
            return int(msg["answer"])
        if "recovered" in msg:
            return np.asarray(msg["recovered"], dtype=float)
        raise OracleProtocolError(f"unexpected reply {line.strip()!r}")

    def _answer(self, X):
        res = [self._roundtrip(x) for x in X]
        return np.asarray(res, dtype=np.int8) if self.binary else np.vstack(res)

    def close(self):
        if self.proc.poll() is None:
            self.proc.stdin.close()
            self.proc.wait(timeout=10)

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass
