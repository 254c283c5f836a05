import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchbreak.applications import (LpViolation, RecoveryGapNorm, RecoveryPreconditionError,
                                      RecoveryViolation, Side, ThresholdedEstimator, attack_lp,
                                      attack_sparse_recovery, build_recovery_gapnorm,
                                      lp_gap_parameters, markov_heavy_count, markov_kappa,
                                      pad_to_k_sparse, pair_candidates, tail_norm)
from sketchbreak.linalg import Subspace
from sketchbreak.oracles import (LpOracle, lp_norm, make_countsketch_recovery_oracle,
                                 make_lp_oracle)

N, C = 256, 4.0


@pytest.fixture(scope="module")
def recovery():
    return make_countsketch_recovery_oracle(N, 24, 1, C, np.random.default_rng(0))


class TestTailNorm:
    def test_examples(self):
        assert tail_norm([3, 1, 2], 1) == pytest.approx(np.sqrt(5))
        assert tail_norm([3, 1, 2], 0) == pytest.approx(np.sqrt(14))
        assert tail_norm([3, 1, 2], 3) == 0.0

    def test_ties_keep_lowest_index(self):
        # the first of two equal entries is treated as the larger one and removed
        assert tail_norm([2, -2, 1], 1) == pytest.approx(np.sqrt(5))

    def test_range(self):
        with pytest.raises(ValueError):
            tail_norm([1, 2], 3)
        with pytest.raises(ValueError):
            tail_norm([1, 2], -1)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30))
    def test_monotone_and_bounded(self, xs):
        x = np.array(xs)
        vals = [tail_norm(x, k) for k in range(len(x) + 1)]
        assert all(a >= b - 1e-9 for a, b in zip(vals, vals[1:]))
        assert vals[0] <= np.linalg.norm(x) + 1e-9


class TestViolations:
    def test_lp_under(self):
        v = LpViolation(np.array([3.0, 4.0]), 1.0, 2, 4.0, Side.UNDER, seed=5)
        assert v.lhs == 1.0 and v.rhs == pytest.approx(5.0) and v.recheck()
        d = json.loads(json.dumps(v.to_json()))
        assert d["parameters"] == {"p": 2, "C": 4.0, "side": "UnderEstimate"} and d["seed"] == 5

    def test_lp_over(self):
        v = LpViolation(np.array([1.0, 0.0]), 4.5, 1, 4.0, Side.OVER)
        assert v.rhs == pytest.approx(4.0) and v.recheck()
        assert not LpViolation(np.array([1.0, 0.0]), 3.9, 1, 4.0, Side.OVER).recheck()

    def test_recovery(self, recovery):
        x = np.zeros(N)
        x[3] = 10.0
        x[5] = 1.0
        v = RecoveryViolation(x, np.zeros(N), 1, C)
        assert v.lhs == pytest.approx(np.sqrt(101)) and v.rhs == pytest.approx(4.0)
        assert v.recheck()
        # the honest sketch gets a 1-sparse vector right, so re-querying clears it
        x[5] = 0.0
        assert not RecoveryViolation(x, np.zeros(N), 1, C).recheck(recovery)
        d = v.to_json()
        assert set(d) == {"x", "x_prime", "lhs", "rhs", "parameters", "seed"}


class TestLp:
    def test_gap_parameters(self):
        B, thr = lp_gap_parameters(64, 2, 4.0)
        assert B == 256.0
        assert thr == pytest.approx(np.sqrt(4 * np.sqrt(2.25 * 64) * np.sqrt(128.25 * 64)))
        assert thr == pytest.approx(65.94, abs=0.01)

    def test_gap_parameters_separate_brackets(self):
        for p in (1.0, 3.0, np.inf):
            B, thr = lp_gap_parameters(32, p, 2.0)
            assert B > 16 * 4

    def test_kernel_probe(self):
        o = make_lp_oracle(64, 16, 2, C, np.random.default_rng(1))
        x = o.reveal_rowspace().project_out(np.random.default_rng(2).standard_normal(64))
        v = LpViolation(x, float(o.query(x)), 2, C, Side.UNDER)
        assert v.lhs < 1e-9 and v.recheck(o)

    def test_thresholded(self):
        o = LpOracle(np.eye(4), 2, 4.0, 1.0)
        f = ThresholdedEstimator(o, 2.0)
        assert list(f.query_batch(np.array([[1.0, 0, 0, 0], [3.0, 0, 0, 0]]))) == [0, 1]

    @pytest.mark.slow
    def test_sketched_estimator_violated(self):
        o = make_lp_oracle(64, 16, 2, C, np.random.default_rng([0, 7]))
        v, res = attack_lp(o, C, 2, 10**8, seed=0)
        assert res.success and v is not None
        assert v.recheck(o)
        assert o.queries_used <= 10**8

    def test_full_space_estimator_not_violated(self):
        from sketchbreak.attack import AttackConfig
        o = LpOracle(np.eye(64), 2, C, np.sqrt(C))
        B, _ = lp_gap_parameters(64, 2, C)
        cfg = AttackConfig(n=64, B=B, r_bound=32, epsilon=B / 16, m=400, max_rounds=2,
                           direction="first", verify_samples=1000)
        v, res = attack_lp(o, C, 2, 10**7, cfg=cfg)
        assert v is None and not res.success


class TestRecoveryDecider:
    def test_zero_subspace_uses_every_index(self, recovery):
        f = build_recovery_gapnorm(recovery, C)
        assert np.array_equal(f.S, np.arange(N))

    def test_zero_input(self, recovery):
        f = build_recovery_gapnorm(recovery, C, rng=np.random.default_rng(0))
        assert f.query(np.zeros(N)) == 0
        _, _, zi = f.probe(np.zeros((1, N)), np.arange(N)[None, :])
        assert zi.min() >= C * np.sqrt(N)

    def test_decodes_are_charged(self, recovery):
        f = build_recovery_gapnorm(recovery, C, probes=8, rng=np.random.default_rng(1))
        before = recovery.queries_used
        f.query_batch(np.zeros((5, N)))
        assert recovery.queries_used - before == 40
        assert f.queries_used == 5

    def test_markov_count(self):
        rng = np.random.default_rng(3)
        v = Subspace.random(N, 8, rng)
        diag = 1 - np.sum(v.basis**2, axis=1)
        for alpha in (0.01, 1.0, 2.0, 4.0, 8.0):
            assert markov_heavy_count(diag, C, alpha) > N - C**2 * 8 / alpha

    def test_markov_kappa(self):
        assert markov_kappa(256, 24, 4.0) == pytest.approx(1.5)

    @pytest.mark.parametrize("seed", range(5))
    def test_s_covers_two_thirds(self, seed):
        # kappa = 2, C = 4 gives beta = kappa^2 / 3, so r <= beta n / C^2 = 21
        kappa, r = 2.0, 21
        rng = np.random.default_rng(seed)
        rec = make_countsketch_recovery_oracle(N, 24, 1, C, rng)
        f = RecoveryGapNorm(rec, C, kappa=kappa)
        f.observe_subspace(Subspace.random(N, r, rng))
        assert len(f.S) >= 2 * N / 3

    def test_precondition_reported(self, recovery):
        f = build_recovery_gapnorm(recovery, C, kappa=0.1)
        dense = Subspace.span([np.ones(N)])
        with pytest.raises(RecoveryPreconditionError):
            f.observe_subspace(dense)

    def test_kappa_range(self, recovery):
        with pytest.raises(ValueError):
            RecoveryGapNorm(recovery, C, kappa=C)

    def test_case1_small_norm_answers_zero(self, recovery):
        f = build_recovery_gapnorm(recovery, C, rng=np.random.default_rng(4))
        x = np.random.default_rng(5).standard_normal((1000, N))
        x = x[np.sum(x**2, axis=1) < 4 * N]
        assert np.mean(f.query_batch(x) == 0) >= 0.99

    def test_case2_large_norm_rarely_zero(self, recovery):
        f = build_recovery_gapnorm(recovery, C, rng=np.random.default_rng(6))
        assert f.B == 4 * N
        x = np.random.default_rng(7).normal(scale=np.sqrt(1.2 * f.B / 4), size=(1000, N))
        sq = np.sum(x**2, axis=1)
        x = x[(sq >= f.B * N / 4) & (sq <= 100 * f.B * N)]
        assert len(x) > 900
        assert np.mean(f.query_batch(x) == 0) < 0.2


class TestRecoveryViolations:
    def test_pairs_from_true_rowspace_violate(self, recovery):
        a = recovery.reveal_rowspace()
        scale = 4 * C * np.sqrt(N)
        eye = np.eye(N)
        found = 0
        for i, j, _ in pair_candidates(a, 40):
            x = scale * eye[i] + scale * a.project(eye[j] - eye[i])
            viol = RecoveryViolation(x, recovery.query(x), 1, C)
            found += viol.lhs > viol.rhs
        assert found == 40

    def test_pair_candidates_sorted(self):
        v = Subspace.random(12, 4, np.random.default_rng(8))
        pairs = pair_candidates(v, 20)
        dists = [d for _, _, d in pairs]
        assert dists == sorted(dists) and len(pairs) == 20
        assert pair_candidates(Subspace.zero(12), 5) == []

    def test_padding(self):
        x = np.zeros(16)
        x[2] = 5.0
        y = pad_to_k_sparse(x, 3, C, avoid=(0, 2))
        big = 1e6 * C * 4
        assert list(np.flatnonzero(y == big)) == [1, 3]
        assert tail_norm(y, 3) == tail_norm(x, 1) == 0.0
        assert pad_to_k_sparse(x, 1, C) is x

    def test_padded_pair_still_violates(self):
        # a 3-sparse sketch needs 60 rows, which leaves no pair with ||P_A(e_i - e_j)||^2
        # below 2 / 16, so this runs at C = 2
        c2 = 2.0
        rec = make_countsketch_recovery_oracle(N, 60, 3, c2, np.random.default_rng(9))
        a = rec.reveal_rowspace()
        i, j, _ = pair_candidates(a, 1)[0]
        eye = np.eye(N)
        x = 4 * c2 * np.sqrt(N) * (eye[i] + a.project(eye[j] - eye[i]))
        x = pad_to_k_sparse(x, 3, c2, (i, j))
        xp = rec.query(x)
        pads = np.flatnonzero(x == x.max())
        np.testing.assert_allclose(xp[pads], x[pads], rtol=1e-6)  # padded coordinates come back
        viol = RecoveryViolation(x, xp, 3, c2)
        assert viol.lhs > viol.rhs

    def test_attack_outcome_contract(self, recovery):
        from sketchbreak.attack import AttackConfig
        cfg = AttackConfig(n=N, B=4.0 * N, r_bound=24, epsilon=64.0, m=100, max_rounds=1,
                           verify_samples=200)
        out = attack_sparse_recovery(recovery, C, budget=10**5, cfg=cfg, probes=4, candidates=20,
                                     pair_limit=5)
        assert out.status in ("violation", "exhausted", "precondition-failed")
        assert out.search["kappa"] == pytest.approx(1.5)
        if out.violation is not None:
            assert out.violation.lhs > out.violation.rhs and out.violation.recheck()

    def test_pairs_need_an_aligned_subspace(self, recovery):
        # a V unrelated to the sketch gives pairs the decoder handles correctly
        v = Subspace.random(N, 24, np.random.default_rng(10))
        eye = np.eye(N)
        scale = 4 * C * np.sqrt(N)
        for i, j, _ in pair_candidates(v, 20):
            x = scale * eye[i] + scale * v.project(eye[j] - eye[i])
            viol = RecoveryViolation(x, recovery.query(x), 1, C)
            assert viol.lhs <= viol.rhs
