import numpy as np
import pytest

from sketchbreak.attack import (AttackConfig, BlockDecompositionError, Branch, FailureCertificate,
                                acceptance_threshold, binomial_ci, boost_direction,
                                check_certificate_condition, decompose_blocks, estimate_label_rate,
                                extract_strong_certificate, run_attack, verify_certificate,
                                wishart_edge)
from sketchbreak.distributions import ComplementGaussianSpec, sample_complement
from sketchbreak.linalg import Subspace, direct_sum_blocks
from sketchbreak.oracles import (ConstantOracle, amplify_majority, make_fullspace_oracle,
                                 make_gapnorm_oracle)


@pytest.fixture(scope="module")
def honest():
    return make_gapnorm_oracle(64, 16, 8.0, np.random.default_rng(0))


class TestConfig:
    @pytest.mark.parametrize("kw", [{"B": 4.0}, {"m": 50}, {"epsilon": 0.0}, {"cert_tolerance": 0.6},
                                    {"gate": "other"}, {"direction": "last"}, {"delta_gain": -1.0},
                                    {"n": 10, "block_size": 3}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            AttackConfig(**kw)

    def test_default_gain(self):
        assert AttackConfig().gain == pytest.approx(1 / (7 * 8 * 16))
        assert AttackConfig(delta_multiplier=3.0).gain == pytest.approx(3 / (7 * 8 * 16))

    def test_grid(self):
        g = AttackConfig(epsilon=0.25).grid()
        assert g[0] == 0.75 and g[-1] == 8.0 and len(g) == 30


class TestCertificateCondition:
    def test_examples(self):
        assert check_certificate_condition(1.0, 8.0, 8.0, 0.01) is None
        assert check_certificate_condition(0.5, 8.0, 8.0, 0.01) is Branch.HIGH_NORM_REJECTED
        assert check_certificate_condition(0.02, 1.0, 8.0, 0.01) is Branch.LOW_NORM_ACCEPTED

    def test_middle_band_never_fires(self):
        for rate in np.linspace(0, 1, 11):
            assert check_certificate_condition(rate, 3.0, 8.0, 0.3) is None

    def test_certificate_ranges(self):
        with pytest.raises(ValueError):
            FailureCertificate(Subspace.zero(4), 2.0, Branch.HIGH_NORM_REJECTED, B=8.0)
        with pytest.raises(ValueError):
            FailureCertificate(Subspace.zero(4), 3.0, "LowNormAccepted")


class TestLabelRate:
    def test_constant_oracles(self):
        spec = ComplementGaussianSpec(Subspace.zero(8), 2.0)
        rate, pos = estimate_label_rate(ConstantOracle(8, 0), spec, 50, np.random.default_rng(0))
        assert rate == 0.0 and pos.shape == (0, 8)
        rate, pos = estimate_label_rate(ConstantOracle(8, 1), spec, 50, np.random.default_rng(0))
        assert rate == 1.0 and pos.shape == (50, 8)

    def test_honest_high_variance(self, honest):
        spec = ComplementGaussianSpec(Subspace.zero(64), 8.0)
        rate, _ = estimate_label_rate(honest, spec, 2000, np.random.default_rng(1))
        assert rate >= 0.99

    def test_m_positive(self):
        with pytest.raises(ValueError):
            estimate_label_rate(ConstantOracle(2, 0), ComplementGaussianSpec(Subspace.zero(2), 1.0), 0,
                                np.random.default_rng(0))


class TestBoost:
    def test_null_acceptance_rare(self):
        # unconditioned samples carry no excess second moment anywhere
        cfg = AttackConfig()
        spec = ComplementGaussianSpec(Subspace.zero(64), 4.0)
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            pos = sample_complement(spec, rng, 400)
            hits += boost_direction(pos, 4.0, cfg.gain, seed=seed).direction is not None
        assert hits <= 5

    def test_asymptotic_gate_accepts_noise(self):
        # the asymptotic gate sits inside the Marchenko-Pastur bulk at any realistic m'
        spec = ComplementGaussianSpec(Subspace.zero(64), 4.0)
        pos = sample_complement(spec, np.random.default_rng(0), 400)
        assert boost_direction(pos, 4.0, AttackConfig().gain, gate="asymptotic").direction is not None

    def test_planted_direction_recovered(self):
        rng = np.random.default_rng(1)
        gain = 0.5
        p = rng.standard_normal(64)
        p /= np.linalg.norm(p)
        s = 4.0 + 0.25
        pos = rng.normal(scale=np.sqrt(s), size=(10_000, 64))
        pos += (np.sqrt((s + 4 * gain) / s) - 1) * np.outer(pos @ p, p)
        res = boost_direction(pos, 4.0, gain)
        assert res.direction is not None
        assert (res.direction @ p) ** 2 >= 0.9

    def test_single_row(self):
        s2, gain = 3.0, 0.01
        c = np.sqrt(2 * (s2 + 0.25 + gain))
        row = np.zeros((1, 6))
        row[0, 0] = c
        res = boost_direction(row, s2, gain, gate="asymptotic")
        assert np.allclose(np.abs(res.direction), np.eye(6)[0])

    def test_projects_off_v(self):
        rng = np.random.default_rng(2)
        v = Subspace.span([np.eye(16)[0]])
        pos = rng.standard_normal((500, 16))
        pos[:, 0] *= 30
        res = boost_direction(pos, 1.0, 0.01, subspace_v=v, gate="asymptotic")
        assert abs(res.direction[0]) < 1e-12

    def test_wishart_edge(self):
        assert wishart_edge(1, 5, 1.0) == np.inf
        # the edge approaches the variance as m' grows
        assert wishart_edge(10**8, 10, 2.0) == pytest.approx(2.0, rel=1e-3)
        assert acceptance_threshold(100, 1.0, 0.1, 8, gate="asymptotic") == pytest.approx(1.35)


class TestVerify:
    def test_constant_zero_high(self):
        cert = FailureCertificate(Subspace.zero(8), 8.0, Branch.HIGH_NORM_REJECTED, threshold=0.7)
        rate, violated = verify_certificate(cert, ConstantOracle(8, 0), 500, np.random.default_rng(0))
        assert rate == 0.0 and violated

    def test_constant_one_low(self):
        cert = FailureCertificate(Subspace.zero(8), 1.0, Branch.LOW_NORM_ACCEPTED, threshold=0.3)
        rate, violated = verify_certificate(cert, ConstantOracle(8, 1), 500, np.random.default_rng(0))
        assert rate == 1.0 and violated

    def test_fabricated_against_honest(self, honest):
        cert = FailureCertificate(Subspace.zero(64), 8.0, Branch.HIGH_NORM_REJECTED, threshold=0.7)
        rate, violated = verify_certificate(cert, honest, 5000, np.random.default_rng(1))
        assert rate > 0.98 and not violated
        low = FailureCertificate(Subspace.zero(64), 1.0, Branch.LOW_NORM_ACCEPTED, threshold=0.3)
        rate, violated = verify_certificate(low, honest, 5000, np.random.default_rng(2))
        assert rate < 0.02 and not violated

    def test_borderline_rate_not_violated(self):
        # answers at rate 0.3 sit exactly at the threshold; the CI straddles it
        class Biased(ConstantOracle):
            def _answer(self, X):
                return (np.arange(X.shape[0]) % 10 < 3).astype(np.int8)
        cert = FailureCertificate(Subspace.zero(4), 1.0, Branch.LOW_NORM_ACCEPTED, threshold=0.3)
        assert not verify_certificate(cert, Biased(4, 0), 1000, np.random.default_rng(0))[1]

    def test_validation(self):
        cert = FailureCertificate(Subspace.zero(8), 8.0, Branch.HIGH_NORM_REJECTED)
        with pytest.raises(ValueError):
            verify_certificate(cert, ConstantOracle(8, 0), 50, np.random.default_rng(0))
        with pytest.raises(ValueError):
            verify_certificate(cert, ConstantOracle(9, 0), 500, np.random.default_rng(0))

    def test_binomial_ci(self):
        lo, hi = binomial_ci(0, 100)
        assert lo == 0.0 and 0.04 < hi < 0.06


class TestStrong:
    def test_q1_passthrough(self):
        v = Subspace.random(8, 2, np.random.default_rng(0))
        cert = FailureCertificate(v, 8.0, Branch.HIGH_NORM_REJECTED)
        out = extract_strong_certificate(cert, ConstantOracle(8, 0), 1, np.random.default_rng(1))
        assert out.strong and out.threshold == pytest.approx(2 / 3)
        assert np.allclose(out.subspace_v.projector(), v.projector())

    def test_zero_product(self):
        cert = FailureCertificate(Subspace.zero(40), 1.0, Branch.LOW_NORM_ACCEPTED)
        out = extract_strong_certificate(cert, ConstantOracle(8, 1), 5, np.random.default_rng(2))
        assert out.subspace_v.dim == 0 and out.ambient_dim == 8
        assert out.threshold == pytest.approx(1 / 3)

    def test_product_decomposition(self):
        blk = Subspace.random(6, 2, np.random.default_rng(3))
        parts = decompose_blocks(direct_sum_blocks(blk, 3), 3)
        assert all(np.allclose(p.projector(), blk.projector()) for p in parts)

    def test_non_product_rejected(self):
        w = Subspace.span([np.ones(8)])
        with pytest.raises(BlockDecompositionError):
            decompose_blocks(w, 2)

    def test_product_oracle_rowspace(self, honest):
        prod = amplify_majority(honest, 5)
        assert prod.reveal_rowspace().dim == 80


@pytest.fixture(scope="module")
def short_run(honest):
    cfg = AttackConfig(m=1000, max_rounds=4, seed=3, verify_samples=2000)
    before = honest.queries_used
    res = run_attack(honest, cfg, rowspace=honest.reveal_rowspace())
    return cfg, res, honest.queries_used - before


class TestRunAttack:
    def test_constant_zero(self):
        cfg = AttackConfig(n=8, m=200, verify_samples=500)
        o = ConstantOracle(8, 0)
        res = run_attack(o, cfg)
        assert res.certificate.branch is Branch.HIGH_NORM_REJECTED and res.rounds == 1
        assert res.certificate.sigma_sq == 4.0
        # 0.75 .. 4.0 in steps of 0.25 is 14 cells, then one verification batch
        assert res.queries == o.queries_used == 14 * 200 + 500

    def test_constant_one(self):
        res = run_attack(ConstantOracle(8, 1), AttackConfig(n=8, m=200, verify_samples=500))
        assert res.certificate.branch is Branch.LOW_NORM_ACCEPTED
        assert res.certificate.sigma_sq == 0.75 and res.rounds == 1

    def test_dimension_check(self):
        with pytest.raises(ValueError):
            run_attack(ConstantOracle(8, 0), AttackConfig(n=16))

    def test_structure_and_accounting(self, short_run):
        cfg, res, used = short_run
        cells = len(res.trace)
        verified = sum("verified" in r for r in res.trace)
        assert res.queries == used == cells * cfg.m + verified * cfg.verify_samples
        assert cells <= cfg.rounds * len(cfg.grid())
        rounds = [r["t"] for r in res.trace]
        assert rounds == sorted(rounds)
        for t in set(rounds):
            s = [r["sigma_sq"] for r in res.trace if r["t"] == t]
            assert s == sorted(s)

    def test_subspace_orthonormal_and_grows_by_one(self, short_run):
        _, res, _ = short_run
        b = res.subspace.basis
        assert np.abs(b.T @ b - np.eye(res.subspace.dim)).max() < 1e-10
        assert res.subspace.dim <= res.rounds
        assert len(res.alignments) == res.subspace.dim or res.success

    def test_accepted_directions_aligned(self, short_run):
        _, res, _ = short_run
        assert res.alignments and np.median(res.alignments) >= 0.8

    def test_returned_certificates_verified(self, short_run):
        _, res, _ = short_run
        if res.success:
            assert res.trace[-1]["verified"]

    def test_full_space_oracle_never_certified(self):
        o = make_fullspace_oracle(64, 8.0)
        res = run_attack(o, AttackConfig(m=1000, max_rounds=2, seed=1, verify_samples=2000))
        assert not res.success and res.status == "exhausted"
        assert not any(r.get("verified") for r in res.trace)
