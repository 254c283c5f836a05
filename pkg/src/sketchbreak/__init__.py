"""Adaptive reconstruction attacks on linear sketches."""

from .applications import (LpViolation, RecoveryViolation, attack_lp, attack_sparse_recovery,
                           build_recovery_gapnorm, tail_norm)
from .attack import (AttackConfig, AttackResult, Branch, FailureCertificate, run_attack,
                     run_strong_attack, verify_certificate)
from .linalg import Subspace
from .oracles import (OracleContract, amplify_majority, make_countsketch_recovery_oracle,
                      make_gapnorm_oracle, make_lp_oracle, wrap_randomized)

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackResult", "Branch", "FailureCertificate", "LpViolation", "OracleContract",
    "RecoveryViolation", "Subspace", "amplify_majority", "attack_lp", "attack_sparse_recovery",
    "build_recovery_gapnorm", "make_countsketch_recovery_oracle", "make_gapnorm_oracle",
    "make_lp_oracle", "run_attack", "run_strong_attack", "tail_norm", "verify_certificate",
    "wrap_randomized",
]
