"""Worst-case convergence rates of first-order methods via dissipation inequalities."""

from .baselines import BoundKind, admm_optimal_point, analytic_rate, iteration_complexity
from .certify import (Certificate, CertificationError, CertificationResult, assemble_program,
                      certify_rate, certify_sublinear, verify_certificate)
from .model import (AlgorithmModel, AlgorithmSpec, Family, OracleClass, OracleKind,
                    build_algorithm, default_beta, sector, slope, smooth, standard_oracles,
                    validate_model)
from .supply import enumerate_supply_rates, lift, supply_rate

__version__ = "0.1.0"

__all__ = [
    "AlgorithmModel", "AlgorithmSpec", "BoundKind", "Certificate", "CertificationError",
    "CertificationResult", "Family", "OracleClass", "OracleKind", "admm_optimal_point",
    "analytic_rate", "assemble_program", "build_algorithm", "certify_rate", "certify_sublinear",
    "default_beta", "enumerate_supply_rates", "iteration_complexity", "lift", "sector", "slope",
    "smooth", "standard_oracles", "supply_rate", "validate_model", "verify_certificate",
]
