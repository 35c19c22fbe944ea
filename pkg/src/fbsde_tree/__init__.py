"""Forward, backward and coupled stochastic difference equations on scenario trees."""

from .errors import (ConfigError, ConvergenceError, ConvexityError, FbsdeError, NumericError,
                     ResourceError, ShapeError, SolvabilityError, UsageError, VerificationError)
from .tree import AdaptedProcess, TreeTopology, aggregate, cond_prev, expectation, random_adapted
from .coefficients import (CoefficientSet, ConditionReport, DominationData, affine_coefficients,
                           blend_alpha, check_conditions, make_monotone_family, negate,
                           pq_maps, reorient)
from .sde import EstimateRecord, SdeProblem, sde_stability_report, solve_sde
from .bsde import BsdeProblem, bsde_stability_report, solve_bsde
from .continuation import (ContinuationOptions, PerturbationData, SolutionPair, SolveDiagnostics,
                           apriori_report, residual, solve_alpha0, solve_fbsde,
                           tilde_perturbation, with_offsets)
from .direct import solve_linear_direct
from .lq import (BackwardLqData, ForwardLqData, assemble_blq, assemble_flq, cost_blq, cost_flq,
                 insurance_demo, oracle_blq, oracle_flq, random_blq, random_flq, solve_blq,
                 solve_flq)

__version__ = "0.1.0"


__all__ = [
    "AdaptedProcess", "BackwardLqData", "BsdeProblem", "CoefficientSet", "ConditionReport",
    "ConfigError", "ContinuationOptions", "ConvergenceError", "ConvexityError",
    "DominationData", "EstimateRecord", "FbsdeError", "ForwardLqData", "NumericError",
    "PerturbationData", "ResourceError", "SdeProblem", "ShapeError", "SolutionPair",
    "SolvabilityError", "SolveDiagnostics", "TreeTopology", "UsageError", "VerificationError",
    "affine_coefficients", "aggregate", "apriori_report", "assemble_blq", "assemble_flq",
    "blend_alpha", "bsde_stability_report", "check_conditions", "cond_prev", "cost_blq",
    "cost_flq", "expectation", "insurance_demo", "make_monotone_family", "negate",
    "oracle_blq", "oracle_flq", "pq_maps", "random_adapted", "random_blq", "random_flq",
    "reorient", "residual", "sde_stability_report", "solve_alpha0", "solve_blq", "solve_bsde",
    "solve_fbsde", "solve_flq", "solve_linear_direct", "solve_sde", "tilde_perturbation",
    "with_offsets",
]
