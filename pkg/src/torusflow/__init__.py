"""Periodic flows on the torus: lifted trajectories, rotation sets,
invariant densities and homogenization of transport by oscillating fields."""

from .errors import (ConfigurationError, HorizonCapExceeded, NodeBudgetExceeded, NonDiffeomorphism,
                     NumericalBlowup, QuadratureDivergence, StepSizeUnderflow, TorusFlowError)
from .fields import (CompositeField, ConstantField, FieldSpec, FourierField, FourierScalar, FourierTable,
                     GradientField, RhoRotGradField, ScalarFieldSpec, ShearField, StepanoffField, StepanoffRho,
                     catalog, eval_divergence, eval_field, eval_jacobian_matrix, field_from_config)
from .flow import (FlowTrajectory, IntegratorConfig, check_equivariance, check_semigroup, flow_map, integrate,
                   jacobian_determinant)
from .invariant import (InvariantDensity, QuadratureConfig, closed_form_density, liouville_residual,
                        periodic_mean, spectral_invariant_densities, stepanoff_density)
from .rotation import (RotationConfig, RotationEstimate, RotationSetEstimate, ensemble_rotation, estimate_C_b,
                       estimate_D_b, rotation_vector)
from .transport import (SweepReport, TransportScenario, oscillatory_pairing, run_sweep, solve_homogenized,
                        solve_oscillating, weak_error)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "HorizonCapExceeded", "NodeBudgetExceeded", "NonDiffeomorphism", "NumericalBlowup",
    "QuadratureDivergence", "StepSizeUnderflow", "TorusFlowError",
    "CompositeField", "ConstantField", "FieldSpec", "FourierField", "FourierScalar", "FourierTable",
    "GradientField", "RhoRotGradField", "ScalarFieldSpec", "ShearField", "StepanoffField", "StepanoffRho",
    "catalog", "eval_divergence", "eval_field", "eval_jacobian_matrix", "field_from_config",
    "FlowTrajectory", "IntegratorConfig", "check_equivariance", "check_semigroup", "flow_map", "integrate",
    "jacobian_determinant",
    "InvariantDensity", "QuadratureConfig", "closed_form_density", "liouville_residual", "periodic_mean",
    "spectral_invariant_densities", "stepanoff_density",
    "RotationConfig", "RotationEstimate", "RotationSetEstimate", "ensemble_rotation", "estimate_C_b",
    "estimate_D_b", "rotation_vector",
    "SweepReport", "TransportScenario", "oscillatory_pairing", "run_sweep", "solve_homogenized",
    "solve_oscillating", "weak_error",
]
