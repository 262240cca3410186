"""Electromagnetic fields: evaluators, decay audits and the retarded decomposition."""
from .evaluators import (BumpField, DecayBudget, FieldEvaluator, FieldGradSample, FieldSample,
                         HypothesisReport, TabulatedField, ZeroField, audit_grid, fitted_budget,
                         prescribed_field, verify_hypothesis)
from .quadrature import QuadConfig, QuadratureError
from .sources import BumpSource, EnsembleSource, TrajectoryStore
from .decomposition import (SupportViolation, eval_B_data, eval_B_S, eval_B_T, eval_data,
                            eval_E_data, eval_E_S, eval_E_T, eval_S, eval_T, total_field)
from .picard import (PicardConfig, PicardDivergence, PicardResult, read_field_snapshot,
                     self_consistent_solve, write_field_snapshot)

__all__ = [n for n in dir() if not n.startswith("_")]
