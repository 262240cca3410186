"""Phase-space dynamics along g-characteristics."""
from .data import BumpProfile, InitialData, SpeciesData, default_initial_data
from .characteristics import (CharState, GradientResult, IntegrationError, SupportBounds,
                              apriori_bounds, char_rhs, evaluate_g, flow_gradients, integrate_char)
from .ensemble import (ParticleEnsemble, ResolutionError, SpeciesEnsemble, SupportDiagnostics,
                       build_ensemble, read_snapshot, support_diagnostics, write_snapshot)

__all__ = [n for n in dir() if not n.startswith("_")]
