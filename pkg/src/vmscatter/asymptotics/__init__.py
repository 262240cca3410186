"""Late-time quantities: asymptotic charge, asymptotic fields, modified states, rates."""
from .rates import RateFit, envelope, rate_fit, read_rate_csv, write_rate_csv
from .charge import (ChargeProfile, LatticeInterpolant, MomentumGrid, QInfinity, XQuadConfig,
                     charge_profile, extrapolate_Q_infinity, momentum_grid_for, spatial_average_Q,
                     write_charge_csv)
from .fields import (AFQuadConfig, DomainViolation, SupportBall, asymptotic_fields,
                     species_asymptotic_field)
from .profile import (AsymptoticProfile, ConsistencyError, Corrections, corrections,
                      read_profile_csv)
from .modified import (PreconditionError, field_limit_check, limit_time, log_shift,
                       modified_state_h, modified_state_h_tilde)

__all__ = [n for n in dir() if not n.startswith("_")]
