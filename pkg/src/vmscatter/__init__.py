"""vmscatter: a relativistic Vlasov-Maxwell scattering laboratory.

Compactly supported multi-species plasma data are transported along
(log-corrected) characteristics, fields are evaluated through a
retarded-integral decomposition, and late-time asymptotic quantities
(asymptotic charge, asymptotic fields, modified states) are computed
and checked against decay envelopes.
"""
import logging

from ._backend import NAME as BACKEND

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())

__all__ = ["BACKEND", "__version__"]
