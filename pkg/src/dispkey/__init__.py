"""Displacement-key homomorphic encryption of linear optics: simulation and verification."""

from .encryption import (
    BoundPreconditionError,
    EncryptedDensity,
    EncryptionParams,
    encrypt_closed_form,
    encrypt_monte_carlo,
    encrypted_distance,
    i_closed_form,
    i_quadrature,
    security_bound,
)
from .fock import CutoffError, DensityMatrix, PureFockState, fidelity, trace_distance, trace_norm
from .optics import (
    DisplacementKey,
    FockSector,
    ModeUnitary,
    apply_lifted,
    haar_random_unitary,
    key_transform,
    lift_unitary,
    multimode_displace,
    permanent,
)
from .protocol import ProtocolConfig, ProtocolError, Transcript, measure_mode, run_adaptive, run_passive

__version__ = "0.1.0"
