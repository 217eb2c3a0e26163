"""
Event-driven spiking networks of quadratic integrate-and-fire neurons with exact
spike-time gradients, for regression, operator learning and physics-informed training.
"""

from .codec import DecodeSpec, EncodingSpec, TargetAffine, decode_pair, encode
from .engine import NetworkSpec, TrialResult, run_trial
from .grad import GradientSet, backward, backward_decoded, grad_check, input_sensitivity
from .qif import NeuronParams, phi_of_v, ptc, ptc_derivatives, v_of_phi

__all__ = [
    "DecodeSpec",
    "EncodingSpec",
    "TargetAffine",
    "decode_pair",
    "encode",
    "NetworkSpec",
    "TrialResult",
    "run_trial",
    "GradientSet",
    "backward",
    "backward_decoded",
    "grad_check",
    "input_sensitivity",
    "NeuronParams",
    "phi_of_v",
    "ptc",
    "ptc_derivatives",
    "v_of_phi",
]
