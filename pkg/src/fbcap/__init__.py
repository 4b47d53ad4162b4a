"""Feedback capacity of Gaussian channels described by linear state-space models."""

from fbcap.capacity import (
    CapacitySolution,
    FiniteHorizonSolution,
    ar1_capacity_oracle,
    conjecture_probe,
    finite_horizon_capacity,
    stationary_capacity,
    waterfill_nofb,
)
from fbcap.detect import DetectReport, closed_loop_pair, detectable_lmi, detectable_pbh
from fbcap.kalman import RiccatiSolution, decoder_step, encoder_step, solve_dare
from fbcap.model import (
    Ar1Params,
    ChannelModel,
    build_model,
    make_ar1_channel,
    make_awgn_channel,
    make_delayed,
    validate_assumption1,
)
from fbcap.simulate import SimConfig, SimResult, analytic_rate_trajectory, simulate_policy

__version__ = "0.1.0"

__all__ = [
    "Ar1Params",
    "CapacitySolution",
    "ChannelModel",
    "DetectReport",
    "FiniteHorizonSolution",
    "RiccatiSolution",
    "SimConfig",
    "SimResult",
    "analytic_rate_trajectory",
    "ar1_capacity_oracle",
    "build_model",
    "closed_loop_pair",
    "conjecture_probe",
    "decoder_step",
    "detectable_lmi",
    "detectable_pbh",
    "encoder_step",
    "finite_horizon_capacity",
    "make_ar1_channel",
    "make_awgn_channel",
    "make_delayed",
    "simulate_policy",
    "solve_dare",
    "stationary_capacity",
    "validate_assumption1",
    "waterfill_nofb",
]
