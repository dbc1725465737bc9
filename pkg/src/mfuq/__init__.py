"""Closed-form mean-field approximations to the Gaussian-softmax integral,
applied to last-layer predictive uncertainty of softmax classifiers."""

from mfuq.gsint import (
    LAMBDA0_BISHOP,
    LAMBDA0_PROBIT,
    GaussianActivation,
    MfConfig,
    Scheme,
    UkfConfig,
    mc_integral,
    mean_field,
    mf0,
    mf1,
    mf2,
    probit_sigmoid,
    renormalize,
    softmax,
    ukf_integral,
)

__version__ = "0.1.0"

__all__ = [
    "LAMBDA0_BISHOP",
    "LAMBDA0_PROBIT",
    "GaussianActivation",
    "MfConfig",
    "Scheme",
    "UkfConfig",
    "mc_integral",
    "mean_field",
    "mf0",
    "mf1",
    "mf2",
    "probit_sigmoid",
    "renormalize",
    "softmax",
    "ukf_integral",
]
