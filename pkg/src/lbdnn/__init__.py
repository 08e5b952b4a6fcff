"""Lb-DNN adaptive control toolkit: closed-loop simulation of stochastic
plants under online neural-network adaptation, stability-certificate
arithmetic, and Monte-Carlo validation of the escape-probability bound."""

from . import adapt, bench, certify, control, dnn, linalg, sde

__all__ = ["adapt", "bench", "certify", "control", "dnn", "linalg", "sde"]

__version__ = "0.1.0"
