"""Desk-scale cross-modality detector with DECA/DEPA fusion and a
bi-direction decoupled focus, plus data, metrics and gradient checks."""

__version__ = "0.1.0"
