"""Koopman-operator surrogate for propagating parameter uncertainty through
nonlinear dynamical systems, with a classical multi-machine power-system model."""

__version__ = "0.1.0"
