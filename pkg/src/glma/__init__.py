"""Replica-symmetric asymptotics, GAMP and finite-size checks for regularized GLMs."""

__version__ = "0.1.0"
