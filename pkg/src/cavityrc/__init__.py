"""Nonlinear multiple-scattering cavity simulated as a physical reservoir computer."""

__version__ = "0.1.0"
