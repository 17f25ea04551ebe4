"""Threat modelling as code for hybrid fiat/cryptocurrency systems."""

__version__ = "0.1.0"
