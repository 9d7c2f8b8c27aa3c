"""Bispectral surrogates for function-valued outputs of a two-phase flow model."""

__version__ = "0.1.0"
