"""Calibration of commodity forward-curve volatility: factor model, term-structure correction, smiles."""

__version__ = "0.1.0"
