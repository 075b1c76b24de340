"""Latent predictor networks for generating code from structured card descriptions."""

__version__ = "0.1.0"
