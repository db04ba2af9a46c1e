"""Soft semantic region-adaptive normalisation and a coarse-to-fine
full-to-empty room generator on a small numpy autodiff engine."""

__version__ = "0.1.0"
