"""Rate-distortion integrals for bounding Gaussian-process suprema and ERM errors."""

__version__ = "0.1.0"
