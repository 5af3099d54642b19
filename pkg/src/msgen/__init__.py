"""Formula-constrained discrete graph diffusion for structure generation from mass spectra."""

__version__ = "0.1.0"
