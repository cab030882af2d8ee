"""wavestrich: desk-scale checks for gravity-capillary dispersive machinery."""

from .spectral import PeriodicGrid, SpectralField

__all__ = ["PeriodicGrid", "SpectralField"]
__version__ = "0.1.0"
