"""Deep factor model reconstruction of multi-contrast inversion-recovery MRI."""

__version__ = "0.1.0"
