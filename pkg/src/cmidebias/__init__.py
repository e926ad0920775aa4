"""CMI-guided resampling for debiasing implicit-feedback evaluation data."""

__version__ = "0.1.0"
