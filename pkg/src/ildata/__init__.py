"""Dataset-quality tooling for imitation learning: metrics, coverage theory, bound checks and noising sweeps."""

__version__ = "0.1.0"
