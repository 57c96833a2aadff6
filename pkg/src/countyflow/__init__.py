"""Inter-county mobility analytics and the log-linear double-risk model."""

__version__ = "0.1.0"
