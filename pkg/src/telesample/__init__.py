"""Post-analysis-aware sampling of microservice traces and logs."""

__version__ = "0.1.0"
