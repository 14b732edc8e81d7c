"""Multi-granularity scene-text recognition on a numpy autodiff core."""

__version__ = "0.1.0"
