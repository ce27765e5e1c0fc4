"""HTTP service wrapping the fusion engine."""

from .app import create_app

__all__ = ["create_app"]
