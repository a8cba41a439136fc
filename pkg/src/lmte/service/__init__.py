"""HTTP session service exposing fitted explanation pipelines."""

from .app import create_app, serve

__all__ = ["create_app", "serve"]
