"""HTTP service over a twin workspace."""

from .app import ADDR_ENV_VAR, DEFAULT_ADDR, create_app, resolve_addr, serve

__all__ = ["ADDR_ENV_VAR", "DEFAULT_ADDR", "create_app", "resolve_addr", "serve"]
