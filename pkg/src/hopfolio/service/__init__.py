"""HTTP face of the toolkit: pydantic request/response schemas and the
FastAPI application factory."""

from .app import create_app

__all__ = ["create_app"]
