"""GaitStrip package init."""

from .main import main_cli

__all__ = ["main_cli"]
