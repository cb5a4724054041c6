"""Modules directory."""
