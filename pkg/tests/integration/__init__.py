# tests/integration/__init__.py
"""
Integration tests for FLIER.

These tests run the pipeline commands together on a tiny configuration.
"""
