# tests/performance/__init__.py
"""
Performance benchmark tests for FLIER.

Measures critical path performance to detect regressions.
"""
