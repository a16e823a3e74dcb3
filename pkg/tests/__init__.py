# tests/__init__.py
"""
Test suite for FLIER

This package contains unit tests, pipeline integration tests and
benchmarks for the tensor core, the training engine and the commands.
"""
