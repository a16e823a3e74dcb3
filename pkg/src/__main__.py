# src/__main__.py
"""Allows `python -m src <command>`."""
import sys

from flier_app import main

sys.exit(main())
