# tests/integration/conftest.py
"""
Integration test fixtures.

Provides a workspace with the dataset and generation cache already built
from the tiny run configuration, so stage tests do not repeat diffusion
training.
"""
import shutil

import pytest

from src.handlers.commands import cmd_build_cache, cmd_gen_data
from src.models.config import RunConfig

from tests.conftest import tiny_run_config_data


@pytest.fixture(scope="session")
def built_workspace(tmp_path_factory):
    """Root with dataset/ and cache/ from the tiny configuration (built once)."""
    config = RunConfig.model_validate(tiny_run_config_data())
    root = tmp_path_factory.mktemp("flier_built")
    cmd_gen_data(config, root)
    cmd_build_cache(config, root)
    return root


@pytest.fixture
def workspace(tmp_path, built_workspace):
    """Private copy of the built workspace for one test."""
    root = tmp_path / "run"
    shutil.copytree(built_workspace, root)
    return root
