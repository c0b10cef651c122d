from __future__ import annotations

import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).resolve().parent
REPO_DIR = TESTS_DIR.parent
FIXTURES_DIR = REPO_DIR / "fixtures"

sys.path.insert(0, str(TESTS_DIR))


@pytest.fixture(scope="session")
def demo_manifest_path() -> Path:
    return FIXTURES_DIR / "demo" / "manifest.json"


@pytest.fixture(scope="session")
def fullpool_manifest_path() -> Path:
    return FIXTURES_DIR / "fullpool" / "manifest.json"


@pytest.fixture(scope="session")
def golden_template_dir() -> Path:
    return TESTS_DIR / "data" / "templates"
