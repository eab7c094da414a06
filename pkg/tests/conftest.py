from pathlib import Path
from typing import Dict, Optional

import pytest

from factrec.backends import BackendConfig
from factrec.backends.stub import StubBackend
from factrec.config import load_domain_config
from factrec.models import DomainConfig

FIXTURES = Path(__file__).parent / "fixtures"


def make_stub(fixtures: Optional[Dict[str, str]] = None, model_id: str = "stub") -> StubBackend:
    return StubBackend(BackendConfig(kind="stub", model_id=model_id), fixtures=fixtures)


@pytest.fixture
def clothes() -> DomainConfig:
    return load_domain_config("clothes")


@pytest.fixture
def stub() -> StubBackend:
    return make_stub()


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES
