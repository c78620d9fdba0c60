"""
Shared fixtures: fixture file paths, the stub provider and gateway factories
"""
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from services.assertion_pipeline.artifacts import load_examples, load_matrix, load_subsumption
from services.assertion_pipeline.gateway import GatewayConfig, LlmGateway
from services.assertion_pipeline.models import GatewayMode

from stub_provider import API_KEY, ENDPOINT, create_app, load_rules

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
MOVIE = FIXTURES / "movie"
INSTANCE_W = FIXTURES / "instance_w"


def make_gateway(cache_dir: Path, mode: GatewayMode = GatewayMode.REPLAY, session=None,
                 api_key=API_KEY, **config) -> LlmGateway:
    return LlmGateway(
        GatewayConfig(mode=mode, api_key=api_key, endpoint=ENDPOINT, cache_dir=cache_dir, **config),
        session=session,
        sleep=lambda seconds: None,
    )


@pytest.fixture
def movie_rules():
    return load_rules(MOVIE / "replies.json")


@pytest.fixture
def stub_app(movie_rules):
    return create_app(movie_rules)


@pytest.fixture
def stub_client(stub_app):
    return TestClient(stub_app)


@pytest.fixture
def recording_gateway(tmp_path, stub_client):
    return make_gateway(tmp_path / "cache", GatewayMode.RECORD, session=stub_client)


@pytest.fixture
def movie_examples():
    return load_examples(MOVIE / "examples.json")


@pytest.fixture
def instance_w():
    """(M, labels, K) of the four-example, three-assertion instance"""
    M = load_matrix(INSTANCE_W / "matrix.json")
    examples = load_examples(INSTANCE_W / "examples.json")
    labels = [int(e.label) for e in examples.examples]
    return M, labels, load_subsumption(INSTANCE_W / "subsumption.json")
