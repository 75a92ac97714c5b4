"""Fixtures for the server suite: one live service, one stub upstream.

Both are session-scoped: the hashing backends are stateless, so every
test can share the same process. Helpers importable by name live in
``server_testkit.py`` (a conftest module is not safely importable once
two test trees each carry one).
"""
from __future__ import annotations

import pytest

from server_testkit import LiveServer, StubUpstream, make_service_config


@pytest.fixture(scope="session")
def stub_upstream():
    stub = StubUpstream().start()
    yield stub
    stub.stop()


@pytest.fixture(scope="session")
def live_server(stub_upstream):
    server = LiveServer(make_service_config(upstream=stub_upstream.url)).start()
    yield server
    server.stop()


@pytest.fixture()
def reset_stub(stub_upstream):
    stub_upstream.fail_with = None
    stub_upstream.truncated = False
    stub_upstream.last_payload = None
    return stub_upstream
