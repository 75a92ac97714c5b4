"""Shared fixtures for the primary test suite.

The deterministic providers and the run-bundle builder live in
``testkit.py`` (a plain module, importable by name from any test);
this file only binds them to pytest fixtures. Keeping ``conftest.py``
free of importable helpers avoids module-name collisions with the
server test tree's own conftest. The acceptance-summary hooks live in
the rootdir ``conftest.py`` so both test trees feed one summary.
"""
from __future__ import annotations

import pytest

from medrag.corpus import Corpus, load_corpus

from testkit import CORPUS_PATH, RunBundle, _build_bundle


@pytest.fixture(scope="session")
def run_bundle(tmp_path_factory) -> RunBundle:
    root = tmp_path_factory.mktemp("bundle")
    return _build_bundle(root)


@pytest.fixture(scope="session")
def fixture_corpus() -> Corpus:
    return load_corpus(CORPUS_PATH)
