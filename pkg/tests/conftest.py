"""Shared fixtures.

BLAS threading is capped before numpy loads: the models multiply tiny
matrices where thread handoff costs more than it buys, and capping it
keeps test runtimes stable.
"""

import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import pytest

from pinyingender.lexicon import bundled_lexicon


@pytest.fixture(scope="session")
def lexicon():
    return bundled_lexicon()
