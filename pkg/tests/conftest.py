import numpy as np
import pytest

from helpers import random_dataset
from lore.embed import embed_documents, init_params

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def small_params():
    return init_params(embed_dim=16, feature_dim=512, seed=0)


@pytest.fixture
def tiny_setup():
    """A 12-query random dataset with small-dimension encoders and doc embeddings."""
    rng = np.random.default_rng(7)
    ds = random_dataset(rng, 12, 6)
    params = init_params(embed_dim=16, feature_dim=1024, seed=3)
    return ds, params, embed_documents(ds, params)


@pytest.fixture
def criterion():
    """Record one acceptance criterion outcome and fail the test if it missed."""

    def record(name, ok, detail=""):
        ACCEPTANCE_RESULTS.append((name, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
        assert ok, f"{name}: {detail}"

    return record
