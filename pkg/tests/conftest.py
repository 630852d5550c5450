import numpy as np
import pytest
import torch

from multicond.catalog import CatalogConfig, generate_catalog, refine_attributes
from multicond.sampler import SamplerConfig, compose_query_set

torch.set_num_threads(1)


SMALL_CATALOG = CatalogConfig(
    categories=("fashion/dress", "home/furniture"),
    products_per_category=120,
    attributes_per_category=10,
    values_per_attribute=8,
    languages=("en", "th"),
    language_weights=(0.5, 0.5),
)


@pytest.fixture(scope="session")
def raw_catalog():
    return generate_catalog(SMALL_CATALOG, seed=3)


@pytest.fixture(scope="session")
def catalog(raw_catalog):
    return refine_attributes(raw_catalog)


@pytest.fixture(scope="session")
def query_set(catalog):
    return compose_query_set(catalog, SamplerConfig(seed=5), 300)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines, printed once at the end of the session
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {name}: {detail}")
