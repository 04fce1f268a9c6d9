import numpy as np
import pytest

from mlcap.irt import DichotomousItem, GradedItem, ItemBank


def random_2pl_bank(rng, n_items, a_range=(0.8, 2.0), b_range=(-1.5, 1.5)):
    a = rng.uniform(*a_range, n_items)
    b = rng.uniform(*b_range, n_items)
    return ItemBank("dichotomous", [DichotomousItem(float(x), float(y), f"i{k}")
                                    for k, (x, y) in enumerate(zip(a, b))])


def random_grm_bank(rng, n_items, n_categories=4):
    items = []
    for k in range(n_items):
        th = np.sort(rng.uniform(-1.5, 1.5, n_categories - 1))
        th = th + 0.3 * np.arange(n_categories - 1)
        items.append(GradedItem(float(rng.uniform(0.8, 2.0)), tuple(th), f"g{k}"))
    return ItemBank("graded", items, n_categories)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def bank20():
    return random_2pl_bank(np.random.default_rng(11), 20)


@pytest.fixture(scope="session")
def grm_bank4():
    return random_grm_bank(np.random.default_rng(12), 4)
