import math

import numpy as np
import pytest

from irtforge.dataio import Item, ItemBank, write_item_bank
from irtforge.simulate import Component, PopulationSpec, simulate_population

TRUE_BETAS = np.linspace(-2.0, 2.0, 20)


def simulate(n=500, mean=0.0, sd=1.0, seed=7, missing_rate=0.0, betas=TRUE_BETAS, label="sim"):
    spec = PopulationSpec((Component(label, n, mean, sd),), missing_rate, seed)
    return simulate_population(spec, betas)[1]


# Independent pure-Python oracles. They share no code with the package.

def oracle_pearson(x, y):
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def oracle_ranks(x):
    # rank = (# strictly smaller) + mean position among equals
    return [sum(1 for b in x if b < a) + (sum(1 for b in x if b == a) + 1) / 2 for a in x]


def oracle_spearman(x, y):
    return oracle_pearson(oracle_ranks(x), oracle_ranks(y))


def oracle_rmse(e, t):
    return math.sqrt(math.fsum((b - a) ** 2 for a, b in zip(e, t)) / len(e))


@pytest.fixture
def true_betas():
    return TRUE_BETAS.copy()


@pytest.fixture
def bank_files(tmp_path):
    fixed = ItemBank.from_difficulties(TRUE_BETAS)
    free = ItemBank(tuple(Item(i.item_id) for i in fixed.items))
    write_item_bank(fixed, tmp_path / "bank_fixed.json")
    write_item_bank(free, tmp_path / "bank_free.json")
    return tmp_path / "bank_fixed.json", tmp_path / "bank_free.json"


# criterion number -> one-line verdict, filled by test_acceptance
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
