import numpy as np
import pytest

from catbranch.model import Catalyst, ModelSpec, OffspringLaw, StateSpace, validate

LAW = {0: 0.25, 2: 0.75}


def two_state(pmf=LAW, alpha=0.5, beta=1.0):
    space = StateSpace.finite([0, 1], [(0, 1, 1.0), (1, 0, 1.0)])
    return validate(ModelSpec(space, (Catalyst(0, beta, alpha, OffspringLaw.from_pmf(pmf)),), 0))


def lattice(pmf=LAW, a=2.0, b=1.0, alpha=0.5, beta=1.0, start=0):
    space = StateSpace.lattice_z1(a, b)
    return validate(ModelSpec(space, (Catalyst(0, beta, alpha, OffspringLaw.from_pmf(pmf)),), start))


def three_state(alpha=0.5, pmf=LAW):
    rates = [(0, 1, 1.0), (0, 2, 2.0), (1, 0, 0.5), (1, 2, 1.5), (2, 0, 1.0), (2, 1, 3.0)]
    space = StateSpace.finite([0, 1, 2], rates)
    return validate(ModelSpec(space, (Catalyst(0, 1.0, alpha, OffspringLaw.from_pmf(pmf)),), 0))


# Small finite chains used for oracle comparisons: (states, rate triples).
CORPUS = {
    "two_state": ([0, 1], [(0, 1, 1.0), (1, 0, 1.0)]),
    "three_cycle": ([0, 1, 2], [(0, 1, 1.0), (1, 2, 2.0), (2, 0, 0.5), (1, 0, 0.7)]),
    "three_dense": ([0, 1, 2], [(0, 1, 1.0), (0, 2, 2.0), (1, 0, 0.5), (1, 2, 1.5),
                                (2, 0, 1.0), (2, 1, 3.0)]),
    "path4": ([0, 1, 2, 3], [(0, 1, 1.0), (1, 0, 1.0), (1, 2, 2.0), (2, 1, 1.0), (2, 3, 0.5),
                             (3, 2, 2.0)]),
    "star5": (["c", "a", "b", "d", "e"], [("c", "a", 1.0), ("a", "c", 2.0), ("c", "b", 0.5),
                                          ("b", "c", 1.0), ("c", "d", 3.0), ("d", "c", 0.3),
                                          ("c", "e", 1.0), ("e", "c", 1.0), ("a", "b", 0.4)]),
    "ring6": (list(range(6)), [(i, (i + 1) % 6, 1.0 + 0.1 * i) for i in range(6)]
              + [(i, (i - 1) % 6, 0.5) for i in range(6)] + [(0, 3, 0.2)]),
}


def corpus_model(name, catalyst_states=None):
    states, rates = CORPUS[name]
    cats = catalyst_states or [states[0]]
    law = OffspringLaw.from_pmf(LAW)
    space = StateSpace.finite(states, rates)
    return validate(ModelSpec(space, tuple(Catalyst(w, 1.0, 0.5, law) for w in cats), states[0]))


def dense_rates(model):
    return np.where(np.eye(len(model.states), dtype=bool), 0.0, model.generator)


@pytest.fixture(scope="session")
def m_rec():
    return two_state()


@pytest.fixture(scope="session")
def m_det():
    return two_state({3: 1.0})


@pytest.fixture(scope="session")
def m_tra():
    return lattice()


# One summary line per acceptance criterion, printed after the test run.
ACCEPTANCE_LINES = {}


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number} ({title}): {'PASS' if ok else 'FAIL'}"
    ACCEPTANCE_LINES[number] = line + (f"  [{detail}]" if detail else "")
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
