import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from catbranch.extinction import (Q_at, extinction_report, q_at, solve_Q, solve_q,
                                  survival_phase)
from catbranch.model import Catalyst, ModelSpec, OffspringLaw, StateSpace, validate
from catbranch.spectral import classify

import oracles
from conftest import lattice, two_state


def test_mrec_least_root(m_rec):
    q, it, res = solve_q(m_rec)
    assert q[0] == pytest.approx(oracles.least_root([0.375, -0.5, 0.125]), abs=1e-9)
    assert q[0] == pytest.approx(1 / 3, abs=1e-9)
    assert res < 1e-11
    Q, _, _ = solve_Q(m_rec)
    assert Q[0] == pytest.approx(q[0], abs=1e-12)


def test_mdet_no_death(m_det):
    q, _, _ = solve_q(m_det)
    assert abs(q[0]) < 1e-12


def test_mtra_quadratics(m_tra):
    rep = extinction_report(m_tra, query_states=[1])
    q_or = oracles.least_root([9, -16, 3])
    Q_or = oracles.least_root([9, -16, 7])
    assert q_or == pytest.approx((16 - math.sqrt(148)) / 18)
    assert rep.q_w[0] == pytest.approx(q_or, abs=1e-6)
    assert rep.Q_w[0] == pytest.approx(7 / 9, abs=1e-6)
    assert rep.q_x[1] == pytest.approx(0.5 * q_or, abs=1e-6)
    assert rep.Q_x[1] == pytest.approx(0.5 * 7 / 9 + 0.5, abs=1e-6)
    assert rep.q_w[0] < rep.Q_w[0] < 1
    assert rep.phase == "mixed"


def test_phases(m_rec):
    assert extinction_report(m_rec).phase == "strong_local_survival"
    sub = two_state({0: 0.75, 2: 0.25})
    rep = extinction_report(sub)
    assert rep.phase == "certain_extinction"
    assert rep.q_w[0] == pytest.approx(1.0, abs=1e-10)
    assert rep.Q_w[0] == pytest.approx(1.0, abs=1e-10)


def test_pure_global_survival():
    m = lattice({0: 0.75, 2: 0.25})
    rep = extinction_report(m)
    assert rep.rho0 == pytest.approx(0.25 + 1 / 3, abs=1e-8)
    assert rep.phase == "pure_global_survival"
    assert rep.q_w[0] < 1 - 1e-3
    assert rep.Q_w[0] == pytest.approx(1.0, abs=1e-8)


def test_survival_phase_table():
    assert survival_phase(False, 1.2) == "strong_local_survival"
    assert survival_phase(False, 1.0) == "certain_extinction"
    assert survival_phase(True, 0.9) == "pure_global_survival"
    assert survival_phase(True, 1.1) == "mixed"


def test_off_catalyst_convex_combination(m_rec):
    q, _, _ = solve_q(m_rec)
    assert q_at(m_rec, q, 1) == pytest.approx(q[0])
    assert Q_at(m_rec, np.ones(1), 1) == 1.0


@st.composite
def random_models(draw):
    n = draw(st.integers(2, 4))
    rates = []
    for i in range(n):
        rates.append((i, (i + 1) % n, draw(st.floats(0.2, 3.0))))
        if draw(st.booleans()):
            rates.append((i, (i - 1) % n, draw(st.floats(0.2, 3.0))))
    k = draw(st.integers(1, min(2, n)))
    cats = []
    for w in range(k):
        p0 = draw(st.floats(0.0, 0.9))
        top = draw(st.integers(2, 4))
        law = OffspringLaw.from_pmf({0: p0, top: 1 - p0} if p0 > 0 else {top: 1.0})
        cats.append(Catalyst(w, draw(st.floats(0.3, 3.0)), draw(st.floats(0.0, 0.95)), law))
    return validate(ModelSpec(StateSpace.finite(list(range(n)), rates), tuple(cats), 0))


@settings(max_examples=25, deadline=None)
@given(random_models())
def test_invariants_on_random_recurrent_models(m):
    rho = classify(m).rho0
    assume(abs(rho - 1) > 0.05)  # near-critical iterations converge too slowly to test
    rep = extinction_report(m)
    assert np.all(rep.q_w <= rep.Q_w + 1e-12)
    assert rep.residual <= 1e-11
    # recurrent: q = Q, and q = 1 iff rho(D(0)) <= 1
    np.testing.assert_allclose(rep.q_w, rep.Q_w, atol=1e-9)
    if rho <= 1:
        np.testing.assert_allclose(rep.q_w, 1.0, atol=1e-9)
    else:
        assert np.all(rep.q_w < 1 - 1e-9)
