import dataclasses

import numpy as np
import pytest

from catbranch.extinction import extinction_report
from catbranch.limit_laws import solve_phi
from catbranch.simulator import run_ensemble
from catbranch.spectral import NotSupercriticalError, criticality_report
from catbranch.verification import (FAIL, INCONCLUSIVE, PASS, HypothesisError, combine,
                                    density_smoothness_check, dyadic_grid, phi_vs_simulation,
                                    verify_q, verify_Q, verify_strong_proxy, verify_weak,
                                    wilson_interval)

from conftest import two_state


def test_wilson_interval():
    lo, hi = wilson_interval(0, 1000)
    assert lo == 0.0 and 0 < hi < 0.01
    lo, hi = wilson_interval(500, 1000)
    assert lo < 0.5 < hi and hi - lo == pytest.approx(2 * 2.5758 * np.sqrt(0.25 / 1000), rel=0.01)


def test_combine():
    assert combine([PASS, PASS]) == PASS
    assert combine([PASS, INCONCLUSIVE]) == INCONCLUSIVE
    assert combine([INCONCLUSIVE, FAIL]) == FAIL


def test_dyadic_grid():
    g = dyadic_grid(8.0, level=3)
    assert g[8] == 8.0 and g[-1] == 12.0 and len(g) == 13


@pytest.fixture(scope="module")
def small_rec(m_rec):
    crit = criticality_report(m_rec)
    ext = extinction_report(m_rec)
    ens = run_ensemble(m_rec, np.linspace(0, 30, 31), 3000, 5)
    return crit, ext, ens


def test_q_and_Q_checks(m_rec, small_rec):
    crit, ext, ens = small_rec
    assert verify_q(m_rec, ens, ext).verdict == PASS
    assert verify_Q(m_rec, ens, ext).verdict == PASS
    wrong = dataclasses.replace(ext, q_x={0: 0.5}, Q_x={0: 0.5})
    assert verify_q(m_rec, ens, wrong).verdict == FAIL
    assert verify_Q(m_rec, ens, wrong).verdict == FAIL


def test_weak_and_transform(m_rec, small_rec):
    crit, ext, ens = small_rec
    sol = solve_phi(m_rec, crit, ext)
    res = phi_vs_simulation(m_rec, sol, ens, crit, ext)
    assert res.verdict == PASS
    assert res.metrics["empirical"][0] <= 1.0
    weak = verify_weak(m_rec, ens, sol, crit, ext)
    assert weak.verdict == PASS, weak.metrics["parts"]
    # an analytic side that is off by a constant must fail
    shifted = dataclasses.replace(sol, fine_w=sol.fine_w * 0.9)
    assert phi_vs_simulation(m_rec, shifted, ens, crit, ext).verdict == FAIL


def test_weak_requires_supercritical():
    sub = two_state({0: 0.75, 2: 0.25})
    crit = criticality_report(sub)
    with pytest.raises(NotSupercriticalError):
        verify_weak(sub, None, None, crit, None)


def test_density_check(small_rec):
    _, _, ens = small_rec
    res = density_smoothness_check(ens)
    assert res.verdict == PASS and res.metrics["atoms"] == []


def test_density_degenerate_skipped():
    ens = run_ensemble(two_state({1: 1.0}), np.linspace(0, 5, 6), 100, 1)
    res = density_smoothness_check(ens)
    assert res.verdict == INCONCLUSIVE and res.metrics["skipped"]


def test_density_flags_atom():
    ens = run_ensemble(two_state({0: 0.25, 2: 0.75}), np.linspace(0, 20, 3), 2000, 3)
    c = ens.counts.copy()
    surv = np.flatnonzero(c[:, -1, 0] > 0)
    c[surv[: len(surv) // 2], -1, 0] = int(np.median(c[surv, -1, 0]))
    res = density_smoothness_check(dataclasses.replace(ens, counts=c))
    assert res.verdict == FAIL and res.metrics["atoms"]


def test_strong_hypotheses_refused(m_rec):
    bad = dataclasses.replace(m_rec, second_moments_ok=False)
    with pytest.raises(HypothesisError, match="second moment"):
        verify_strong_proxy(bad, None, 1.0)
    bad = dataclasses.replace(m_rec, generator_bound=float("inf"))
    with pytest.raises(HypothesisError, match="bounded"):
        verify_strong_proxy(bad, None, 1.0)


def test_strong_trivial_law():
    m = two_state({1: 1.0})
    t_end = 8.0
    ens = run_ensemble(m, dyadic_grid(t_end), 70, 1, sites=())
    res = verify_strong_proxy(m, ens, t_end)
    assert res.metrics["median_oscillation"] < 1e-12
    assert res.verdict == PASS


def test_strong_needs_enough_paths(m_rec):
    ens = run_ensemble(m_rec, dyadic_grid(10.0), 20, 1)
    assert verify_strong_proxy(m_rec, ens, 10.0).verdict == INCONCLUSIVE
