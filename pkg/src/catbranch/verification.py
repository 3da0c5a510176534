"""Empirical verdicts comparing simulated ensembles with the analytic solvers.

Every check returns a :class:`CheckResult` whose verdict is ``PASS``,
``FAIL`` or ``INCONCLUSIVE``. INCONCLUSIVE is used when the ensemble cannot
decide (too many truncated paths, too few survivors, intervals wider than
requested), so a PASS is never issued on weak evidence.

Thresholds for oscillation, rank correlation and KS distance are engineering
choices; no convergence rates are available to derive them from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import ks_2samp, spearmanr

from .extinction import ExtinctionReport
from .limit_laws import PhiSolution
from .model import Label, ValidatedModel
from .simulator import EnsembleStats, mean_counts
from .spectral import CriticalityReport, NotSupercriticalError

PASS, FAIL, INCONCLUSIVE = "PASS", "FAIL", "INCONCLUSIVE"
Z99 = 2.5758293035489004
MAX_TRUNCATED = 0.01


class HypothesisError(ValueError):
    """A model does not satisfy the hypotheses a check relies on."""


@dataclass
class CheckResult:
    name: str
    verdict: str
    metrics: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "verdict": self.verdict, "metrics": self.metrics,
                "notes": list(self.notes)}


def combine(verdicts) -> str:
    verdicts = list(verdicts)
    if FAIL in verdicts:
        return FAIL
    if INCONCLUSIVE in verdicts:
        return INCONCLUSIVE
    return PASS


def wilson_interval(hits: int, n: int, z: float = Z99) -> tuple[float, float]:
    """Wilson score interval; well behaved at 0 and n hits."""
    if n == 0:
        return 0.0, 1.0
    p = hits / n
    d = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / d
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / d
    return max(0.0, centre - half), min(1.0, centre + half)


def _truncated_fraction(ens: EnsembleStats) -> float:
    return float(ens.truncated.mean())


def _bracket_check(p_hits: int, n: int, lo: float, hi: float) -> tuple[bool, tuple]:
    ci = wilson_interval(p_hits, n)
    return ci[1] >= lo - 1e-12 and ci[0] <= hi + 1e-12, ci


# --- extinction ------------------------------------------------------------

def verify_q(model: ValidatedModel, ens: EnsembleStats, ext: ExtinctionReport) -> CheckResult:
    """Frequency of ``mu(t_end) = 0`` against ``q(start)``.

    Truncated paths reached the population cap and count as survivors: their
    later extinction probability is below ``max q ** cap``.
    """
    x = model.start
    q = float(ext.q_x[x])
    extinct = int(np.sum(ens.counts[:, -1, 0] == 0))
    lo, hi = wilson_interval(extinct, ens.R)
    ok = lo - 1e-12 <= q <= hi + 1e-12
    metrics = {"state": str(x), "q": q, "extinct_fraction": extinct / ens.R,
               "ci99": [lo, hi], "replicates": ens.R, "t_end": float(ens.t_grid[-1])}
    return CheckResult("q", PASS if ok else FAIL, metrics)


def verify_Q(model: ValidatedModel, ens: EnsembleStats, ext: ExtinctionReport,
             site: Label | None = None, window_start: float | None = None,
             undecided_below: int = 10) -> CheckResult:
    """Local extinction at ``site`` against ``Q(start)``.

    Paths with no particle at ``site`` on ``[window_start, t_end]`` give a
    lower estimate; adding paths whose final count at ``site`` is below
    ``undecided_below`` gives an upper one. ``Q`` must lie between the two
    99% Wilson bounds.
    """
    site = model.sites[0] if site is None else site
    if site not in ens.sites:
        raise ValueError(f"site {site!r} was not recorded by the ensemble")
    t_end = float(ens.t_grid[-1])
    t1 = 0.5 * t_end if window_start is None else float(window_start)
    s = ens.sites.index(site)
    ok_rows = ~ens.truncated
    n = int(ok_rows.sum())
    empty = ens.last_occupied[ok_rows, s] < t1
    small = ens.counts[ok_rows, -1, 1 + s] < undecided_below
    lo_hits, hi_hits = int(empty.sum()), int((empty | small).sum())
    Q = float(ext.Q_x[model.start])
    lo = wilson_interval(lo_hits, n)[0]
    hi = wilson_interval(hi_hits, n)[1]
    metrics = {"state": str(model.start), "site": str(site), "Q": Q,
               "window": [t1, t_end], "empty_fraction": lo_hits / max(n, 1),
               "empty_or_small_fraction": hi_hits / max(n, 1),
               "undecided_below": undecided_below, "ci99": [lo, hi], "replicates": n}
    notes = []
    verdict = PASS if lo - 1e-12 <= Q <= hi + 1e-12 else FAIL
    if _truncated_fraction(ens) > MAX_TRUNCATED:
        verdict = INCONCLUSIVE
        notes.append("too many truncated paths")
    return CheckResult("Q", verdict, metrics, notes)


# --- weak limit ------------------------------------------------------------

def default_lambdas() -> np.ndarray:
    return np.geomspace(0.05, 20.0, 20)


def phi_vs_simulation(model: ValidatedModel, sol: PhiSolution, ens: EnsembleStats,
                      crit: CriticalityReport, ext: ExtinctionReport, lams=None,
                      n_se: float = 3.0, max_se: float = 0.05) -> CheckResult:
    """Empirical ``E exp(-lam mu(t)/E mu(t))`` against ``phi(lam c(x); x)``.

    The standard error combines the sampling error of the transform with the
    error of the estimated normaliser (delta method).
    """
    x = model.start
    lams = default_lambdas() if lams is None else np.asarray(lams, dtype=float)
    ok = ens.valid[:, -1]
    mu = ens.counts[ok, -1, 0].astype(float)
    n = len(mu)
    m = mu.mean()
    z = mu / m
    e = np.exp(-np.outer(lams, z))
    emp = e.mean(axis=1)
    se = e.std(axis=1, ddof=1) / math.sqrt(n)
    rel_m = mu.std(ddof=1) / math.sqrt(n) / m
    se_norm = np.abs((np.outer(lams, z) * e).mean(axis=1)) * rel_m
    comb = np.sqrt(se**2 + se_norm**2)
    c = float(crit.c[x])
    ana = sol.evaluate(lams * c, x)
    dev = np.abs(emp - ana)
    zscore = dev / np.maximum(comb, 1e-300)

    zero = int(np.sum(mu == 0))
    Q, q = float(ext.Q_x[x]), float(ext.q_x[x])
    atom_ok, atom_ci = _bracket_check(zero, n, q, Q) if ext.transient else \
        _bracket_check(zero, n, Q, Q)

    metrics = {
        "state": str(x), "c": c, "t_end": float(ens.t_grid[-1]), "mean": float(m),
        "lambda": lams.tolist(), "empirical": emp.tolist(), "analytic": ana.tolist(),
        "combined_se": comb.tolist(), "max_abs_deviation": float(dev.max()),
        "max_z": float(zscore.max()), "n_se": n_se,
        "atom": {"empirical": zero / n, "ci99": list(atom_ci), "Q": Q, "q": q, "ok": bool(atom_ok)},
    }
    notes = []
    if ext.transient:
        notes.append("transient movement: at finite t the atom lies between q and Q")
    if zscore.max() >= n_se or not atom_ok:
        verdict = FAIL
    elif comb.max() > max_se or _truncated_fraction(ens) > MAX_TRUNCATED:
        verdict = INCONCLUSIVE
        notes.append("ensemble too small or too many truncated paths")
    else:
        verdict = PASS
    return CheckResult("phi_vs_simulation", verdict, metrics, notes)


def density_smoothness_check(ens: EnsembleStats, bins=(40, 80), factor: float = 10.0,
                             min_count: int = 20) -> CheckResult:
    """Look for atoms of ``mu(t)/E mu(t)`` off zero among survivors.

    A bin is flagged when it holds more than ``factor`` times each neighbour;
    an atom is reported only if it is flagged at every bin width.
    """
    ok = ens.valid[:, -1]
    mu = ens.counts[ok, -1, 0].astype(float)
    z = mu[mu > 0] / mu.mean()
    if len(np.unique(z)) < 10:
        return CheckResult("density_smoothness", INCONCLUSIVE, {"skipped": True},
                           ["degenerate normalised counts; check skipped"])
    top = float(np.quantile(z, 0.995))
    flagged = []
    for nb in bins:
        counts, edges = np.histogram(z, bins=nb, range=(0.0, top))
        hits = []
        # the first bin carries the smeared atom at zero
        for i, ci in enumerate(counts[1:], start=1):
            nbr = [counts[j] for j in (i - 1, i + 1) if 0 <= j < nb]
            if ci >= min_count and ci > factor * max(nbr):
                hits.append((float(edges[i]), float(edges[i + 1])))
        flagged.append(hits)
    persistent = [a for a in flagged[0]
                  if all(any(b[0] < a[1] and a[0] < b[1] for b in other) for other in flagged[1:])]
    metrics = {"survivors": int(len(z)), "bins": list(bins), "flagged": flagged,
               "atoms": persistent, "zero_fraction": float(np.mean(mu == 0))}
    return CheckResult("density_smoothness", FAIL if persistent else PASS, metrics)


def _late_index(means: np.ndarray, floor: float = 100.0) -> int | None:
    """Earliest grid index with mean at least ``max(floor, last/10)``."""
    target = max(floor, means[-1] / 10.0)
    idx = np.flatnonzero(means >= target)
    if len(idx) == 0 or idx[0] >= len(means) - 1:
        return None
    return int(idx[0])


def rank_correlation(counts: np.ndarray, means: np.ndarray) -> float:
    """Smallest Spearman correlation between the normalised total and each
    normalised local count over surviving rows of ``counts`` (R, 1 + n)."""
    surv = counts[:, 0] > 0
    rows = counts[surv] / means
    rhos = []
    for k in range(1, rows.shape[1]):
        if means[k] > 0 and np.ptp(rows[:, k]) > 0 and np.ptp(rows[:, 0]) > 0:
            rhos.append(float(spearmanr(rows[:, 0], rows[:, k])[0]))
    return min(rhos) if rhos else float("nan")


def verify_weak(model: ValidatedModel, ens: EnsembleStats, sol: PhiSolution,
                crit: CriticalityReport, ext: ExtinctionReport, lams=None,
                rank_tol: float = 0.95) -> CheckResult:
    """Distributional convergence of the normalised counts: KS distance
    between two late times, the transform comparison, the atom bracket and
    the collapse of total and local counts onto one random variable."""
    if crit.cls != "supercritical":
        raise NotSupercriticalError(f"model is {crit.cls}; the limit theorems need rho(D(0)) > 1")
    sub = phi_vs_simulation(model, sol, ens, crit, ext, lams)
    ok_rows = ~ens.truncated
    counts = ens.counts[ok_rows].astype(float)
    R = counts.shape[0]
    means = counts.mean(axis=0)
    notes = list(sub.notes)
    i1 = _late_index(means[:, 0])
    if i1 is None:
        ks, ks_tol, ks_ok = float("nan"), float("nan"), None
        notes.append("no grid time with mean population >= 100 before t_end")
    else:
        z1 = counts[:, i1, 0] / means[i1, 0]
        z2 = counts[:, -1, 0] / means[-1, 0]
        ks = float(ks_2samp(z1, z2).statistic)
        ks_tol = 3.0 * math.sqrt(2.0 / R)
        ks_ok = ks < ks_tol
    rho = rank_correlation(counts[:, -1, :], means[-1])
    rho_ok = None if math.isnan(rho) else rho > rank_tol
    metrics = {
        "transform": sub.metrics,
        "ks": {"t1": None if i1 is None else float(ens.t_grid[i1]), "t2": float(ens.t_grid[-1]),
               "distance": ks, "bound": ks_tol},
        "rank_correlation": {"min_spearman": rho, "threshold": rank_tol},
    }
    parts = [sub.verdict]
    parts.append(INCONCLUSIVE if ks_ok is None else (PASS if ks_ok else FAIL))
    parts.append(INCONCLUSIVE if rho_ok is None else (PASS if rho_ok else FAIL))
    metrics["parts"] = {"transform": parts[0], "ks": parts[1], "rank_correlation": parts[2]}
    return CheckResult("weak", combine(parts), metrics, notes)


# --- strong limit proxy ----------------------------------------------------

def dyadic_grid(t_end: float, level: int = 6, extend: float = 1.5) -> np.ndarray:
    """``t_end * k / 2**level`` for ``k`` up to ``extend * 2**level``."""
    k = np.arange(int(round(extend * 2**level)) + 1)
    return t_end * k / 2**level


def check_strong_hypotheses(model: ValidatedModel) -> None:
    failed = []
    if not model.generator_bounded:
        failed.append("generator entries are not uniformly bounded")
    if not model.second_moments_ok:
        failed.append("an offspring law has infinite second moment")
    if failed:
        raise HypothesisError("strong limit hypotheses fail: " + "; ".join(failed))


def _tail_oscillation(ratios: np.ndarray, t: np.ndarray, horizon: float):
    """Per path: sup-norm oscillation of the ratio vector over the last
    quarter of ``[0, horizon]`` and the largest spread between components."""
    sel = (t >= 0.75 * horizon - 1e-12) & (t <= horizon + 1e-12)
    tail = ratios[:, sel, :]
    osc = (tail.max(axis=1) - tail.min(axis=1)).max(axis=1)
    spread = (tail.max(axis=2) - tail.min(axis=2)).max(axis=1)
    return osc, spread


def verify_strong_proxy(model: ValidatedModel, ens: EnsembleStats, t_end: float,
                        n_paths: int = 64, osc_tol: float = 0.1,
                        rank_tol: float = 0.95) -> CheckResult:
    """Path-wise proxy for almost-sure convergence of the normalised vector.

    ``ens`` must be sampled on a grid reaching past ``t_end`` (see
    :func:`dyadic_grid`). The first ``n_paths`` replicates alive at the last
    grid time are used. Normalisers are exact first moments.
    """
    check_strong_hypotheses(model)
    t = ens.t_grid
    if t[-1] <= t_end:
        raise ValueError("ensemble grid must extend beyond t_end")
    alive = np.flatnonzero(~ens.truncated & (ens.counts[:, -1, 0] > 0))
    means = mean_counts(model, t, ens.sites)
    notes = ["normalisers are exact first moments"]
    paths = alive[:n_paths]
    metrics = {"t_end": float(t_end), "extended": float(t[-1]), "paths": int(len(paths)),
               "osc_threshold": osc_tol, "rank_threshold": rank_tol}
    if len(paths) < n_paths:
        notes.append(f"only {len(paths)} surviving paths, {n_paths} requested")
        return CheckResult("strong", INCONCLUSIVE, metrics, notes)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = ens.counts[paths].astype(float) / means[None]
    # a site first reached after t = 0 has zero mean only early on
    keep = np.all(means[t >= 0.75 * t_end] > 0, axis=0)
    ratios = ratios[:, :, keep]
    osc_T, spread_T = _tail_oscillation(ratios, t, t_end)
    osc_X, spread_X = _tail_oscillation(ratios, t, float(t[-1]))
    iT = int(np.argmin(np.abs(t - t_end)))
    rho = rank_correlation(ens.counts[paths, iT, :].astype(float), means[iT])
    med_T, med_X = float(np.median(osc_T)), float(np.median(osc_X))
    metrics.update({
        "median_oscillation": med_T, "median_oscillation_extended": med_X,
        "median_component_spread": float(np.median(spread_T)),
        "median_component_spread_extended": float(np.median(spread_X)),
        "min_rank_correlation": rho,
    })
    parts = {
        "oscillation": PASS if med_T < osc_tol else FAIL,
        # a path that has settled exactly cannot decrease any further
        "decreasing": PASS if med_X < med_T or med_T < 1e-12 else FAIL,
    }
    if math.isnan(rho):
        notes.append("no local component to correlate with the total")
    else:
        parts["rank_correlation"] = PASS if rho > rank_tol else FAIL
    metrics["parts"] = parts
    return CheckResult("strong", combine(parts.values()), metrics, notes)
