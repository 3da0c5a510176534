"""Mean-offspring matrix D(lambda), Perron roots, criticality and the
Malthusian parameter."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .model import Label, ValidatedModel, pgf_mean
from .taboo import G_transform, catalyst_taboo, taboo_transforms

CRITICAL_BAND = 1e-10


class NotSupercriticalError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class DMatrix:
    lam: float
    entries: np.ndarray
    extended_for: Label | None = None
    converged: bool = True


@dataclass
class CriticalityReport:
    rho0: float
    cls: str
    nu: float | None = None
    u: np.ndarray | None = None
    c: dict = field(default_factory=dict)
    bracket_width: float | None = None

    def to_dict(self) -> dict:
        return {
            "rho0": self.rho0,
            "class": self.cls,
            "nu": self.nu,
            "u": None if self.u is None else [float(v) for v in self.u],
            "c": {str(k): v for k, v in self.c.items()},
            "nu_bracket_width": self.bracket_width,
        }


def is_irreducible(M: np.ndarray) -> bool:
    if M.shape[0] == 1:
        return True
    n, _ = connected_components(M > 0, directed=True, connection="strong")
    return n == 1


def build_D(model: ValidatedModel, lam: float) -> DMatrix:
    """``d_ij = delta_ij alpha_i m_i G_i*(lam) + (1-alpha_i) G_i*(lam) F*_{w_i,w_j}(lam)``
    with the passage to ``w_j`` taken under taboo ``W \\ {w_j}``."""
    cats = model.catalysts
    sites = model.sites
    n = len(cats)
    D = np.zeros((n, n))
    ok = True
    for j in range(n):
        F, conv, _, _ = taboo_transforms(model, sites, sites[j], catalyst_taboo(model, j), lam)
        ok &= conv
        for i, c in enumerate(cats):
            D[i, j] = (1.0 - c.alpha) * G_transform(c.beta, lam) * F[i]
    for i, c in enumerate(cats):
        D[i, i] += c.alpha * pgf_mean(c.offspring) * G_transform(c.beta, lam)
    return DMatrix(lam, D, None, ok)


def build_D_ext(model: ValidatedModel, x: Label, lam: float) -> DMatrix:
    """(N+1)x(N+1) matrix with ``x`` appended as a non-branching pseudo
    catalyst held at rate ``-q(x, x)``; taboo sets are enlarged by ``x``."""
    if model.catalyst_index(x) is not None:
        raise ValueError(f"state {x!r} is a catalyst site")
    cats = model.catalysts
    sites = list(model.sites) + [x]
    n = len(sites)
    rate_x = model.holding_rate(x)
    g = [G_transform(c.beta, lam) for c in cats] + [G_transform(rate_x, lam)]
    one_minus_alpha = [1.0 - c.alpha for c in cats] + [1.0]
    D = np.zeros((n, n))
    ok = True
    for j in range(n):
        taboo = frozenset(s for i, s in enumerate(sites) if i != j)
        F, conv, _, _ = taboo_transforms(model, sites, sites[j], taboo, lam)
        ok &= conv
        D[:, j] = np.array(one_minus_alpha) * np.array(g) * F
    for i, c in enumerate(cats):
        D[i, i] += c.alpha * pgf_mean(c.offspring) * g[i]
    return DMatrix(lam, D, x, ok)


def perron_root(M, tol: float = 1e-12, max_iter: int = 100_000, return_vector: bool = False):
    """Perron root of a nonnegative irreducible matrix by power iteration.

    Convergence is certified by the Collatz-Wielandt bracket
    ``min(Mv/v) <= rho <= max(Mv/v)``; a periodic matrix is retried with a
    diagonal shift.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if np.any(M < 0):
        raise ValueError("matrix has negative entries")
    if not is_irreducible(M):
        raise ValueError("matrix is reducible")
    n = M.shape[0]
    for shift in (0.0, max(1.0, float(M.max()))):
        A = M + shift * np.eye(n)
        v = np.full(n, 1.0 / n)
        for _ in range(max_iter):
            w = A @ v
            ratios = w / v
            lo, hi = ratios.min(), ratios.max()
            v = w / w.sum()
            if hi - lo <= tol * max(hi, 1e-300):
                rho = float(0.5 * (lo + hi) - shift)
                if return_vector:
                    return rho, v
                return rho
    raise ConvergenceError("power iteration did not converge")


def _rho(model: ValidatedModel, lam: float) -> float:
    return perron_root(build_D(model, lam).entries)


def classify(model: ValidatedModel) -> CriticalityReport:
    rho0 = _rho(model, 0.0)
    if rho0 > 1.0 + CRITICAL_BAND:
        cls = "supercritical"
    elif rho0 < 1.0 - CRITICAL_BAND:
        cls = "subcritical"
    else:
        cls = "critical"
    return CriticalityReport(rho0=float(rho0), cls=cls)


def malthusian(model: ValidatedModel, tol: float = 1e-10, report: CriticalityReport | None = None):
    """Bisection for ``rho(D(nu)) = 1``; returns ``(nu, final_bracket_width)``.

    ``rho(D(lam))`` is nonincreasing in ``lam``.
    """
    report = report or classify(model)
    if report.cls != "supercritical":
        raise NotSupercriticalError(
            f"model is {report.cls} (rho(D(0)) = {report.rho0:.12g}); "
            "the Malthusian parameter exists only for supercritical models")
    lo, hi = 0.0, 1.0
    while _rho(model, hi) >= 1.0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e12:
            raise ConvergenceError("no upper bracket for the Malthusian parameter")
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        if _rho(model, mid) > 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), hi - lo


def perron_vector(model: ValidatedModel, nu: float) -> np.ndarray:
    """Right Perron vector of ``D(nu)`` normalised to sum 1."""
    _, v = perron_root(build_D(model, nu).entries, return_vector=True)
    return v / v.sum()


def c_of(model: ValidatedModel, nu: float, u: np.ndarray, x: Label) -> float:
    """Constant ``c(x)``: ``1/u_k`` at catalyst ``w_k``; off the catalyst set,
    ``1/u_{N+1}(x)`` from the extended matrix with the first N entries of its
    Perron vector summing to 1."""
    k = model.catalyst_index(x)
    if k is not None:
        return 1.0 / u[k]
    return 1.0 / extended_vector(model, x, nu)[-1]


def extended_vector(model: ValidatedModel, x: Label, nu: float) -> np.ndarray:
    _, v = perron_root(build_D_ext(model, x, nu).entries, return_vector=True)
    return v / v[:-1].sum()


def criticality_report(model: ValidatedModel, query_states=(), tol: float = 1e-10) -> CriticalityReport:
    """Class, and for supercritical models also ``nu``, ``u`` and ``c(x)`` at
    the catalyst sites, the start state and ``query_states``."""
    rep = classify(model)
    if rep.cls != "supercritical":
        return rep
    nu, width = malthusian(model, tol, rep)
    u = perron_vector(model, nu)
    rep.nu, rep.u, rep.bracket_width = nu, u, width
    states = list(model.sites)
    for x in [model.start, *query_states]:
        if x not in states:
            states.append(x)
    rep.c = {x: float(c_of(model, nu, u, x)) for x in states}
    return rep

