"""Global and local extinction probabilities as least fixed points."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Label, ValidatedModel, pgf_eval
from .spectral import classify
from .taboo import catalyst_mass_error, catalyst_masses, is_transient

MAX_ITER = 1_000_000


class FixedPointError(RuntimeError):
    pass


@dataclass
class ExtinctionReport:
    q_w: np.ndarray
    Q_w: np.ndarray
    q_x: dict = field(default_factory=dict)
    Q_x: dict = field(default_factory=dict)
    phase: str = ""
    iterations: int = 0
    residual: float = 0.0
    rho0: float = float("nan")
    transient: bool = False
    mass_error: float = 0.0

    def to_dict(self) -> dict:
        return {
            "q_w": [float(v) for v in self.q_w],
            "Q_w": [float(v) for v in self.Q_w],
            "q_x": {str(k): float(v) for k, v in self.q_x.items()},
            "Q_x": {str(k): float(v) for k, v in self.Q_x.items()},
            "phase": self.phase,
            "iterations": self.iterations,
            "residual": self.residual,
            "rho0": self.rho0,
            "transient": self.transient,
            "mass_error": self.mass_error,
        }


def catalyst_mass_matrix(model: ValidatedModel) -> np.ndarray:
    """``P[j, k]``: probability that after leaving ``w_j`` the first catalyst
    visited is ``w_k``."""
    return np.array([catalyst_masses(model, w) for w in model.sites])


def _iterate(model: ValidatedModel, const: np.ndarray, P: np.ndarray, tol: float,
             max_iter: int = MAX_ITER):
    cats = model.catalysts
    alpha = np.array([c.alpha for c in cats])

    def rhs(v):
        f = np.array([pgf_eval(c.offspring, min(max(x, 0.0), 1.0)) for c, x in zip(cats, v)])
        return alpha * f + (1.0 - alpha) * (P @ v) + const

    v = np.zeros(len(cats))
    for it in range(1, max_iter + 1):
        new = np.minimum(rhs(v), 1.0)
        # monotone from below: guards against a non-monotone map
        if np.any(new < v - 1e-15):
            raise FixedPointError("fixed-point iterates decreased")
        step = float(np.max(np.abs(new - v)))
        v = new
        if step < tol:
            break
    else:
        it = max_iter
    residual = float(np.max(np.abs(np.minimum(rhs(v), 1.0) - v)))
    return v, it, residual


def solve_q(model: ValidatedModel, tol: float = 1e-12, P: np.ndarray | None = None):
    """Least root in [0,1]^N of
    ``q_j = alpha_j f_j(q_j) + (1-alpha_j) sum_k P_jk q_k``.

    Returns ``(q_w, iterations, residual)``.
    """
    P = catalyst_mass_matrix(model) if P is None else P
    return _iterate(model, np.zeros(len(P)), P, tol)


def solve_Q(model: ValidatedModel, tol: float = 1e-12, P: np.ndarray | None = None):
    """Least root of the local-extinction system, which adds the escape term
    ``(1-alpha_j)(1 - sum_k P_jk)``."""
    P = catalyst_mass_matrix(model) if P is None else P
    alpha = np.array([c.alpha for c in model.catalysts])
    escape = np.clip(1.0 - P.sum(axis=1), 0.0, 1.0)
    return _iterate(model, (1.0 - alpha) * escape, P, tol)


def q_at(model: ValidatedModel, q_w, x: Label) -> float:
    k = model.catalyst_index(x)
    if k is not None:
        return float(q_w[k])
    return float(catalyst_masses(model, x) @ np.asarray(q_w))


def Q_at(model: ValidatedModel, Q_w, x: Label) -> float:
    k = model.catalyst_index(x)
    if k is not None:
        return float(Q_w[k])
    m = catalyst_masses(model, x)
    return float(m @ np.asarray(Q_w) + max(0.0, 1.0 - m.sum()))


def survival_phase(transient: bool, rho0: float, band: float = 1e-10) -> str:
    supercritical = rho0 > 1.0 + band
    if not transient:
        return "strong_local_survival" if supercritical else "certain_extinction"
    return "mixed" if supercritical else "pure_global_survival"


def extinction_report(model: ValidatedModel, query_states=(), tol: float = 1e-12) -> ExtinctionReport:
    P = catalyst_mass_matrix(model)
    q_w, it_q, res_q = solve_q(model, tol, P)
    Q_w, it_Q, res_Q = solve_Q(model, tol, P)
    transient = is_transient(model)
    rho0 = classify(model).rho0
    states = [model.start, *query_states]
    mass_err = max(catalyst_mass_error(model, w) for w in model.sites) if model.is_lattice else 0.0
    return ExtinctionReport(
        q_w=q_w, Q_w=Q_w,
        q_x={x: q_at(model, q_w, x) for x in states},
        Q_x={x: Q_at(model, Q_w, x) for x in states},
        phase=survival_phase(transient, rho0),
        iterations=max(it_q, it_Q),
        residual=max(res_q, res_Q),
        rho0=rho0,
        transient=transient,
        mass_error=mass_err,
    )
