"""Taboo first-passage probabilities and their Laplace transforms.

For a source ``x``, target ``y`` and taboo set ``H`` the passage time is
measured from the moment the walk leaves ``x`` until it first hits ``y``,
and is infinite if the path visits ``H`` before that. Transforms are obtained
from one linear solve per ``(target, taboo, lambda)``; on the integer lattice
the walk is killed at the edge of a window that is doubled until the values
stabilise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply, spsolve

from .model import Label, ValidatedModel

WINDOW_TOL = 1e-8
WINDOW_CAP = 2**14
FINITE_TRANSIENCE_TOL = 1e-9


@dataclass(frozen=True)
class TabooQuery:
    source: Label
    target: Label
    taboo: frozenset = frozenset()
    lam: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "taboo", frozenset(self.taboo))
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")


@dataclass(frozen=True)
class TransformValue:
    value: float
    converged: bool = True
    window_radius_used: int | None = None
    error_bound: float = 0.0


class _Window:
    """Finite index set on which linear solves are carried out."""

    def __init__(self, model: ValidatedModel, radius: int | None = None):
        self.model = model
        if model.is_lattice:
            self.radius = radius
            n = 2 * radius + 1
            a, b = model.up_rate, model.down_rate
            # rows at the window edge lose their outward rate: killing
            self.Q = sp.diags(
                [np.full(n - 1, b), np.full(n, -(a + b)), np.full(n - 1, a)],
                [-1, 0, 1], format="csc",
            )
            self.labels = range(-radius, radius + 1)
        else:
            self.radius = None
            self.Q = sp.csc_matrix(model.generator)
            self.labels = model.states

    def idx(self, x: Label) -> int:
        if self.model.is_lattice:
            if abs(x) > self.radius:
                raise ValueError(f"state {x} outside window of radius {self.radius}")
            return int(x) + self.radius
        return self.model.index[x]

    @property
    def size(self) -> int:
        return self.Q.shape[0]


def _boundary_solve(win: _Window, target: Label, taboo: frozenset, lam: float) -> np.ndarray:
    """Return ``h`` on the window: ``h_z`` is the transform of the passage
    time from *arriving* at ``z`` to hitting ``target`` while avoiding taboo
    states; ``h = 1`` at the target and 0 on taboo states."""
    n = win.size
    t = win.idx(target)
    boundary = np.zeros(n, dtype=bool)
    boundary[t] = True
    for w in taboo:
        if win.model.is_lattice and abs(w) > win.radius:
            continue
        boundary[win.idx(w)] = True
    interior = np.flatnonzero(~boundary)
    h = np.zeros(n)
    h[t] = 1.0
    if interior.size:
        Q = win.Q
        A = lam * sp.identity(interior.size, format="csc") - Q[interior][:, interior]
        rhs = np.asarray(Q[interior][:, [t]].todense()).ravel()
        h[interior] = np.atleast_1d(spsolve(A.tocsc(), rhs))
    return h


def _exit_average(win: _Window, h: np.ndarray, x: Label) -> float:
    """Average of ``h`` over the embedded jump kernel out of ``x``."""
    i = win.idx(x)
    row = win.Q.getrow(i).toarray().ravel()
    rate = -row[i]
    row[i] = 0.0
    return float(row @ h / rate)


def _special_radius(model: ValidatedModel, labels) -> int:
    m = max((abs(int(x)) for x in labels), default=0)
    return max(model.window_radius, m + 2)


@lru_cache(maxsize=4096)
def _solve_cached(model: ValidatedModel, sources: tuple, target: Label,
                  taboo: frozenset, lam: float):
    """Values for each source plus (converged, radius, error_bound)."""
    if not model.is_lattice:
        win = _Window(model)
        h = _boundary_solve(win, target, taboo, lam)
        vals = np.array([_exit_average(win, h, x) for x in sources])
        return np.clip(vals, 0.0, 1.0), True, None, 0.0

    radius = _special_radius(model, list(sources) + [target] + list(taboo))
    prev = None
    while True:
        win = _Window(model, radius)
        h = _boundary_solve(win, target, taboo, lam)
        vals = np.array([_exit_average(win, h, x) for x in sources])
        if prev is not None:
            diff = float(np.max(np.abs(vals - prev)))
            if diff < WINDOW_TOL:
                return np.clip(vals, 0.0, 1.0), True, radius, WINDOW_TOL
            if 2 * radius > WINDOW_CAP:
                # killing approximates from below; first-order tail assumed
                return np.clip(vals, 0.0, 1.0), False, radius, 2.0 * diff
        prev = vals
        radius *= 2


def taboo_transforms(model: ValidatedModel, sources, target: Label, taboo=(), lam: float = 0.0):
    """Vector version of :func:`taboo_transform` sharing one linear solve.

    Returns ``(values, converged, radius, error_bound)``.
    """
    if not lam >= 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    for x in list(sources) + [target]:
        if not model.contains(x):
            raise ValueError(f"unknown state {x!r}")
    vals, conv, radius, err = _solve_cached(model, tuple(sources), target,
                                            frozenset(taboo), float(lam))
    return vals.copy(), conv, radius, err


def taboo_transform(model: ValidatedModel, query: TabooQuery) -> TransformValue:
    """``E[exp(-lam * tau); tau < inf]`` for the taboo passage time ``tau``."""
    vals, conv, radius, err = taboo_transforms(
        model, [query.source], query.target, query.taboo, query.lam)
    return TransformValue(float(vals[0]), conv, radius, err)


def hitting_prob(model: ValidatedModel, source: Label, target: Label, taboo=()) -> float:
    """Probability of ever reaching ``target`` while avoiding ``taboo``
    after leaving ``source``."""
    return taboo_transform(model, TabooQuery(source, target, frozenset(taboo), 0.0)).value


def catalyst_taboo(model: ValidatedModel, k: int) -> frozenset:
    """``W_k``: all catalyst sites except the k-th (0-based)."""
    sites = model.sites
    return frozenset(s for i, s in enumerate(sites) if i != k)


def G_transform(beta: float, lam: float) -> float:
    """Laplace transform of the Exp(beta) holding law."""
    if not beta > 0 or not lam >= 0:
        raise ValueError("need beta > 0 and lambda >= 0")
    return beta / (beta + lam)


def Gjk_transform(model: ValidatedModel, j: int, k: int, lam: float) -> float:
    """Transform of the holding at catalyst ``j`` followed by the passage to
    catalyst ``k`` under taboo ``W_k`` (indices are 0-based)."""
    n = model.n_catalysts
    if not (0 <= j < n and 0 <= k < n):
        raise IndexError(f"catalyst index out of range: ({j}, {k}) with N={n}")
    sites = model.sites
    tv = taboo_transform(model, TabooQuery(sites[j], sites[k], catalyst_taboo(model, k), lam))
    return G_transform(model.catalysts[j].beta, lam) * tv.value


def holding_convolved_transform(model: ValidatedModel, x: Label, k: int, lam: float) -> float:
    """Transform of the Exp(-q(x,x)) holding at an off-catalyst state ``x``
    followed by the taboo passage to catalyst ``k``."""
    if model.catalyst_index(x) is not None:
        raise ValueError(f"state {x!r} is a catalyst site; defined only off the catalyst set")
    sites = model.sites
    rate = model.holding_rate(x)
    tv = taboo_transform(model, TabooQuery(x, sites[k], catalyst_taboo(model, k), lam))
    return rate / (rate + lam) * tv.value


def catalyst_masses(model: ValidatedModel, x: Label) -> np.ndarray:
    """Vector ``(F_{x,w_k}(inf))_k`` of first-catalyst hitting masses."""
    sites = model.sites
    return np.array([
        taboo_transforms(model, [x], sites[k], catalyst_taboo(model, k), 0.0)[0][0]
        for k in range(model.n_catalysts)
    ])


def catalyst_mass_error(model: ValidatedModel, x: Label) -> float:
    sites = model.sites
    return sum(taboo_transforms(model, [x], sites[k], catalyst_taboo(model, k), 0.0)[3]
               for k in range(model.n_catalysts))


def is_transient(model: ValidatedModel) -> bool:
    """True iff some probed state reaches the catalyst set with probability < 1."""
    probes = list(model.sites)
    if model.start not in probes:
        probes.append(model.start)
    for x in probes:
        total = float(catalyst_masses(model, x).sum())
        tol = FINITE_TRANSIENCE_TOL
        if model.is_lattice:
            tol = max(tol, catalyst_mass_error(model, x))
        if total < 1.0 - tol:
            return True
    return False


def bd_passage_transform(a: float, b: float, lam: float, direction: str) -> float:
    """One-step first-passage transform of the nearest-neighbour walk on Z
    with up-rate ``a`` and down-rate ``b``.

    ``direction='down'`` is the passage from ``z+1`` to ``z``; ``'up'`` from
    ``z-1`` to ``z``. Multi-step passages are powers of these.
    """
    if direction == "up":
        a, b = b, a
    elif direction != "down":
        raise ValueError(f"direction must be 'down' or 'up', got {direction!r}")
    s = a + b + lam
    disc = s * s - 4.0 * a * b
    # rationalised form avoids cancellation for large lambda
    return 2.0 * b / (s + math.sqrt(max(disc, 0.0)))


# --- time-domain passage distributions ---------------------------------------

def passage_cdf(model: ValidatedModel, origin: Label, hold_rate: float, target: Label,
                taboo, du: float, tail_tol: float = 1e-10, max_steps: int = 200_000):
    """CDF on the grid ``k * du`` of an Exp(hold_rate) holding at ``origin``
    followed by the taboo passage from ``origin`` to ``target``.

    The composite time is phase-type: propagate the distribution of an
    augmented chain (holding phase, interior states, absorbing target)
    until the unabsorbed interior mass drops below ``tail_tol``.
    Returns ``(cdf, remaining_mass)``; ``cdf[0] == 0``.
    """
    taboo = frozenset(taboo)
    if model.is_lattice:
        _, _, radius, _ = taboo_transforms(model, [origin], target, taboo, 0.0)
        win = _Window(model, radius)
    else:
        win = _Window(model)
    n = win.size
    t = win.idx(target)
    boundary = np.zeros(n, dtype=bool)
    boundary[t] = True
    for w in taboo:
        if win.model.is_lattice and abs(w) > win.radius:
            continue
        boundary[win.idx(w)] = True
    interior = np.flatnonzero(~boundary)
    m = interior.size
    Q = win.Q.tocsr()
    # phase order: [hold, interior..., target]
    kernel = {}
    for y, p in model.jump_distribution(origin).items():
        if model.is_lattice and abs(y) > win.radius:
            continue
        kernel[win.idx(y)] = p
    pos = {int(i): r + 1 for r, i in enumerate(interior)}
    rows, cols, vals = [0], [0], [-hold_rate]
    for i, p in kernel.items():
        if i == t:
            rows.append(0); cols.append(m + 1); vals.append(hold_rate * p)
        elif i in pos:
            rows.append(0); cols.append(pos[i]); vals.append(hold_rate * p)
    sub = Q[interior]
    coo = sub.tocoo()
    for r, c, v in zip(coo.row, coo.col, coo.data):
        if c == t:
            rows.append(r + 1); cols.append(m + 1); vals.append(v)
        elif c in pos:
            rows.append(r + 1); cols.append(pos[c]); vals.append(v)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(m + 2, m + 2))
    v = np.zeros(m + 2)
    v[0] = 1.0
    cdf = [0.0]
    if m + 2 <= 800:
        E = scipy.linalg.expm(A.toarray() * du)
        for _ in range(max_steps):
            v = v @ E
            cdf.append(v[-1])
            if v[:-1].sum() < tail_tol:
                break
    else:
        At = A.T.tocsc()
        chunk = 256
        while len(cdf) <= max_steps:
            block = expm_multiply(At, v, start=0.0, stop=chunk * du, num=chunk + 1, endpoint=True)
            cdf.extend(block[1:, -1])
            v = block[-1]
            if v[:-1].sum() < tail_tol:
                break
    remaining = float(max(v[:-1].sum(), 0.0))
    return np.maximum.accumulate(np.asarray(cdf)), remaining
