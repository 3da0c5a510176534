"""Monte Carlo simulation of the catalytic branching particle system.

Two engines are provided:

* :func:`run_ensemble` / :func:`simulate` use the compiled kernels in
  :mod:`catbranch._engine` (occupation numbers on finite spaces, uniformised
  particle list on the lattice) and report counts on a time grid.
* :func:`simulate_events` is a direct per-particle event-queue simulation
  (binary heap of exponential firing times) that records every event. It
  is slow and serves as the reference the fast engine is checked against.

Replicate ``r`` of an ensemble uses seed ``seed + r``, so results do not
depend on the number of worker threads.
"""

from __future__ import annotations

import heapq
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply

from . import _engine
from .model import Label, ValidatedModel

DEFAULT_POP_CAP = 1_000_000
DEFAULT_EVENT_CAP = 100_000_000


@dataclass(frozen=True)
class Caps:
    max_population: int = DEFAULT_POP_CAP
    max_events: int = DEFAULT_EVENT_CAP


@dataclass
class Trajectory:
    t_grid: np.ndarray
    total: np.ndarray
    local: np.ndarray  # shape (len(t_grid), len(sites))
    sites: tuple
    seed: int
    truncated: bool = False
    last_occupied: np.ndarray | None = None
    events: int = 0


@dataclass
class EnsembleStats:
    t_grid: np.ndarray
    sites: tuple
    seed: int
    counts: np.ndarray = field(repr=False)  # (R, G, 1 + n_sites); -1 marks truncation
    last_occupied: np.ndarray = field(repr=False)
    truncated: np.ndarray = field(repr=False)
    n_events: np.ndarray = field(repr=False)

    @property
    def R(self) -> int:
        return self.counts.shape[0]

    @property
    def seeds(self) -> np.ndarray:
        return self.seed + np.arange(self.R)

    @property
    def valid(self) -> np.ndarray:
        return self.counts[:, :, 0] >= 0

    def _moments(self, col: int):
        c = self.counts[:, :, col]
        ok = c >= 0
        n = ok.sum(axis=0)
        s1 = np.where(ok, c, 0).sum(axis=0)  # exact integer sums
        s2 = np.where(ok, c * c, 0).sum(axis=0)
        mean = s1 / np.maximum(n, 1)
        var = (s2 / np.maximum(n, 1) - mean**2) * n / np.maximum(n - 1, 1)
        return mean, np.maximum(var, 0.0), n

    @property
    def mean_total(self) -> np.ndarray:
        return self._moments(0)[0]

    @property
    def var_total(self) -> np.ndarray:
        return self._moments(0)[1]

    def mean_local(self, y: Label) -> np.ndarray:
        return self._moments(1 + self.sites.index(y))[0]

    def var_local(self, y: Label) -> np.ndarray:
        return self._moments(1 + self.sites.index(y))[1]

    @property
    def survival(self) -> np.ndarray:
        ok = self.valid
        return (self.counts[:, :, 0] > 0).sum(axis=0) / np.maximum(ok.sum(axis=0), 1)

    @property
    def extinct_final(self) -> np.ndarray:
        return self.counts[self.valid[:, -1], -1, 0] == 0

    def normalized_final(self, col: int = 0) -> np.ndarray:
        """``mu(t_end) / E^mu(t_end)`` over non-truncated replicates;
        ``col`` 0 is the total, ``1 + s`` the s-th reported site."""
        ok = self.valid[:, -1]
        mean = self._moments(col)[0][-1]
        return self.counts[ok, -1, col] / mean

    def laplace_table(self, lams, col: int = 0):
        """Empirical ``E exp(-lam Z)`` for ``Z = normalized_final(col)`` with
        standard errors."""
        z = self.normalized_final(col)
        lams = np.asarray(lams, dtype=float)
        e = np.exp(-np.outer(lams, z))
        return e.mean(axis=1), e.std(axis=1, ddof=1) / np.sqrt(len(z))

    def coverage(self) -> dict:
        return {
            "replicates": int(self.R),
            "truncated": int(self.truncated.sum()),
            "total_events": int(self.n_events.sum()),
        }


def _engine_arrays(model: ValidatedModel, sites):
    cats = model.catalysts
    n_cat = len(cats)
    width = max(len(c.offspring.counts) for c in cats)
    off_counts = np.zeros((n_cat, width), dtype=np.int64)
    off_cum = np.ones((n_cat, width))
    for k, c in enumerate(cats):
        cnt = np.array(c.offspring.counts)
        cum = np.cumsum(c.offspring.probs)
        cum[-1] = 1.0
        off_counts[k, : len(cnt)] = cnt
        off_counts[k, len(cnt):] = cnt[-1]
        off_cum[k, : len(cnt)] = cum
    beta = np.array([c.beta for c in cats])
    alpha = np.array([c.alpha for c in cats])

    if model.is_lattice:
        kind = _engine.KIND_LATTICE
        enc = int
        rates = np.zeros(1)
        jump_cum = np.zeros((1, 1))
        a, b = model.up_rate, model.down_rate
        up_prob = a / (a + b)
        lattice_rate = a + b
        lam_max = max(a + b, beta.max())
    else:
        kind = _engine.KIND_FINITE
        enc = model.index.__getitem__
        rates = -np.diag(model.generator).copy()
        for c in cats:
            rates[model.index[c.site]] = c.beta
        jump_cum = np.cumsum(model.jump_kernel, axis=1)
        for i in range(len(jump_cum)):
            last = np.flatnonzero(model.jump_kernel[i])[-1]
            jump_cum[i, last:] = 1.0
        up_prob = lattice_rate = 0.0
        lam_max = float(rates.max())

    def table(labels):
        codes = [enc(x) for x in labels]
        if not codes:
            return np.full(1, -1, dtype=np.int64), 0
        lo = min(codes)
        tab = np.full(max(codes) - lo + 1, -1, dtype=np.int64)
        for s, code in enumerate(codes):
            tab[code - lo] = s
        return tab, lo

    cat_table, cat_lo = table(model.sites)
    y_table, y_lo = table(sites)
    return dict(kind=kind, start=enc(model.start), rates=rates, jump_cum=jump_cum,
                up_prob=up_prob, lattice_rate=lattice_rate, cat_table=cat_table,
                cat_lo=cat_lo, cat_beta=beta, cat_alpha=alpha, off_counts=off_counts,
                off_cum=off_cum, y_table=y_table, y_lo=y_lo, n_y=len(sites),
                lam_max=lam_max)


def default_sites(model: ValidatedModel) -> tuple:
    if not model.is_lattice:
        return tuple(model.states)
    sites = list(model.sites)
    if model.start not in sites:
        sites.append(model.start)
    return tuple(sites)


def _threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("CATBRANCH_THREADS", "1"))
    return max(1, threads)


def run_ensemble(model: ValidatedModel, t_grid, R: int, seed: int, caps: Caps = Caps(),
                 sites=None, threads: int | None = None) -> EnsembleStats:
    """Simulate ``R`` independent paths on the seed ladder ``seed, seed+1, ...``."""
    if R < 1:
        raise ValueError("R must be >= 1")
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0 or np.any(np.diff(t_grid) < 0) or t_grid[0] < 0:
        raise ValueError("t_grid must be a nondecreasing grid of nonnegative times")
    sites = default_sites(model) if sites is None else tuple(sites)
    for y in sites:
        if not model.contains(y):
            raise ValueError(f"unknown state {y!r}")
    arr = _engine_arrays(model, sites)
    seeds = (seed + np.arange(R)).astype(np.int64)
    if np.any(seeds < 0) or np.any(seeds >= 2**32):
        raise ValueError("seeds must lie in [0, 2**32)")
    out = np.empty((R, len(t_grid), 1 + len(sites)), dtype=np.int64)
    last_occ = np.empty((R, len(sites)))
    trunc = np.zeros(R, dtype=np.bool_)
    n_events = np.zeros(R, dtype=np.int64)

    if model.is_lattice:
        def work(lo, hi):
            _run_lattice(lo, hi)
    else:
        S = len(model.states)
        cat_of = np.full(S, -1, dtype=np.int64)
        for k, c in enumerate(model.catalysts):
            cat_of[model.index[c.site]] = k
        y_slot = np.full(S, -1, dtype=np.int64)
        for s_, y in enumerate(sites):
            y_slot[model.index[y]] = s_

        def work(lo, hi):
            _engine.run_batch_counts(
                seeds[lo:hi], arr["start"], t_grid, arr["rates"], arr["jump_cum"], cat_of,
                arr["cat_alpha"], arr["off_counts"], arr["off_cum"], y_slot, arr["n_y"],
                caps.max_population, caps.max_events,
                out[lo:hi], last_occ[lo:hi], trunc[lo:hi], n_events[lo:hi])

    def _run_lattice(lo, hi):
        _engine.run_batch(
            seeds[lo:hi], arr["kind"], arr["start"], t_grid, arr["rates"], arr["jump_cum"],
            arr["up_prob"], arr["lattice_rate"], arr["cat_table"], arr["cat_lo"],
            arr["cat_beta"], arr["cat_alpha"], arr["off_counts"], arr["off_cum"],
            arr["y_table"], arr["y_lo"], arr["n_y"], arr["lam_max"],
            caps.max_population, caps.max_events,
            out[lo:hi], last_occ[lo:hi], trunc[lo:hi], n_events[lo:hi])

    nt = min(_threads(threads), R)
    bounds = np.linspace(0, R, nt + 1).astype(int)
    if nt == 1:
        work(0, R)
    else:
        with ThreadPoolExecutor(nt) as ex:
            list(ex.map(lambda i: work(bounds[i], bounds[i + 1]), range(nt)))
    return EnsembleStats(t_grid, sites, seed, out, last_occ, trunc, n_events)


def mean_matrix(model: ValidatedModel, radius: int | None = None):
    """Generator ``B`` of the first-moment semigroup, ``E_x mu(t; y) =
    expm(t B)[x, y]``, and the list of state labels indexing it.

    Lattice models are cut to ``[-radius, radius]``; mass leaving the window
    is lost, so the means are lower bounds (pick the radius well beyond the
    distance a particle can travel).
    """
    if model.is_lattice:
        labels = list(range(-radius, radius + 1))
        n = len(labels)
        a, b = model.up_rate, model.down_rate
        B = sparse.diags([np.full(n - 1, b), np.full(n, -(a + b)), np.full(n - 1, a)],
                         [-1, 0, 1], format="lil")
        for c in model.catalysts:
            i = c.site + radius
            B[i, :] = 0.0
            if i + 1 < n:
                B[i, i + 1] = (1.0 - c.alpha) * c.beta * a / (a + b)
            if i > 0:
                B[i, i - 1] = (1.0 - c.alpha) * c.beta * b / (a + b)
            B[i, i] = c.beta * (c.alpha * c.offspring.mean - 1.0)
        return B.tocsr(), labels
    B = model.generator.copy()
    for c in model.catalysts:
        i = model.index[c.site]
        B[i] = (1.0 - c.alpha) * c.beta * model.jump_kernel[i]
        B[i, i] = c.beta * (c.alpha * c.offspring.mean - 1.0)
    return B, list(model.states)


def mean_counts(model: ValidatedModel, t_grid, sites=None) -> np.ndarray:
    """Exact ``E_x mu(t)`` and ``E_x mu(t; y)`` from the start state, laid out
    like one replicate of :attr:`EnsembleStats.counts`."""
    sites = default_sites(model) if sites is None else tuple(sites)
    t_grid = np.asarray(t_grid, dtype=float)
    out = np.empty((len(t_grid), 1 + len(sites)))
    if model.is_lattice:
        rate = max([model.up_rate + model.down_rate] + [c.beta for c in model.catalysts])
        reach = rate * float(t_grid.max())
        far = max(abs(v) for v in [model.start, *model.sites, *sites])
        radius = far + int(math.ceil(reach + 12.0 * math.sqrt(reach + 1.0))) + 16
        B, labels = mean_matrix(model, radius)
        e = np.zeros(len(labels))
        e[model.start + radius] = 1.0
        BT = B.T.tocsr()
        cols = [y + radius for y in sites]
        for g, t in enumerate(t_grid):
            row = expm_multiply(t * BT, e) if t > 0 else e
            out[g, 0] = row.sum()
            out[g, 1:] = row[cols]
        return out
    B, _ = mean_matrix(model)
    x = model.index[model.start]
    cols = [model.index[y] for y in sites]
    for g, t in enumerate(t_grid):
        row = expm(t * B)[x]
        out[g, 0] = row.sum()
        out[g, 1:] = row[cols]
    return out


def horizon_for_mean(model: ValidatedModel, target: float, nu: float) -> float:
    """Time ``t`` with ``E_x mu(t) = target`` for a model growing at rate ``nu``."""
    t = math.log(target) / nu
    for _ in range(6):
        m = mean_counts(model, [t], ())[0, 0]
        t_new = max(t + (math.log(target) - math.log(m)) / nu, 1e-9)
        if abs(t_new - t) < 1e-6:
            return t_new
        t = t_new
    return t


def simulate(model: ValidatedModel, t_end: float, seed: int, caps: Caps = Caps(),
             t_grid=None, sites=None) -> Trajectory:
    """One path on ``t_grid`` (default: 101 points on [0, t_end])."""
    if not t_end > 0:
        raise ValueError("t_end must be > 0")
    t_grid = np.linspace(0.0, t_end, 101) if t_grid is None else np.asarray(t_grid, float)
    ens = run_ensemble(model, t_grid, 1, seed, caps, sites)
    c = ens.counts[0]
    return Trajectory(t_grid=t_grid, total=c[:, 0], local=c[:, 1:], sites=ens.sites,
                      seed=seed, truncated=bool(ens.truncated[0]),
                      last_occupied=ens.last_occupied[0], events=int(ens.n_events[0]))


# --- reference event-queue engine -------------------------------------------

@dataclass(frozen=True)
class ParticleEvent:
    time: float
    kind: str  # "jump", "branch" or "depart" (branch attempt that left the catalyst)
    site: Label
    particle_id: int
    destination: Label | None = None
    n_offspring: int | None = None


@dataclass
class EventRun:
    events: list
    t_grid: np.ndarray
    total: np.ndarray
    local: dict
    truncated: bool


def simulate_events(model: ValidatedModel, t_end: float, seed: int, caps: Caps = Caps(),
                    t_grid=None, sites=None, record: bool = True) -> EventRun:
    """Per-particle exponential clocks in a binary heap; every event logged."""
    rng = np.random.default_rng(seed)
    t_grid = np.linspace(0.0, t_end, 101) if t_grid is None else np.asarray(t_grid, float)
    sites = default_sites(model) if sites is None else tuple(sites)
    cat_of = {c.site: c for c in model.catalysts}
    kernels = {}

    def rate(x):
        c = cat_of.get(x)
        return c.beta if c is not None else model.holding_rate(x)

    def jump(x):
        if x not in kernels:
            d = model.jump_distribution(x)
            kernels[x] = (list(d), np.cumsum(list(d.values())))
        ys, cum = kernels[x]
        j = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), len(ys) - 1)
        return ys[j]

    where = {0: model.start}
    heap = [(rng.exponential(1.0 / rate(model.start)), 0)]
    next_id = 1
    counts = {y: 0 for y in sites}
    if model.start in counts:
        counts[model.start] = 1
    total = np.zeros(len(t_grid), dtype=np.int64)
    local = {y: np.zeros(len(t_grid), dtype=np.int64) for y in sites}
    log = []
    g = 0
    n_events = 0
    truncated = False

    def flush(upto):
        nonlocal g
        while g < len(t_grid) and t_grid[g] < upto:
            total[g] = len(where)
            for y in sites:
                local[y][g] = counts[y]
            g += 1

    while heap:
        t, pid = heapq.heappop(heap)
        flush(t)
        if g == len(t_grid):
            break
        x = where[pid]
        c = cat_of.get(x)
        n_events += 1
        if c is not None and rng.random() < c.alpha:
            law = c.offspring
            m = int(rng.choice(law.counts, p=law.probs))
            del where[pid]
            if x in counts:
                counts[x] += m - 1
            for _ in range(m):
                where[next_id] = x
                heapq.heappush(heap, (t + rng.exponential(1.0 / c.beta), next_id))
                next_id += 1
            if record:
                log.append(ParticleEvent(t, "branch", x, pid, None, m))
        else:
            y = jump(x)
            where[pid] = y
            if x in counts:
                counts[x] -= 1
            if y in counts:
                counts[y] += 1
            heapq.heappush(heap, (t + rng.exponential(1.0 / rate(y)), pid))
            if record:
                log.append(ParticleEvent(t, "depart" if c is not None else "jump", x, pid, y))
        if len(where) > caps.max_population or n_events >= caps.max_events:
            truncated = True
            total[g:] = -1
            for y in sites:
                local[y][g:] = -1
            g = len(t_grid)
            break
    flush(np.inf)
    return EventRun(log, t_grid, total, local, truncated)
