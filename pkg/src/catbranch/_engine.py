"""Compiled simulation kernels.

Lattice kernel: every particle carries a Poisson clock of the common rate ``lam_max``; a
tick at position ``x`` is real with probability ``rate(x) / lam_max`` and a
phantom otherwise. This uniformised race is exactly the CBP dynamics and
costs O(1) per event on the unbounded lattice.

Finite kernel: direct method on occupation numbers, O(|S|) per event.
"""

import numpy as np
from numba import njit

KIND_FINITE = 0
KIND_LATTICE = 1


@njit(cache=True, nogil=True)
def _lookup(table, lo, x):
    j = x - lo
    if j < 0 or j >= table.shape[0]:
        return -1
    return table[j]


@njit(cache=True, nogil=True)
def _run_one(seed, kind, start, t_grid, rates, jump_cum, up_prob, lattice_rate,
             cat_table, cat_lo, cat_beta, cat_alpha, off_counts, off_cum,
             y_table, y_lo, n_y, lam_max, pop_cap, event_cap, out, last_occ):
    """Simulate one path; fills ``out[g, 0]`` (total) and ``out[g, 1 + s]``
    (count at the s-th reported site). Returns (truncated, events)."""
    np.random.seed(seed)
    max_off = 0
    for k in range(off_counts.shape[0]):
        for m in range(off_counts.shape[1]):
            if off_counts[k, m] > max_off:
                max_off = off_counts[k, m]
    pos = np.empty(64 + max_off, dtype=np.int64)
    local = np.zeros(n_y, dtype=np.int64)
    for s in range(n_y):
        last_occ[s] = -1.0
    n = 1
    pos[0] = start
    s0 = _lookup(y_table, y_lo, start)
    if s0 >= 0:
        local[s0] = 1
    n_grid = t_grid.shape[0]
    g = 0
    t = 0.0
    events = 0
    truncated = False
    while True:
        if n == 0:
            while g < n_grid:
                out[g, 0] = 0
                for s in range(n_y):
                    out[g, 1 + s] = 0
                g += 1
            break
        t_new = t - np.log(1.0 - np.random.random()) / (n * lam_max)
        while g < n_grid and t_grid[g] < t_new:
            out[g, 0] = n
            for s in range(n_y):
                out[g, 1 + s] = local[s]
            g += 1
        if g == n_grid:
            break
        t = t_new
        # one uniform picks the particle; its fractional part decides thinning
        v = np.random.random() * n
        i = min(int(v), n - 1)
        x = pos[i]
        k = _lookup(cat_table, cat_lo, x)
        if k >= 0:
            r = cat_beta[k]
        elif kind == KIND_LATTICE:
            r = lattice_rate
        else:
            r = rates[x]
        if (v - i) * lam_max >= r:
            continue
        events += 1
        sx = _lookup(y_table, y_lo, x)
        if k >= 0 and np.random.random() < cat_alpha[k]:
            # branch: parent replaced by m offspring at x
            u = np.random.random()
            m = off_counts[k, 0]
            for c in range(off_cum.shape[1]):
                m = off_counts[k, c]
                if u < off_cum[k, c]:
                    break
            pos[i] = pos[n - 1]
            n -= 1
            if n + m > pos.shape[0]:
                grown = np.empty(2 * pos.shape[0] + m, dtype=np.int64)
                grown[:n] = pos[:n]
                pos = grown
            for _ in range(m):
                pos[n] = x
                n += 1
            if sx >= 0:
                local[sx] += m - 1
                if local[sx] == 0:
                    last_occ[sx] = t
        else:
            if kind == KIND_LATTICE:
                y = x + 1 if np.random.random() < up_prob else x - 1
            else:
                u = np.random.random()
                y = 0
                for c in range(jump_cum.shape[1]):
                    if u < jump_cum[x, c]:
                        y = c
                        break
                    y = c
            pos[i] = y
            if sx >= 0:
                local[sx] -= 1
                if local[sx] == 0:
                    last_occ[sx] = t
            sy = _lookup(y_table, y_lo, y)
            if sy >= 0:
                local[sy] += 1
        if n > pop_cap or events >= event_cap:
            truncated = True
            while g < n_grid:
                out[g, 0] = -1
                for s in range(n_y):
                    out[g, 1 + s] = -1
                g += 1
            break
    if not truncated:
        for s in range(n_y):
            if local[s] > 0:
                last_occ[s] = t_grid[n_grid - 1]
    return truncated, events


@njit(cache=True, nogil=True)
def run_batch(seeds, kind, start, t_grid, rates, jump_cum, up_prob, lattice_rate,
              cat_table, cat_lo, cat_beta, cat_alpha, off_counts, off_cum,
              y_table, y_lo, n_y, lam_max, pop_cap, event_cap, out, last_occ, trunc, n_events):
    for r in range(seeds.shape[0]):
        tr, ev = _run_one(seeds[r], kind, start, t_grid, rates, jump_cum, up_prob, lattice_rate,
                          cat_table, cat_lo, cat_beta, cat_alpha, off_counts, off_cum,
                          y_table, y_lo, n_y, lam_max, pop_cap, event_cap, out[r], last_occ[r])
        trunc[r] = tr
        n_events[r] = ev


@njit(cache=True, nogil=True)
def _run_one_counts(seed, start, t_grid, rates, jump_cum, cat_of, cat_alpha,
                    off_counts, off_cum, y_slot, n_y, pop_cap, event_cap, out, last_occ):
    """Direct-method simulation on occupation numbers of a finite space.

    Particles at the same state are exchangeable, so tracking counts per state
    is exact in law and needs no per-particle storage.
    """
    np.random.seed(seed)
    S = rates.shape[0]
    occ = np.zeros(S, dtype=np.int64)
    occ[start] = 1
    n = 1
    for s in range(n_y):
        last_occ[s] = -1.0
    n_grid = t_grid.shape[0]
    g = 0
    t = 0.0
    events = 0
    truncated = False
    total_rate = rates[start]
    while True:
        if n == 0:
            while g < n_grid:
                out[g, 0] = 0
                for s in range(n_y):
                    out[g, 1 + s] = 0
                g += 1
            break
        t_new = t - np.log(1.0 - np.random.random()) / total_rate
        while g < n_grid and t_grid[g] < t_new:
            out[g, 0] = n
            for s in range(S):
                if y_slot[s] >= 0:
                    out[g, 1 + y_slot[s]] = occ[s]
            g += 1
        if g == n_grid:
            break
        t = t_new
        target = np.random.random() * total_rate
        x = S - 1
        acc = 0.0
        for z in range(S):
            acc += occ[z] * rates[z]
            if target < acc and occ[z] > 0:
                x = z
                break
        while occ[x] == 0:
            x -= 1
        events += 1
        k = cat_of[x]
        if k >= 0 and np.random.random() < cat_alpha[k]:
            u = np.random.random()
            m = off_counts[k, 0]
            for c in range(off_cum.shape[1]):
                m = off_counts[k, c]
                if u < off_cum[k, c]:
                    break
            occ[x] += m - 1
            n += m - 1
            total_rate += (m - 1) * rates[x]
        else:
            u = np.random.random()
            y = 0
            for c in range(jump_cum.shape[1]):
                y = c
                if u < jump_cum[x, c]:
                    break
            occ[x] -= 1
            occ[y] += 1
            total_rate += rates[y] - rates[x]
        if occ[x] == 0 and y_slot[x] >= 0:
            last_occ[y_slot[x]] = t
        if (events & 4095) == 0 or (n > 0 and total_rate <= 0.0):
            # resum periodically: incremental updates drift by round-off
            total_rate = 0.0
            for z in range(S):
                total_rate += occ[z] * rates[z]
        if n > pop_cap or events >= event_cap:
            truncated = True
            while g < n_grid:
                out[g, 0] = -1
                for s in range(n_y):
                    out[g, 1 + s] = -1
                g += 1
            break
    if not truncated:
        for z in range(S):
            if y_slot[z] >= 0 and occ[z] > 0:
                last_occ[y_slot[z]] = t_grid[n_grid - 1]
    return truncated, events


@njit(cache=True, nogil=True)
def run_batch_counts(seeds, start, t_grid, rates, jump_cum, cat_of, cat_alpha, off_counts,
                     off_cum, y_slot, n_y, pop_cap, event_cap, out, last_occ, trunc, n_events):
    for r in range(seeds.shape[0]):
        tr, ev = _run_one_counts(seeds[r], start, t_grid, rates, jump_cum, cat_of, cat_alpha,
                                 off_counts, off_cum, y_slot, n_y, pop_cap, event_cap,
                                 out[r], last_occ[r])
        trunc[r] = tr
        n_events[r] = ev
