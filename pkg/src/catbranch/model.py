"""Model description of a catalytic branching process and its validation.

A particle walks on a discrete space according to a conservative,
irreducible generator. At a catalyst site ``w_k`` it waits an Exp(beta_k)
time, then either branches (probability ``alpha_k``) into a random number of
offspring placed at ``w_k``, or leaves ``w_k`` by the embedded jump kernel.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Hashable, Mapping, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

Label = Hashable

ROW_SUM_TOL = 1e-12
RENORMALIZE_TOL = 1e-9


class ModelError(ValueError):
    """Raised when a model violates one or more invariants.

    ``errors`` holds one message per violated invariant.
    """

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support offspring distribution ``{count: probability}``."""

    counts: tuple[int, ...]
    probs: tuple[float, ...]

    @classmethod
    def from_pmf(cls, pmf: Mapping[Any, float]) -> "OffspringLaw":
        errors = []
        items = []
        seen = set()
        for key, p in pmf.items():
            try:
                k = int(key)
            except (TypeError, ValueError):
                errors.append(f"offspring count {key!r} is not an integer")
                continue
            if isinstance(key, float) and key != k:
                errors.append(f"offspring count {key!r} is not an integer")
                continue
            if k < 0:
                errors.append(f"offspring count {k} is negative")
            if k in seen:
                errors.append(f"duplicate offspring count {k}")
            seen.add(k)
            p = float(p)
            if not (0.0 <= p <= 1.0):
                errors.append(f"probability {p} of count {k} outside [0, 1]")
            items.append((k, p))
        if not items:
            errors.append("empty offspring pmf")
        total = math.fsum(p for _, p in items)
        if items and abs(total - 1.0) > RENORMALIZE_TOL:
            errors.append(f"offspring pmf not normalized (sums to {total!r})")
        if errors:
            raise ModelError(errors)
        items.sort()
        return cls(
            counts=tuple(k for k, _ in items),
            probs=tuple(p / total for _, p in items),
        )

    @property
    def mean(self) -> float:
        return math.fsum(k * p for k, p in zip(self.counts, self.probs))

    @property
    def second_moment(self) -> float:
        return math.fsum(k * k * p for k, p in zip(self.counts, self.probs))

    # Finite support makes every moment finite.
    has_second_moment = True
    xlogx_finite = True

    def pmf(self) -> dict[int, float]:
        return dict(zip(self.counts, self.probs))


def pgf_eval(law: OffspringLaw, s):
    """Evaluate ``E s**xi`` for ``s`` in [0, 1] (scalar or array)."""
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0) or np.any(np.isnan(arr)):
        raise ValueError(f"pgf argument outside [0, 1]: {s!r}")
    out = np.zeros_like(arr)
    for k, p in zip(law.counts, law.probs):
        out = out + p * arr**k
    if np.ndim(s) == 0:
        return float(out)
    return out


def pgf_mean(law: OffspringLaw) -> float:
    """Mean offspring number, i.e. the derivative of the pgf at 1."""
    return law.mean


@dataclass(frozen=True)
class Catalyst:
    site: Label
    beta: float
    alpha: float
    offspring: OffspringLaw


@dataclass(frozen=True)
class StateSpace:
    """Either a finite state list with off-diagonal rates, or the integer
    lattice with nearest-neighbour rates ``up_rate`` / ``down_rate``."""

    kind: str
    states: tuple = ()
    rates: tuple = ()  # (x, y, rate) triples, off-diagonal only
    up_rate: float = 0.0
    down_rate: float = 0.0
    window_radius: int = 32

    @classmethod
    def finite(cls, states: Sequence[Label], rates: Sequence[tuple]) -> "StateSpace":
        return cls(kind="finite", states=tuple(states), rates=tuple(tuple(r) for r in rates))

    @classmethod
    def lattice_z1(cls, up_rate: float, down_rate: float, window_radius: int = 32) -> "StateSpace":
        return cls(kind="lattice_z1", up_rate=float(up_rate), down_rate=float(down_rate),
                   window_radius=int(window_radius))


@dataclass(frozen=True)
class ModelSpec:
    space: StateSpace
    catalysts: tuple[Catalyst, ...]
    start: Label

    def __post_init__(self):
        object.__setattr__(self, "catalysts", tuple(self.catalysts))


@dataclass(frozen=True, eq=False)
class ValidatedModel:
    """Immutable validated model with the embedded jump chain precomputed.

    For finite spaces ``generator`` is the dense conservative generator in the
    order of ``states``. For the lattice, states are integers and the
    generator is implicit.
    """

    spec: ModelSpec
    kind: str
    states: tuple
    index: Mapping[Label, int]
    generator: np.ndarray | None
    jump_kernel: np.ndarray | None
    up_rate: float
    down_rate: float
    window_radius: int
    generator_bound: float
    second_moments_ok: bool
    xlogx_ok: bool
    _hash: str = field(repr=False, default="")

    @property
    def catalysts(self) -> tuple[Catalyst, ...]:
        return self.spec.catalysts

    @property
    def sites(self) -> tuple:
        return tuple(c.site for c in self.spec.catalysts)

    @property
    def n_catalysts(self) -> int:
        return len(self.spec.catalysts)

    @property
    def start(self) -> Label:
        return self.spec.start

    @property
    def generator_bounded(self) -> bool:
        return math.isfinite(self.generator_bound)

    @property
    def is_lattice(self) -> bool:
        return self.kind == "lattice_z1"

    def catalyst_index(self, x: Label) -> int | None:
        for k, c in enumerate(self.spec.catalysts):
            if c.site == x:
                return k
        return None

    def contains(self, x: Label) -> bool:
        if self.is_lattice:
            return _is_int(x)
        return x in self.index

    def holding_rate(self, x: Label) -> float:
        """Total jump rate ``-q(x, x)`` of the movement chain."""
        if self.is_lattice:
            return self.up_rate + self.down_rate
        i = self.index[x]
        return -float(self.generator[i, i])

    def jump_distribution(self, x: Label) -> dict:
        """Embedded kernel ``-q(x, y) / q(x, x)`` for ``y != x``."""
        if self.is_lattice:
            tot = self.up_rate + self.down_rate
            return {x + 1: self.up_rate / tot, x - 1: self.down_rate / tot}
        i = self.index[x]
        row = self.jump_kernel[i]
        return {self.states[j]: float(row[j]) for j in np.flatnonzero(row)}

    @property
    def model_hash(self) -> str:
        return self._hash


def _is_int(x) -> bool:
    return isinstance(x, (int, np.integer)) and not isinstance(x, bool)


def validate(spec: ModelSpec) -> ValidatedModel:
    """Check every model invariant, collecting all violations.

    Raises :class:`ModelError` listing each violated invariant.
    """
    errors: list[str] = []
    space = spec.space
    generator = kernel = None
    states: tuple = ()
    index: dict = {}
    bound = math.inf

    if space.kind == "finite":
        states = tuple(space.states)
        if len(states) == 0:
            errors.append("empty state list")
        if len(set(states)) != len(states):
            errors.append("duplicate state labels")
        index = {s: i for i, s in enumerate(states)}
        n = len(states)
        generator = np.zeros((n, n))
        for triple in space.rates:
            if len(triple) != 3:
                errors.append(f"rate entry {triple!r} is not an [x, y, rate] triple")
                continue
            x, y, r = triple
            if x not in index or y not in index:
                errors.append(f"rate entry {triple!r} refers to an unknown state")
                continue
            if x == y:
                errors.append(f"rate entry {triple!r} is diagonal; diagonals are computed")
                continue
            r = float(r)
            if r < 0:
                errors.append(f"negative off-diagonal rate q({x!r},{y!r}) = {r}")
                continue
            generator[index[x], index[y]] += r
        np.fill_diagonal(generator, 0.0)
        diag = -generator.sum(axis=1)
        np.fill_diagonal(generator, diag)
        for i, s in enumerate(states):
            if not diag[i] < 0:
                errors.append(f"state {s!r} has no outgoing rate (q(x,x) must be < 0)")
            if abs(generator[i].sum()) > ROW_SUM_TOL * max(1.0, abs(diag[i])):
                errors.append(f"row {s!r} does not sum to zero")
        if n > 0 and not errors:
            ncomp, _ = connected_components(generator > 0, directed=True, connection="strong")
            if ncomp != 1:
                errors.append("movement chain is reducible (generator graph not strongly connected)")
        if not errors:
            kernel = generator / (-np.diag(generator))[:, None]
            np.fill_diagonal(kernel, 0.0)
            bound = float(np.abs(generator).max())
    elif space.kind == "lattice_z1":
        if not space.up_rate > 0:
            errors.append(f"lattice up_rate must be > 0, got {space.up_rate}")
        if not space.down_rate > 0:
            errors.append(f"lattice down_rate must be > 0, got {space.down_rate}")
        if space.window_radius < 1:
            errors.append(f"lattice window_radius must be >= 1, got {space.window_radius}")
        bound = float(space.up_rate + space.down_rate)
    else:
        errors.append(f"unknown state-space kind {space.kind!r}")

    def in_space(x) -> bool:
        if space.kind == "finite":
            return x in index
        return _is_int(x)

    if len(spec.catalysts) == 0:
        errors.append("at least one catalyst is required")
    seen_sites = set()
    for c in spec.catalysts:
        if not in_space(c.site):
            errors.append(f"unknown catalyst site {c.site!r}")
        if c.site in seen_sites:
            errors.append(f"duplicate catalyst site {c.site!r}")
        seen_sites.add(c.site)
        if not c.beta > 0:
            errors.append(f"catalyst {c.site!r}: beta must be > 0, got {c.beta}")
        if not 0 <= c.alpha < 1:
            errors.append(f"catalyst {c.site!r}: alpha must lie in [0, 1), got {c.alpha}")
    if not in_space(spec.start):
        errors.append(f"unknown start state {spec.start!r}")
    if errors:
        raise ModelError(errors)

    return ValidatedModel(
        spec=spec,
        kind=space.kind,
        states=states,
        index=index,
        generator=generator,
        jump_kernel=kernel,
        up_rate=space.up_rate,
        down_rate=space.down_rate,
        window_radius=space.window_radius,
        generator_bound=bound,
        second_moments_ok=all(c.offspring.has_second_moment for c in spec.catalysts),
        xlogx_ok=all(c.offspring.xlogx_finite for c in spec.catalysts),
        _hash=hashlib.sha256(
            json.dumps(spec_to_dict(spec), sort_keys=True).encode()
        ).hexdigest(),
    )


# --- JSON model files -------------------------------------------------------

def spec_from_dict(doc: Mapping[str, Any]) -> ModelSpec:
    errors = []
    for key in ("space", "catalysts", "start"):
        if key not in doc:
            errors.append(f"missing field {key!r}")
    if errors:
        raise ModelError(errors)
    sp = doc["space"]
    kind = sp.get("kind")
    if kind == "finite":
        space = StateSpace.finite(sp.get("states", []), [tuple(r) for r in sp.get("rates", [])])
    elif kind == "lattice_z1":
        space = StateSpace.lattice_z1(sp.get("up_rate", 0.0), sp.get("down_rate", 0.0),
                                      sp.get("window_radius", 32))
    else:
        raise ModelError([f"unknown state-space kind {kind!r}"])
    cats = []
    for c in doc["catalysts"]:
        try:
            law = OffspringLaw.from_pmf(c["offspring"])
        except ModelError as exc:
            errors.extend(f"catalyst {c.get('site')!r}: {e}" for e in exc.errors)
            continue
        except KeyError as exc:
            errors.append(f"catalyst entry missing field {exc.args[0]!r}")
            continue
        cats.append(Catalyst(site=c["site"], beta=float(c["beta"]),
                             alpha=float(c["alpha"]), offspring=law))
    if errors:
        raise ModelError(errors)
    return ModelSpec(space=space, catalysts=tuple(cats), start=doc["start"])


def spec_to_dict(spec: ModelSpec) -> dict:
    sp = spec.space
    if sp.kind == "finite":
        space = {"kind": "finite", "states": list(sp.states), "rates": [list(r) for r in sp.rates]}
    else:
        space = {"kind": sp.kind, "up_rate": sp.up_rate, "down_rate": sp.down_rate,
                 "window_radius": sp.window_radius}
    return {
        "space": space,
        "catalysts": [
            {"site": c.site, "beta": c.beta, "alpha": c.alpha,
             "offspring": {str(k): p for k, p in c.offspring.pmf().items()}}
            for c in spec.catalysts
        ],
        "start": spec.start,
    }


def load_model(path) -> ValidatedModel:
    """Read and validate a JSON model file.

    Malformed JSON raises :class:`ModelError` with line/column information.
    """
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError([f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"])
    return validate(spec_from_dict(doc))
