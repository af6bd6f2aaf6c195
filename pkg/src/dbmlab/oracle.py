"""Exact ground truth by brute force: the law of A_n for small n, and capacity-increment ratios.

The chain is rooted at the origin, so shapes are never translated; the
lattice point group (8 elements in 2D, 48 in 3D) fixes the origin and is
used only to group shapes into symmetry classes for reporting.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from .growth import cached_exact_profile, transition_weights
from .lattice import Cluster, ContractViolation, boundary_of, check_dimension, neighbors
from .potential import harmonic_measure_exact, set_capacity

DEPTH_GUARD = {2: 5, 3: 4}
SITES_GUARD = 8


class GuardError(ContractViolation):
    """Request beyond the exhaustive-enumeration guard."""


def point_group(d: int) -> list:
    """All signed permutation matrices of Z^d, as (perm, signs) pairs."""
    out = []
    for perm in itertools.permutations(range(d)):
        for signs in itertools.product((1, -1), repeat=d):
            out.append((perm, signs))
    return out


def _apply(g, s):
    perm, signs = g
    return tuple(signs[i] * s[perm[i]] for i in range(len(s)))


def canonical_class(sites, group=None) -> tuple:
    """Smallest sorted image of ``sites`` under the point group (origin fixed)."""
    sites = list(sites)
    d = len(sites[0])
    group = point_group(d) if group is None else group
    return min(tuple(sorted(_apply(g, s) for s in sites)) for g in group)


@dataclass
class ShapeDistribution:
    dimension: int
    eta: float
    depth: int
    entries: dict  # frozenset of sites -> probability
    classes: dict = field(default_factory=dict)  # canonical form -> list of shapes

    def __post_init__(self):
        if not self.classes:
            group = point_group(self.dimension)
            for shape in self.entries:
                self.classes.setdefault(canonical_class(shape, group), []).append(shape)

    def total(self) -> float:
        return math.fsum(self.entries.values())

    def class_probabilities(self) -> dict:
        return {k: math.fsum(self.entries[s] for s in v) for k, v in self.classes.items()}

    def symmetry_deviation(self) -> float:
        """Largest spread of member probabilities within a symmetry class."""
        dev = 0.0
        for members in self.classes.values():
            p = [self.entries[s] for s in members]
            dev = max(dev, max(p) - min(p))
        return dev

    def tv_distance(self, counts: dict) -> float:
        """Total variation between this law and empirical counts keyed by shape."""
        n = sum(counts.values())
        keys = set(self.entries) | set(counts)
        return 0.5 * math.fsum(abs(self.entries.get(k, 0.0) - counts.get(k, 0) / n) for k in keys)


def _tree_size(d: int, depth: int) -> int:
    # upper bound on leaves: product of boundary-size bounds along a path
    out = 1
    for k in range(depth):
        out *= 2 * d + (2 * d - 2) * k
    return out


def enumerate_dbm(dimension: int, eta: float, depth: int, strict_eden: bool = False) -> ShapeDistribution:
    """Exact law of A_depth for DBM-eta from {0}, with exact harmonic measure at every node.

    Expansion is level by level; states reached by different attachment
    orders are merged (the chain lives on site sets), and profiles are
    memoised by site set.
    """
    d = check_dimension(dimension)
    if depth < 0:
        raise ContractViolation("depth must be >= 0")
    if depth > DEPTH_GUARD[d]:
        raise GuardError(
            f"depth {depth} exceeds the guard {DEPTH_GUARD[d]} in {d}D "
            f"(tree has up to ~{_tree_size(d, depth):,} leaves)")
    level = {frozenset([(0,) * d]): 1.0}
    for _ in range(depth):
        nxt: dict = {}
        for key, p in level.items():
            c = Cluster.from_sites(key)
            prof = cached_exact_profile(c)
            w = transition_weights(prof, eta, strict_eden)
            tot = w.sum()
            for s, wi in zip(prof.sites, w):
                if wi > 0:
                    k2 = key | {s}
                    nxt[k2] = nxt.get(k2, 0.0) + p * wi / tot
        level = nxt
    return ShapeDistribution(d, eta, depth, level)


# --------------------------------------------------------------------------
# exhaustive polyomino / polycube sweep
# --------------------------------------------------------------------------


def _normalise(sites) -> frozenset:
    """Translate so the lexicographically smallest site is the origin."""
    m = min(sites)
    return frozenset(tuple(a - b for a, b in zip(s, m)) for s in sites)


def fixed_animals(d: int, max_sites: int) -> list:
    """All edge-connected site sets with <= max_sites sites, up to translation.

    Each is translated so that its smallest site (lexicographic) is the origin.
    Counts for 2D are 1, 2, 6, 19, 63, 216, ... and for 3D 1, 3, 15, 86, 534, ...
    """
    check_dimension(d)
    level = {frozenset([(0,) * d])}
    out = list(level)
    for _ in range(max_sites - 1):
        nxt = set()
        for shape in level:
            for y in boundary_of(shape):
                nxt.add(_normalise(shape | {y}))
        level = nxt
        out.extend(sorted(level, key=lambda s: sorted(s)))
    return out


@dataclass
class LemmaTable:
    dimension: int
    max_sites: int
    c: float
    C: float
    instances: int
    zero_measure_sites: int
    by_size: dict
    rows: list = field(default_factory=list)  # (size, shape index, boundary site, omega, lemma_value, ratio)


def lemma_sweep(dimension: int, max_sites: int, keep_rows: bool = False) -> LemmaTable:
    """Ratio (capacity increment in lemma form) / w(x)^2 over every shape and boundary site.

    2D: Cap(closure of A + x) - Cap(closure of A).  3D: 1/Cap(closure of A) - 1/Cap(closure of A + x).
    Sites with w = 0 are counted and skipped.  Capacities are memoised by
    translation class of the closure.
    """
    d = check_dimension(dimension)
    if max_sites > SITES_GUARD or max_sites < 1:
        raise GuardError(f"max_sites must be within 1..{SITES_GUARD}")
    caps: dict = {}

    def cap_of(closure):
        k = _normalise(closure)
        v = caps.get(k)
        if v is None:
            v = set_capacity(sorted(k))
            caps[k] = v
        return v

    lo, hi, inst, zeros = math.inf, -math.inf, 0, 0
    by_size: dict = {}
    rows = []
    for idx, shape in enumerate(fixed_animals(d, max_sites)):
        c = Cluster.from_sites(shape)
        prof = harmonic_measure_exact(c)
        ca = cap_of(c.closure)
        base = c.closure
        for x, w in zip(prof.sites, prof.weights):
            if w <= 0:
                zeros += 1
                continue
            cb = cap_of(base | set(neighbors(x)))
            val = (cb - ca) if d == 2 else (1.0 / ca - 1.0 / cb)
            r = val / (w * w)
            lo, hi, inst = min(lo, r), max(hi, r), inst + 1
            k = len(shape)
            a, b = by_size.get(k, (math.inf, -math.inf))
            by_size[k] = (min(a, r), max(b, r))
            if keep_rows:
                rows.append((k, idx, x, float(w), float(val), float(r)))
    return LemmaTable(d, max_sites, float(lo), float(hi), inst, zeros, by_size, rows)


def sealed_ring(size: int = 3, dimension: int = 2) -> tuple:
    """A square ring of side ``size`` through the origin; returns (cluster, sealed interior sites)."""
    if dimension != 2 or size < 3:
        raise ContractViolation("sealed_ring builds 2D rings of side >= 3")
    ring = {(i, j) for i in range(size) for j in range(size) if i in (0, size - 1) or j in (0, size - 1)}
    inner = {(i, j) for i in range(1, size - 1) for j in range(1, size - 1)}
    c = Cluster.from_sites(ring)
    return c, inner & c.boundary


def cost_estimate(dimension: int, depth: int) -> int:
    return _tree_size(check_dimension(dimension), depth)

