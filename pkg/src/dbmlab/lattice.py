"""Lattice geometry and cluster bookkeeping on Z^2 and Z^3."""

from __future__ import annotations

import math
from collections import deque
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

Site = tuple  # tuple of d ints


class ContractViolation(ValueError):
    """Raised when an operation's precondition does not hold."""


class DimensionError(ValueError):
    pass


def _unit_vectors(d: int) -> tuple:
    out = []
    for i in range(d):
        for s in (1, -1):
            e = [0] * d
            e[i] = s
            out.append(tuple(e))
    return tuple(out)


UNIT = {2: _unit_vectors(2), 3: _unit_vectors(3)}


def check_dimension(d: int) -> int:
    if d not in (2, 3):
        raise DimensionError(f"dimension must be 2 or 3, got {d}")
    return d


def neighbors(s: Site) -> tuple:
    """The 2d axis neighbours of ``s``, in a fixed order (+e1, -e1, +e2, ...)."""
    d = check_dimension(len(s))
    if d == 2:
        x, y = s
        return ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1))
    x, y, z = s
    return ((x + 1, y, z), (x - 1, y, z), (x, y + 1, z), (x, y - 1, z), (x, y, z + 1), (x, y, z - 1))


def norm(s: Site) -> float:
    return math.sqrt(sum(c * c for c in s))


def boundary_of(sites: Iterable[Site]) -> set:
    """Outer vertex boundary {y not in A : y ~ x for some x in A}."""
    sites = set(sites)
    out = set()
    for s in sites:
        for y in neighbors(s):
            if y not in sites:
                out.add(y)
    return out


def closure_of(sites: Iterable[Site]) -> set:
    sites = set(sites)
    return sites | boundary_of(sites)


def is_connected(sites: Iterable[Site]) -> bool:
    sites = set(sites)
    if not sites:
        return True
    start = next(iter(sites))
    seen = {start}
    todo = [start]
    while todo:
        s = todo.pop()
        for y in neighbors(s):
            if y in sites and y not in seen:
                seen.add(y)
                todo.append(y)
    return len(seen) == len(sites)


def radius_of(sites: Iterable[Site]) -> float:
    return math.sqrt(max(sum(c * c for c in s) for s in sites))


class Cluster:
    """An origin-rooted, edge-connected site set with its outer boundary.

    The boundary is maintained incrementally by :meth:`attach`; the closure is
    ``sites | boundary``.  Mutation is in place and ``attach`` returns the
    cluster itself so calls can be chained.
    """

    __slots__ = ("dimension", "origin", "sites", "boundary", "attach_order", "_r2")

    def __init__(self, dimension: int = 2):
        d = check_dimension(dimension)
        self.dimension = d
        self.origin = (0,) * d
        self.sites = {self.origin}
        self.boundary = set(neighbors(self.origin))
        self.attach_order: list = []
        self._r2 = 0

    @classmethod
    def from_sites(cls, sites: Iterable[Site]) -> "Cluster":
        """Build a cluster directly from a site set (must hold the origin and be connected)."""
        sites = set(map(tuple, sites))
        if not sites:
            raise ContractViolation("empty site set")
        d = check_dimension(len(next(iter(sites))))
        if any(len(s) != d for s in sites):
            raise DimensionError("mixed dimensions in site set")
        origin = (0,) * d
        if origin not in sites:
            raise ContractViolation("cluster must contain the origin")
        if not is_connected(sites):
            raise ContractViolation("cluster must be edge-connected")
        c = cls(d)
        c.sites = sites
        c.boundary = boundary_of(sites)
        c._r2 = max(sum(v * v for v in s) for s in sites)
        # a BFS order from the origin replays to the same set
        order = []
        seen = {origin}
        q = deque([origin])
        while q:
            s = q.popleft()
            for y in neighbors(s):
                if y in sites and y not in seen:
                    seen.add(y)
                    order.append(y)
                    q.append(y)
        c.attach_order = order
        return c

    @classmethod
    def replay(cls, dimension: int, order: Sequence[Site]) -> "Cluster":
        c = cls(dimension)
        for s in order:
            c.attach(tuple(s))
        return c

    def attach(self, y: Site) -> "Cluster":
        y = tuple(y)
        if len(y) != self.dimension:
            raise DimensionError(f"site {y} does not live in Z^{self.dimension}")
        if y not in self.boundary:
            raise ContractViolation(f"site {y} is not on the cluster boundary")
        self.boundary.discard(y)
        self.sites.add(y)
        for z in neighbors(y):
            if z not in self.sites:
                self.boundary.add(z)
        self.attach_order.append(y)
        r2 = sum(v * v for v in y)
        if r2 > self._r2:
            self._r2 = r2
        return self

    def new_boundary_if_attached(self, y: Site) -> list:
        """Sites that would join the boundary (i.e. the closure) if ``y`` were attached."""
        return [z for z in neighbors(y) if z not in self.sites and z not in self.boundary]

    @property
    def closure(self) -> set:
        return self.sites | self.boundary

    @property
    def radius(self) -> float:
        return math.sqrt(self._r2)

    @property
    def radius_squared(self) -> int:
        return self._r2

    def __len__(self) -> int:
        return len(self.sites)

    def key(self) -> frozenset:
        return frozenset(self.sites)

    def copy(self) -> "Cluster":
        c = Cluster.__new__(Cluster)
        c.dimension = self.dimension
        c.origin = self.origin
        c.sites = set(self.sites)
        c.boundary = set(self.boundary)
        c.attach_order = list(self.attach_order)
        c._r2 = self._r2
        return c

    def sorted_boundary(self) -> list:
        return sorted(self.boundary)

    def __repr__(self) -> str:
        return f"Cluster(d={self.dimension}, |A|={len(self.sites)}, |dA|={len(self.boundary)}, R={self.radius:.3f})"


def radius(c: Cluster) -> float:
    return c.radius


def attach(c: Cluster, y: Site) -> Cluster:
    return c.attach(y)


def accessible_boundary(c_or_sites, boundary: set | None = None) -> set:
    """Boundary sites with positive harmonic measure from infinity.

    ``y`` in dA is hit first by some walk from far away exactly when it has a
    neighbour in the unbounded component of the complement of the closure.
    That component is the connected component (in the padded bounding box)
    of the frame around the closure.
    """
    if isinstance(c_or_sites, Cluster):
        sites, boundary = c_or_sites.sites, c_or_sites.boundary
    else:
        sites = set(c_or_sites)
        if boundary is None:
            boundary = boundary_of(sites)
    closed = np.array(sorted(sites | boundary), dtype=np.int64)
    d = closed.shape[1]
    lo = closed.min(axis=0) - 1
    shape = tuple(closed.max(axis=0) + 2 - lo)
    free = np.ones(shape, dtype=bool)
    free[tuple((closed - lo).T)] = False
    # the padded frame is free and connected, so its label is the unbounded component
    labels, _ = ndimage.label(free)
    outside = labels == labels[(0,) * d]
    out = set()
    for y in boundary:
        for q in neighbors(y):
            if outside[tuple(v - o for v, o in zip(q, lo))]:
                out.add(y)
                break
    return out
