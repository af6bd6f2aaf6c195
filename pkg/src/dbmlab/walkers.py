"""Monte Carlo harmonic measure: random walks launched from far away.

A walker starts on a launch circle/sphere of radius ``r_launch`` (uniform
angle, rounded to the lattice) and walks until it steps onto a boundary site
of the cluster.  Far-field acceleration:

* near the cluster the walker jumps to the exit site of the largest lattice
  ball (from a precomputed exact exit distribution) that stays clear of the
  closure, using a capped distance map for the clearance;
* far away (clearance beyond the largest tabulated ball) it jumps to a
  uniform point of a continuum circle/sphere of radius clearance - 2;
* beyond ``r_kill`` a 2D walker is re-injected on the launch circle with the
  exterior Poisson kernel (a wrapped Cauchy law); a 3D walker returns to the
  launch sphere with probability r_launch/rho (placed by the Kelvin-transformed
  interior Poisson kernel) and is otherwise discarded and relaunched.

Every random number is drawn from the counter-based stream keyed by
``(seed, step, walker)``, so results do not depend on scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit, prange

from . import rng
from .lattice import Cluster, ContractViolation
from .potential import HarmonicProfile, _ball_domain, _domain_operator, _sparse_solve

EMPTY, BOUNDARY, SITE = 0, 1, 2
DIST_CAP = {2: 32, 3: 10}
# small clusters are launched from at least this far out (lattice anisotropy
# of the launch shell is then below the Monte Carlo noise of the tests)
MIN_LAUNCH = {2: 32.0, 3: 16.0}
BALL_RADII = {
    2: (1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 12, 14, 16, 20, 24, 28, 32, 40, 48, 56, 64),
    3: (1, 2, 3, 4, 5, 6, 7, 8, 10, 12, 14, 16, 20, 24),
}


@dataclass(frozen=True)
class WalkerConfig:
    """Launch/kill geometry and RNG seed for the walkers.

    Radii are ``launch_factor * (R + 2)`` and ``kill_factor * (R + 2)``, with a
    floor ``min_launch_radius`` on the launch radius (the kill radius keeps
    its ratio to the launch radius).
    """

    launch_factor: float = 1.5
    kill_factor: float = 6.0
    max_steps: int = 10**9
    rng_seed: int = 0
    min_launch_radius: float | None = None

    def __post_init__(self):
        if self.launch_factor < 1.5:
            raise ContractViolation("launch_factor must be >= 1.5")
        if self.kill_factor < 4 * self.launch_factor:
            raise ContractViolation("kill_factor must be >= 4 * launch_factor")
        if self.max_steps < 1:
            raise ContractViolation("max_steps must be positive")

    def radii(self, R: float, d: int = 2) -> tuple:
        floor = MIN_LAUNCH[d] if self.min_launch_radius is None else self.min_launch_radius
        r_launch = max(self.launch_factor * (R + 2), floor)
        r_kill = max(self.kill_factor * (R + 2), r_launch * self.kill_factor / self.launch_factor)
        return r_launch, r_kill


# --------------------------------------------------------------------------
# ball exit tables
# --------------------------------------------------------------------------


@lru_cache(maxsize=None)
def ball_exit_distribution(r: int, d: int):
    """Exit sites of {|y| < r} for SRW from the centre, with exact probabilities."""
    index, coords, half = _ball_domain(float(r), d, set())
    mat = _domain_operator(index, coords, half, d)
    rhs = np.zeros(len(coords))
    rhs[index[(half,) * d]] = 1.0
    g = _sparse_solve(mat, rhs, "ball exit", d)
    probs: dict = {}
    for sign in (1, -1):
        for k in range(d):
            q = coords.copy()
            q[:, k] += sign
            out = (q.astype(np.int64) ** 2).sum(axis=1) >= r * r
            for p, w in zip(map(tuple, q[out].tolist()), g[out]):
                probs[p] = probs.get(p, 0.0) + w / (2 * d)
    sites = sorted(probs)
    p = np.array([probs[s] for s in sites])
    if abs(p.sum() - 1.0) > 1e-9:
        raise RuntimeError(f"ball exit distribution for r={r} sums to {p.sum()}")
    return np.array(sites, dtype=np.int64), p / p.sum()


@lru_cache(maxsize=None)
def exit_tables(d: int):
    radii = BALL_RADII[d]
    offs, cdfs, starts = [], [], [0]
    for r in radii:
        s, p = ball_exit_distribution(r, d)
        offs.append(s)
        c = np.cumsum(p)
        c[-1] = 1.0
        cdfs.append(c)
        starts.append(starts[-1] + len(p))
    tmax = radii[-1]
    pick = np.zeros(tmax + 1, dtype=np.int64)
    j = 0
    for k in range(1, tmax + 1):
        while j + 1 < len(radii) and radii[j + 1] <= k:
            j += 1
        pick[k] = j
    pick[0] = 0
    return (
        np.ascontiguousarray(np.concatenate(offs)),
        np.concatenate(cdfs),
        np.array(starts, dtype=np.int64),
        pick,
        int(tmax),
    )


# --------------------------------------------------------------------------
# dense field: site codes and capped distance to the cluster
# --------------------------------------------------------------------------


@njit(cache=True)
def _stamp2d(dist, cx, cy, cap):
    n0, n1 = dist.shape
    for dx in range(-cap, cap + 1):
        x = cx + dx
        if x < 0 or x >= n0:
            continue
        for dy in range(-cap, cap + 1):
            y = cy + dy
            if y < 0 or y >= n1:
                continue
            r = math.sqrt(dx * dx + dy * dy)
            if r < cap:
                v = np.uint8(int(r))
                if v < dist[x, y]:
                    dist[x, y] = v


@njit(cache=True)
def _stamp3d(dist, cx, cy, cz, cap):
    n0, n1, n2 = dist.shape
    for dx in range(-cap, cap + 1):
        x = cx + dx
        if x < 0 or x >= n0:
            continue
        for dy in range(-cap, cap + 1):
            y = cy + dy
            if y < 0 or y >= n1:
                continue
            for dz in range(-cap, cap + 1):
                z = cz + dz
                if z < 0 or z >= n2:
                    continue
                r = math.sqrt(dx * dx + dy * dy + dz * dz)
                if r < cap:
                    v = np.uint8(int(r))
                    if v < dist[x, y, z]:
                        dist[x, y, z] = v


class Field:
    """Dense lookup arrays for one cluster: codes (empty/boundary/site) and distances.

    ``dist`` holds floor(min(cap, distance to the nearest cluster site)).
    The box half-width grows geometrically as the cluster grows; old
    contents are embedded, never recomputed.
    """

    def __init__(self, cluster: Cluster, cap: int | None = None):
        self.dimension = d = cluster.dimension
        self.cap = DIST_CAP[d] if cap is None else cap
        self.R = cluster.radius
        self.half = 0
        self.grid = np.zeros((1,) * d, dtype=np.int8)
        self.dist = np.full((1,) * d, self.cap, dtype=np.uint8)
        self._ensure(self.R)
        for b in cluster.boundary:
            self.grid[self._idx(b)] = BOUNDARY
        for s in cluster.sites:
            self._mark_site(s)

    def _idx(self, s):
        h = self.half
        return tuple(c + h for c in s)

    def _need(self, R):
        return int(math.ceil(R)) + self.cap + 4

    def _ensure(self, R):
        need = self._need(R)
        if need <= self.half:
            return
        new_half = max(need, int(self.half * 1.4) + 1, 24)
        d = self.dimension
        n = 2 * new_half + 1
        grid = np.zeros((n,) * d, dtype=np.int8)
        dist = np.full((n,) * d, self.cap, dtype=np.uint8)
        if self.half > 0:
            o = new_half - self.half
            sl = tuple(slice(o, o + 2 * self.half + 1) for _ in range(d))
            grid[sl] = self.grid
            dist[sl] = self.dist
        self.grid, self.dist, self.half = grid, dist, new_half

    def _mark_site(self, s):
        idx = self._idx(s)
        self.grid[idx] = SITE
        if self.dimension == 2:
            _stamp2d(self.dist, idx[0], idx[1], self.cap)
        else:
            _stamp3d(self.dist, idx[0], idx[1], idx[2], self.cap)

    def attach(self, y, new_boundary, radius):
        self.R = radius
        self._ensure(radius)
        for b in new_boundary:
            self.grid[self._idx(b)] = BOUNDARY
        self._mark_site(y)

    def boundary_code(self, s) -> int:
        return int(self.grid[self._idx(s)])


# --------------------------------------------------------------------------
# walker kernels
# --------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _round(v):
    return int(math.floor(v + 0.5))


@njit(cache=True, inline="always")
def _table_jump(ex, ecdf, estart, ti, u):
    lo = estart[ti]
    hi = estart[ti + 1]
    j = lo + np.searchsorted(ecdf[lo:hi], u, side="right")
    if j >= hi:
        j = hi - 1
    return j


@njit(cache=True)
def _walk2d(grid, dist, half, R, r_launch, r_kill, ex, ecdf, estart, pick, tmax, key, max_steps, out):
    """One walker; writes (x, y) to out[:2]; returns (launches, steps, abandoned)."""
    n0 = grid.shape[0]
    ctr = np.uint64(0)
    one = np.uint64(1)
    launches = 1
    abandoned = 0
    total_steps = 0
    th = 2.0 * math.pi * rng.uniform(key, ctr)
    ctr += one
    x = _round(r_launch * math.cos(th))
    y = _round(r_launch * math.sin(th))
    steps = 0
    while True:
        if steps >= max_steps:
            abandoned += 1
            total_steps += steps
            steps = 0
            th = 2.0 * math.pi * rng.uniform(key, ctr)
            ctr += one
            x = _round(r_launch * math.cos(th))
            y = _round(r_launch * math.sin(th))
        steps += 1
        rho = math.sqrt(x * x + y * y)
        if rho > r_kill:
            q = r_launch / rho
            phi = math.atan2(y, x)
            u = rng.uniform(key, ctr)
            ctr += one
            th = phi + 2.0 * math.atan((1.0 - q) / (1.0 + q) * math.tan(math.pi * (u - 0.5)))
            x = _round(r_launch * math.cos(th))
            y = _round(r_launch * math.sin(th))
            continue
        clear = rho - R
        ix = x + half
        iy = y + half
        if ix >= 0 and ix < n0 and iy >= 0 and iy < n0:
            g = grid[ix, iy]
            if g == 1:
                out[0] = x
                out[1] = y
                return launches, total_steps + steps, abandoned
            dm = float(dist[ix, iy])
            if dm > clear:
                clear = dm
        if clear - 2.0 > tmax:
            r = clear - 2.0
            th = 2.0 * math.pi * rng.uniform(key, ctr)
            ctr += one
            x = _round(x + r * math.cos(th))
            y = _round(y + r * math.sin(th))
        else:
            k = int(clear - 1.0)
            if k < 1:
                k = 1
            elif k > tmax:
                k = tmax
            ti = pick[k]
            j = _table_jump(ex, ecdf, estart, ti, rng.uniform(key, ctr))
            ctr += one
            x += ex[j, 0]
            y += ex[j, 1]


@njit(cache=True, inline="always")
def _sphere_point(u1, u2):
    z = 2.0 * u1 - 1.0
    s = math.sqrt(max(0.0, 1.0 - z * z))
    ph = 2.0 * math.pi * u2
    return s * math.cos(ph), s * math.sin(ph), z


@njit(cache=True)
def _walk3d(grid, dist, half, R, r_launch, r_kill, ex, ecdf, estart, pick, tmax, key, max_steps, out):
    n0 = grid.shape[0]
    ctr = np.uint64(0)
    one = np.uint64(1)
    launches = 1
    abandoned = 0
    total_steps = 0
    a, b, c = _sphere_point(rng.uniform(key, ctr), rng.uniform(key, ctr + one))
    ctr += np.uint64(2)
    x = _round(r_launch * a)
    y = _round(r_launch * b)
    z = _round(r_launch * c)
    steps = 0
    while True:
        if steps >= max_steps:
            abandoned += 1
            total_steps += steps
            steps = 0
            a, b, c = _sphere_point(rng.uniform(key, ctr), rng.uniform(key, ctr + one))
            ctr += np.uint64(2)
            x = _round(r_launch * a)
            y = _round(r_launch * b)
            z = _round(r_launch * c)
        steps += 1
        rho = math.sqrt(x * x + y * y + z * z)
        if rho > r_kill:
            u = rng.uniform(key, ctr)
            ctr += one
            if u < r_launch / rho:
                # exterior harmonic measure of the sphere = interior one from the Kelvin image
                px, py, pz = x / rho, y / rho, z / rho
                s = r_launch * r_launch / rho
                rr = r_launch
                w = 1.0 / (rr + s) + rng.uniform(key, ctr) * (1.0 / (rr - s) - 1.0 / (rr + s))
                ctr += one
                t = (rr * rr + s * s - 1.0 / (w * w)) / (2.0 * rr * s)
                if t > 1.0:
                    t = 1.0
                if t < -1.0:
                    t = -1.0
                if abs(px) < 0.6:
                    e1x, e1y, e1z = 0.0, -pz, py
                else:
                    e1x, e1y, e1z = pz, 0.0, -px
                nrm = math.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
                e1x /= nrm
                e1y /= nrm
                e1z /= nrm
                e2x = py * e1z - pz * e1y
                e2y = pz * e1x - px * e1z
                e2z = px * e1y - py * e1x
                ph = 2.0 * math.pi * rng.uniform(key, ctr)
                ctr += one
                st = math.sqrt(max(0.0, 1.0 - t * t))
                cp = math.cos(ph)
                sp_ = math.sin(ph)
                dx = t * px + st * (cp * e1x + sp_ * e2x)
                dy = t * py + st * (cp * e1y + sp_ * e2y)
                dz = t * pz + st * (cp * e1z + sp_ * e2z)
                x = _round(rr * dx)
                y = _round(rr * dy)
                z = _round(rr * dz)
            else:
                launches += 1
                a, b, c = _sphere_point(rng.uniform(key, ctr), rng.uniform(key, ctr + one))
                ctr += np.uint64(2)
                x = _round(r_launch * a)
                y = _round(r_launch * b)
                z = _round(r_launch * c)
            continue
        clear = rho - R
        ix = x + half
        iy = y + half
        iz = z + half
        if ix >= 0 and ix < n0 and iy >= 0 and iy < n0 and iz >= 0 and iz < n0:
            g = grid[ix, iy, iz]
            if g == 1:
                out[0] = x
                out[1] = y
                out[2] = z
                return launches, total_steps + steps, abandoned
            dm = float(dist[ix, iy, iz])
            if dm > clear:
                clear = dm
        if clear - 2.0 > tmax:
            r = clear - 2.0
            a, b, c = _sphere_point(rng.uniform(key, ctr), rng.uniform(key, ctr + one))
            ctr += np.uint64(2)
            x = _round(x + r * a)
            y = _round(y + r * b)
            z = _round(z + r * c)
        else:
            k = int(clear - 1.0)
            if k < 1:
                k = 1
            elif k > tmax:
                k = tmax
            ti = pick[k]
            j = _table_jump(ex, ecdf, estart, ti, rng.uniform(key, ctr))
            ctr += one
            x += ex[j, 0]
            y += ex[j, 1]
            z += ex[j, 2]


@njit(cache=True, parallel=True)
def _walk_many2d(grid, dist, half, R, r_launch, r_kill, ex, ecdf, estart, pick, tmax,
                 seed, step, first, n, max_steps, hits, launches, steps, abandoned):
    for i in prange(n):
        key = rng.stream_key(seed, step, np.uint64(first + i))
        l, s, a = _walk2d(grid, dist, half, R, r_launch, r_kill, ex, ecdf, estart, pick, tmax,
                          key, max_steps, hits[i])
        launches[i] = l
        steps[i] = s
        abandoned[i] = a


@njit(cache=True, parallel=True)
def _walk_many3d(grid, dist, half, R, r_launch, r_kill, ex, ecdf, estart, pick, tmax,
                 seed, step, first, n, max_steps, hits, launches, steps, abandoned):
    for i in prange(n):
        key = rng.stream_key(seed, step, np.uint64(first + i))
        l, s, a = _walk3d(grid, dist, half, R, r_launch, r_kill, ex, ecdf, estart, pick, tmax,
                          key, max_steps, hits[i])
        launches[i] = l
        steps[i] = s
        abandoned[i] = a


@dataclass
class WalkBatch:
    hits: np.ndarray       # (n, d) first-hit sites
    launches: np.ndarray   # launches used per walker (3D discards + 1)
    steps: np.ndarray
    abandoned: np.ndarray
    r_launch: float
    r_kill: float


def walk(field: Field, cfg: WalkerConfig, n: int, step: int = 0, first: int = 0) -> WalkBatch:
    """Run walkers ``first .. first+n-1`` of stream ``(cfg.rng_seed, step)`` against ``field``."""
    d = field.dimension
    ex, ecdf, estart, pick, tmax = exit_tables(d)
    r_launch, r_kill = cfg.radii(field.R, d)
    hits = np.zeros((n, d), dtype=np.int64)
    launches = np.zeros(n, dtype=np.int64)
    steps = np.zeros(n, dtype=np.int64)
    abandoned = np.zeros(n, dtype=np.int64)
    fn = _walk_many2d if d == 2 else _walk_many3d
    fn(field.grid, field.dist, field.half, float(field.R), float(r_launch), float(r_kill),
               ex, ecdf, estart, pick, tmax, np.uint64(cfg.rng_seed % 2**64), np.uint64(step),
               np.uint64(first), n, cfg.max_steps, hits, launches, steps, abandoned)
    return WalkBatch(hits, launches, steps, abandoned, r_launch, r_kill)


def walk_one(field: Field, cfg: WalkerConfig, step: int = 0, walker: int = 0):
    """Single walker without the batch machinery (used by the DLA fast path)."""
    d = field.dimension
    ex, ecdf, estart, pick, tmax = exit_tables(d)
    r_launch, r_kill = cfg.radii(field.R, d)
    out = np.zeros(d, dtype=np.int64)
    key = np.uint64(rng.stream_key(np.uint64(cfg.rng_seed % 2**64), np.uint64(step), np.uint64(walker)))
    fn = _walk2d if d == 2 else _walk3d
    launches, steps, abandoned = fn(field.grid, field.dist, field.half, float(field.R), float(r_launch),
                                    float(r_kill), ex, ecdf, estart, pick, tmax, key, cfg.max_steps, out)
    return tuple(int(v) for v in out), launches, steps, abandoned


def sample_hit(cluster: Cluster, cfg: WalkerConfig, walker_index: int, step: int = 0,
               field: Field | None = None):
    """First boundary site hit by walker ``walker_index``; approximately w(., closure)."""
    if field is None:
        field = Field(cluster)
    return walk_one(field, cfg, step, walker_index)[0]


def counts_to_profile(cluster: Cluster, hits: np.ndarray, n: int, sites=None) -> HarmonicProfile:
    sites = cluster.sorted_boundary() if sites is None else sites
    index = {s: i for i, s in enumerate(sites)}
    counts = np.zeros(len(sites))
    uniq, cnt = np.unique(hits, axis=0, return_counts=True)
    for u, c in zip(map(tuple, uniq.tolist()), cnt):
        counts[index[u]] += c
    return HarmonicProfile(sites=sites, weights=counts / n, source="monte_carlo", samples=n,
                           cluster_key=None)


def estimate_profile(cluster: Cluster, n_samples: int, cfg: WalkerConfig, step: int = 0,
                     field: Field | None = None, first: int = 0) -> HarmonicProfile:
    """Normalised hit counts of ``n_samples`` walkers over the boundary.

    In 3D the profile also carries a capacity estimate from the fraction of
    launches that hit: P(hit | uniform start on radius r) ~ 3 Cap / (2 pi r).
    """
    if n_samples < 1:
        raise ContractViolation("n_samples must be >= 1")
    if field is None:
        field = Field(cluster)
    batch = walk(field, cfg, n_samples, step, first)
    prof = counts_to_profile(cluster, batch.hits, n_samples)
    if cluster.dimension == 3:
        prof.capacity = 2.0 * math.pi * batch.r_launch / 3.0 * n_samples / float(batch.launches.sum())
    prof.diagnostics = {
        "abandoned": int(batch.abandoned.sum()),
        "mean_steps": float(batch.steps.mean()),
        "r_launch": batch.r_launch,
        "r_kill": batch.r_kill,
    }
    return prof
