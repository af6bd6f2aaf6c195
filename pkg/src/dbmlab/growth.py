"""The DBM-eta chain: exact-measure, Monte Carlo, DLA single-walker and Eden modes.

Step ``n`` (1-based) attaches ``x_n`` to ``A_{n-1}``.  Chain draws for step
``n`` come from stream ``(seed, n, CHAIN_STREAM)``; walkers of step ``n``
use streams ``(seed, n, i)``.  A checkpoint record at step ``n`` carries
``omega`` of ``x_n`` with respect to the closure of ``A_{n-1}`` and the
capacity/statistics of that same pre-attachment closure.
"""

from __future__ import annotations

import math
from collections import OrderedDict, deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .lattice import Cluster, ContractViolation, accessible_boundary, check_dimension, neighbors
from .potential import DEFAULT_SITE_CAP, HarmonicProfile, capacity, harmonic_measure_exact
from .walkers import Field, WalkerConfig, counts_to_profile, walk, walk_one

MODES = ("exact", "monte_carlo", "dla_fast", "eden")
STAT_ALPHAS = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0)


class ImpossibleState(RuntimeError):
    pass


class GrowthAborted(RuntimeError):
    """Raised by :func:`grow` on a runtime failure; carries the partial trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class GrowthConfig:
    dimension: int = 2
    eta: float = 1.0
    n_particles: int = 100
    measure_mode: str = "dla_fast"
    samples_per_step: int | None = None  # monte_carlo: None -> max(10^4, 20 |dA|)
    capacity_checkpoint_every: int = 0  # 0: log schedule only
    checkpoint_samples: int = 10_000
    omega_every: int = 0  # dla_fast: also estimate omega every k-th step (0: checkpoints only)
    omega_samples: int = 1_000
    seed: int = 0
    strict_eden: bool = False
    site_cap: int = DEFAULT_SITE_CAP
    walker: WalkerConfig = field(default_factory=WalkerConfig)

    def __post_init__(self):
        check_dimension(self.dimension)
        if self.eta < 0:
            raise ContractViolation("eta must be >= 0")
        if self.n_particles < 0:
            raise ContractViolation("n_particles must be >= 0")
        if self.measure_mode not in MODES:
            raise ContractViolation(f"measure_mode must be one of {MODES}")
        if self.measure_mode == "dla_fast" and self.eta != 1:
            raise ContractViolation("dla_fast requires eta = 1")
        if self.measure_mode == "eden" and self.eta != 0:
            raise ContractViolation("eden mode requires eta = 0")
        if self.measure_mode == "exact":
            worst = (2 * self.dimension + 1) * (self.n_particles + 1)
            if worst > self.site_cap:
                raise ContractViolation(
                    f"exact mode: closure may reach {worst} sites, above site_cap {self.site_cap}")
        if self.capacity_checkpoint_every < 0 or self.checkpoint_samples < 1 or self.omega_every < 0 \
                or self.omega_samples < 1:
            raise ContractViolation("checkpoint settings must be positive")
        if self.samples_per_step is not None and self.samples_per_step < 1:
            raise ContractViolation("samples_per_step must be >= 1")


@dataclass
class StepRecord:
    n: int
    site: tuple
    omega: float | None
    radius: float
    capacity: float | None = None
    stats: dict | None = None


@dataclass
class GrowthTrace:
    config: GrowthConfig
    steps: list
    final_cluster: Cluster
    diagnostics: dict = field(default_factory=dict)
    complete: bool = True

    def radii(self) -> np.ndarray:
        return np.array([s.radius for s in self.steps])

    def checkpoints(self) -> list:
        return [s for s in self.steps if s.stats is not None]


def checkpoint_schedule(n_particles: int, every: int = 0, per_decade: int = 10) -> set:
    """Steps that get a capacity checkpoint: a log grid, every ``every``-th step, and the last."""
    out = set()
    if n_particles <= 0:
        return out
    k = 0
    while True:
        v = int(round(10 ** (k / per_decade)))
        if v > n_particles:
            break
        out.add(v)
        k += 1
    if every > 0:
        out.update(range(every, n_particles + 1, every))
    out.add(n_particles)
    return out


# --------------------------------------------------------------------------
# single step of the chain
# --------------------------------------------------------------------------


def transition_weights(profile: HarmonicProfile, eta: float, strict_eden: bool = False) -> np.ndarray:
    """Unnormalised attachment weights w^eta over ``profile.sites``.

    w = 0 gives weight 0 for every eta > 0.  For eta = 0 the weight is 1 on
    walk-accessible sites (w > 0, or ``profile.accessible`` when known) and
    0 elsewhere; ``strict_eden`` puts weight 1 on every boundary site.
    """
    w = profile.weights
    if eta == 0:
        if strict_eden:
            return np.ones(len(w))
        if profile.accessible is not None:
            return np.array([1.0 if s in profile.accessible else 0.0 for s in profile.sites])
        return (w > 0).astype(float)
    out = np.zeros(len(w))
    pos = w > 0
    if pos.any():
        lw = np.log(w[pos])
        out[pos] = np.exp(eta * (lw - lw.max()))
    return out


def dbm_step(cluster: Cluster, eta: float, profile: HarmonicProfile, rng_state: rng.Stream,
             strict_eden: bool = False):
    """Draw the next attachment site with probability w(y)^eta / sum_z w(z)^eta."""
    weights = transition_weights(profile, eta, strict_eden)
    cum = np.cumsum(weights)
    if len(cum) == 0 or cum[-1] <= 0:
        raise ImpossibleState("harmonic profile has no positive entry")
    return profile.sites[rng_state.choice_index(cum)]


def dla_fast_step(cluster: Cluster, cfg: WalkerConfig, rng_state, field_: Field | None = None):
    """One walker hit is one exact DLA step (up to walker bias).

    ``rng_state`` is the step index; the walker is number 0 of that step's stream.
    """
    if field_ is None:
        field_ = Field(cluster)
    return walk_one(field_, cfg, int(rng_state), 0)[0]


# --------------------------------------------------------------------------
# Eden bookkeeping: accessible boundary maintained incrementally
# --------------------------------------------------------------------------


class IndexedSet:
    """Set with O(1) add/remove and uniform indexing (swap-with-last removal)."""

    def __init__(self, items=()):
        self.items = []
        self.pos = {}
        for x in items:
            self.add(x)

    def add(self, x):
        if x not in self.pos:
            self.pos[x] = len(self.items)
            self.items.append(x)

    def discard(self, x):
        i = self.pos.pop(x, None)
        if i is None:
            return
        last = self.items.pop()
        if i < len(self.items):
            self.items[i] = last
            self.pos[last] = i

    def __contains__(self, x):
        return x in self.pos

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]


class EdenTracker:
    """Walk-accessible boundary sites of a growing cluster.

    A boundary site is accessible when it touches the unbounded component of
    the complement of the closure.  After each attachment only the new
    closure sites can split that component; the split is detected by
    breadth-first searches run in lockstep from the free neighbours of the
    new sites, stopping once all surviving searches have merged.
    """

    def __init__(self, cluster: Cluster, strict: bool = False):
        self.cluster = cluster
        self.strict = strict
        self.sealed = set()
        if strict:
            self.live = IndexedSet(sorted(cluster.boundary))
            return
        acc = accessible_boundary(cluster)
        self.live = IndexedSet(sorted(acc))
        if len(acc) < len(cluster.boundary):
            self.sealed = self._pockets_by_flood(cluster)

    @staticmethod
    def _pockets_by_flood(cluster):
        closed = cluster.closure
        d = cluster.dimension
        lo = [min(s[i] for s in closed) - 1 for i in range(d)]
        hi = [max(s[i] for s in closed) + 1 for i in range(d)]
        inside = lambda p: all(lo[i] <= p[i] <= hi[i] for i in range(d))
        outside = {tuple(lo)}
        stack = [tuple(lo)]
        while stack:
            p = stack.pop()
            for q in neighbors(p):
                if q not in outside and q not in closed and inside(q):
                    outside.add(q)
                    stack.append(q)
        pockets = set()
        for s in cluster.boundary:
            for q in neighbors(s):
                if q not in closed and q not in outside:
                    pockets.add(q)
        # grow to full pockets
        stack = list(pockets)
        while stack:
            p = stack.pop()
            for q in neighbors(p):
                if q not in closed and q not in pockets:
                    pockets.add(q)
                    stack.append(q)
        return pockets

    def _free(self, s):
        c = self.cluster
        return s not in c.sites and s not in c.boundary and s not in self.sealed

    def _accessible(self, b):
        return any(self._free(q) for q in neighbors(b))

    def choose(self, u: float):
        return self.live[min(int(u * len(self.live)), len(self.live) - 1)]

    def attach(self, y, new_closure):
        """Update after ``cluster.attach(y)`` added ``new_closure`` to the closure."""
        self.live.discard(y)
        if self.strict:
            for z in new_closure:
                self.live.add(z)
            return
        cands = []
        seen = set()
        for z in new_closure:
            for q in neighbors(z):
                if q not in seen and self._free(q):
                    seen.add(q)
                    cands.append(q)
        pockets = self._split(cands)
        touched = set(new_closure)
        for z in new_closure:
            touched.update(neighbors(z))
        for p in pockets:
            self.sealed.add(p)
        for p in pockets:
            touched.update(neighbors(p))
        boundary = self.cluster.boundary
        for b in sorted(touched):
            if b in boundary:
                if self._accessible(b):
                    self.live.add(b)
                else:
                    self.live.discard(b)

    def _split(self, cands):
        """Sites of the components among ``cands`` that no longer reach infinity."""
        k = len(cands)
        if k < 2:
            return []
        lim = (math.sqrt(self.cluster.radius_squared) + 1.0) ** 2
        INF = k
        parent = list(range(k + 1))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        queues = [deque([c]) for c in cands] + [deque()]
        members = [[c] for c in cands] + [[]]
        owner = {c: i for i, c in enumerate(cands)}
        dead = [False] * (k + 1)

        def union(a, b):
            a, b = find(a), find(b)
            if a == b:
                return a
            if b == INF or (a != INF and len(members[a]) < len(members[b])):
                a, b = b, a
            parent[b] = a
            queues[a].extend(queues[b])
            members[a].extend(members[b])
            queues[b] = deque()
            members[b] = []
            return a

        for i, c in enumerate(cands):
            if sum(v * v for v in c) > lim:
                union(i, INF)
        pockets = []
        while True:
            live = sorted({find(i) for i in range(k)} - {i for i in range(k + 1) if dead[i]})
            if len(live) <= 1:
                break
            for r0 in live:
                r = find(r0)
                if r == INF or dead[r]:
                    continue
                if not queues[r]:
                    dead[r] = True
                    pockets.extend(members[r])
                    continue
                p = queues[r].popleft()
                for q in neighbors(p):
                    if not self._free(q):
                        continue
                    o = owner.get(q)
                    if o is not None:
                        if find(o) != find(r):
                            r = union(r, o)
                        continue
                    owner[q] = r
                    members[find(r)].append(q)
                    if sum(v * v for v in q) > lim:
                        r = union(r, INF)
                    else:
                        queues[find(r)].append(q)
        return pockets


# --------------------------------------------------------------------------
# the growth loop
# --------------------------------------------------------------------------

_PROFILE_CACHE: OrderedDict = OrderedDict()
_PROFILE_CACHE_MAX = 50_000
_CACHE_SITES_MAX = 16


def cached_exact_profile(cluster: Cluster, site_cap: int = DEFAULT_SITE_CAP) -> HarmonicProfile:
    """Exact profile, memoised by site set for small clusters."""
    if len(cluster.sites) > _CACHE_SITES_MAX:
        return harmonic_measure_exact(cluster, site_cap)
    key = cluster.key()
    prof = _PROFILE_CACHE.get(key)
    if prof is None:
        prof = harmonic_measure_exact(cluster, site_cap)
        _PROFILE_CACHE[key] = prof
        if len(_PROFILE_CACHE) > _PROFILE_CACHE_MAX:
            _PROFILE_CACHE.popitem(last=False)
    return prof


def profile_stats(profile: HarmonicProfile, cluster: Cluster, alphas=STAT_ALPHAS) -> dict:
    """Checkpoint statistics of a profile of ``cluster`` (the pre-attachment state)."""
    w = profile.weights[profile.weights > 0]
    sums = {}
    for a in alphas:
        sums[repr(float(a))] = float(len(w)) if a == 0 else float(np.sum(w**a))
    return {
        "R": cluster.radius,
        "size": len(cluster.sites),
        "boundary": len(cluster.boundary),
        "positive": int(len(w)),
        "sums": sums,
        "entropy": float(np.sum(w * np.log(w))),
        "max": float(w.max()) if len(w) else 0.0,
        "samples": profile.samples,
    }


def _mc_samples(cfg: GrowthConfig, cluster: Cluster) -> int:
    if cfg.samples_per_step is not None:
        return cfg.samples_per_step
    return max(10_000, 20 * len(cluster.boundary))


def grow(cfg: GrowthConfig, progress=None) -> GrowthTrace:
    """Run ``cfg.n_particles`` steps of the chain from A_0 = {0}."""
    d = cfg.dimension
    wcfg = replace(cfg.walker, rng_seed=cfg.seed)
    cluster = Cluster(d)
    trace = GrowthTrace(config=cfg, steps=[], final_cluster=cluster,
                        diagnostics={"abandoned_walkers": 0, "walkers": 0})
    schedule = checkpoint_schedule(cfg.n_particles, cfg.capacity_checkpoint_every)
    mode = cfg.measure_mode
    need_field = mode in ("monte_carlo", "dla_fast", "eden")
    fld = Field(cluster) if need_field else None
    eden = EdenTracker(cluster, cfg.strict_eden) if mode == "eden" or (cfg.eta == 0 and mode == "monte_carlo") else None
    try:
        for n in range(1, cfg.n_particles + 1):
            chk = n in schedule
            profile = None
            omega_only = None
            if mode == "exact":
                profile = cached_exact_profile(cluster, cfg.site_cap)
                x = dbm_step(cluster, cfg.eta, profile, rng.Stream(cfg.seed, n), cfg.strict_eden)
            elif mode == "monte_carlo":
                N = _mc_samples(cfg, cluster)
                batch = walk(fld, wcfg, N, step=n)
                trace.diagnostics["walkers"] += N
                trace.diagnostics["abandoned_walkers"] += int(batch.abandoned.sum())
                profile = counts_to_profile(cluster, batch.hits, N)
                profile.capacity = _launch_capacity(batch, N) if d == 3 else None
                if eden is not None:
                    profile.accessible = None if cfg.strict_eden else frozenset(eden.live.pos)
                x = dbm_step(cluster, cfg.eta, profile, rng.Stream(cfg.seed, n), cfg.strict_eden)
            elif mode == "dla_fast":
                if chk:
                    N = cfg.checkpoint_samples
                    batch = walk(fld, wcfg, N, step=n)
                    trace.diagnostics["walkers"] += N
                    trace.diagnostics["abandoned_walkers"] += int(batch.abandoned.sum())
                    profile = counts_to_profile(cluster, batch.hits, N)
                    profile.capacity = _launch_capacity(batch, N) if d == 3 else None
                    x = tuple(int(v) for v in batch.hits[0])
                elif cfg.omega_every and n % cfg.omega_every == 0:
                    N = cfg.omega_samples
                    batch = walk(fld, wcfg, N, step=n)
                    trace.diagnostics["walkers"] += N
                    trace.diagnostics["abandoned_walkers"] += int(batch.abandoned.sum())
                    x = tuple(int(v) for v in batch.hits[0])
                    omega_only = int(np.sum(np.all(batch.hits == batch.hits[0], axis=1))) / N
                else:
                    x, _, _, ab = walk_one(fld, wcfg, n, 0)
                    trace.diagnostics["walkers"] += 1
                    trace.diagnostics["abandoned_walkers"] += ab
            else:  # eden
                if chk:
                    N = cfg.checkpoint_samples
                    batch = walk(fld, wcfg, N, step=n)
                    trace.diagnostics["walkers"] += N
                    trace.diagnostics["abandoned_walkers"] += int(batch.abandoned.sum())
                    profile = counts_to_profile(cluster, batch.hits, N)
                    profile.capacity = _launch_capacity(batch, N) if d == 3 else None
                x = eden.choose(rng.Stream(cfg.seed, n).random())

            omega = cap = stats = None
            if omega_only is not None:
                omega = omega_only
            if profile is not None and (mode != "eden" or chk):
                omega = profile.get(x)
            if chk and profile is not None:
                cap = capacity(cluster, profile)
                stats = profile_stats(profile, cluster)

            new_closure = cluster.new_boundary_if_attached(x)
            cluster.attach(x)
            if fld is not None:
                fld.attach(x, new_closure, cluster.radius)
            if eden is not None:
                eden.attach(x, new_closure)
            trace.steps.append(StepRecord(n, x, omega, cluster.radius, cap, stats))
            if progress is not None:
                progress(n, cluster)
    except (KeyboardInterrupt, MemoryError):
        raise
    except Exception as exc:  # noqa: BLE001 - abort with the partial trace attached
        trace.complete = False
        raise GrowthAborted(f"growth aborted at step {len(trace.steps) + 1}: {exc}", trace) from exc
    return trace


def _launch_capacity(batch, N) -> float:
    return 2.0 * math.pi * batch.r_launch / 3.0 * N / float(batch.launches.sum())


# --------------------------------------------------------------------------
# many short runs (oracle comparisons)
# --------------------------------------------------------------------------


def sample_final_shapes(dimension: int, eta: float, depth: int, runs: int, seed: int = 0,
                        strict_eden: bool = False) -> dict:
    """Frequencies of A_depth over ``runs`` independent exact-mode chains.

    Run ``i`` uses seed ``seed + i``; each step is :func:`dbm_step` on the
    exact profile, with per-state cumulative weights memoised.
    """
    memo = {}
    counts = {}
    for i in range(runs):
        c = Cluster(dimension)
        s = seed + i
        for n in range(1, depth + 1):
            key = c.key()
            ent = memo.get(key)
            if ent is None:
                prof = cached_exact_profile(c)
                cum = np.cumsum(transition_weights(prof, eta, strict_eden))
                ent = (prof.sites, cum)
                memo[key] = ent
            sites, cum = ent
            x = sites[rng.Stream(s, n).choice_index(cum)]
            c.attach(x)
        k = c.key()
        counts[k] = counts.get(k, 0) + 1
    return counts
