"""Discrete potential theory on Z^2 and Z^3.

Two routes are provided for every exterior quantity:

* the exact route works with the whole-lattice kernels (the 2D potential
  kernel ``a`` and the 3D Green's function ``G``) and reduces harmonic measure,
  capacity and killed Green's functions to small dense systems on the
  absorbing set;
* the truncated route solves the Dirichlet problem on a finite ball of radius
  ``rho`` (sparse) and extrapolates in ``rho``.  It is slower and used as the
  independent check of the exact route.

Conventions: ``capacity(A)`` of a cluster is the capacity of its closure,
``sum_{x in dA} w(x, cl A) a(x - z)`` with ``z`` the origin in 2D and the sum of
escape probabilities from the closure in 3D.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import (
    Cluster,
    ContractViolation,
    DimensionError,
    accessible_boundary,
    boundary_of,
    neighbors,
)

KERNEL_TABLE_HALF_2D = 256
GREEN_TABLE_HALF_3D = 40
DEFAULT_SITE_CAP = 10_000
SOLVER_RTOL = 1e-10


class SolverError(RuntimeError):
    def __init__(self, message, residual=None, profiles=None):
        super().__init__(message)
        self.residual = residual
        self.profiles = profiles


# --------------------------------------------------------------------------
# whole-lattice kernels
# --------------------------------------------------------------------------


def _a_far(dx, dy, kappa):
    """Potential kernel far field: (2/pi) ln r + kappa - cos(4 theta) / (6 pi r^2)."""
    r2 = dx * dx + dy * dy
    r2 = np.where(r2 == 0, 1.0, r2)
    cos4 = (dx**4 - 6.0 * dx * dx * dy * dy + dy**4) / (r2 * r2)
    return (1.0 / math.pi) * np.log(r2) + kappa - cos4 / (6.0 * math.pi * r2)


def _g_far(dx, dy, dz):
    """3D Green's function far field: 3/(2 pi r) + 3 (5 sum x_i^4 / r^4 - 3) / (16 pi r^3)."""
    r2 = dx * dx + dy * dy + dz * dz
    r2 = np.where(r2 == 0, 1.0, r2)
    r = np.sqrt(r2)
    s4 = (dx**4 + dy**4 + dz**4) / (r2 * r2)
    return 3.0 / (2.0 * math.pi * r) + 3.0 * (5.0 * s4 - 3.0) / (16.0 * math.pi * r2 * r)


def _interior_laplacian(n_side: int, d: int):
    """I - P on the (n_side)^d interior grid, P the SRW transition restricted to it."""
    off = sp.diags([np.ones(n_side - 1), np.ones(n_side - 1)], [-1, 1], format="csr")
    eye = sp.identity(n_side, format="csr")
    nbr = None
    for axis in range(d):
        mats = [eye] * d
        mats[axis] = off
        term = mats[0]
        for m in mats[1:]:
            term = sp.kron(term, m, format="csr")
        nbr = term if nbr is None else nbr + term
    return (sp.identity(n_side**d, format="csr") - nbr / (2 * d)).tocsr()


def _frame_rhs(full: np.ndarray, d: int) -> np.ndarray:
    """(1/2d) * sum of neighbour values that sit on the frame, for every interior cell."""
    acc = np.zeros(tuple(s - 2 for s in full.shape))
    for axis in range(d):
        for shift in (0, 2):
            sl = [slice(1, -1)] * d
            sl[axis] = slice(shift, full.shape[axis] - 2 + shift)
            acc += full[tuple(sl)]
    return acc / (2 * d)


@lru_cache(maxsize=None)
def kernel_table_2d(half: int = KERNEL_TABLE_HALF_2D):
    """Potential kernel on the box [-half, half]^2 and the fitted constant kappa.

    Solves the mean-value equation with a unit defect at the origin, using the
    far-field form (without its constant) on the frame; the additive constant
    is then fixed by a(0) = 0.
    """
    n = 2 * half + 1
    ax = np.arange(-half, half + 1, dtype=float)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    frame = _a_far(X, Y, 0.0)
    frame[1:-1, 1:-1] = 0.0
    rhs = _frame_rhs(frame, 2)
    # (I - P) v = -delta_0 + frame terms
    rhs[half - 1, half - 1] -= 1.0
    lap = _interior_laplacian(n - 2, 2)
    v = spla.spsolve(lap.tocsc(), rhs.ravel()).reshape(n - 2, n - 2)
    full = _a_far(X, Y, 0.0)
    full[1:-1, 1:-1] = v
    kappa = -full[half, half]
    full += kappa
    full[half, half] = 0.0
    full.setflags(write=False)
    return full, kappa


@lru_cache(maxsize=None)
def green_table_3d(half: int = GREEN_TABLE_HALF_3D):
    """3D lattice Green's function G(x) (expected visits to x from 0) on [-half, half]^3."""
    n = 2 * half + 1
    ax = np.arange(-half, half + 1, dtype=float)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    frame = _g_far(X, Y, Z)
    frame[1:-1, 1:-1, 1:-1] = 0.0
    rhs = _frame_rhs(frame, 3)
    rhs[half - 1, half - 1, half - 1] += 1.0
    lap = _interior_laplacian(n - 2, 3)
    x0 = _g_far(X, Y, Z)[1:-1, 1:-1, 1:-1].ravel()
    x0[np.argmax(x0)] = 1.5
    sol, info = spla.cg(lap, rhs.ravel(), x0=x0, rtol=1e-13, atol=0.0, maxiter=20000)
    if info != 0:
        raise SolverError("3D Green's function table did not converge", residual=info)
    full = _g_far(X, Y, Z)
    full[1:-1, 1:-1, 1:-1] = sol.reshape(n - 2, n - 2, n - 2)
    full.setflags(write=False)
    return full


@lru_cache(maxsize=None)
def _quadrant_2d():
    table, _ = kernel_table_2d()
    half = (table.shape[0] - 1) // 2
    return np.ascontiguousarray(table[half:, half:]).ravel()


def kernel_values(diff: np.ndarray) -> np.ndarray:
    """Whole-lattice kernel at integer offsets ``diff`` (shape (..., d)).

    d = 2: the potential kernel a(x); d = 3: the Green's function G(x).
    """
    diff = np.asarray(diff)
    d = diff.shape[-1]
    if d == 2:
        table, kappa = kernel_table_2d()
        half = (table.shape[0] - 1) // 2
        ad = np.abs(diff)
        if ad.size and ad.max() <= half:
            # a is even in each coordinate: read the positive quadrant directly
            return _quadrant_2d()[ad[..., 0] * (half + 1) + ad[..., 1]]
        inside = (ad <= half).all(axis=-1)
        out = np.empty(diff.shape[:-1])
        idx = ad[inside]
        out[inside] = table[idx[:, 0] + half, idx[:, 1] + half]
        far = ad[~inside].astype(float)
        out[~inside] = _a_far(far[:, 0], far[:, 1], kappa)
        return out
    if d == 3:
        table = green_table_3d()
        half = (table.shape[0] - 1) // 2
        ad = np.abs(diff)
        inside = (ad <= half).all(axis=-1)
        out = np.empty(diff.shape[:-1])
        idx = ad[inside]
        out[inside] = table[idx[:, 0] + half, idx[:, 1] + half, idx[:, 2] + half]
        far = ad[~inside].astype(float)
        out[~inside] = _g_far(far[:, 0], far[:, 1], far[:, 2])
        return out
    raise DimensionError(f"no lattice kernel in dimension {d}")


def potential_kernel(x) -> float:
    """a(x) = sum_n [P0(S_n = 0) - P0(S_n = x)] on Z^2."""
    x = tuple(x)
    if len(x) != 2:
        raise DimensionError("the potential kernel is only provided on Z^2")
    return float(kernel_values(np.array([x]))[0])


def potential_kernel_constant() -> float:
    """The fitted constant kappa in a(x) ~ (2/pi) ln|x| + kappa."""
    return float(kernel_table_2d()[1])


def lattice_green(x) -> float:
    """Whole-space Green's function of SRW on Z^3 (visits to x from 0, time 0 included)."""
    x = tuple(x)
    if len(x) != 3:
        raise DimensionError("the whole-space Green's function is only provided on Z^3")
    return float(kernel_values(np.array([x]))[0])


def kernel_matrix(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.int64)
    q = np.asarray(q, dtype=np.int64)
    return kernel_values(p[:, None, :] - q[None, :, :])


# --------------------------------------------------------------------------
# exact exterior problems
# --------------------------------------------------------------------------


def _as_points(sites) -> np.ndarray:
    return np.array(sorted(map(tuple, sites)), dtype=np.int64)


def equilibrium(sites) -> tuple:
    """Harmonic measure from infinity and capacity of a finite set ``K``.

    Returns ``(points, hm, cap)`` with ``points`` sorted.  2D solves
    ``sum_y a(x-y) H(y) = cap`` on K with ``sum H = 1``; 3D solves
    ``sum_y G(x-y) Es(y) = 1`` on K and sets ``cap = sum Es``, ``H = Es/cap``.
    """
    pts = _as_points(sites)
    m, d = pts.shape
    M = kernel_matrix(pts, pts)
    if d == 2:
        if m == 1:
            return pts, np.ones(1), 0.0
        big = np.zeros((m + 1, m + 1))
        big[:m, :m] = M
        big[:m, m] = -1.0
        big[m, :m] = 1.0
        rhs = np.zeros(m + 1)
        rhs[m] = 1.0
        sol = sla.solve(big, rhs)
        hm, cap = sol[:m], float(sol[m])
        resid = np.abs(big @ sol - rhs).max()
    else:
        es = sla.solve(M, np.ones(m), assume_a="pos")
        cap = float(es.sum())
        hm = es / cap
        resid = np.abs(M @ es - 1.0).max()
    if not np.isfinite(resid) or resid > 1e-8:
        raise SolverError("equilibrium solve is inaccurate", residual=float(resid))
    return pts, hm, cap


@dataclass
class HarmonicProfile:
    """Harmonic measure of a closure, as weights over boundary sites.

    ``source`` is ``"exact"`` or ``"monte_carlo"`` (then ``samples`` is set).
    ``accessible`` optionally carries the set of boundary sites with positive
    measure as determined combinatorially (used by the eta = 0 rule).
    """

    sites: list
    weights: np.ndarray
    source: str = "exact"
    samples: int | None = None
    cluster_key: frozenset | None = None
    capacity: float | None = None
    accessible: frozenset | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self._index = None

    @property
    def entries(self) -> dict:
        return dict(zip(self.sites, self.weights.tolist()))

    def index(self) -> dict:
        if self._index is None:
            self._index = {s: i for i, s in enumerate(self.sites)}
        return self._index

    def get(self, site, default=0.0) -> float:
        i = self.index().get(tuple(site))
        return default if i is None else float(self.weights[i])

    def total(self) -> float:
        return float(self.weights.sum())

    def max(self) -> float:
        return float(self.weights.max()) if len(self.weights) else 0.0

    def positive_sites(self) -> list:
        return [s for s, w in zip(self.sites, self.weights) if w > 0]


def _closure_size_check(cluster: Cluster, cap: int):
    size = len(cluster.sites) + len(cluster.boundary)
    if size > cap:
        raise ContractViolation(f"closure has {size} sites, above the exact-solver cap {cap}")


def harmonic_measure_exact(cluster: Cluster, site_cap: int = DEFAULT_SITE_CAP) -> HarmonicProfile:
    """Harmonic measure from infinity of the closure, supported on the boundary."""
    _closure_size_check(cluster, site_cap)
    pts, hm, cap = equilibrium(cluster.boundary)
    sites = [tuple(p) for p in pts.tolist()]
    acc = accessible_boundary(cluster)
    sealed = np.array([s not in acc for s in sites])
    sealed_mass = float(np.abs(hm[sealed]).sum()) if sealed.any() else 0.0
    w = np.where(sealed, 0.0, np.clip(hm, 0.0, None))
    w /= w.sum()
    return HarmonicProfile(
        sites=sites,
        weights=w,
        source="exact",
        cluster_key=cluster.key(),
        capacity=cap,
        accessible=frozenset(acc),
        diagnostics={"sealed_mass_from_solve": sealed_mass, "min_raw": float(hm.min())},
    )


def set_harmonic_measure(sites) -> dict:
    pts, hm, _ = equilibrium(sites)
    return {tuple(p): float(h) for p, h in zip(pts.tolist(), hm)}


def set_capacity(sites) -> float:
    """Capacity of a finite set (Lawler's normalisation: cap({0}) = 0 in 2D, 1/G(0) in 3D)."""
    return equilibrium(sites)[2]


def escape_probabilities(sites) -> dict:
    """3D: P^y(T_K = infinity) for y in K (T_K the first return time, j > 0)."""
    pts = _as_points(sites)
    if pts.shape[1] != 3:
        raise DimensionError("escape to infinity needs a transient walk (d = 3)")
    M = kernel_matrix(pts, pts)
    es = sla.solve(M, np.ones(len(pts)), assume_a="pos")
    return {tuple(p): float(e) for p, e in zip(pts.tolist(), es)}


def escape_probability_from(x, sites) -> float:
    """3D: P^x(the walk never visits K at times >= 1), for any x (in K or not)."""
    x = tuple(x)
    K = set(map(tuple, sites))
    es = escape_probabilities(K)
    pts = np.array(list(es.keys()), dtype=np.int64)
    e = np.array(list(es.values()))
    # P^x(T_K < inf) = sum_{x'~x} (1/6) P^{x'}(hit K at time >= 0)
    hit = 0.0
    for y in neighbors(x):
        if y in K:
            hit += 1.0 / 6
        else:
            hit += float(kernel_matrix(np.array([y]), pts)[0] @ e) / 6
    return 1.0 - hit


def capacity(cluster: Cluster, profile: HarmonicProfile | None = None, z=None) -> float:
    """Capacity of the closure of ``cluster``.

    With ``profile`` given (e.g. a Monte Carlo estimate) the 2D value is
    ``sum w(x) a(x - z)`` over that profile; in 3D a profile must carry its
    own capacity estimate.
    """
    d = cluster.dimension
    if z is None:
        z = cluster.origin
    if profile is None:
        profile = harmonic_measure_exact(cluster)
    if d == 2:
        pts = np.array(profile.sites, dtype=np.int64)
        vals = kernel_values(pts - np.asarray(z, dtype=np.int64))
        return float(profile.weights @ vals)
    if profile.capacity is None:
        raise ContractViolation("3D capacity needs an exact profile or a launch-based estimate")
    return float(profile.capacity)


def capacity_z_sensitivity(cluster: Cluster, profile: HarmonicProfile | None = None) -> float:
    """max over z in A of |Cap_z - Cap_origin| (2D); zero in 3D by construction."""
    if cluster.dimension != 2:
        return 0.0
    if profile is None:
        profile = harmonic_measure_exact(cluster)
    pts = np.array(profile.sites, dtype=np.int64)
    zs = np.array(sorted(cluster.sites), dtype=np.int64)
    caps = kernel_matrix(zs, pts) @ profile.weights
    ref = capacity(cluster, profile)
    return float(np.abs(caps - ref).max())


class Increment(NamedTuple):
    delta_cap: float
    lemma_value: float
    omega: float
    ratio: float


def capacity_increment(cluster: Cluster, x, profile: HarmonicProfile | None = None) -> Increment:
    """Capacity change of the closure when ``x`` is attached.

    ``lemma_value`` is the increment in the form that is comparable to w^2:
    Cap(cl B) - Cap(cl A) in 2D and 1/Cap(cl A) - 1/Cap(cl B) in 3D.
    ``ratio`` is lemma_value / w^2 (nan when w = 0).
    """
    x = tuple(x)
    if x not in cluster.boundary:
        raise ContractViolation(f"{x} is not a boundary site")
    if profile is None:
        profile = harmonic_measure_exact(cluster)
    omega = profile.get(x)
    closure_a = cluster.closure
    closure_b = closure_a | set(neighbors(x))
    cap_a = set_capacity(closure_a)
    cap_b = cap_a if closure_b == closure_a else set_capacity(closure_b)
    delta = cap_b - cap_a
    lemma = delta if cluster.dimension == 2 else (1.0 / cap_a - 1.0 / cap_b)
    ratio = lemma / omega**2 if omega > 0 else float("nan")
    return Increment(delta, lemma, omega, ratio)


class GreenSolver:
    """Green's function of the walk killed on a finite set A, by the kernel method.

    For fixed pole y, u(x) = G_A(x, y) is written as a kernel combination
    with charges on A and solved from u = 0 on A.  In 2D the charges sum to
    one and an additive constant is carried, so u stays bounded.
    """

    def __init__(self, absorbing):
        pts = _as_points(absorbing)
        if len(pts) == 0:
            raise ContractViolation("absorbing set must be nonempty")
        self.points = pts
        self.set = set(map(tuple, pts.tolist()))
        self.dimension = pts.shape[1]
        m = len(pts)
        M = kernel_matrix(pts, pts)
        if self.dimension == 2:
            big = np.zeros((m + 1, m + 1))
            big[:m, :m] = M
            big[:m, m] = 1.0
            big[m, :m] = 1.0
            self._lu = sla.lu_factor(big)
        else:
            self._lu = sla.lu_factor(M)
        self._hm = None

    def _charges(self, y: np.ndarray):
        m = len(self.points)
        rhs_k = kernel_values(self.points - y)
        if self.dimension == 2:
            rhs = np.append(rhs_k, 1.0)
            sol = sla.lu_solve(self._lu, rhs)
            return sol[:m], float(sol[m])
        return sla.lu_solve(self._lu, rhs_k), 0.0

    def green(self, x, y) -> float:
        x, y = tuple(x), tuple(y)
        if x in self.set or y in self.set:
            return 0.0
        xa = np.array(x, dtype=np.int64)
        ya = np.array(y, dtype=np.int64)
        mu, c = self._charges(ya)
        kx = kernel_values(xa - self.points)
        base = float(kernel_values((xa - ya)[None, :])[0])
        if self.dimension == 2:
            return -base + float(mu @ kx) + c
        return base - float(mu @ kx)

    def green_rows(self, xs, y) -> np.ndarray:
        y = tuple(y)
        xs = np.asarray(xs, dtype=np.int64)
        if y in self.set:
            return np.zeros(len(xs))
        ya = np.array(y, dtype=np.int64)
        mu, c = self._charges(ya)
        K = kernel_matrix(xs, self.points)
        base = kernel_values(xs - ya)
        out = (-base + K @ mu + c) if self.dimension == 2 else (base - K @ mu)
        on_a = np.array([tuple(x) in self.set for x in xs.tolist()])
        out[on_a] = 0.0
        return out

    def to_infinity(self, x) -> float:
        """G_A(x, infinity): 2D lim_{y->inf} G_A(x, y) = sum_z H_A(z) a(x - z) - cap(A);
        3D P^x(T_A = infinity) with T_A the hitting time at times >= 0."""
        x = tuple(x)
        if x in self.set:
            return 0.0
        if self._hm is None:
            self._hm = equilibrium(self.set)
        pts, hm, cap = self._hm
        k = kernel_values(np.array(x, dtype=np.int64) - pts)
        if self.dimension == 2:
            return float(hm @ k) - cap
        return 1.0 - float((hm * cap) @ k)


def greens_function(x, y, A) -> float:
    """G(x, y, A): expected visits to y before hitting A, walk started at x."""
    sites = A.sites if isinstance(A, Cluster) else set(map(tuple, A))
    d = len(next(iter(sites)))
    if len(tuple(x)) != d or len(tuple(y)) != d:
        raise DimensionError("site dimension does not match the absorbing set")
    return GreenSolver(sites).green(x, y)


# --------------------------------------------------------------------------
# truncated-domain route
# --------------------------------------------------------------------------


def _ball_domain(rho: float, d: int, holes: set):
    """Lattice sites with |z| < rho not in ``holes``; returns (index grid, coords, half)."""
    half = int(math.ceil(rho)) + 1
    ax = np.arange(-half, half + 1)
    grids = np.meshgrid(*([ax] * d), indexing="ij")
    r2 = sum(g.astype(np.int64) ** 2 for g in grids)
    inside = r2 < rho * rho
    for h in holes:
        idx = tuple(c + half for c in h)
        inside[idx] = False
    index = -np.ones(inside.shape, dtype=np.int64)
    n = int(inside.sum())
    index[inside] = np.arange(n)
    coords = np.argwhere(inside) - half
    return index, coords, half


def _sparse_solve(mat, rhs, what: str, d: int = 2):
    n = mat.shape[0]
    if n <= (400_000 if d == 2 else 20_000):
        sol = spla.spsolve(mat.tocsc(), rhs)
    else:
        diag = mat.diagonal()
        pre = sp.diags(1.0 / diag)
        sol, info = spla.cg(mat, rhs, M=pre, rtol=SOLVER_RTOL, maxiter=50 * int(math.sqrt(n)) + 1000)
        if info != 0:
            res = float(np.linalg.norm(mat @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300))
            raise SolverError(f"{what}: CG did not converge", residual=res)
    res = float(np.linalg.norm(mat @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300))
    if not np.isfinite(res) or res > 1e-8:
        raise SolverError(f"{what}: residual {res:.3e}", residual=res)
    return sol


def _domain_operator(index, coords, half, d):
    """(I - P) restricted to the domain; off-domain neighbours are absorbing."""
    n = len(coords)
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [np.ones(n)]
    for sign in (1, -1):
        for k in range(d):
            q = coords + half
            q[:, k] += sign
            nb = index[tuple(q.T)]
            inside = nb >= 0
            rows.append(np.nonzero(inside)[0])
            cols.append(nb[inside])
            vals.append(np.full(int(inside.sum()), -1.0 / (2 * d)))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def escape_profile(cluster: Cluster, rho: float) -> dict:
    """P^y(reach |z| >= rho before returning to the closure), for y in dA."""
    R = cluster.radius
    if not rho > 2 * R + 2:
        raise ContractViolation(f"rho={rho} must exceed 2R+2={2 * R + 2}")
    d = cluster.dimension
    closure = cluster.closure
    index, coords, half = _ball_domain(rho, d, closure)
    mat = _domain_operator(index, coords, half, d)
    n = len(coords)
    # right-hand side: (1/2d) per neighbour outside the ball (value 1 there)
    rhs = np.zeros(n)
    for sign in (1, -1):
        for k in range(d):
            q = coords.copy()
            q[:, k] += sign
            out = (q.astype(np.int64) ** 2).sum(axis=1) >= rho * rho
            rhs[out] += 1.0 / (2 * d)
    phi = _sparse_solve(mat, rhs, "escape_profile", d)
    out = {}
    for y in sorted(cluster.boundary):
        acc = 0.0
        for z in neighbors(y):
            if sum(c * c for c in z) >= rho * rho:
                acc += 1.0
                continue
            k = index[tuple(c + half for c in z)]
            if k >= 0:
                acc += phi[k]
        out[y] = acc / (2 * d)
    return out


def _richardson(values: list, rhos: list, powers: tuple) -> np.ndarray:
    """Extrapolate v(rho) = v_inf + sum_k c_k rho^-p_k using the last len(powers)+1 rungs."""
    m = min(len(powers), len(values) - 1)
    rs = np.array(rhos[-(m + 1):], dtype=float)
    vs = np.array(values[-(m + 1):])
    design = np.column_stack([np.ones(m + 1)] + [rs ** (-p) for p in powers[:m]])
    coef = np.linalg.solve(design, vs)
    return coef[0]


def harmonic_measure_ladder(
    cluster: Cluster,
    levels: int = 6,
    tol: float = 1e-8,
    max_unknowns: int = 2_000_000,
) -> HarmonicProfile:
    """Harmonic measure by the rho-ladder rho_k = 2^k (R + 2) of normalised escape profiles.

    2D profiles converge like rho^-2 and 3D escape probabilities like rho^-1;
    successive Richardson estimates are compared in total variation.
    """
    d = cluster.dimension
    R = cluster.radius
    sites = cluster.sorted_boundary()
    rhos, raw, extrap = [], [], []
    powers = (2.0, 4.0) if d == 2 else (1.0, 2.0)
    k = 1
    while len(rhos) < levels:
        rho = (2**k) * (R + 2) + 0.5
        k += 1
        if rho <= 2 * R + 2:
            continue
        if (2 * rho) ** d > max_unknowns * (4 if d == 2 else 6) / math.pi:
            break
        e = escape_profile(cluster, rho)
        v = np.array([e[s] for s in sites])
        if d == 2:
            v = v / v.sum()
        rhos.append(rho)
        raw.append(v)
        if len(raw) >= 2:
            extrap.append(_richardson(raw, rhos, powers))
            if len(extrap) >= 2 and 0.5 * np.abs(_normalise(extrap[-1]) - _normalise(extrap[-2])).sum() < tol:
                break
    if len(raw) < 2:
        raise SolverError("rho ladder budget too small", profiles=raw)
    best = extrap[-1]
    cap = float(best.sum()) if d == 3 else None
    w = _normalise(best)
    tv = 0.5 * float(np.abs(_normalise(extrap[-1]) - _normalise(extrap[-2])).sum()) if len(extrap) >= 2 else float("nan")
    return HarmonicProfile(
        sites=sites,
        weights=w,
        source="exact",
        cluster_key=cluster.key(),
        capacity=cap,
        diagnostics={"rhos": rhos, "ladder_tv": tv},
    )


def _normalise(v: np.ndarray) -> np.ndarray:
    v = np.clip(v, 0.0, None)
    return v / v.sum()


def greens_function_truncated(x, y, absorbing, rho: float) -> float:
    """Expected visits to y before hitting ``absorbing`` or leaving the ball of radius rho."""
    holes = set(map(tuple, absorbing))
    x, y = tuple(x), tuple(y)
    if x in holes or y in holes:
        return 0.0
    d = len(x)
    index, coords, half = _ball_domain(rho, d, holes)
    mat = _domain_operator(index, coords, half, d)
    rhs = np.zeros(len(coords))
    rhs[index[tuple(c + half for c in y)]] = 1.0
    # G(., y) solves (I - P) u = delta_y; symmetric, so read the row at x
    u = _sparse_solve(mat, rhs, "greens_function_truncated", d)
    return float(u[index[tuple(c + half for c in x)]])
