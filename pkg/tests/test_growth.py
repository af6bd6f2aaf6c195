import math
import random
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from dbmlab import growth
from dbmlab.growth import (
    EdenTracker,
    GrowthAborted,
    GrowthConfig,
    ImpossibleState,
    checkpoint_schedule,
    dbm_step,
    dla_fast_step,
    grow,
    sample_final_shapes,
    transition_weights,
)
from dbmlab.lattice import Cluster, ContractViolation, DimensionError, accessible_boundary
from dbmlab.oracle import enumerate_dbm, sealed_ring
from dbmlab.potential import HarmonicProfile, harmonic_measure_exact
from dbmlab.rng import Stream
from dbmlab.walkers import WalkerConfig, estimate_profile


def chi2_pvalue(counts: dict, probs: dict, min_expected=5.0):
    """Pearson test of ``counts`` against ``probs``; cells below ``min_expected`` are pooled."""
    n = sum(counts.values())
    obs, exp = [], []
    pool_o = pool_e = 0.0
    for k, p in probs.items():
        if n * p < min_expected:
            pool_o += counts.get(k, 0)
            pool_e += n * p
        else:
            obs.append(counts.get(k, 0))
            exp.append(n * p)
    assert sum(counts.get(k, 0) for k in counts if k not in probs) == 0
    if pool_e > 0:
        obs.append(pool_o)
        exp.append(pool_e)
    return stats.chisquare(obs, exp).pvalue


# ---------------------------------------------------------------- config


def test_config_validation():
    GrowthConfig(eta=1.0, measure_mode="dla_fast")
    with pytest.raises(ContractViolation):
        GrowthConfig(eta=2.0, measure_mode="dla_fast")
    with pytest.raises(ContractViolation):
        GrowthConfig(eta=1.0, measure_mode="eden")
    with pytest.raises(ContractViolation):
        GrowthConfig(eta=-0.5, measure_mode="exact")
    with pytest.raises(ContractViolation):
        GrowthConfig(measure_mode="bogus")
    with pytest.raises(ContractViolation):
        GrowthConfig(eta=2.0, measure_mode="exact", n_particles=5000)
    with pytest.raises(DimensionError):
        GrowthConfig(dimension=4)
    with pytest.raises(ContractViolation):
        GrowthConfig(measure_mode="monte_carlo", samples_per_step=0)


def test_checkpoint_schedule():
    s = checkpoint_schedule(1000)
    assert {1, 10, 100, 1000} <= s and max(s) == 1000
    assert len([v for v in s if 100 <= v < 1000]) == 10
    assert set(range(50, 1001, 50)) <= checkpoint_schedule(1000, every=50)
    assert checkpoint_schedule(0) == set()


def test_zero_particles():
    for mode, eta in [("exact", 2.0), ("dla_fast", 1.0), ("eden", 0.0), ("monte_carlo", 0.5)]:
        t = grow(GrowthConfig(n_particles=0, measure_mode=mode, eta=eta))
        assert t.steps == [] and t.final_cluster.sites == {(0, 0)}


# ---------------------------------------------------------------- single steps


def test_single_site_step_uniform_any_eta():
    prof = harmonic_measure_exact(Cluster(2))
    for eta in (0.0, 0.5, 1.0, 3.0):
        w = transition_weights(prof, eta)
        assert np.allclose(w / w.sum(), 0.25)


def test_eta_zero_uniform_over_accessible_sites():
    ring, inner = sealed_ring(3)
    prof = harmonic_measure_exact(ring)
    w = transition_weights(prof, 0.0)
    for s, wi in zip(prof.sites, w):
        assert wi == (0.0 if s in inner else 1.0)
    strict = transition_weights(prof, 0.0, strict_eden=True)
    assert np.all(strict == 1.0)
    # positive eta never picks the sealed site
    assert all(wi == 0.0 for s, wi in zip(prof.sites, transition_weights(prof, 1.5)) if s in inner)


def test_all_zero_profile_is_impossible():
    c = Cluster(2)
    prof = HarmonicProfile(sites=c.sorted_boundary(), weights=np.zeros(4), source="exact")
    with pytest.raises(ImpossibleState):
        dbm_step(c, 1.0, prof, Stream(0, 1))


def test_domino_eta2_step_against_enumeration(domino):
    prof = harmonic_measure_exact(domino)
    w = transition_weights(prof, 2.0)
    q = dict(zip(prof.sites, w / w.sum()))
    law = enumerate_dbm(2, 2.0, 2).entries
    # these sites are reachable only through the domino, so P(shape) = q(y) / 4
    for y in [(2, 0), (1, 1), (1, -1)]:
        assert law[frozenset({(0, 0), (1, 0), y})] == pytest.approx(q[y] / 4, abs=1e-12)
    counts = {}
    for s in range(40_000):
        y = dbm_step(domino, 2.0, prof, Stream(s, 1))
        counts[y] = counts.get(y, 0) + 1
    assert chi2_pvalue(counts, q) > 1e-3


@pytest.mark.parametrize("eta", [0.0, 0.5, 1.0, 2.0, 3.0])
def test_exact_chain_chi_square_depth3(eta):
    law = enumerate_dbm(2, eta, 3).entries
    counts = sample_final_shapes(2, eta, 3, 20_000, seed=1000)
    assert chi2_pvalue(counts, law) > 1e-3


def test_depth_one_and_two_3d():
    law = enumerate_dbm(3, 1.0, 2).entries
    counts = sample_final_shapes(3, 1.0, 2, 20_000, seed=5)
    assert chi2_pvalue(counts, law) > 1e-3


def test_grow_exact_matches_sampler_run_by_run():
    for s in range(30):
        t = grow(GrowthConfig(eta=2.0, measure_mode="exact", n_particles=3, seed=s))
        assert set(sample_final_shapes(2, 2.0, 3, 1, seed=s)) == {t.final_cluster.key()}


def test_dla_fast_step_single_site_uniform():
    c = Cluster(2)
    counts = {}
    cfg = WalkerConfig(rng_seed=3)
    from dbmlab.walkers import Field

    f = Field(c)
    for n in range(20_000):
        y = dla_fast_step(c, cfg, n, f)
        counts[y] = counts.get(y, 0) + 1
    assert chi2_pvalue(counts, {y: 0.25 for y in c.boundary}) > 1e-3


def test_dla_fast_step_depth2_tv_at_1e6_runs():
    from dbmlab.walkers import Field

    law = enumerate_dbm(2, 1.0, 2).entries
    cfg = WalkerConfig(rng_seed=11)
    root = Cluster(2)
    root_field = Field(root)
    states = {}  # first attachment -> (cluster, field)
    counts = {}
    runs = 10**6
    for i in range(runs):
        y = dla_fast_step(root, cfg, 2 * i, root_field)
        if y not in states:
            c = root.copy()
            c.attach(y)
            states[y] = (c, Field(c))
        c, f = states[y]
        z = dla_fast_step(c, cfg, 2 * i + 1, f)
        k = frozenset(c.sites | {z})
        counts[k] = counts.get(k, 0) + 1
    tv = 0.5 * sum(abs(law.get(k, 0.0) - counts.get(k, 0) / runs) for k in set(law) | set(counts))
    assert tv < 0.01


def _class_counts(counts, law):
    from dbmlab.oracle import canonical_class

    out, probs = {}, {}
    for k, p in law.items():
        probs[canonical_class(k)] = probs.get(canonical_class(k), 0.0) + p
    for k, v in counts.items():
        out[canonical_class(k)] = out.get(canonical_class(k), 0) + v
    return out, probs


def test_dla_fast_depth3_against_enumeration():
    law = enumerate_dbm(2, 1.0, 3).entries
    cfg = GrowthConfig(n_particles=3, checkpoint_samples=1)
    counts = {}
    for s in range(20_000):
        k = grow(replace(cfg, seed=s)).final_cluster.key()
        counts[k] = counts.get(k, 0) + 1
    assert chi2_pvalue(counts, law) > 1e-3
    assert chi2_pvalue(*_class_counts(counts, law)) > 1e-3


def test_monte_carlo_depth3_against_enumeration():
    # for eta = 1 a draw from the empirical profile is an unbiased DLA step
    law = enumerate_dbm(2, 1.0, 3).entries
    cfg = GrowthConfig(n_particles=3, measure_mode="monte_carlo", samples_per_step=50)
    counts = {}
    for s in range(4000):
        k = grow(replace(cfg, seed=s)).final_cluster.key()
        counts[k] = counts.get(k, 0) + 1
    assert chi2_pvalue(*_class_counts(counts, law)) > 1e-3


def test_monte_carlo_powering_bias_shrinks_with_samples(domino):
    """Report: powering an estimated profile biases eta != 1 steps by O(1/N)."""
    prof = harmonic_measure_exact(domino)
    w = transition_weights(prof, 2.0)
    exact = w / w.sum()
    bias = {}
    for N in (100, 400):
        acc = np.zeros(len(exact))
        reps = 2000
        for r in range(reps):
            p = estimate_profile(domino, N, WalkerConfig(rng_seed=r), step=N)
            p.weights = np.array([p.get(s) for s in prof.sites])
            p.sites = prof.sites
            v = transition_weights(p, 2.0)
            acc += v / v.sum()
        bias[N] = 0.5 * np.abs(acc / reps - exact).sum()
    print(f"powering bias (eta=2, domino): N=100 TV={bias[100]:.4f}, N=400 TV={bias[400]:.4f}")
    assert bias[100] > bias[400]
    assert bias[100] < 0.05


# ---------------------------------------------------------------- Eden tracker


@given(st.integers(2, 3), st.integers(0, 10**6), st.booleans())
def test_eden_tracker_matches_flood_fill(d, seed, strict):
    rnd = random.Random(seed)
    c = Cluster(d)
    tr = EdenTracker(c, strict)
    for _ in range(120 if d == 2 else 60):
        y = tr.choose(rnd.random())
        new = c.new_boundary_if_attached(y)
        c.attach(y)
        tr.attach(y, new)
        want = c.boundary if strict else accessible_boundary(c)
        assert set(tr.live.items) == want


def test_eden_tracker_detects_sealing():
    # 7x7 ring whose top row has a gap of three; only (3, 6) stays free, so the
    # interior reaches infinity through a one-site channel
    ring = {(i, j) for i in range(7) for j in range(7) if i in (0, 6) or j in (0, 6)}
    c = Cluster.from_sites(ring - {(2, 6), (3, 6), (4, 6)})
    tr = EdenTracker(c)
    assert (1, 3) in tr.live
    new = c.new_boundary_if_attached((2, 6))
    c.attach((2, 6))
    tr.attach((2, 6), new)
    assert (1, 3) not in tr.live and (1, 3) in c.boundary
    assert set(tr.live.items) == accessible_boundary(c)
    assert (3, 3) in tr.sealed


# ---------------------------------------------------------------- whole runs


@pytest.mark.parametrize("cfg", [
    GrowthConfig(eta=2.0, measure_mode="exact", n_particles=60),
    GrowthConfig(eta=0.5, measure_mode="monte_carlo", n_particles=60, samples_per_step=300),
    GrowthConfig(n_particles=2000, checkpoint_samples=2000),
    GrowthConfig(eta=0.0, measure_mode="eden", n_particles=2000, checkpoint_samples=500),
    GrowthConfig(dimension=3, n_particles=1000, checkpoint_samples=1000),
])
def test_trace_invariants(cfg):
    t = grow(cfg)
    n, d = cfg.n_particles, cfg.dimension
    assert len(t.steps) == n and t.complete
    radii = t.radii()
    assert np.all(np.diff(radii) >= 0)
    assert 0.5 * n ** (1 / d) <= radii[-1] <= n
    assert Cluster.replay(d, [s.site for s in t.steps]).sites == t.final_cluster.sites
    for s in t.steps:
        if s.omega is not None:
            assert 0.0 <= s.omega <= 1.0
            if cfg.eta > 0:
                assert s.omega > 0
    chk = t.checkpoints()
    assert chk[-1].n == n
    for s in chk:
        assert s.stats["sums"]["1.0"] == pytest.approx(1.0)
    if d == 3 or cfg.measure_mode != "eden":
        assert all(s.capacity is not None for s in chk)


def test_exact_mode_omega_is_exact():
    t = grow(GrowthConfig(eta=1.0, measure_mode="exact", n_particles=20, seed=3))
    c = Cluster(2)
    for s in t.steps:
        assert s.omega == pytest.approx(harmonic_measure_exact(c).get(s.site), abs=1e-12)
        c.attach(s.site)


def test_grow_is_deterministic():
    cfg = GrowthConfig(n_particles=500, omega_every=7, omega_samples=200, seed=11)
    a, b = grow(cfg), grow(cfg)
    assert [(s.site, s.omega, s.capacity) for s in a.steps] == [(s.site, s.omega, s.capacity) for s in b.steps]
    c = grow(replace(cfg, seed=12))
    assert [s.site for s in c.steps] != [s.site for s in a.steps]


def test_omega_between_checkpoints():
    cfg = GrowthConfig(n_particles=200, omega_every=5, omega_samples=100)
    t = grow(cfg)
    sched = checkpoint_schedule(200)
    for s in t.steps:
        if s.n in sched or s.n % 5 == 0:
            assert s.omega is not None and s.omega > 0
        else:
            assert s.omega is None


def test_abort_keeps_partial_trace(monkeypatch):
    real = growth.cached_exact_profile
    calls = {"n": 0}

    def flaky(c, cap=10_000):
        calls["n"] += 1
        if calls["n"] == 5:
            raise RuntimeError("solver blew up")
        return real(c, cap)

    monkeypatch.setattr(growth, "cached_exact_profile", flaky)
    with pytest.raises(GrowthAborted) as info:
        grow(GrowthConfig(eta=1.0, measure_mode="exact", n_particles=10))
    assert len(info.value.trace.steps) == 4 and not info.value.trace.complete


def test_eden_radius_grows_like_square_root():
    t = grow(GrowthConfig(eta=0.0, measure_mode="eden", n_particles=20_000, checkpoint_samples=10))
    r = t.radii()
    slope = math.log(r[-1] / r[1999]) / math.log(10)
    assert 0.45 < slope < 0.56
