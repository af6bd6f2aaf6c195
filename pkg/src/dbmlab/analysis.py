"""Statistics of harmonic measure and growth traces, and bound margins.

All logarithms are natural.  Checkpoint records carry statistics of the
pre-attachment cluster (see :mod:`dbmlab.growth`); functions here accept
either a :class:`HarmonicProfile`, a plain weight array, or checkpoint stats.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .lattice import ContractViolation
from .potential import HarmonicProfile

# Constants frozen from calibration runs (scripts/calibrate.py, seeds 101-104,
# every acceptance configuration): worst value seen times a margin.
THRESHOLDS = {
    "trend_ratio": 1.2,  # last-decade sup <= 1.2 x previous-decade sup
    "cap_radius_2d": 1.3,  # |Cap - (2/pi) ln R|; worst 1.079
    "cap_radius_trend": 0.1,  # last-decade sup minus previous-decade sup; worst 0.047
    "beurling_2d": 0.33,  # top-m geometric mean * sqrt(m), m >= 100, band [R, 100 R]; worst 0.273
    "beurling_3d": 1.0,  # geometric mean * sqrt(m Cap); not calibrated (no 3D run has the coverage)
    "makarov": 1.2,  # |sum w ln w + ln R| / ln ln R, R in [50, 500]; worst 0.972
    "max_measure_3d": 0.1,  # max w * R / sqrt(ln R), R >= 20; worst 0.067 (count noise at 1e4 walkers)
}


def _weights(p) -> np.ndarray:
    if isinstance(p, HarmonicProfile):
        return p.weights
    return np.asarray(p, dtype=float)


# --------------------------------------------------------------------------
# profile statistics
# --------------------------------------------------------------------------


def statistical_sum(profile, alpha: float) -> float:
    """sum of w^alpha over the support (zero entries never contribute)."""
    w = _weights(profile)
    w = w[w > 0]
    if alpha == 0:
        return float(len(w))
    return float(np.sum(w**alpha))


@dataclass
class SpectrumReport:
    alphas: list
    sums: list
    radius: float
    tau_hat: list
    zeros_excluded: int = 0
    n: int | None = None

    @classmethod
    def from_profile(cls, profile, radius: float, alphas, n=None) -> "SpectrumReport":
        w = _weights(profile)
        zeros = int(np.sum(w <= 0)) if any(a <= 0 for a in alphas) else 0
        sums = [statistical_sum(w, a) for a in alphas]
        return cls(list(alphas), sums, radius, _tau(sums, radius), zeros, n)

    @classmethod
    def from_stats(cls, stats: dict, n=None) -> "SpectrumReport":
        alphas = sorted(float(a) for a in stats["sums"])
        sums = [stats["sums"][repr(a)] for a in alphas]
        zeros = stats["boundary"] - stats["positive"]
        return cls(alphas, sums, stats["R"], _tau(sums, stats["R"]), zeros, n)

    def tau(self, alpha: float) -> float:
        return self.tau_hat[self.alphas.index(float(alpha))]


def _tau(sums, radius):
    if radius <= 1:
        return [float("nan")] * len(sums)
    return [-math.log(s) / math.log(radius) if s > 0 else float("inf") for s in sums]


def makarov_statistic(profile, R: float) -> float:
    """sum w ln w + ln R (w = 0 contributes 0).  R = 1 is allowed and gives the bare entropy term."""
    if R <= 0:
        raise ContractViolation("radius must be positive")
    w = _weights(profile)
    w = w[w > 0]
    return float(np.sum(w * np.log(w))) + math.log(R)


def max_measure_exponent(profile, R: float) -> float:
    """sigma_hat = -ln(max w) / ln R."""
    if R <= 1:
        raise ContractViolation("need R > 1")
    return -math.log(float(np.max(_weights(profile)))) / math.log(R)


# --------------------------------------------------------------------------
# trace statistics
# --------------------------------------------------------------------------


def _pre_radii(trace) -> np.ndarray:
    """R(A_{n-1}) for each record (the cluster the walker attached to)."""
    r = trace.radii()
    return np.concatenate([[0.0], r[:-1]]) if len(r) else r


@dataclass
class BeurlingReport:
    m: int
    geometric_mean: float
    margin: float  # gm / reference at the full m
    sup_margin: float  # sup over m >= m_min of the worst-case (top-m) margin
    excluded: int
    rms: float
    amgm_holds: bool
    dimension: int
    cap: float | None = None
    margins: list = field(default_factory=list)


def beurling_integral_check(trace, R: float, m_min: int = 1, band: float = 100.0) -> BeurlingReport:
    """Geometric mean of attachment measures against m^(-1/2) (2D) or (m Cap)^(-1/2) (3D).

    2D: attachments whose cluster radius lies in (R, band*R).  3D: every
    attachment from the first checkpoint with radius >= R on, with the
    capacity measured at that checkpoint.  Missing ``omega`` values are
    excluded and counted.  ``sup_margin`` uses, for each m, the m largest
    measures (the worst index set of that size); ``margin`` is for the full set.
    """
    d = trace.config.dimension
    pre = _pre_radii(trace)
    omegas, excluded, cap = [], 0, None
    if d == 2:
        for rec, r in zip(trace.steps, pre):
            if R < r < band * R:
                if rec.omega is None:
                    excluded += 1
                else:
                    omegas.append(rec.omega)
    else:
        start = None
        for rec, r in zip(trace.steps, pre):
            if start is None and rec.capacity is not None and r >= R:
                start, cap = rec.n, rec.capacity
            if start is not None:
                if rec.omega is None:
                    excluded += 1
                else:
                    omegas.append(rec.omega)
    m = len(omegas)
    if m == 0:
        return BeurlingReport(0, float("nan"), float("nan"), float("nan"), excluded, float("nan"), True, d, cap)
    w = np.array(omegas)
    with np.errstate(divide="ignore"):
        lw = np.log(w)
    gm = float(np.exp(lw.mean()))
    rms = float(np.sqrt(np.mean(w**2)))
    scale = 1.0 if d == 2 else cap
    ms = np.arange(1, m + 1)
    top = np.sort(lw)[::-1]
    margins = np.exp(np.cumsum(top) / ms) * np.sqrt(ms * scale)
    sel = margins[m_min - 1:] if m >= m_min else np.array([])
    return BeurlingReport(
        m=m,
        geometric_mean=gm,
        margin=gm * math.sqrt(m * scale),
        sup_margin=float(sel.max()) if len(sel) else float("nan"),
        excluded=excluded,
        rms=rms,
        amgm_holds=bool(gm <= rms * (1 + 1e-12)),
        dimension=d,
        cap=cap,
        margins=margins.tolist(),
    )


def _series(trace_or_series):
    if isinstance(trace_or_series, tuple):
        ns, rs = trace_or_series
        return np.asarray(ns, dtype=float), np.asarray(rs, dtype=float)
    steps = trace_or_series.steps
    return np.array([s.n for s in steps], dtype=float), np.array([s.radius for s in steps])


def growth_exponent(trace, window) -> float:
    """Least-squares slope of ln R against ln n over ``window = (n_lo, n_hi)``.

    Points are thinned to a logarithmic grid (about 200 per decade) so each
    scale carries equal weight.  ``trace`` may also be an ``(ns, radii)`` pair.
    """
    n_lo, n_hi = window
    if n_lo < 1 or n_hi < 10 * n_lo:
        raise ContractViolation("window must span at least one decade in n")
    ns, rs = _series(trace)
    grid = np.unique(np.round(np.logspace(math.log10(n_lo), math.log10(n_hi), 200 * int(
        math.ceil(math.log10(n_hi / n_lo))) + 1)))
    idx = np.searchsorted(ns, grid)
    idx = idx[idx < len(ns)]
    idx = np.unique(idx)
    x, y = ns[idx], rs[idx]
    keep = (x >= n_lo) & (x <= n_hi) & (y > 0)
    if keep.sum() < 3:
        raise ContractViolation("degenerate window: fewer than 3 usable points")
    slope = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0]
    return float(slope)


# --------------------------------------------------------------------------
# verification report
# --------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    anchor: str
    statistic: float | None
    bound: str
    margin: float | None
    threshold: float | None
    status: str  # pass | fail | not_applicable | insufficient_data | report
    hard: bool = True
    details: dict = field(default_factory=dict)


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)

    def add(self, check: Check):
        self.checks.append(check)
        return check

    @property
    def passed(self) -> bool:
        return all(c.status != "fail" for c in self.checks if c.hard)

    def get(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [asdict(c) for c in self.checks]}

    def table(self) -> str:
        rows = [f"{'check':34s} {'status':18s} {'statistic':>12s} {'threshold':>10s}  bound"]
        for c in self.checks:
            st = "" if c.statistic is None else f"{c.statistic:12.5g}"
            th = "" if c.threshold is None else f"{c.threshold:10.4g}"
            rows.append(f"{c.name:34s} {c.status:18s} {st:>12s} {th:>10s}  {c.bound}")
        return "\n".join(rows)


def radius_bound(d: int, eta: float, alpha: float = 1.0):
    """(label, f) for the applicable radius upper bound R(A_n) < C f(n), or None."""
    if d == 2:
        if eta >= 2:
            return None
        if eta == 1:
            return "n^(2/3)", lambda n: n ** (2.0 / 3.0)
        p = 2.0 / (4.0 - eta)
        q = alpha * abs(eta - 1.0) / (4.0 - eta)
        return (f"n^(2/(4-eta)) (ln n)^({alpha:g}|eta-1|/(4-eta))",
                lambda n: n**p * np.log(n) ** q)
    if eta >= 1:
        p = eta / (1.0 + eta)
        q = eta / (2.0 * (eta + 1.0))
        return "n^(eta/(1+eta)) (ln n)^(eta/(2(eta+1)))", lambda n: n**p * np.log(n) ** q
    return "n^(1/2) (ln n)^(1/4)", lambda n: n**0.5 * np.log(n) ** 0.25


def sup_ratio_trend(ns, ratios, n_max=None):
    """(overall sup, last-decade sup, previous-decade sup)."""
    ns = np.asarray(ns, dtype=float)
    ratios = np.asarray(ratios, dtype=float)
    n_max = ns.max() if n_max is None else n_max
    last = ratios[(ns > n_max / 10) & (ns <= n_max)]
    mid = ratios[(ns > n_max / 100) & (ns <= n_max / 10)]
    s_last = float(last.max()) if len(last) else float("nan")
    s_mid = float(mid.max()) if len(mid) else float("nan")
    return float(ratios.max()), s_last, s_mid


def theorem_margin(trace, alpha: float = 1.0, n_min: int = 10, thresholds=None) -> VerificationReport:
    """sup_n R(A_n)/f(n) for the applicable radius bound, with its decade trend.

    The bound is asymptotic with an unknown constant, so the hard check is
    the trend: the sup over the last decade of n may exceed the sup over the
    decade before it by at most ``trend_ratio``.  In 2D with 0 < eta < 2 and
    eta != 1, columns for alpha in {0.5, 1, 2} are included in the details.
    """
    th = dict(THRESHOLDS, **(thresholds or {}))
    rep = VerificationReport()
    cfg = trace.config
    d, eta = cfg.dimension, cfg.eta
    forms = [("radius_bound", radius_bound(d, eta, alpha))]
    if d == 3 and eta == 1:
        forms.append(("radius_bound_n2d", ("n^(2/d)", lambda n: n ** (2.0 / 3.0))))
    ns, rs = _series(trace)
    for name, form in forms:
        if form is None:
            rep.add(Check(name, "radius growth bound for 0 <= eta < 2", None, "n/a", None, None,
                          "not_applicable", details={"reason": "eta >= 2 in 2D"}))
            continue
        label, f = form
        sel = ns >= n_min
        if sel.sum() == 0 or ns.max() < 100 * n_min:
            rep.add(Check(name, f"R(A_n) < C {label}", None, label, None, th["trend_ratio"],
                          "insufficient_data"))
            continue
        ratios = rs[sel] / f(ns[sel])
        sup, s_last, s_mid = sup_ratio_trend(ns[sel], ratios)
        trend = s_last / s_mid
        details = {"sup": sup, "sup_last_decade": s_last, "sup_previous_decade": s_mid,
                   "n_range": [float(ns[sel].min()), float(ns.max())]}
        if d == 2 and 0 < eta < 2 and eta != 1:
            sens = {}
            for a in (0.5, 1.0, 2.0):
                _, fa = radius_bound(d, eta, a)
                r_a = rs[sel] / fa(ns[sel])
                sens[repr(a)] = sup_ratio_trend(ns[sel], r_a)
            details["alpha_sensitivity"] = sens
        rep.add(Check(name, f"R(A_n) < C {label}", trend, label, th["trend_ratio"] - trend,
                      th["trend_ratio"], "pass" if trend <= th["trend_ratio"] else "fail",
                      details=details))
    return rep


def cap_radius_check(trace, r_min: float = 2.0, thresholds=None) -> Check:
    """2D: sup |Cap - (2/pi) ln R| over checkpoints; 3D: Cap/R and Cap ln R / R ranges."""
    th = dict(THRESHOLDS, **(thresholds or {}))
    pts = [(c.n, c.stats["R"], c.capacity) for c in trace.checkpoints()
           if c.capacity is not None and c.stats["R"] >= r_min]
    if len(pts) < 2:
        return Check("cap_radius", "capacity-radius comparison", None, "", None, None, "insufficient_data")
    ns, R, cap = (np.array(v, dtype=float) for v in zip(*pts))
    if trace.config.dimension == 2:
        diff = np.abs(cap - 2.0 / math.pi * np.log(R))
        sup, s_last, s_mid = sup_ratio_trend(ns, diff)
        ok = sup <= th["cap_radius_2d"] and (not np.isfinite(s_mid) or s_last <= s_mid + th["cap_radius_trend"])
        return Check("cap_radius", "|Cap(A) - (2/pi) ln R(A)| bounded", sup, "|Cap - (2/pi) ln R| <= C",
                     th["cap_radius_2d"] - sup, th["cap_radius_2d"], "pass" if ok else "fail",
                     details={"sup_last_decade": s_last, "sup_previous_decade": s_mid})
    lo = cap * np.log(R) / R
    hi = cap / R
    return Check("cap_radius", "R/ln R <~ Cap(A) <~ R", float(hi.max()), "Cap/R and Cap ln R/R bounded",
                 None, None, "report", hard=False,
                 details={"cap_over_R": [float(hi.min()), float(hi.max())],
                          "cap_lnR_over_R": [float(lo.min()), float(lo.max())]})


def makarov_check(trace, r_range=(50.0, 500.0), thresholds=None) -> Check:
    th = dict(THRESHOLDS, **(thresholds or {}))
    vals = []
    for c in trace.checkpoints():
        R = c.stats["R"]
        if r_range[0] <= R <= r_range[1]:
            vals.append((R, abs(c.stats["entropy"] + math.log(R)) / math.log(math.log(R))))
    if not vals:
        return Check("makarov", "|sum w ln w + ln R| <~ ln ln R", None, "", None, th["makarov"],
                     "insufficient_data")
    worst = max(v for _, v in vals)
    return Check("makarov", "|sum w ln w + ln R| <~ ln ln R", worst, "|stat| / ln ln R <= C",
                 th["makarov"] - worst, th["makarov"], "pass" if worst <= th["makarov"] else "fail",
                 details={"points": len(vals)})


def max_measure_check(trace, r_min: float = 20.0, thresholds=None) -> Check:
    """3D: max w <= C (ln R)^(1/2) / R at every checkpoint with R >= r_min; 2D: sigma_hat report."""
    th = dict(THRESHOLDS, **(thresholds or {}))
    pts = [(c.stats["R"], c.stats["max"]) for c in trace.checkpoints() if c.stats["R"] >= r_min]
    if not pts:
        return Check("max_measure", "single-site measure bound", None, "", None, None, "insufficient_data")
    if trace.config.dimension == 3:
        worst = max(m * R / math.sqrt(math.log(R)) for R, m in pts)
        return Check("max_measure", "max w <~ (ln R)^(1/2)/R", worst, "max w R / sqrt(ln R) <= C",
                     th["max_measure_3d"] - worst, th["max_measure_3d"],
                     "pass" if worst <= th["max_measure_3d"] else "fail", details={"points": len(pts)})
    sig = [max_measure_exponent([m], R) for R, m in pts]
    return Check("max_measure", "max w <~ R^(-1/2)", min(sig), "sigma_hat >= 1/2 - eps", None, None,
                 "report", hard=False, details={"sigma_hat": sig})


def beurling_check(trace, R: float = 50.0, m_min: int = 100, thresholds=None) -> Check:
    th = dict(THRESHOLDS, **(thresholds or {}))
    rep = beurling_integral_check(trace, R, m_min=m_min)
    key = "beurling_2d" if rep.dimension == 2 else "beurling_3d"
    coverage = rep.m / max(1, rep.m + rep.excluded)
    if rep.m < m_min or coverage < 0.1:
        return Check("beurling_integral", "geometric mean of attachment measures", None, "", None, th[key],
                     "insufficient_data", details={"m": rep.m, "excluded": rep.excluded})
    ok = rep.sup_margin <= th[key] and rep.amgm_holds
    return Check("beurling_integral", "(prod w_kj)^(1/m) <= C m^(-1/2)", rep.sup_margin,
                 "gm sqrt(m) <= C" if rep.dimension == 2 else "gm sqrt(m Cap) <= C",
                 th[key] - rep.sup_margin, th[key], "pass" if ok else "fail",
                 details={"m": rep.m, "excluded": rep.excluded, "coverage": coverage,
                          "amgm_holds": rep.amgm_holds, "geometric_mean": rep.geometric_mean,
                          "rms": rep.rms})


def dimension_identity_report(spectra, eta: float, beta_hat: float | None = None, r_min: float = 30.0) -> dict:
    """tau_hat(eta+2) - tau_hat(eta) against 1/beta_hat, and the two tau inequalities.

    Per-scale tau_hat values are averaged over spectra with R >= r_min; a
    regression slope of -ln(sum) against ln R is reported alongside.  This is
    a report of heuristic identities and never fails.
    """
    use = [s for s in spectra if s.radius >= r_min]
    out = {"eta": eta, "points": len(use), "low_confidence": True}
    if len(use) < 2:
        return out
    Rs = np.array([s.radius for s in use])
    out["R_range"] = [float(Rs.min()), float(Rs.max())]
    out["low_confidence"] = bool(Rs.max() / Rs.min() < 10)
    lnR = np.log(Rs)
    taus = {}
    for a in sorted({float(eta), float(eta + 2), 1.0}):
        if a not in use[0].alphas:
            continue
        per = np.array([s.tau(a) for s in use])
        S = np.array([s.sums[s.alphas.index(a)] for s in use])
        slope = float(np.polyfit(lnR, -np.log(S), 1)[0])
        taus[a] = {"mean": float(per.mean()), "spread": float(per.std()), "slope": slope}
    out["tau"] = {repr(k): v for k, v in taus.items()}
    if float(eta) in taus and float(eta + 2) in taus:
        D = taus[float(eta + 2)]["mean"] - taus[float(eta)]["mean"]
        out["D_hat"] = D
        out["D_hat_slope"] = taus[float(eta + 2)]["slope"] - taus[float(eta)]["slope"]
        out["tau_eta_plus_2_lower_margin"] = taus[float(eta + 2)]["mean"] - (eta + 2) / 2.0
        out["tau_eta_upper_margin"] = (eta - 1.0) - taus[float(eta)]["mean"]
        if beta_hat:
            out["one_over_beta"] = 1.0 / beta_hat
            out["D_minus_one_over_beta"] = D - 1.0 / beta_hat
    return out


def verify(trace, thresholds=None, beurling_R: float = 50.0) -> VerificationReport:
    """Every check that applies to ``trace``."""
    rep = theorem_margin(trace, thresholds=thresholds)
    d = trace.config.dimension
    cps = trace.checkpoints()
    if cps:
        rep.add(cap_radius_check(trace, thresholds=thresholds))
        if d == 2:
            rep.add(makarov_check(trace, thresholds=thresholds))
        rep.add(max_measure_check(trace, thresholds=thresholds))
        spectra = [SpectrumReport.from_stats(c.stats, c.n) for c in cps]
        ns = np.array([c.n for c in trace.steps])
        beta = None
        if len(ns) >= 100:
            try:
                beta = growth_exponent(trace, (max(1, len(ns) // 10), len(ns)))
            except ContractViolation:
                beta = None
        dim = dimension_identity_report(spectra, trace.config.eta, beta)
        rep.add(Check("dimension_identity", "D = tau(eta+2) - tau(eta)", dim.get("D_hat"),
                      "report only", None, None, "report", hard=False, details=dim))
    if trace.config.eta > 0:
        rep.add(beurling_check(trace, beurling_R, thresholds=thresholds))
    return rep
