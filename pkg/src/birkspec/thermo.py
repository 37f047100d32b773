"""Horseshoes, equilibrium statistics, and the Birkhoff spectrum.

The spectrum value at level alpha is the best entropy/exponent ratio
over invariant measures with mean alpha.  The witnesses computed here
come from three sources:

  * Gibbs (equilibrium) states on the induced Markov system or on a
    fixed-iterate horseshoe, weighted by |domain|^sigma * exp(s * Phi)
    and spread to map-invariant statistics by the return-time average;
  * periodic-orbit point masses up to a period bound;
  * the empirical absolutely continuous measure (Birkhoff averages
    along Lebesgue-random orbits; its free energy vanishes, which pins
    entropy = exponent).

Convex combinations of these are admitted as witnesses too, with the
mixture coefficient pinned by the target mean.
"""

import math
from collections import Counter
from dataclasses import dataclass, field

import gmpy2
import numpy as np

from .hp import workprec
from .maps import QuadraticMap, Observable, hat_fixed_point, \
    lyapunov_average_batch, birkhoff_average_batch
from .inducing import InducedSystem, _Piece, _solve_preimage
from .synthetic import PiecewiseLinearSystem

CYLINDER_BUDGET = 2_000_000


@dataclass
class MeasureStats:
    """(entropy, exponent, observable means, free energy) of one measure."""

    entropy: float
    exponent: float
    means: dict
    provenance: str
    free_energy: float = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.free_energy is None:
            self.free_energy = self.entropy - self.exponent

    @property
    def ratio(self):
        return self.entropy / self.exponent if self.exponent > 0 else math.nan

    def mean(self, name):
        return self.means[name]


def mix_stats(s1: MeasureStats, s2: MeasureStats, t: float) -> MeasureStats:
    """Convex combination t*s1 + (1-t)*s2 (entropy and exponent are
    affine in the measure)."""
    means = {k: t * s1.means[k] + (1 - t) * s2.means[k]
             for k in s1.means.keys() & s2.means.keys()}
    return MeasureStats(
        entropy=t * s1.entropy + (1 - t) * s2.entropy,
        exponent=t * s1.exponent + (1 - t) * s2.exponent,
        means=means,
        provenance=f"mix[{t:.4f}]({s1.provenance} | {s2.provenance})")


@dataclass
class Horseshoe:
    """Intervals K_1..K_m each mapped onto [-xhat, xhat] by f^q."""

    a: float
    precision: int
    q: int
    intervals: list           # (lo, hi) mpfr pairs
    connector: dict           # I_plus, u, tau, base sign data
    source_return_time: int
    source_sign: int
    endpoint_error: float     # max |f^q(endpoint) -+ xhat| relative

    @property
    def m(self):
        return len(self.intervals)

    def lengths(self):
        return [float(hi - lo) for lo, hi in self.intervals]

    def min_gap(self):
        xs = sorted((float(lo), float(hi)) for lo, hi in self.intervals)
        return min((xs[i + 1][0] - xs[i][1]) for i in range(len(xs) - 1)) \
            if len(xs) > 1 else math.inf

    def to_dict(self):
        return {
            "a": self.a, "q": self.q, "m": self.m,
            "intervals": [[float(lo), float(hi)] for lo, hi in self.intervals],
            "connector": {"I_plus": [float(self.connector["I_plus"][0]),
                                     float(self.connector["I_plus"][1])],
                          "u": self.connector["u"],
                          "tau": self.connector["tau"]},
            "source_return_time": self.source_return_time,
            "source_sign": self.source_sign,
            "endpoint_error": self.endpoint_error,
        }


@dataclass
class SpectrumCurve:
    observable: str
    alphas: list
    values: list               # B(alpha) or None where no witness exists
    witnesses: list            # MeasureStats or None
    c_phi: float
    d_phi: float
    notes: list = field(default_factory=list)

    def rows(self):
        out = []
        for a, v, w in zip(self.alphas, self.values, self.witnesses):
            out.append({
                "alpha": a, "B": v,
                "witness_h": None if w is None else w.entropy,
                "witness_lambda": None if w is None else w.exponent,
                "witness_mean": None if w is None else w.means.get(self.observable),
            })
        return out


# ---------------------------------------------------------------------------
# Branch-level Gibbs machinery
# ---------------------------------------------------------------------------

class BranchModel:
    """Per-branch data driving the Gibbs family.

    Arrays over branches: log-length, log |Df^R| (geometric mean over
    the branch, i.e. log(|target| / |domain|)), return time R, domain
    state and target state (0 = plus half, 1 = minus half; single-state
    models use 0 everywhere), and observable sums Phi along the orbit
    of the domain midpoint.
    """

    def __init__(self, log_len, log_slope, R, s_from, s_to, n_states,
                 phi_sums, kind):
        self.log_len = np.asarray(log_len, dtype=float)
        self.log_slope = np.asarray(log_slope, dtype=float)
        self.R = np.asarray(R, dtype=float)
        self.s_from = np.asarray(s_from, dtype=int)
        self.s_to = np.asarray(s_to, dtype=int)
        self.n_states = n_states
        self.phi_sums = {k: np.asarray(v, dtype=float)
                         for k, v in phi_sums.items()}
        self.kind = kind

    @property
    def size(self):
        return len(self.log_len)

    def observables(self):
        return list(self.phi_sums)


def _orbit_phi_sums(a, starts, steps, observables):
    """Vectorized float64 orbit sums of each observable, per start."""
    x = np.asarray(starts, dtype=float).copy()
    sums = {obs.name: np.zeros_like(x) for obs in observables}
    for _ in range(steps):
        for obs in observables:
            sums[obs.name] += obs(x)
        x = 1.0 - a * x * x
    return sums


def model_from_induced(system: InducedSystem, observables) -> BranchModel:
    """Branch data from an induced system; Phi from midpoint orbits.

    Midpoint orbits are computed in float64 grouped by return time;
    shadowing makes the resulting sums adequate stand-ins for the
    branch averages at the tolerances the family is used for.
    """
    lam_len = float(system.lambda_plus[1] - system.lambda_plus[0])
    by_R = {}
    for idx, b in enumerate(system.branches):
        by_R.setdefault(b.return_time, []).append(idx)
    nb = len(system.branches)
    log_len = np.empty(nb)
    log_slope = np.empty(nb)
    R = np.empty(nb, dtype=int)
    s_from = np.empty(nb, dtype=int)
    s_to = np.empty(nb, dtype=int)
    phi = {obs.name: np.empty(nb) for obs in observables}
    with workprec(system.precision):
        log_lam = float(gmpy2.log(system.lambda_plus[1]
                                  - system.lambda_plus[0]))
        for idx, b in enumerate(system.branches):
            ll = float(gmpy2.log(b.domain_hi - b.domain_lo))
            log_len[idx] = ll
            log_slope[idx] = log_lam - ll
            R[idx] = b.return_time
            s_from[idx] = 0 if b.domain_lo >= 0 else 1
            s_to[idx] = 0 if b.target_sign > 0 else 1
    for r, idxs in by_R.items():
        mids = [float((system.branches[i].domain_lo
                       + system.branches[i].domain_hi) / 2) for i in idxs]
        sums = _orbit_phi_sums(system.a, mids, r, observables)
        for obs in observables:
            phi[obs.name][idxs] = sums[obs.name]
    return BranchModel(log_len, log_slope, R, s_from, s_to, 2, phi,
                       kind="induced")


def model_from_horseshoe(h: Horseshoe, observables) -> BranchModel:
    """Full-shift branch data for a fixed-iterate horseshoe."""
    xhat_len = None
    log_len = []
    mids = []
    with workprec(h.precision):
        for lo, hi in h.intervals:
            log_len.append(float(gmpy2.log(hi - lo)))
            mids.append(float((lo + hi) / 2))
        xhat = hat_fixed_point(QuadraticMap(h.a))
        xhat_len = math.log(2 * xhat)
    log_len = np.array(log_len)
    log_slope = xhat_len - log_len
    sums = _orbit_phi_sums(h.a, mids, h.q, observables)
    phi = {obs.name: sums[obs.name] for obs in observables}
    m = h.m
    return BranchModel(log_len, log_slope, [h.q] * m, [0] * m, [0] * m, 1,
                       phi, kind="horseshoe")


def model_from_linear(pls: PiecewiseLinearSystem, observables) -> BranchModel:
    """Exact branch data for a piecewise-linear system (R = 1)."""
    log_len = [-math.log(s) for s in pls.slopes]
    log_slope = [math.log(s) for s in pls.slopes]
    mids = [(b.lo + b.hi) / 2 for b in pls.branches]
    phi = {obs.name: [float(obs(x)) for x in mids] for obs in observables}
    m = pls.m
    return BranchModel(log_len, log_slope, [1] * m, [0] * m, [0] * m, 1,
                       phi, kind="linear")


def _logsumexp(v):
    if len(v) == 0:
        return -math.inf
    mx = np.max(v)
    if mx == -math.inf:
        return -math.inf
    return float(mx + np.log(np.exp(v - mx).sum()))


def markov_gibbs_stats(model: BranchModel, sigma, s_tilt, phi_name=None,
                       provenance=None):
    """Induced-level equilibrium statistics for weights len^sigma e^{s Phi}.

    For multiplicative weights the depth limit of the cylinder
    construction is the stationary (Bernoulli or two-state Markov) chain
    computed here in closed form via the Perron eigendata.
    """
    logw = sigma * model.log_len
    if s_tilt != 0.0:
        if phi_name is None:
            raise ValueError("a tilt needs an observable")
        logw = logw + s_tilt * model.phi_sums[phi_name]
    if model.n_states == 1:
        Z = _logsumexp(logw)
        P = np.exp(logw - Z)
        pi_branch = P
        log_P = logw - Z
    else:
        lM = np.full((2, 2), -math.inf)
        for ss in (0, 1):
            for tt in (0, 1):
                mask = (model.s_from == ss) & (model.s_to == tt)
                lM[ss, tt] = _logsumexp(logw[mask])
        K = lM.max()
        M = np.exp(lM - K)
        # Perron data of a positive 2x2 matrix
        tr, det = M[0, 0] + M[1, 1], M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        theta = tr / 2 + math.sqrt(max(tr * tr / 4 - det, 0.0))
        r = np.array([M[0, 1], theta - M[0, 0]])
        if r[0] <= 0 or r[1] <= 0:
            r = np.array([theta - M[1, 1], M[1, 0]])
        r = np.abs(r) + 1e-300
        l = np.array([M[1, 0], theta - M[0, 0]])
        if l[0] <= 0 or l[1] <= 0:
            l = np.array([theta - M[1, 1], M[0, 1]])
        l = np.abs(l) + 1e-300
        pi = l * r
        pi = pi / pi.sum()
        log_theta = math.log(theta) + K
        log_r = np.log(r)
        log_P = (logw + log_r[model.s_to] - log_theta
                 - log_r[model.s_from])
        P = np.exp(log_P)
        pi_branch = pi[model.s_from] * P
    h_F = float(-(pi_branch * log_P).sum())
    lam_F = float((pi_branch * model.log_slope).sum())
    R_bar = float((pi_branch * model.R).sum())
    means = {k: float((pi_branch * v).sum())
             for k, v in model.phi_sums.items()}
    prov = provenance or (f"gibbs[{model.kind}] sigma={sigma:g} "
                          f"s={s_tilt:g}" +
                          (f" phi={phi_name}" if s_tilt else ""))
    return MeasureStats(entropy=h_F, exponent=lam_F, means=means,
                        provenance=prov,
                        extra={"R_bar": R_bar, "level": "induced",
                               "sigma": sigma, "s": s_tilt})


def spread_to_f_invariant(stats: MeasureStats, q=None) -> MeasureStats:
    """Project induced-level statistics to the base map.

    Entropy, exponent and observable sums all divide by the (mean)
    return time: the fixed-iterate case divides by q, the variable case
    by the expected return time of the induced measure.
    """
    if q is not None:
        denom = float(q)
    else:
        denom = stats.extra.get("R_bar")
        if denom is None:
            raise ValueError("no return-time data to spread with")
    if denom <= 0:
        raise ZeroDivisionError("return time must be positive")
    means = {k: v / denom for k, v in stats.means.items()}
    return MeasureStats(
        entropy=stats.entropy / denom, exponent=stats.exponent / denom,
        means=means, provenance=stats.provenance + f" /R={denom:.4g}",
        extra={**stats.extra, "level": "map", "R_denom": denom})


def equilibrium_stats(source, sigma, s_tilt=0.0, phi=None, depth=None,
                      observables=()):
    """Equilibrium statistics, literal at finite depth where exact.

    For a piecewise-linear system with a requested depth the cylinder
    sum is enumerated exactly as defined (weights |K_word|^sigma
    e^{s*Phi(word)} with Phi summed along the periodic orbit of the
    word).  For branch models, horseshoes and induced systems the
    weights are multiplicative, so the depth limit is computed in
    closed form instead; enumeration at any depth would return the
    same numbers there.
    """
    if isinstance(source, PiecewiseLinearSystem) and depth is not None:
        return _enumerated_gibbs(source, sigma, s_tilt, phi, depth)
    if isinstance(source, PiecewiseLinearSystem):
        model = model_from_linear(source, list(observables) +
                                  ([phi] if phi else []))
    elif isinstance(source, Horseshoe):
        model = model_from_horseshoe(source, list(observables) +
                                     ([phi] if phi else []))
    elif isinstance(source, InducedSystem):
        model = model_from_induced(source, list(observables) +
                                   ([phi] if phi else []))
    elif isinstance(source, BranchModel):
        model = source
    else:
        raise TypeError(f"cannot build equilibrium stats from {type(source)}")
    return markov_gibbs_stats(model, sigma, s_tilt,
                              phi.name if phi is not None else None)


def _enumerated_gibbs(pls: PiecewiseLinearSystem, sigma, s_tilt, phi, depth):
    """Literal depth-ell cylinder enumeration on a linear system."""
    m = pls.m
    W = m ** (depth + 1)
    if W > CYLINDER_BUDGET:
        raise ValueError(f"{W} cylinders exceed the budget {CYLINDER_BUDGET}")
    idx = np.arange(W)
    digits = np.empty((W, depth + 1), dtype=np.int64)
    rem = idx.copy()
    for k in range(depth, -1, -1):
        digits[:, k] = rem % m
        rem //= m
    log_s = np.log(pls.slopes)
    loglen = -log_s[digits].sum(axis=1)
    logD = -loglen
    # periodic point of each cyclic word via the affine pullback
    slopes = np.array(pls.slopes)
    los = np.array([b.lo for b in pls.branches])
    r = np.ones(W)
    c = np.zeros(W)
    for k in range(depth, -1, -1):
        d = digits[:, k]
        r = r / slopes[d]
        c = los[d] + c / slopes[d]
    x0 = c / (1.0 - r)
    phis = np.zeros(W)
    if phi is not None:
        x = x0.copy()
        for k in range(depth + 1):
            phis += phi(x)
            d = digits[:, k]
            x = (x - los[d]) * slopes[d]
    logw = sigma * loglen + s_tilt * phis
    Z = _logsumexp(logw)
    wt = np.exp(logw - Z)
    h = float(-(wt * (logw - Z)).sum()) / (depth + 1)
    lam = float((wt * logD).sum()) / (depth + 1)
    means = {}
    if phi is not None:
        means[phi.name] = float((wt * phis).sum()) / (depth + 1)
    symbol_weights = [float(wt[digits[:, 0] == i].sum()) for i in range(m)]
    return MeasureStats(
        entropy=h, exponent=lam, means=means,
        provenance=f"gibbs[linear depth={depth}] sigma={sigma:g} s={s_tilt:g}",
        extra={"R_bar": 1.0, "level": "induced", "depth": depth,
               "symbol_weights": symbol_weights,
               "log_partition_rate": Z / (depth + 1)})


# ---------------------------------------------------------------------------
# Horseshoe extraction and pressure sums
# ---------------------------------------------------------------------------

def _fake_piece(dlo, dhi, ilo, ihi, orient):
    return _Piece(dlo, dhi, ilo, ihi, orient, 0)


def extract_horseshoe(qmap: QuadraticMap, system: InducedSystem,
                      min_branches=2, connector_budget=40,
                      return_time=None, sign=None) -> Horseshoe:
    """Select a common-return-time branch family and close it up.

    Branches sharing (R, sign) are composed with a connector (I, u):
    a subinterval of the base half whose u-th image is exactly
    [-xhat, xhat], located by following monotone laps.  The pullbacks of
    the connector interval through the branches are then permuted onto
    each other by f^q, q = R + u.
    """
    groups = Counter((b.return_time, b.target_sign) for b in system.branches)
    if return_time is not None:
        key = (return_time, sign if sign is not None else 1)
        if groups.get(key, 0) < min_branches:
            raise ValueError(f"no branch group with R={return_time}")
    else:
        eligible = [(k, c) for k, c in groups.items() if c >= min_branches]
        if not eligible:
            raise ValueError("no two branches share a return time and sign; "
                             "increase T_max")
        key = max(eligible, key=lambda kc: (kc[1], -kc[0][0]))[0]
    t0, sgn = key
    group = system.branches_with(return_time=t0, sign=sgn)

    with workprec(system.precision):
        a_mp = gmpy2.mpfr(system.a)
        xhat = (gmpy2.sqrt(1 + 4 * a_mp) - 1) / (2 * a_mp)
        lam_lo, lam_hi = system.lambda_plus
        lam_len = lam_hi - lam_lo
        tol = lam_len * gmpy2.mpfr(2) ** -80
        # follow monotone laps of Lambda+ until one image covers Xhat
        laps = [_fake_piece(lam_lo, lam_hi, lam_lo, lam_hi, 1)]
        connector = None
        for u in range(1, connector_budget + 1):
            new_laps = []
            for lp in laps:
                if lp.ilo < 0 < lp.ihi:
                    x0 = _solve_preimage(a_mp, lp, u - 1, gmpy2.mpfr(0), tol)
                    if lp.orient > 0:
                        new_laps.append(_fake_piece(lp.dlo, x0, lp.ilo,
                                                    gmpy2.mpfr(0), lp.orient))
                        new_laps.append(_fake_piece(x0, lp.dhi, gmpy2.mpfr(0),
                                                    lp.ihi, lp.orient))
                    else:
                        new_laps.append(_fake_piece(lp.dlo, x0, gmpy2.mpfr(0),
                                                    lp.ihi, lp.orient))
                        new_laps.append(_fake_piece(x0, lp.dhi, lp.ilo,
                                                    gmpy2.mpfr(0), lp.orient))
                else:
                    new_laps.append(lp)
            laps = []
            for lp in new_laps:
                positive = lp.ilo >= 0
                v1 = 1 - a_mp * lp.ilo * lp.ilo
                v2 = 1 - a_mp * lp.ihi * lp.ihi
                if positive:
                    lp.ilo, lp.ihi, lp.orient = v2, v1, -lp.orient
                else:
                    lp.ilo, lp.ihi = v1, v2
                laps.append(lp)
            best = None
            for lp in laps:
                if lp.ilo <= -xhat and lp.ihi >= xhat:
                    ia = _solve_preimage(a_mp, lp, u, -xhat, tol)
                    ib = _solve_preimage(a_mp, lp, u, xhat, tol)
                    d1, d2 = (ia, ib) if ia <= ib else (ib, ia)
                    tau = float(min(d1 - lam_lo, lam_hi - d2) / (d2 - d1))
                    if best is None or tau > best[0]:
                        best = (tau, d1, d2)
            if best is not None and best[0] > 0:
                connector = {"I_plus": (best[1], best[2]), "u": u,
                             "tau": best[0]}
                break
        if connector is None:
            raise RuntimeError(f"no connector interval found within "
                               f"{connector_budget} iterates")

        ip_lo, ip_hi = connector["I_plus"]
        if sgn < 0:
            tgt_lo, tgt_hi = -ip_hi, -ip_lo
        else:
            tgt_lo, tgt_hi = ip_lo, ip_hi
        intervals = []
        for b in group:
            pc = _fake_piece(b.domain_lo, b.domain_hi,
                             lam_lo if sgn > 0 else -lam_hi,
                             lam_hi if sgn > 0 else -lam_lo,
                             b.orient)
            xa = _solve_preimage(a_mp, pc, t0, tgt_lo, tol)
            xb = _solve_preimage(a_mp, pc, t0, tgt_hi, tol)
            d1, d2 = (xa, xb) if xa <= xb else (xb, xa)
            intervals.append((d1, d2))
        q = t0 + connector["u"]
        # verify the horseshoe property at the interval endpoints
        err = 0.0
        for lo, hi in intervals:
            for e in (lo, hi):
                v = e
                for _ in range(q):
                    v = 1 - a_mp * v * v
                err = max(err, float(min(abs(v - xhat), abs(v + xhat))
                                     / (2 * xhat)))
    return Horseshoe(a=system.a, precision=system.precision, q=q,
                     intervals=intervals, connector=connector,
                     source_return_time=t0, source_sign=sgn,
                     endpoint_error=err)


def pressure_sum(source, sigma, depth):
    """(1/ell) log sum over cylinders of |K_word|^sigma, per depth.

    Exact product geometry for linear systems; nested endpoint solving
    for a real horseshoe (budget permitting).  Returns the sequence for
    ell = 1..depth and the final value.
    """
    if isinstance(source, PiecewiseLinearSystem):
        base = math.log(sum(s ** -sigma for s in source.slopes))
        rates = [((ell + 1) / ell) * base for ell in range(1, depth + 1)]
        return {"rates": rates, "rate": rates[-1], "limit": base,
                "cylinders": source.m ** (depth + 1)}
    if isinstance(source, Horseshoe):
        return _horseshoe_pressure(source, sigma, depth)
    raise TypeError(f"pressure_sum does not handle {type(source)}")


def _horseshoe_pressure(h: Horseshoe, sigma, depth):
    m = h.m
    if m ** (depth + 1) > CYLINDER_BUDGET:
        raise ValueError("cylinder budget exceeded")
    with workprec(h.precision):
        a_mp = gmpy2.mpfr(h.a)
        xhat = (gmpy2.sqrt(1 + 4 * a_mp) - 1) / (2 * a_mp)
        tol = (2 * xhat) * gmpy2.mpfr(2) ** -70
        orients = []
        for lo, hi in h.intervals:
            v = lo
            d = gmpy2.mpfr(1)
            for _ in range(h.q):
                d = d * (-2) * a_mp * v
                v = 1 - a_mp * v * v
            orients.append(1 if d > 0 else -1)
        level = [(lo, hi, lo, hi) for lo, hi in h.intervals]  # dom + cyl
        rates = []
        for ell in range(1, depth + 1):
            # pull every depth-(ell-1) cylinder back through each branch
            new_level = []
            for j, (jlo, jhi) in enumerate(h.intervals):
                o = orients[j]
                for (klo, khi, _, _) in level:
                    pc = _fake_piece(jlo, jhi, -xhat, xhat, o)
                    xa = _solve_preimage(a_mp, pc, h.q, klo, tol)
                    xb = _solve_preimage(a_mp, pc, h.q, khi, tol)
                    d1, d2 = (xa, xb) if xa <= xb else (xb, xa)
                    new_level.append((d1, d2, d1, d2))
            level = new_level
            tot = sum((hi - lo) ** gmpy2.mpfr(sigma) for lo, hi, _, _ in level)
            rates.append(float(gmpy2.log(tot)) / ell)
    return {"rates": rates, "rate": rates[-1],
            "cylinders": len(level)}


def bowen_dimension(source, depth=8, tol=1e-10, lo=0.0, hi=1.5):
    """Root of the pressure rate in sigma (unique: the rate is strictly
    decreasing in sigma)."""

    def rate(s):
        return pressure_sum(source, s, depth)["rate"]

    rlo, rhi = rate(lo), rate(hi)
    if rlo < 0:
        return lo
    if rhi > 0:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if rate(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Periodic orbits and the empirical acip
# ---------------------------------------------------------------------------

def periodic_orbit_stats(qmap: QuadraticMap, period_bound, observables,
                         grid=8192):
    """Point masses on periodic orbits up to the period bound.

    Cycles are located from sign changes of f^p(x) - x and refined by
    bisection; duplicates across divisors are removed.  Entropy is 0;
    cycles with nonpositive exponent are kept but flagged, since ratio
    witnesses cannot use them.
    """
    a = float(qmap.a)
    seen = set()
    out = []
    # the boundary fixed point sits at an endpoint where sign-change
    # scanning cannot see it
    from .maps import fixed_points
    explicit = [([x], abs(mult)) for x, mult in fixed_points(qmap)]
    for orbit, _m in explicit:
        key = tuple(sorted(round(v, 9) for v in orbit))
        if key in seen:
            continue
        seen.add(key)
        arr = np.array(orbit)
        with np.errstate(divide="ignore"):
            lam = float(np.mean(np.log(2.0 * a * np.abs(arr))))
        means = {obs.name: float(np.mean(obs(arr))) for obs in observables}
        out.append(MeasureStats(
            entropy=0.0, exponent=lam, means=means,
            provenance=f"fixed point x={orbit[0]:.6f}",
            extra={"period": 1, "orbit": orbit, "level": "map"}))
    for p in range(1, period_bound + 1):
        xs = np.linspace(-1.0, 1.0, grid)
        y = xs.copy()
        for _ in range(p):
            y = 1.0 - a * y * y
        g = y - xs
        sign = np.sign(g)
        flips = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
        for i in flips:
            lo, hi = xs[i], xs[i + 1]
            glo = g[i]
            for _ in range(90):
                mid = 0.5 * (lo + hi)
                v = mid
                for _ in range(p):
                    v = 1.0 - a * v * v
                gm = v - mid
                if glo * gm <= 0:
                    hi = mid
                else:
                    lo, glo = mid, gm
            root = 0.5 * (lo + hi)
            orbit = [root]
            for _ in range(p - 1):
                orbit.append(1.0 - a * orbit[-1] ** 2)
            key = tuple(sorted(round(v, 9) for v in orbit))
            if key in seen:
                continue
            seen.add(key)
            arr = np.array(orbit)
            with np.errstate(divide="ignore"):
                lam = float(np.mean(np.log(2.0 * a * np.abs(arr))))
            means = {obs.name: float(np.mean(obs(arr))) for obs in observables}
            out.append(MeasureStats(
                entropy=0.0, exponent=lam, means=means,
                provenance=f"periodic orbit p={p} x0={root:.6f}",
                extra={"period": p, "orbit": orbit, "level": "map"}))
    return out


def acip_stats(qmap: QuadraticMap, observables, n=1_000_000, n_orbits=100,
               seed=12345) -> MeasureStats:
    """Empirical absolutely-continuous measure via Birkhoff averages.

    Exponent and observable means are Monte-Carlo time averages over
    Lebesgue-random orbits; the entropy is set equal to the exponent
    (the free energy of the acip vanishes, and it is the only measure
    with that property).
    """
    rng = np.random.default_rng(seed)
    x0s = rng.uniform(-1.0, 1.0, n_orbits)
    lam = float(np.mean(lyapunov_average_batch(qmap.a, x0s, n)))
    means = {}
    for obs in observables:
        means[obs.name] = float(np.mean(
            birkhoff_average_batch(qmap.a, x0s, n, obs)))
    return MeasureStats(
        entropy=lam, exponent=lam, means=means,
        provenance=f"empirical acip (n={n}, orbits={n_orbits}, seed={seed}; "
                    "entropy pinned by the zero-free-energy identity)",
        extra={"level": "map", "acip": True})


# ---------------------------------------------------------------------------
# The measure family and the spectrum
# ---------------------------------------------------------------------------

@dataclass
class MeasureFamily:
    members: list             # map-level Gibbs members
    cycles: list              # periodic point masses
    acip: MeasureStats | None
    observables: list

    def anchors(self):
        out = list(self.cycles)
        if self.acip is not None:
            out.append(self.acip)
        return out

    def everyone(self):
        return self.members + self.anchors()

    def mean_range(self, name):
        vals = [m.means[name] for m in self.everyone() if name in m.means]
        return (min(vals), max(vals)) if vals else (math.nan, math.nan)


DEFAULT_SIGMAS = (0.0, 0.25, 0.5, 0.75, 0.9, 1.0, 1.05)


def _tilt_grid(s_max, per_side):
    mags = np.geomspace(s_max / 200.0, s_max, per_side)
    return np.concatenate([-mags[::-1], [0.0], mags])


def build_measure_family(qmap: QuadraticMap, source, observables,
                         sigmas=DEFAULT_SIGMAS, s_max=40.0, tilts_per_side=26,
                         period_bound=12, acip_orbits=64, acip_n=200_000,
                         seed=20240) -> MeasureFamily:
    """Two-parameter Gibbs sweep plus periodic orbits plus the acip.

    The sigma grid controls the geometric weight, the tilt s trades the
    mean of each observable; every member is spread to map level.
    """
    observables = list(observables)
    if isinstance(source, BranchModel):
        model = source
    else:
        model = model_from_induced(source, observables) \
            if isinstance(source, InducedSystem) else \
            model_from_horseshoe(source, observables) \
            if isinstance(source, Horseshoe) else \
            model_from_linear(source, observables)
    members = []
    tilts = _tilt_grid(s_max, tilts_per_side)
    for sigma in sigmas:
        for obs in observables:
            for s_tilt in tilts:
                if s_tilt == 0.0 and obs is not observables[0]:
                    continue          # s=0 does not depend on the observable
                st = markov_gibbs_stats(model, sigma, float(s_tilt), obs.name)
                members.append(spread_to_f_invariant(st))
    cycles = periodic_orbit_stats(qmap, period_bound, observables)
    acip = acip_stats(qmap, observables, n=acip_n, n_orbits=acip_orbits,
                      seed=seed)
    return MeasureFamily(members=members, cycles=cycles, acip=acip,
                         observables=observables)


class FamilyIndex:
    """Cached arrays for fast witness search at many levels."""

    def __init__(self, family: MeasureFamily, name: str):
        self.family = family
        self.name = name
        everyone = [m for m in family.everyone() if name in m.means]
        self.everyone = everyone
        self.H = np.array([m.entropy for m in everyone])
        self.L = np.array([m.exponent for m in everyone])
        self.M = np.array([m.means[name] for m in everyone])
        anchors = [m for m in family.anchors() if name in m.means]
        self.anchors = anchors
        self.aH = np.array([m.entropy for m in anchors])
        self.aL = np.array([m.exponent for m in anchors])
        self.aM = np.array([m.means[name] for m in anchors])

    def best(self, alpha, tol, objective="ratio"):
        """(value, witness) of the best direct or pinned-mixture witness."""
        best_val = -math.inf
        best_kind = None
        ok = (np.abs(self.M - alpha) <= tol) & (self.L > 0)
        if ok.any():
            vals = np.where(
                ok, (self.H / np.maximum(self.L, 1e-300)) if objective == "ratio"
                else (self.H - self.L), -math.inf)
            j = int(np.argmax(vals))
            if vals[j] > best_val:
                best_val = float(vals[j])
                best_kind = ("direct", j)
        if len(self.anchors):
            denom = self.M[None, :] - self.aM[:, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (self.M[None, :] - alpha) / denom
                valid = np.isfinite(t) & (t >= 0.0) & (t <= 1.0)
                t = np.where(valid, t, 0.5)
                Hm = t * self.aH[:, None] + (1 - t) * self.H[None, :]
                Lm = t * self.aL[:, None] + (1 - t) * self.L[None, :]
                valid &= Lm > 0
            if objective == "ratio":
                vals = np.where(valid, Hm / np.where(Lm > 0, Lm, 1.0), -math.inf)
            else:
                vals = np.where(valid, Hm - Lm, -math.inf)
            k = int(np.argmax(vals))
            i, j = divmod(k, vals.shape[1])
            if vals[i, j] > best_val:
                best_val = float(vals[i, j])
                best_kind = ("mix", i, j, float(t[i, j]))
        if best_kind is None:
            return None, math.nan
        if best_kind[0] == "direct":
            return self.everyone[best_kind[1]], best_val
        _, i, j, tt = best_kind
        return mix_stats(self.anchors[i], self.everyone[j], tt), best_val


def witnesses_at(family: MeasureFamily, name, alpha, tol):
    """All direct candidates with mean within tol of alpha (mixtures are
    handled by FamilyIndex.best)."""
    return [m for m in family.everyone()
            if name in m.means and abs(m.means[name] - alpha) <= tol]


def best_witness(family: MeasureFamily, name, alpha, tol, objective="ratio"):
    """Best witness at a level set: max h/lambda or max h-lambda."""
    if isinstance(family, FamilyIndex):
        return family.best(alpha, tol, objective)
    return FamilyIndex(family, name).best(alpha, tol, objective)


def birkhoff_spectrum(qmap: QuadraticMap, phi: Observable, family,
                      alpha_grid=41, alphas=None) -> SpectrumCurve:
    """Sampled variational spectrum over the family's mean range.

    B(alpha) is the best entropy/exponent ratio among family members,
    periodic orbits, the empirical acip and pinned mixtures whose mean
    matches alpha within half a grid step.  Levels with no witness are
    reported as None: the computed curve is an inner approximation.
    """
    name = phi.name
    c_est, d_est = family.mean_range(name)
    if alphas is None:
        alphas = list(np.linspace(c_est, d_est, alpha_grid))
    tol = (alphas[-1] - alphas[0]) / (2 * max(len(alphas) - 1, 1))
    index = FamilyIndex(family, name)
    values = []
    wits = []
    for a in alphas:
        w, v = index.best(a, tol, "ratio")
        values.append(None if w is None else v)
        wits.append(w)
    return SpectrumCurve(
        observable=name, alphas=list(alphas), values=values, witnesses=wits,
        c_phi=c_est, d_phi=d_est,
        notes=["endpoints are inner approximations from the computed "
               "family and periodic orbits up to the period bound"])


def spectrum_property_check(curve: SpectrumCurve, mean, mono_tol=0.05,
                            jump_tol=0.1):
    """Monotone up to the mean, down after it, and bounded jumps."""
    violations = []
    pts = [(a, v) for a, v in zip(curve.alphas, curve.values)
           if v is not None]
    for (a1, v1), (a2, v2) in zip(pts, pts[1:]):
        if abs(v2 - v1) > jump_tol:
            violations.append(("jump", a1, a2, v2 - v1))
        if a2 <= mean and v2 < v1 - mono_tol:
            violations.append(("monotone-up", a1, a2, v2 - v1))
        if a1 >= mean and v2 > v1 + mono_tol:
            violations.append(("monotone-down", a1, a2, v2 - v1))
    return {"passed": not violations, "violations": violations,
            "checked_points": len(pts)}


def local_dimension(sampler, x, radii, r2_min=0.9):
    """Log-log slope of ball masses against radii.

    sampler(x, rho) must return the measure of the closed rho-ball.
    Returns slope, r_squared and a status flag ("fit-rejected" when the
    fit quality is below r2_min).
    """
    radii = np.asarray(sorted(radii, reverse=True), dtype=float)
    masses = np.array([sampler(x, r) for r in radii])
    if np.any(masses <= 0):
        keep = masses > 0
        radii, masses = radii[keep], masses[keep]
    if len(radii) < 3:
        return {"status": "fit-rejected", "reason": "too few positive masses"}
    lx = np.log(radii)
    ly = np.log(masses)
    if np.allclose(ly, ly[0]):
        return {"status": "ok", "slope": 0.0, "r_squared": 1.0,
                "points": len(radii)}
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(((ly - pred) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    status = "ok" if r2 >= r2_min else "fit-rejected"
    return {"status": status, "slope": float(slope), "r_squared": r2,
            "points": len(radii)}


class GibbsCylinderSampler:
    """Ball masses of a Gibbs (product) measure by cylinder aggregation."""

    def __init__(self, pls: PiecewiseLinearSystem, weights, max_depth=40):
        w = np.asarray(weights, dtype=float)
        self.pls = pls
        self.weights = w / w.sum()
        self.max_depth = max_depth

    def __call__(self, x, rho):
        lo, hi = x - rho, x + rho

        def mass(clo, chi, wt, depth):
            if chi <= lo or clo >= hi:
                return 0.0
            if (lo <= clo and chi <= hi) or depth >= self.max_depth:
                return wt
            total = 0.0
            for i, b in enumerate(self.pls.branches):
                width = chi - clo
                blo = clo + b.lo * width
                bhi = blo + width / b.slope
                total += mass(blo, bhi, wt * self.weights[i], depth + 1)
            return total

        return mass(0.0, 1.0, 1.0, 0)


def periodic_pressure(qmap: QuadraticMap, phi: Observable, period,
                      samples_per_lap=6):
    """Pressure of phi - log|Df| from a full period-p cycle sum.

    (1/p) log sum over fixed points of f^p of exp(S_p phi)/|Df^p|; the
    classical estimate of sup(mean + free energy) over invariant
    measures, independent of any induced-system truncation.  Roots are
    bracketed per monotone lap of f^p (they cluster near the orbit of
    the critical value, below any uniform grid), then refined by
    vectorized bisection.  Exact for phi = 0 when the period-p points
    are complete.
    """
    from .maps import critical_preimages
    a = float(qmap.a)
    pts = critical_preimages(a, period)
    K = samples_per_lap
    offs = np.linspace(0.0, 1.0, K)
    lo_l = pts[:-1]
    width = np.diff(pts)
    xs = (lo_l[:, None] + width[:, None] * offs[None, :]).ravel()
    y = xs.copy()
    for _ in range(period):
        y = 1.0 - a * y * y
    g = (y - xs).reshape(-1, K)
    sgn = np.sign(g)
    sgn[sgn == 0] = 1
    flip = sgn[:, :-1] * sgn[:, 1:] < 0
    lap_idx, off_idx = np.nonzero(flip)
    lo = lo_l[lap_idx] + width[lap_idx] * offs[off_idx]
    hi = lo_l[lap_idx] + width[lap_idx] * offs[off_idx + 1]
    glo = g[lap_idx, off_idx]
    for _ in range(70):
        mid = 0.5 * (lo + hi)
        v = mid.copy()
        for _ in range(period):
            v = 1.0 - a * v * v
        gm = v - mid
        left = glo * gm <= 0
        hi = np.where(left, mid, hi)
        lo = np.where(left, lo, mid)
        glo = np.where(left, glo, gm)
    roots = 0.5 * (lo + hi)
    # endpoint fixed points carry no sign change
    for e in (-1.0, 1.0):
        v = e
        for _ in range(period):
            v = 1.0 - a * v * v
        if abs(v - e) < 1e-12:
            roots = np.concatenate([roots, [e]])
    sp = np.zeros_like(roots)
    ld = np.zeros_like(roots)
    v = roots.copy()
    with np.errstate(divide="ignore"):
        for _ in range(period):
            sp += phi(v)
            ld += np.log(2.0 * a * np.abs(v))
            v = 1.0 - a * v * v
    logw = sp - ld
    Z = _logsumexp(logw)
    w = np.exp(logw - Z)
    return {
        "pressure": Z / period,
        "period": period,
        "count": len(roots),
        "mean": float((w * sp).sum()) / period,
        "exponent": float((w * ld).sum()) / period,
    }
