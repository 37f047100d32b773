"""Bound-period machinery around the critical point.

The scale table delta_p assigns to each return depth the radius below
which an orbit is considered bound to the critical orbit for p steps:

    delta_p = sqrt( (exp(-eps*p)/10) / sum_{i<p} |Df^i(f0)| / |f^{i+1}0| )

The annulus [delta_p, delta_{p-1}) is cut into floor(exp(3*eps*p)) equal
raw cells; inside every raw cell a slowly-recurrent anchor point is
located by grid search (|f^n x| >= delta_N * exp(-eps*n) for all
n >= 1/eps up to a finite horizon), and the anchors of every other raw
cell become the boundary points of the critical partition.  Each
partition element then contains exactly one raw cell and is covered by
three contiguous ones.
"""

import math
from dataclasses import dataclass, field

import gmpy2
import numpy as np

from .hp import workprec
from .maps import QuadraticMap
from .certify import LAMBDA_DEFAULT


@dataclass
class BindingConfig:
    epsilon: float = 0.01
    N: int = 6
    p_max: int = 40
    anchor_horizon: int = 1000
    precision: int = 128
    # Constants of the construction, exposed with their standard values.
    delta_prefactor: float = 0.1   # the 1/10 inside the delta_p formula
    cut_rate: float = 3.0          # cells per annulus = floor(exp(cut_rate*eps*p))
    anchor_candidates: int | None = None   # default: ceil(10/eps), capped
    anchor_budget: int = 200_000           # orbit steps per cell, incl. refinement
    anchor_precision: int | None = None    # default: scaled to anchor_horizon

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError("epsilon must be in (0, 1)")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.p_max <= self.N:
            raise ValueError("p_max must exceed N")

    @property
    def recurrence_start(self) -> int:
        return int(math.ceil(1.0 / self.epsilon))

    def n_candidates(self):
        if self.anchor_candidates is not None:
            return self.anchor_candidates
        return min(256, int(math.ceil(10.0 / self.epsilon)))


@dataclass
class DeltaTable:
    """delta_p for p in [N, p_max], strictly decreasing (mpfr values)."""

    a: float
    epsilon: float
    N: int
    p_max: int
    deltas: list            # mpfr, index 0 <-> p = N
    delta_prefactor: float = 0.1

    def delta(self, p: int):
        if not (self.N <= p <= self.p_max):
            raise KeyError(f"p={p} outside table range [{self.N}, {self.p_max}]")
        return self.deltas[p - self.N]

    def delta_float(self, p: int) -> float:
        return float(self.delta(p))

    def pairs(self):
        return [(self.N + i, float(d)) for i, d in enumerate(self.deltas)]

    def to_dict(self):
        return {
            "a": self.a, "epsilon": self.epsilon, "N": self.N,
            "p_max": self.p_max, "delta_prefactor": self.delta_prefactor,
            "deltas": [{"p": p, "delta": d} for p, d in self.pairs()],
        }


def compute_delta_table(qmap: QuadraticMap, config: BindingConfig) -> DeltaTable:
    """Tabulate delta_p from the critical-value orbit at high precision.

    Fails if the critical orbit returns to 0 within floating resolution
    (superstable parameter: the harmonic sum blows up).
    """
    with workprec(config.precision):
        a = gmpy2.mpfr(qmap.a)
        eps = gmpy2.mpfr(config.epsilon)
        pref = gmpy2.mpfr(config.delta_prefactor)
        x = gmpy2.mpfr(1)             # f(0)
        deriv = gmpy2.mpfr(1)         # |Df^i(f0)|, i = 0
        ssum = gmpy2.mpfr(0)
        deltas = []
        for p in range(1, config.p_max + 1):
            ax = abs(x)
            if ax < 1e-14:
                raise ArithmeticError(
                    f"critical orbit hits 0 at step {p} (superstable parameter)")
            ssum = ssum + deriv / ax           # term i = p-1 uses |f^p 0|
            if p >= config.N:
                d = gmpy2.sqrt(pref * gmpy2.exp(-eps * p) / ssum)
                deltas.append(d)
            deriv = deriv * 2 * a * ax
            x = 1 - a * x * x
    table = DeltaTable(a=float(qmap.a), epsilon=config.epsilon, N=config.N,
                       p_max=config.p_max, deltas=deltas,
                       delta_prefactor=config.delta_prefactor)
    for i in range(1, len(deltas)):
        if not deltas[i] < deltas[i - 1]:
            raise ArithmeticError(f"delta table not strictly decreasing at "
                                  f"p={config.N + i}")
    return table


def bound_period(x, table: DeltaTable):
    """The p with delta_p <= |x| < delta_{p-1}, or None outside the range.

    Half-open on the left: x = delta_p exactly binds for p steps.
    Returns None when |x| >= delta_N (outside the critical neighborhood)
    or |x| < delta_{p_max} (deeper than the table resolves).
    """
    ax = abs(x)
    if ax >= table.delta(table.N) or ax < table.delta(table.p_max):
        return None
    lo, hi = table.N, table.p_max       # delta(hi) <= ax < delta(lo)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ax >= table.delta(mid):
            hi = mid
        else:
            lo = mid
    return hi


def verify_lemma_P(qmap: QuadraticMap, table: DeltaTable, samples_per_annulus=1000,
                   lam=LAMBDA_DEFAULT, seed=0, p_range=None):
    """Sample each annulus and check the bound-period estimates.

    (a) |Df^p(x)| >= exp(lam*p/3) for delta_p <= |x| < delta_{p-1};
    (b) log|x|^(-2/log 5) <= p <= log|x|^(-2/lam).

    Violations at small p are reported, not failed: the estimates are
    only asserted from N on.  Returns a per-p report dict.
    """
    rng = np.random.default_rng(seed)
    a = float(qmap.a)
    rows = []
    ps = p_range or range(table.N + 1, table.p_max + 1)
    for p in ps:
        dp = table.delta_float(p)
        dpm1 = table.delta_float(p - 1)
        xs = dp + (dpm1 - dp) * rng.random(samples_per_annulus)
        acc = np.zeros_like(xs)
        v = xs.copy()
        with np.errstate(divide="ignore"):
            for _ in range(p):
                acc += np.log(2.0 * a * np.abs(v))
                v = 1.0 - a * v * v
        margin_a = acc / p - lam / 3.0
        loglx = np.log(1.0 / xs)
        lower = (2.0 / math.log(5.0)) * loglx
        upper = (2.0 / lam) * loglx
        rows.append({
            "p": p,
            "min_margin_a": float(margin_a.min()),
            "violations_a": int((margin_a < 0).sum()),
            "min_margin_b_lower": float((p - lower).min()),
            "min_margin_b_upper": float((upper - p).min()),
            "violations_b": int(((lower > p) | (upper < p)).sum()),
        })
    return {
        "a": a, "lam": lam, "samples_per_annulus": samples_per_annulus,
        "rows": rows,
        "total_violations_a": sum(r["violations_a"] for r in rows),
        "total_violations_b": sum(r["violations_b"] for r in rows),
    }


def verify_outside_expansion(qmap: QuadraticMap, delta_hat, lam=LAMBDA_DEFAULT,
                             n_samples=1000, n_max=60, seed=0):
    """Margins for expansion outside (-delta_hat, delta_hat).

    For orbit segments staying outside the neighborhood for n steps:
        (1/n) log|Df^n(x)| - lam/3 - (1/n) log(delta_hat) >= 0,
    and in the stronger "return" form (first entry at step n) without
    the delta_hat term.  Pairs are found by rejection scanning.
    """
    rng = np.random.default_rng(seed)
    a = float(qmap.a)
    dh = float(delta_hat)
    xs = rng.uniform(-1.0, 1.0, n_samples)
    min_outside = math.inf
    min_return = math.inf
    pairs = 0
    returns = 0
    viol_outside = 0
    viol_return = 0
    log_dh = math.log(dh)
    for x0 in xs:
        if abs(x0) < dh:
            continue
        x = x0
        acc = 0.0
        for n in range(1, n_max + 1):
            acc += math.log(2.0 * a * abs(x))
            x = 1.0 - a * x * x
            if abs(x) < dh:
                m = acc / n - lam / 3.0
                min_return = min(min_return, m)
                returns += 1
                if m < 0:
                    viol_return += 1
                break
            pairs += 1
            m = acc / n - lam / 3.0 - log_dh / n
            min_outside = min(min_outside, m)
            if m < 0:
                viol_outside += 1
    return {
        "a": a, "delta_hat": dh, "lam": lam,
        "pairs": pairs, "returns": returns,
        "min_margin_outside": min_outside, "violations_outside": viol_outside,
        "min_margin_return": min_return, "violations_return": viol_return,
    }


@dataclass
class RawCell:
    p: int
    j: int
    lo: object          # mpfr
    hi: object          # mpfr
    anchor: object | None = None


@dataclass
class PartitionElement:
    p: int              # label of the raw cell it contains
    j: int
    lo: object          # mpfr; element is [lo, hi)
    hi: object
    anchor: object      # the anchor of the contained raw cell


@dataclass
class CriticalPartition:
    """Partition of (0, delta) by slowly-recurrent anchor points.

    elements are ordered right to left; mirrored elements on (-delta, 0)
    are exact negations.  lambda_plus is the right extremal element,
    delta its right boundary, core_bound the innermost boundary below
    which the partition is truncated (depth beyond p_max).
    """

    a: float
    epsilon: float
    N: int
    p_max: int
    anchor_horizon: int
    precision: int
    raw_cells: list
    elements: list
    boundaries: list       # descending mpfr, boundaries[0] = delta
    labels: list           # labels[j] = p of element [boundaries[j+1], boundaries[j])
    delta: object          # mpfr
    core_bound: object     # mpfr
    delta_prefactor: float = 0.1
    cut_rate: float = 3.0

    @property
    def lambda_plus(self):
        return (self.boundaries[1], self.boundaries[0])

    @property
    def lambda_minus(self):
        return (-self.boundaries[0], -self.boundaries[1])

    def raw_cell_count(self, p: int) -> int:
        return sum(1 for c in self.raw_cells if c.p == p)

    def mirror_element(self, k: int):
        e = self.elements[k]
        return PartitionElement(e.p, -e.j, -e.hi, -e.lo, -e.anchor)

    def to_dict(self):
        return {
            "a": self.a, "epsilon": self.epsilon, "N": self.N,
            "p_max": self.p_max, "anchor_horizon": self.anchor_horizon,
            "delta": float(self.delta), "core_bound": float(self.core_bound),
            "lambda_plus": [float(self.lambda_plus[0]), float(self.lambda_plus[1])],
            "elements": [
                {"p": e.p, "j": e.j, "lo": float(e.lo), "hi": float(e.hi),
                 "anchor": float(e.anchor)}
                for e in self.elements
            ],
        }


class AnchorSearchError(RuntimeError):
    """No slowly-recurrent anchor found in a raw cell within budget.

    Signals an epsilon/N/horizon misconfiguration: good points are dense
    when the scales are set up correctly.
    """

    def __init__(self, p, j, tried):
        super().__init__(
            f"no anchor found in raw cell (p={p}, j={j}) after {tried} "
            f"candidates; revisit epsilon/N/anchor_horizon")
        self.cell = (p, j)


def _anchor_precision(config):
    """Mantissa bits for anchor work: ~2.2 bits per horizon step.

    Orbit control over n steps costs about sum log2|Df| <= 2n bits at
    |Df| <= 4; below that the nested-interval pullback cannot encode the
    itinerary and anchors silently lose their recurrence property.
    """
    if config.anchor_precision is not None:
        return config.anchor_precision
    return max(config.precision, int(2.2 * config.anchor_horizon) + 64)


def _thresholds(delta_N, eps, horizon):
    """thr[n] = delta_N * exp(-eps*n), slightly inflated so that points
    produced by cutting exactly at the threshold pass the test with a
    margin larger than downstream rounding drift."""
    guard = 1 + gmpy2.mpfr(2) ** -24
    dec = gmpy2.exp(-gmpy2.mpfr(eps))
    thr = [None] * (horizon + 1)
    cur = gmpy2.mpfr(delta_N) * guard
    for n in range(1, horizon + 1):
        cur = cur * dec
        thr[n] = cur
    return thr


def _recurrence_ok(a_mp, x, thr, n_start, horizon):
    """Early-exit recurrence test; returns (passes, steps_used, n_fail)."""
    v = x
    for n in range(1, horizon + 1):
        v = 1 - a_mp * v * v
        if n >= n_start and abs(v) < thr[n]:
            return False, n, n
    return True, horizon, None


def _tracked_anchor(a_mp, cell_lo, cell_hi, thr, n_start, horizon):
    """Nested-interval construction of a slowly recurrent point.

    Iterates the cell's image interval.  Before each step the image is
    clipped to one side of 0 (keeping the parabola monotone on it), and
    at every constrained time the forbidden neighborhood of 0 is cut
    away, keeping the larger clear part.  Every point of the surviving
    nested set is slowly recurrent through the horizon; the midpoint of
    the final image is pulled back step by step through the recorded
    one-signed intervals (the inverse branch is explicit and
    contracting, so the pullback is numerically stable).  Returns None
    only when some constrained time traps the whole image in the zone.
    """
    tiny = gmpy2.mpfr(2) ** (-gmpy2.get_context().precision // 2)
    ilo, ihi = cell_lo, cell_hi
    states = []             # per time t: image interval the step t->t+1 maps
    for n in range(1, horizon + 1):
        if ilo < 0 < ihi:
            # cut just off 0 before the fold, keep the longer side
            if ihi > -ilo:
                ilo = tiny
            else:
                ihi = -tiny
        states.append((ilo, ihi))
        a2, b2 = 1 - a_mp * ilo * ilo, 1 - a_mp * ihi * ihi
        ilo, ihi = (a2, b2) if a2 <= b2 else (b2, a2)
        if n < n_start:
            continue
        t = thr[n]
        left_clear = min(ihi, -t) - ilo        # part of image below -thr
        right_clear = ihi - max(ilo, t)        # part above +thr
        if left_clear <= 0 and right_clear <= 0:
            return None                        # trapped inside the zone
        if ilo >= t or ihi <= -t:
            continue
        if right_clear >= left_clear:
            ilo = max(ilo, t)
        else:
            ihi = min(ihi, -t)
    # pull the final midpoint back through the one-signed history
    w = (ilo + ihi) / 2
    for t in range(horizon - 1, -1, -1):
        slo, shi = states[t]
        arg = (1 - w) / a_mp
        if arg < 0:
            arg = gmpy2.mpfr(0)
        r = gmpy2.sqrt(arg)
        w = r if shi > 0 else -r
        w = min(max(w, slo), shi)
    return w


def _find_anchor(qmap, cell_lo, cell_hi, config, delta_N):
    """Locate a slowly-recurrent point inside one raw cell.

    Stage 1 scans equispaced candidates and takes the first that passes.
    When the whole grid fails (typical when the constraint window lies
    beyond the cell's decorrelation time) stage 2 runs the
    nested-interval tracker, which mirrors the existence argument and
    succeeds whenever the cell is not genuinely obstructed.
    """
    n_start = config.recurrence_start
    horizon = config.anchor_horizon
    M = config.n_candidates()
    with workprec(_anchor_precision(config)):
        a_mp = gmpy2.mpfr(qmap.a)
        thr = _thresholds(delta_N, config.epsilon, horizon)
        budget = config.anchor_budget
        spent = 0
        span = cell_hi - cell_lo
        for i in range(M):
            if spent >= budget:
                break
            x = cell_lo + span * gmpy2.mpfr(2 * i + 1) / (2 * M)
            ok, used, _ = _recurrence_ok(a_mp, x, thr, n_start, horizon)
            spent += used
            if ok:
                return x
        anchor = _tracked_anchor(a_mp, cell_lo, cell_hi, thr, n_start, horizon)
        if anchor is not None:
            ok, _, _ = _recurrence_ok(a_mp, anchor, thr, n_start, horizon)
            if ok:
                return anchor
    return None


def build_critical_partition(qmap: QuadraticMap, config: BindingConfig,
                             table: DeltaTable | None = None) -> CriticalPartition:
    """Raw cells, anchors, and the skip-one partition of (0, delta).

    Boundary points are the anchors of every other raw cell in the
    right-to-left order, so each element contains exactly one raw cell
    and sits inside three contiguous ones.
    """
    if table is None:
        table = compute_delta_table(qmap, config)
    with workprec(config.precision):
        a_mp = gmpy2.mpfr(qmap.a)
        cells = []
        for p in range(config.N + 1, config.p_max + 1):
            dp = table.delta(p)
            dpm1 = table.delta(p - 1)
            n_cells = int(math.floor(math.exp(config.cut_rate * config.epsilon * p)))
            n_cells = max(1, n_cells)
            width = (dpm1 - dp) / n_cells
            for j in range(1, n_cells + 1):
                hi = dpm1 - (j - 1) * width
                lo = dpm1 - j * width if j < n_cells else dp
                cells.append(RawCell(p=p, j=j, lo=lo, hi=hi))
        if len(cells) < 4:
            raise ValueError("too few raw cells; increase p_max")
        delta_N = table.delta(config.N)
        for c in cells:
            anchor = _find_anchor(qmap, c.lo, c.hi, config, delta_N)
            if anchor is None:
                raise AnchorSearchError(c.p, c.j, config.n_candidates())
            c.anchor = anchor
        # skip-one construction: boundaries at anchors of cells 1,3,5,...
        boundaries = [cells[k].anchor for k in range(0, len(cells), 2)]
        elements = []
        labels = []
        for m in range(len(boundaries) - 1):
            contained = cells[2 * m + 1]
            elements.append(PartitionElement(
                p=contained.p, j=contained.j,
                lo=boundaries[m + 1], hi=boundaries[m],
                anchor=contained.anchor))
            labels.append(contained.p)
    return CriticalPartition(
        a=float(qmap.a), epsilon=config.epsilon, N=config.N,
        p_max=config.p_max, anchor_horizon=config.anchor_horizon,
        precision=config.precision,
        raw_cells=cells, elements=elements,
        boundaries=boundaries, labels=labels,
        delta=boundaries[0], core_bound=boundaries[-1],
        delta_prefactor=config.delta_prefactor, cut_rate=config.cut_rate,
    )


def reverify_anchors(qmap: QuadraticMap, partition: CriticalPartition,
                     factor=2):
    """Re-run every anchor's recurrence test at factor x precision.

    Returns the number of anchors that fail on re-verification (0 when
    the build is healthy).
    """
    config = BindingConfig(
        epsilon=partition.epsilon, N=partition.N, p_max=partition.p_max,
        anchor_horizon=partition.anchor_horizon,
        precision=partition.precision,
        delta_prefactor=partition.delta_prefactor,
        cut_rate=partition.cut_rate)
    failures = 0
    with workprec(factor * _anchor_precision(config)):
        a_mp = gmpy2.mpfr(qmap.a)
        table = compute_delta_table(QuadraticMap(qmap.a, config.precision), config)
        thr = _thresholds(table.delta(config.N), config.epsilon,
                          config.anchor_horizon)
        for c in partition.raw_cells:
            if c.anchor is None:
                continue
            ok, _, _ = _recurrence_ok(a_mp, gmpy2.mpfr(c.anchor), thr,
                                      config.recurrence_start,
                                      config.anchor_horizon)
            if not ok:
                failures += 1
    return failures
