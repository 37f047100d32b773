"""Induced full-branch Markov map over the base Lambda, and its tower.

The construction iterates the two base intervals and keeps a partition
of not-yet-returned points.  A piece is *bound* for p steps after its
image lands in the element of the critical partition labelled p, and
*free* otherwise.  Free images meeting the critical neighborhood are
subdivided along the partition elements (short outer components are
glued to their inner neighbor); when a free image covers the tripled
base interval on either side, the preimage of that base half is emitted
as a Markov branch with return time R = n and the remaining parts
continue.  Interval endpoints are tracked in high precision because
branch domains shrink like |Df^n|^-1, far below double resolution.
"""

import math
from bisect import bisect_left
from dataclasses import dataclass, field

import gmpy2
import numpy as np

from .hp import workprec
from .maps import QuadraticMap
from .binding import CriticalPartition


class SubdivisionBreakdown(RuntimeError):
    """Interval endpoints collided or an image folded while bound."""

    def __init__(self, time, detail):
        super().__init__(f"subdivision breakdown at time {time}: {detail}")
        self.time = time


@dataclass
class _Piece:
    """One interval of the evolving partition of the base."""

    __slots__ = ("dlo", "dhi", "ilo", "ihi", "orient", "release")

    dlo: object          # domain endpoints in Lambda (mpfr)
    dhi: object
    ilo: object          # current image endpoints (mpfr)
    ihi: object
    orient: int          # +1 if f^n is increasing on the domain
    release: int         # free once the global time reaches this

    @property
    def mass(self):
        return self.dhi - self.dlo


@dataclass
class SubdivisionState:
    """Snapshot of the not-yet-returned partition at one time."""

    time: int
    pieces: list         # (dom_lo, dom_hi, release) float triples

    @property
    def total_mass(self):
        return sum(hi - lo for lo, hi, _ in self.pieces)


@dataclass
class InducedBranch:
    domain_lo: object    # mpfr
    domain_hi: object
    return_time: int
    target_sign: int     # +1 onto Lambda+, -1 onto Lambda-
    orient: int = 1      # sign of Df^R on the domain
    monotone: bool = True
    xi: float = 1.0      # measured scaled-neighborhood margin at emission
    distortion_sample: float | None = None

    @property
    def length(self):
        return self.domain_hi - self.domain_lo

    def to_dict(self):
        return {
            "domain": [float(self.domain_lo), float(self.domain_hi)],
            "length": float(self.length),
            "R": self.return_time,
            "sign": "+" if self.target_sign > 0 else "-",
            "xi": self.xi,
        }


@dataclass
class InducedSystem:
    a: float
    precision: int
    T_max: int
    lambda_plus: tuple   # (lo, hi) mpfr
    lambda_minus: tuple
    branches: list
    tail_counts: list    # |{R > n}| as Lebesgue mass, n = 0..T_max
    pruned_mass: float
    core_mass: float
    snapshots: dict = field(default_factory=dict)
    partition: CriticalPartition | None = None
    tail_rate: float | None = None

    @property
    def base_mass(self):
        return float((self.lambda_plus[1] - self.lambda_plus[0])
                     + (self.lambda_minus[1] - self.lambda_minus[0]))

    @property
    def coverage(self):
        with workprec(self.precision):
            tot = sum((b.length for b in self.branches), gmpy2.mpfr(0))
            return float(tot) / self.base_mass

    def branches_with(self, return_time=None, sign=None):
        out = self.branches
        if return_time is not None:
            out = [b for b in out if b.return_time == return_time]
        if sign is not None:
            out = [b for b in out if b.target_sign == sign]
        return out

    def to_dict(self):
        return {
            "a": self.a, "T_max": self.T_max, "precision": self.precision,
            "lambda_plus": [float(self.lambda_plus[0]), float(self.lambda_plus[1])],
            "lambda_minus": [float(self.lambda_minus[0]), float(self.lambda_minus[1])],
            "coverage": self.coverage,
            "pruned_mass": self.pruned_mass,
            "core_mass": self.core_mass,
            "tail": [float(t) for t in self.tail_counts],
            "branches": [b.to_dict() for b in self.branches],
        }


def _solve_preimage(a_mp, piece, n, target, tol):
    """x in the piece's domain with f^n(x) = target (bracketed Newton).

    The piece is a monotone lap of f^n, so the linear-interpolation seed
    is good up to distortion and bisection guards the bracket.
    """
    dlo, dhi = piece.dlo, piece.dhi
    ilo, ihi = piece.ilo, piece.ihi
    if not (ilo <= target <= ihi):
        target = min(max(target, ilo), ihi)
    t = (target - ilo) / (ihi - ilo) if ihi > ilo else gmpy2.mpfr(0.5)
    if piece.orient < 0:
        t = 1 - t
    lo, hi = dlo, dhi
    x = dlo + (dhi - dlo) * t

    def fn_dfn(x0):
        v = x0
        d = gmpy2.mpfr(1)
        for _ in range(n):
            d = d * (-2) * a_mp * v
            v = 1 - a_mp * v * v
        return v, d

    for _ in range(140):
        v, d = fn_dfn(x)
        err = v - target
        if abs(err) <= tol:
            return x
        # shrink the bracket: f^n is monotone increasing iff orient > 0
        if (err > 0) == (piece.orient > 0):
            hi = min(hi, x)
        else:
            lo = max(lo, x)
        if d != 0:
            step = err / d
            xn = x - step
        else:
            xn = lo + (hi - lo) / 2
        if not (lo < xn < hi):
            xn = lo + (hi - lo) / 2
        if xn == x:
            break
        x = xn
    return x


def build_induced_map(qmap: QuadraticMap, partition: CriticalPartition,
                      T_max: int, prune_floor=1e-9, precision=None,
                      snapshot_times=(), max_pieces=2_000_000):
    """Run the iterate-subdivide-stop loop up to time T_max.

    prune_floor is relative to |Lambda|: children estimated below it are
    moved to the tail once and for all (the construction is infinite;
    the floor is what makes a finite enumeration of it).  Returns an
    InducedSystem whose branch endpoints solve f^R(x) = boundary of
    Lambda(sign) to high precision.
    """
    precision = precision or max(partition.precision, 192)
    snapshot_times = set(snapshot_times)
    with workprec(precision):
        a_mp = gmpy2.mpfr(qmap.a)
        bnd = [gmpy2.mpfr(b) for b in partition.boundaries]   # descending
        labels = list(partition.labels)
        delta = bnd[0]
        core = bnd[-1]
        lam_lo, lam_hi = bnd[1], bnd[0]
        lam_len = lam_hi - lam_lo
        base_mass = 2 * lam_len
        floor = gmpy2.mpfr(prune_floor) * base_mass
        c_plus = (lam_lo + lam_hi) / 2
        half3 = 3 * lam_len / 2
        tol = lam_len * gmpy2.mpfr(2) ** -80

        # ascending cut grid over both signs: -delta ... -core, core ... delta
        cuts_pos = list(reversed(bnd))                        # ascending
        cuts = [-b for b in bnd] + cuts_pos
        cut_labels = {}
        # element between bnd[j+1] and bnd[j] has label labels[j]
        for j, p in enumerate(labels):
            cut_labels[(float(bnd[j + 1]), float(bnd[j]))] = p

        def element_label(k):
            """Label of the zone between cuts[k] and cuts[k+1].

            cuts[k] = -bnd[k] for k < L and cuts[L+m] = bnd[L-1-m], so
            negative zone k mirrors element k and positive zone k is
            element 2L-2-k.
            """
            L = len(bnd)
            if k < 0 or k >= 2 * L - 1:
                return None
            if k < L - 1:                 # negative side, mirrored
                return labels[k]
            if k == L - 1:                # the core gap (-core, core)
                return "core"
            return labels[2 * L - 2 - k]

        pieces = [
            _Piece(lam_lo, lam_hi, lam_lo, lam_hi, 1, labels[0]),
            _Piece(-lam_hi, -lam_lo, -lam_hi, -lam_lo, 1, labels[0]),
        ]
        branches = []
        pruned = gmpy2.mpfr(0)
        core_lost = gmpy2.mpfr(0)
        tail_counts = [float(base_mass)]
        snapshots = {}

        for n in range(1, T_max + 1):
            advanced = []
            todo = []
            for pc in pieces:
                if pc.ilo < 0 < pc.ihi:
                    # a bound piece about to fold: split at the preimage
                    # of 0 so both halves stay monotone laps.  No branch
                    # can straddle a critical preimage (f^R would not be
                    # injective there), so this never cuts a branch.
                    x0 = _solve_preimage(a_mp, pc, n - 1, gmpy2.mpfr(0), tol)
                    if pc.orient > 0:
                        todo.append(_Piece(pc.dlo, x0, pc.ilo, gmpy2.mpfr(0),
                                           pc.orient, pc.release))
                        todo.append(_Piece(x0, pc.dhi, gmpy2.mpfr(0), pc.ihi,
                                           pc.orient, pc.release))
                    else:
                        todo.append(_Piece(pc.dlo, x0, gmpy2.mpfr(0), pc.ihi,
                                           pc.orient, pc.release))
                        todo.append(_Piece(x0, pc.dhi, pc.ilo, gmpy2.mpfr(0),
                                           pc.orient, pc.release))
                else:
                    todo.append(pc)
            for pc in todo:
                positive = pc.ilo >= 0
                v1 = 1 - a_mp * pc.ilo * pc.ilo
                v2 = 1 - a_mp * pc.ihi * pc.ihi
                if positive:
                    pc.ilo, pc.ihi = v2, v1
                    pc.orient = -pc.orient
                else:
                    pc.ilo, pc.ihi = v1, v2
                advanced.append(pc)

            next_pieces = []
            for pc in advanced:
                if n < pc.release:
                    next_pieces.append(pc)
                    continue
                # ---- emission: cut out preimages of Lambda(+/-) where the
                # free image covers the tripled interval
                work = [pc]
                for sign in (1, -1):
                    lo_t = sign * c_plus - half3 if sign > 0 else -c_plus - half3
                    hi_t = lo_t + 2 * half3
                    e_lo = lam_lo if sign > 0 else -lam_hi
                    e_hi = lam_hi if sign > 0 else -lam_lo
                    new_work = []
                    for w in work:
                        if w.ilo <= lo_t and w.ihi >= hi_t:
                            xa = _solve_preimage(a_mp, w, n, e_lo, tol)
                            xb = _solve_preimage(a_mp, w, n, e_hi, tol)
                            d1, d2 = (xa, xb) if xa <= xb else (xb, xa)
                            xi = float(min(e_lo - w.ilo, w.ihi - e_hi) / lam_len)
                            branches.append(InducedBranch(
                                domain_lo=d1, domain_hi=d2, return_time=n,
                                target_sign=sign, orient=w.orient,
                                monotone=True, xi=xi))
                            left = _Piece(w.dlo, d1, w.ilo, e_lo, w.orient, n) \
                                if w.orient > 0 else \
                                _Piece(w.dlo, d1, e_hi, w.ihi, w.orient, n)
                            right = _Piece(d2, w.dhi, e_hi, w.ihi, w.orient, n) \
                                if w.orient > 0 else \
                                _Piece(d2, w.dhi, w.ilo, e_lo, w.orient, n)
                            for part in (left, right):
                                if part.mass > 0 and part.ihi > part.ilo:
                                    new_work.append(part)
                        else:
                            new_work.append(w)
                    work = new_work
                # ---- subdivision of the remaining free parts
                for w in work:
                    for child in _subdivide(a_mp, w, n, cuts, element_label,
                                            delta, core, lam_len, floor, tol):
                        kind, payload = child
                        if kind == "piece":
                            next_pieces.append(payload)
                        elif kind == "pruned":
                            pruned += payload
                        else:
                            core_lost += payload
            pieces = next_pieces
            if len(pieces) > max_pieces:
                raise SubdivisionBreakdown(n, f"piece count {len(pieces)} "
                                           "exceeds budget")
            returned = sum((b.length for b in branches), gmpy2.mpfr(0))
            tail_counts.append(float(base_mass - returned))
            if n in snapshot_times:
                snapshots[n] = SubdivisionState(
                    time=n, pieces=[(float(p.dlo), float(p.dhi), p.release)
                                    for p in pieces])

        branches.sort(key=lambda b: (b.return_time, float(b.domain_lo)))
        return InducedSystem(
            a=float(qmap.a), precision=precision, T_max=T_max,
            lambda_plus=(lam_lo, lam_hi), lambda_minus=(-lam_hi, -lam_lo),
            branches=branches, tail_counts=tail_counts,
            pruned_mass=float(pruned), core_mass=float(core_lost),
            snapshots=snapshots, partition=partition)


def _subdivide(a_mp, w, n, cuts, element_label, delta, core, lam_len,
               floor, tol):
    """Children of one free piece whose image may meet (-delta, delta).

    Returns a list of ("piece", _Piece), ("pruned", mass) and
    ("core", mass) entries.  Rules: subdivide along element boundaries
    only when more than two elements are fully contained in the image
    (or the image reaches the unresolved core, which stands for
    infinitely many deeper elements); glue outer components shorter than
    |Lambda+| to their inner neighbor; merge partial end elements inward
    so every child contains exactly one full element; a piece that is
    not subdivided re-binds for the smallest element label it meets.
    """
    A, B = w.ilo, w.ihi
    if B <= -delta or A >= delta:
        return [("piece", w)]                  # entirely outside: stays free
    touches_core = A < core and B > -core
    inner = [c for c in cuts if A < c < B]
    zones = []                                 # (lo, hi, label), left to right
    prev = A
    for c in inner + [B]:
        k = bisect_left(cuts, (prev + c) / 2) - 1
        zones.append([prev, c, element_label(k)])
        prev = c
    n_zones = len(zones)
    full_elements = sum(1 for i, z in enumerate(zones)
                        if isinstance(z[2], int) and 0 < i < n_zones - 1)

    if full_elements < 3 and not touches_core:
        labs = [z[2] for z in zones if isinstance(z[2], int)]
        if not labs:
            return [("piece", w)]              # only outer parts: stays free
        w.release = n + min(labs)
        return [("piece", w)]

    children = _merge_plan(zones, lam_len)     # (img_lo, img_hi, action)

    # mark drops on mass estimates so runs of dropped children need no
    # interior endpoint solves; distortion within one free piece is
    # bounded, 6x is a safe allowance for the keep/drop call
    img_len = B - A
    parent_mass = w.mass
    marked = []
    for (zlo, zhi, action) in children:
        est = parent_mass * (zhi - zlo) / img_len
        if action == "core" or 6 * est < floor:
            marked.append([zlo, zhi, action, False])
        else:
            marked.append([zlo, zhi, action, True])
    coalesced = []
    for m in marked:
        if (coalesced and not m[3] and not coalesced[-1][3]):
            keep_core = coalesced[-1][2] == "core" and m[2] == "core"
            coalesced[-1][1] = m[1]
            coalesced[-1][2] = "core" if keep_core else "pruned"
        else:
            coalesced.append(m)

    # solve the retained interior boundaries (image -> domain)
    img_bounds = [seg[0] for seg in coalesced[1:]]
    xs = [_solve_preimage(a_mp, w, n, y, tol) for y in img_bounds]
    if w.orient > 0:
        dom_pts = [w.dlo] + xs + [w.dhi]
        ordered = coalesced
    else:
        dom_pts = [w.dlo] + list(reversed(xs)) + [w.dhi]
        ordered = list(reversed(coalesced))

    out = []
    for i, seg in enumerate(ordered):
        zlo, zhi, action, keep = seg
        dlo, dhi = dom_pts[i], dom_pts[i + 1]
        mass = dhi - dlo
        if mass <= 0:
            continue
        if not keep or mass < floor:
            out.append(("core" if action == "core" else "pruned", mass))
            continue
        release = n + action if isinstance(action, int) and action > 0 else n
        out.append(("piece", _Piece(dlo, dhi, zlo, zhi, w.orient, release)))
    return out


def _merge_plan(zones, lam_len):
    """Group image zones into children per the gluing rules.

    zones are (lo, hi, label) with label an element period, None for the
    region beyond delta, or "core".  Returns (img_lo, img_hi, action)
    children where action is an int bound period, 0 for a free child or
    "core" for the unresolved middle.
    """
    n_zones = len(zones)
    segs = []
    for i, (lo, hi, lab) in enumerate(zones):
        if lab == "core":
            segs.append([lo, hi, "core"])
        elif lab is None:
            segs.append([lo, hi, 0 if hi - lo >= lam_len else "glue"])
        else:
            partial = (i == 0 or i == n_zones - 1)
            segs.append([lo, hi, ("partial", lab) if partial else lab])

    def merge_into(i, j):
        """Absorb segment i into its neighbor j (j = i-1 or i+1)."""
        lo = min(segs[i][0], segs[j][0])
        hi = max(segs[i][1], segs[j][1])
        segs[j][0], segs[j][1] = lo, hi
        del segs[i]

    # partial end elements merge inward (toward the zone interior)
    changed = True
    while changed:
        changed = False
        for i, seg in enumerate(segs):
            if isinstance(seg[2], tuple):
                if len(segs) == 1:
                    seg[2] = seg[2][1]          # lone partial: keep its label
                else:
                    j = i + 1 if i == 0 else i - 1
                    merge_into(i, j)
                changed = True
                break
    # outer slivers glue to the adjacent inner (element) child
    changed = True
    while changed:
        changed = False
        for i, seg in enumerate(segs):
            if seg[2] != "glue":
                continue
            if len(segs) == 1:
                seg[2] = 0
            else:
                cands = [j for j in (i - 1, i + 1) if 0 <= j < len(segs)]
                inner = [j for j in cands if isinstance(segs[j][2], int)
                         and segs[j][2] > 0]
                j = inner[0] if inner else cands[0]
                merge_into(i, j)
            changed = True
            break
    return [(s[0], s[1], s[2]) for s in segs]


@dataclass
class Tower:
    """The suspension of the induced system by its return times.

    Points are (x, level) with level < R(x); the step climbs once per
    unit time and drops to (f^R x, 0) from the top level of its column.
    """

    system: InducedSystem

    def level_mass(self, ell):
        """Lebesgue mass of level ell (branches with R > ell plus tail)."""
        return self.system.tail_counts[min(ell, self.system.T_max)]

    def locate(self, x):
        """Branch containing x, or None if x is in the tail set."""
        xf = float(x)
        for b in self.system.branches:
            if float(b.domain_lo) <= xf <= float(b.domain_hi):
                return b
        return None


def tower_step(tower: Tower, point):
    """One step of the tower map: climb or fall.

    point is (x, level) with level < R(branch of x).  Falling applies
    f^R to x at the system's precision.
    """
    x, ell = point
    b = tower.locate(x)
    if b is None:
        raise ValueError(f"{x} lies in the tail set: no branch, no return")
    if ell < 0 or ell >= b.return_time:
        raise ValueError(f"level {ell} outside 0..R-1 = 0..{b.return_time - 1}")
    if ell + 1 < b.return_time:
        return (x, ell + 1)
    with workprec(tower.system.precision):
        a_mp = gmpy2.mpfr(tower.system.a)
        v = gmpy2.mpfr(x)
        for _ in range(b.return_time):
            v = 1 - a_mp * v * v
        return (v, 0)


def return_time_tail(system_or_tail, min_points=10):
    """Least-squares fit of log|{R>n}| over the largest linear regime.

    Accepts an InducedSystem or a raw tail sequence.  Returns a dict
    with zeta_hat (the fitted decay factor), C1_hat, r_squared, the fit
    window and a status flag; status is "fit-rejected" when r^2 < 0.9.
    """
    if isinstance(system_or_tail, InducedSystem):
        tail = [float(t) for t in system_or_tail.tail_counts]
    else:
        tail = [float(t) for t in system_or_tail]
    n = np.arange(len(tail))
    t = np.array(tail)
    positive = t > 0
    if positive.sum() < min_points:
        return {"status": "fit-rejected", "reason": "too few nonzero entries"}
    # strip the leading plateau (before the first return) and the final
    # plateau (unreturned remainder frozen at T_max)
    t0 = t[positive][0]
    final = t[positive][-1]
    in_window = positive & (t < t0 * (1 - 1e-12)) & (t > final * 1.02)
    if in_window.sum() < min_points:
        in_window = positive & (t < t0 * (1 - 1e-12))
    if in_window.sum() < 2:
        return {"status": "fit-rejected", "reason": "no decaying regime"}
    xs = n[in_window].astype(float)
    ys = np.log(t[in_window])
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(((ys - pred) ** 2).sum())
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    status = "ok" if (r2 >= 0.9 and slope < 0) else "fit-rejected"
    result = {
        "status": status, "zeta_hat": math.exp(slope),
        "C1_hat": math.exp(intercept), "slope": slope,
        "r_squared": r2, "window": (int(xs[0]), int(xs[-1])),
        "points": int(in_window.sum()),
    }
    if isinstance(system_or_tail, InducedSystem) and status == "ok":
        system_or_tail.tail_rate = result["zeta_hat"]
    return result


def quick_return_check(system: InducedSystem, k_values, epsilon=None,
                       lam=None):
    """Fraction of each not-yet-returned piece that returns quickly.

    For every snapshot piece omega at time k (captured during the
    build), looks for branches inside omega with k < R <= (1+19eps/lam)k
    and compares their largest mass ratio against exp(-sqrt(eps)*k).
    Pieces without a qualifying branch are listed as violations.
    """
    from .certify import LAMBDA_DEFAULT
    eps = epsilon if epsilon is not None else (
        system.partition.epsilon if system.partition else 0.01)
    lam = lam or LAMBDA_DEFAULT
    factor = 1.0 + 19.0 * eps / lam
    rows = []
    violations = 0
    min_margin = math.inf
    for k in k_values:
        snap = system.snapshots.get(k)
        if snap is None:
            raise KeyError(f"no snapshot at time {k}; pass snapshot_times "
                           f"to build_induced_map")
        r_hi = factor * k
        threshold = math.exp(-math.sqrt(eps) * k)
        for (lo, hi, _release) in snap.pieces:
            if hi <= lo:
                continue
            best = 0.0
            for b in system.branches:
                if k < b.return_time <= r_hi and \
                        float(b.domain_lo) >= lo - 1e-18 and \
                        float(b.domain_hi) <= hi + 1e-18:
                    best = max(best, float(b.length) / (hi - lo))
            ratio_margin = best - threshold
            if best == 0.0:
                violations += 1
            min_margin = min(min_margin, ratio_margin)
            rows.append({"k": k, "piece": (lo, hi), "best_ratio": best,
                         "threshold": threshold, "margin": ratio_margin})
    return {
        "factor": factor, "rows": rows, "violations": violations,
        "min_margin": min_margin,
        "admissible_r": {k: (k, factor * k) for k in k_values},
    }


def distortion_check(system: InducedSystem, samples_per_branch=8,
                     max_branches=200):
    """Empirical distortion of f^R per branch against its Koebe bound.

    Samples interior points, computes log|Df^R| in the system's working
    precision, and reports max ratio per branch together with the bound
    ((1+xi)/xi)^2 from the branch's measured extension margin xi.
    """
    rows = []
    worst = 0.0
    exceed = 0
    with workprec(system.precision):
        a_mp = gmpy2.mpfr(system.a)
        step = max(1, len(system.branches) // max_branches)
        for b in system.branches[::step]:
            logs = []
            for i in range(samples_per_branch):
                x = b.domain_lo + (b.domain_hi - b.domain_lo) * \
                    gmpy2.mpfr(2 * i + 1) / (2 * samples_per_branch)
                acc = gmpy2.mpfr(0)
                v = x
                for _ in range(b.return_time):
                    acc += gmpy2.log(abs(2 * a_mp * v))
                    v = 1 - a_mp * v * v
                logs.append(float(acc))
            ratio = math.exp(max(logs) - min(logs))
            bound = ((1.0 + b.xi) / b.xi) ** 2
            b.distortion_sample = ratio
            if ratio > bound:
                exceed += 1
            worst = max(worst, ratio)
            rows.append({"R": b.return_time, "ratio": ratio, "koebe": bound})
    return {"rows": rows, "max_ratio": worst, "exceed_koebe": exceed,
            "branches_checked": len(rows)}
