"""Exactly solvable piecewise-linear expanding systems.

These serve as oracles: full-branch linear maps have product cylinder
lengths, closed-form Gibbs weights, and Bernoulli measures with known
local dimension, so the thermodynamic machinery can be checked against
arithmetic instead of against itself.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LinearBranch:
    lo: float
    slope: float          # > 1; branch maps [lo, lo + 1/slope] onto [0, 1]

    @property
    def hi(self):
        return self.lo + 1.0 / self.slope


class PiecewiseLinearSystem:
    """Finitely many disjoint linear branches, each onto [0, 1].

    With sum(1/slope) = 1 this is a full Markov partition of [0, 1]
    (e.g. the doubling map for slopes (2, 2)); otherwise it is an
    expanding cookie-cutter whose invariant set is a Cantor set.
    """

    def __init__(self, slopes, gaps="spread"):
        slopes = [float(s) for s in slopes]
        if any(s <= 1 for s in slopes):
            raise ValueError("slopes must exceed 1")
        total = sum(1.0 / s for s in slopes)
        if total > 1.0 + 1e-12:
            raise ValueError("branch domains do not fit in [0, 1]")
        slack = max(0.0, 1.0 - total)
        n = len(slopes)
        if gaps == "spread" and n > 1:
            gap = slack / (n - 1) if n > 1 else 0.0
        else:
            gap = 0.0
        branches = []
        x = 0.0
        for i, s in enumerate(slopes):
            branches.append(LinearBranch(lo=x, slope=s))
            x += 1.0 / s
            if i < n - 1:
                x += gap
        self.branches = branches
        self.slopes = slopes

    @property
    def m(self):
        return len(self.branches)

    def apply(self, i, x):
        b = self.branches[i]
        return (x - b.lo) * b.slope

    def pullback(self, i, y):
        b = self.branches[i]
        return b.lo + y / b.slope

    def cylinder(self, word):
        """Exact interval of points following the branch itinerary."""
        lo, hi = 0.0, 1.0
        for a in reversed(word):
            lo, hi = self.pullback(a, lo), self.pullback(a, hi)
        return lo, hi

    def cylinder_length(self, word):
        return math.prod(1.0 / self.slopes[a] for a in word)

    def periodic_point(self, word):
        """The fixed point of the word's pullback composition.

        This is the periodic point of the forward map whose itinerary
        cycles through the word.
        """
        # compose x -> lo_a + x/s_a over the reversed word: affine r*x + c
        r, c = 1.0, 0.0
        for a in reversed(word):
            b = self.branches[a]
            r, c = r / b.slope, b.lo + c / b.slope
        return c / (1.0 - r)

    def orbit(self, x, n):
        pts = [x]
        for _ in range(n):
            i = self.branch_of(pts[-1])
            if i is None:
                raise ValueError(f"point {pts[-1]} escaped the branch domains")
            pts.append(self.apply(i, pts[-1]))
        return pts

    def branch_of(self, x):
        for i, b in enumerate(self.branches):
            if b.lo - 1e-12 <= x <= b.hi + 1e-12:
                return i
        return None


class BernoulliMeasure:
    """Bernoulli measure on the slopes-(2,2) doubling map.

    The cumulative distribution is evaluated digit by digit, so balls
    D_rho(x) get exact masses down to rho ~ 2^-digits.
    """

    def __init__(self, p, digits=64):
        if not (0.0 < p < 1.0):
            raise ValueError("p must be in (0, 1)")
        self.p = float(p)
        self.digits = digits

    def cdf(self, x):
        if x <= 0.0:
            return 0.0
        if x >= 1.0:
            return 1.0
        p, q = self.p, 1.0 - self.p
        acc = 0.0
        weight = 1.0
        v = x
        for _ in range(self.digits):
            v *= 2.0
            if v >= 1.0:
                acc += weight * p
                weight *= q
                v -= 1.0
            else:
                weight *= p
            if weight == 0.0:
                break
        return acc

    def ball_mass(self, x, rho):
        return self.cdf(min(1.0, x + rho)) - self.cdf(max(0.0, x - rho))

    def __call__(self, x, rho):
        return self.ball_mass(x, rho)

    def sample(self, n, seed=0):
        """n typical points: binary digits i.i.d. with P(digit 1) = 1-p.

        Digit 1 corresponds to the second branch, which carries mass
        1-p under this convention.
        """
        rng = np.random.default_rng(seed)
        bits = rng.random((n, self.digits)) < (1.0 - self.p)
        weights = 0.5 ** np.arange(1, self.digits + 1)
        return bits @ weights

    def local_dimension_exact(self):
        p, q = self.p, 1.0 - self.p
        return (-p * math.log(p) - q * math.log(q)) / math.log(2.0)


class PointMassMeasure:
    """Dirac mass, for the degenerate local-dimension case."""

    def __init__(self, z):
        self.z = float(z)

    def __call__(self, x, rho):
        return 1.0 if abs(x - self.z) <= rho else 0.0


def synthetic_tail(zeta, n_max, scale=1.0, noise=0.0, seed=0):
    """|{R>n}| = scale * zeta^n, optionally with relative noise."""
    n = np.arange(n_max + 1)
    t = scale * zeta ** n
    if noise > 0:
        rng = np.random.default_rng(seed)
        t = t * (1.0 + noise * rng.standard_normal(len(t)))
        t = np.maximum(t, scale * zeta ** n_max * 1e-3)
    return t.tolist()
