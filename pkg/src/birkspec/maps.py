"""Quadratic family on X = [-1, 1]: orbits, derivative cocycles, Birkhoff sums.

The map is x -> 1 - a*x^2 with 0 < a <= 2, so X maps into itself and
|f'(x)| = 2a|x| <= 4 everywhere.  Everything downstream (certification,
bound periods, induced maps, spectra) is built on the primitives here.

Scalar orbit routines run at a configurable mantissa precision via gmpy2;
the *_batch variants are float64/NumPy fast paths for Monte-Carlo work,
where shadowing makes Lebesgue-typical averages robust.
"""

import math
from dataclasses import dataclass, field

import gmpy2
import numpy as np

from .hp import DOUBLE_PREC, workprec


@dataclass(frozen=True)
class QuadraticMap:
    """The map f(x) = 1 - a*x^2 on [-1, 1] plus its working precision."""

    a: float
    precision: int = DOUBLE_PREC

    def __post_init__(self):
        if not (0.0 < float(self.a) <= 2.0):
            raise ValueError(f"parameter a must lie in (0, 2], got {self.a}")
        if self.precision < DOUBLE_PREC:
            raise ValueError("precision must be at least 53 bits")

    def f(self, x):
        return 1 - self.a * x * x

    def df(self, x):
        return -2 * self.a * x

    def abs_df(self, x):
        return 2 * self.a * abs(x)


@dataclass
class OrbitSegment:
    """A finite orbit with the running sum of log|Df| along it.

    log_deriv_prefix[i] = sum_{j<i} log|Df(points[j])|, with log 0 = -inf.
    """

    start: float
    points: list
    log_deriv_prefix: list

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class Observable:
    """A named continuous function on [-1, 1].

    evaluator must accept floats and NumPy arrays.  lipschitz_bound is
    None when no useful bound is known.
    """

    name: str
    evaluator: object
    lipschitz_bound: float | None = None

    def __call__(self, x):
        return self.evaluator(x)


OBS_X = Observable("x", lambda x: x, 1.0)
OBS_X2 = Observable("x2", lambda x: x * x, 2.0)
OBS_COSPIX = Observable("cospix", lambda x: np.cos(np.pi * x), math.pi)


def polynomial_observable(coeffs):
    """Observable for c0 + c1*x + c2*x^2 + ...; Lipschitz bound sum k*|ck|."""
    coeffs = [float(c) for c in coeffs]
    lip = sum(k * abs(c) for k, c in enumerate(coeffs))
    name = "poly:" + ",".join(repr(c) for c in coeffs)

    def ev(x):
        acc = 0.0 * x if isinstance(x, np.ndarray) else 0.0
        for c in reversed(coeffs):
            acc = acc * x + c
        return acc

    return Observable(name, ev, lip)


def lyapunov_proxy(a, floor=1e-6):
    """Bounded stand-in for log|Df|: x -> log(2a * max(|x|, floor)).

    The genuine log|Df| is not continuous at 0, so the spectrum formula
    does not cover it; this clamped version is, and away from the floor
    it agrees with log|Df| exactly.
    """
    a = float(a)

    def ev(x):
        return np.log(2.0 * a * np.maximum(np.abs(x), floor))

    return Observable(f"logdf_proxy[{floor:g}]", ev, 1.0 / floor)


def _checked_start(qmap, x0):
    if abs(float(x0)) > 1.0 + 1e-15:
        raise ValueError(f"initial point {x0} outside [-1, 1]")


def iterate(qmap: QuadraticMap, x0, n: int) -> OrbitSegment:
    """Iterate n steps at the map's working precision.

    Returns n+1 orbit points and the log-derivative prefix sums.
    Deterministic for fixed precision; exact zeros propagate -inf into
    the prefix (the log 0 = -inf convention).
    """
    _checked_start(qmap, x0)
    if n < 0:
        raise ValueError("n must be >= 0")
    with workprec(qmap.precision):
        a = gmpy2.mpfr(qmap.a)
        x = gmpy2.mpfr(x0)
        two_a = 2 * a
        pts = [x]
        prefix = [gmpy2.mpfr(0)]
        acc = gmpy2.mpfr(0)
        for _ in range(n):
            acc = acc + gmpy2.log(two_a * abs(x))  # log(0) -> -inf
            prefix.append(acc)
            x = 1 - a * x * x
            pts.append(x)
    return OrbitSegment(start=float(x0), points=pts, log_deriv_prefix=prefix)


def lyapunov_average(qmap: QuadraticMap, x0, n: int) -> float:
    """(1/n) * sum of log|Df| along the orbit; -inf if the orbit hits 0."""
    if n < 1:
        raise ValueError("n must be >= 1")
    seg = iterate(qmap, x0, n)
    return float(seg.log_deriv_prefix[n]) / n


def birkhoff_average(qmap: QuadraticMap, x0, n: int, obs: Observable) -> float:
    """(1/n) * sum of obs(f^i x0) for i < n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    seg = iterate(qmap, x0, n)
    vals = np.array([float(p) for p in seg.points[:n]])
    return float(np.mean(obs(vals)))


def fixed_points(qmap: QuadraticMap):
    """Both roots of a*x^2 + x - 1 = 0 inside [-1, 1], with multipliers.

    The positive root is the orientation-reversing fixed point x_hat.
    """
    a = float(qmap.a)
    disc = math.sqrt(1.0 + 4.0 * a)
    roots = [(-1.0 + disc) / (2.0 * a), (-1.0 - disc) / (2.0 * a)]
    out = []
    for r in roots:
        if -1.0 - 1e-12 <= r <= 1.0 + 1e-12:
            out.append((r, qmap.df(r)))
    return out


def hat_fixed_point(qmap: QuadraticMap) -> float:
    """x_hat = (-1 + sqrt(1+4a)) / (2a), the fixed point in (0, 1)."""
    a = float(qmap.a)
    return (-1.0 + math.sqrt(1.0 + 4.0 * a)) / (2.0 * a)


# ---------------------------------------------------------------------------
# float64 fast paths (vectorized over many initial points)
# ---------------------------------------------------------------------------

def iterate_batch(a, x0s, n):
    """Iterate a float64 vector of initial points n steps; returns final points."""
    x = np.asarray(x0s, dtype=np.float64).copy()
    a = float(a)
    for _ in range(n):
        x = 1.0 - a * x * x
    return x

def lyapunov_average_batch(a, x0s, n):
    """Per-point (1/n) sum of log|Df| over n steps, float64."""
    x = np.asarray(x0s, dtype=np.float64).copy()
    a = float(a)
    acc = np.zeros_like(x)
    with np.errstate(divide="ignore"):
        for _ in range(n):
            acc += np.log(2.0 * a * np.abs(x))
            x = 1.0 - a * x * x
    return acc / n

def birkhoff_average_batch(a, x0s, n, obs: Observable):
    """Per-point (1/n) sum of obs along the orbit, float64."""
    x = np.asarray(x0s, dtype=np.float64).copy()
    a = float(a)
    acc = np.zeros_like(x)
    for _ in range(n):
        acc += obs(x)
        x = 1.0 - a * x * x
    return acc / n


BUILTIN_OBSERVABLES = {
    "x": OBS_X,
    "x2": OBS_X2,
    "cospix": OBS_COSPIX,
}


def resolve_observable(spec: str) -> Observable:
    """Parse an observable spec: a builtin name or 'poly:c0,c1,...'."""
    if spec in BUILTIN_OBSERVABLES:
        return BUILTIN_OBSERVABLES[spec]
    if spec.startswith("poly:"):
        coeffs = [float(c) for c in spec[len("poly:"):].split(",") if c.strip()]
        if not coeffs:
            raise ValueError("empty polynomial coefficient list")
        return polynomial_observable(coeffs)
    raise ValueError(f"unknown observable spec {spec!r}")


def critical_preimages(a, n):
    """All preimages of the critical point 0 up to n-1 steps back, plus
    the interval endpoints: the monotonicity breakpoints of f^n."""
    a = float(a)
    levels = [np.array([0.0])]
    for _ in range(n - 1):
        prev = levels[-1]
        arg = (1.0 - prev) / a
        ok = (arg >= 0.0) & (arg <= 1.0)
        r = np.sqrt(arg[ok])
        levels.append(np.concatenate([r, -r]))
    pts = np.concatenate(levels + [np.array([-1.0, 1.0])])
    return np.unique(pts)
