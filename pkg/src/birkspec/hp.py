"""High-precision scalar helpers on top of gmpy2.

Critical-orbit quantities are evaluated with a configurable mantissa size
because orbit error can double per iteration (|Df| <= 4).  Monte-Carlo
statistics elsewhere use native doubles; only the certification, binding
and inducing computations route through these helpers.
"""

from contextlib import contextmanager

import gmpy2
from gmpy2 import mpfr

DOUBLE_PREC = 53


@contextmanager
def workprec(bits):
    """Temporarily set the gmpy2 working precision (mantissa bits)."""
    if bits < DOUBLE_PREC:
        raise ValueError(f"precision must be >= {DOUBLE_PREC} bits, got {bits}")
    old = gmpy2.get_context()
    gmpy2.set_context(gmpy2.context(precision=int(bits)))
    try:
        yield
    finally:
        gmpy2.set_context(old)


def to_mpfr(x, bits=None):
    """Convert to mpfr at the current (or given) precision.

    Floats and ints convert exactly; strings are rounded once.
    """
    if bits is None:
        return mpfr(x)
    with workprec(bits):
        return mpfr(x)


def hp_log(x):
    return gmpy2.log(x)


def hp_sqrt(x):
    return gmpy2.sqrt(x)


def hp_exp(x):
    return gmpy2.exp(x)
