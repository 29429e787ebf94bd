"""Chi-squared CDF and quantiles from the regularized incomplete gamma function.

``P(a, x)`` uses the power series for ``x < a + 1`` and the Lentz continued
fraction for the upper tail otherwise. Quantiles are found by bracketing and
bisection on the CDF, which is monotone, so no derivative is needed.
"""
import math
from functools import lru_cache

from .exceptions import InputError

__all__ = ["regularized_gamma_p", "chi2_cdf", "chi2_quantile", "Chi2Table"]

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _series(a, x):
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _continued_fraction(a, x):
    # upper regularized gamma Q(a, x) by modified Lentz
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_p(a, x):
    """Lower regularized incomplete gamma ``P(a, x)``."""
    if a <= 0:
        raise InputError(f"shape must be positive, got {a!r}")
    if x <= 0:
        return 0.0
    if x < a + 1.0:
        return min(1.0, _series(a, x))
    return max(0.0, 1.0 - _continued_fraction(a, x))


def chi2_cdf(df, x):
    return regularized_gamma_p(df / 2.0, x / 2.0)


@lru_cache(maxsize=4096)
def chi2_quantile(df, p):
    """``x`` with ``chi2_cdf(df, x) = p``.

    Raises
    ------
    InputError
        If ``p`` is outside (0, 1) or ``df`` is not a positive integer.
    """
    if isinstance(df, bool) or int(df) != df or df < 1:
        raise InputError(f"df must be a positive integer, got {df!r}")
    if not 0.0 < p < 1.0:
        raise InputError(f"probability must lie in (0, 1), got {p!r}")
    df = int(df)
    lo, hi = 0.0, max(1.0, float(df))
    while chi2_cdf(df, hi) < p:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if chi2_cdf(df, mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class Chi2Table:
    """Callable quantile table, ``Chi2Table()(df, p) == chi2_quantile(df, p)``."""

    def quantile(self, df, p):
        return chi2_quantile(df, p)

    def cdf(self, df, x):
        return chi2_cdf(df, x)

    __call__ = quantile
