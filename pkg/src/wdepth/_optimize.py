"""Small scalar root/minimum helpers shared by the numeric modules."""

from math import sqrt

INV_PHI = (sqrt(5.0) - 1.0) / 2.0


def golden_section(f, lo, hi, tol=1e-12, max_iter=500):
    """Minimise a unimodal ``f`` on ``[lo, hi]``.

    Stops once the bracket is narrower than ``tol``. Returns ``(x, f(x))``
    for the best point seen, endpoints included.
    """
    x1 = hi - INV_PHI * (hi - lo)
    x2 = lo + INV_PHI * (hi - lo)
    f1, f2 = f(x1), f(x2)
    it = 0
    while hi - lo > tol and it < max_iter:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - INV_PHI * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + INV_PHI * (hi - lo)
            f2 = f(x2)
        it += 1
    return (x1, f1) if f1 <= f2 else (x2, f2)


def bisect_root(f, lo, hi, xtol=1e-14, max_iter=400):
    """Bisection for a sign change of ``f`` on ``[lo, hi]``.

    ``xtol`` is relative to ``max(1, |x|)``; returns the midpoint of the final
    bracket.
    """
    flo = f(lo)
    if flo == 0.0:
        return lo
    fhi = f(hi)
    if fhi == 0.0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise ValueError("bisect_root: no sign change on the bracket")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= xtol * max(1.0, abs(mid)) or mid in (lo, hi):
            break
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)
