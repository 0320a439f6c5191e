# brw/quadrature.py
from typing import Callable, Tuple


def adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                     tol: float = 1e-10, max_depth: int = 50) -> Tuple[float, float]:
    """
    Integral of f over [a, b] by recursive Simpson bisection with Richardson
    correction. Returns (value, error estimate); tol is absolute.
    """
    if a == b:
        return 0.0, 0.0
    if a > b:
        value, error = adaptive_simpson(f, b, a, tol, max_depth)
        return -value, error

    def simpson(fa: float, fm: float, fb: float, h: float) -> float:
        return h / 3.0 * (fa + 4.0 * fm + fb)

    def recurse(lo: float, hi: float, flo: float, fmid: float, fhi: float,
                whole: float, depth: int, tol: float) -> Tuple[float, float]:
        mid = (lo + hi) / 2.0
        h = (hi - lo) / 4.0
        fl, fr = f((lo + mid) / 2.0), f((mid + hi) / 2.0)
        left = simpson(flo, fl, fmid, h)
        right = simpson(fmid, fr, fhi, h)
        error = (left + right - whole) / 15.0
        if depth >= max_depth or abs(error) < tol:
            return left + right + error, abs(error)
        lv, le = recurse(lo, mid, flo, fl, fmid, left, depth + 1, tol / 2.0)
        rv, re = recurse(mid, hi, fmid, fr, fhi, right, depth + 1, tol / 2.0)
        return lv + rv, le + re

    fa, fm, fb = f(a), f((a + b) / 2.0), f(b)
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, (b - a) / 2.0), 0, tol)
