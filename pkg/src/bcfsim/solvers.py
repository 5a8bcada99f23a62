"""Small root-finding and line-search helpers shared by the code designs."""

from __future__ import annotations

import math

__all__ = ["SolverError", "bisect_root", "golden_section_min"]


class SolverError(RuntimeError):
    """A numerical search failed to meet its contract."""


def bisect_root(fn, lo: float, hi: float, *, iters: int = 200) -> float:
    """Bisection on a sign change of ``fn`` over [lo, hi].

    Runs a fixed number of halvings, which drives the bracket far below
    double-precision resolution; raises if the endpoints do not bracket.
    """
    flo, fhi = fn(lo), fn(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if math.copysign(1.0, flo) == math.copysign(1.0, fhi):
        raise SolverError(f"no sign change on [{lo}, {hi}]: f(lo)={flo}, f(hi)={fhi}")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fmid = fn(mid)
        if fmid == 0.0:
            return mid
        if math.copysign(1.0, fmid) == math.copysign(1.0, flo):
            lo, flo = mid, fmid
        else:
            hi = mid
        if hi - lo <= abs(mid) * 1e-16:
            break
    return 0.5 * (lo + hi)


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_min(fn, lo: float, hi: float, *, tol: float = 1e-12) -> float:
    """Golden-section search for the minimizer of a unimodal function."""
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)
