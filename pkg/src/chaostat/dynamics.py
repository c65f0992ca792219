"""Arbitrary-precision evaluation and iteration of the logistic family f_a(x) = a x (1 - x).

All arithmetic runs on MPFR numbers (via gmpy2) at a caller-chosen mantissa
width with round-to-nearest-even, so results are bit-identical across
platforms.  Every public function takes ``bits`` and converts its inputs at
that precision; there is no global state.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterator, Sequence

import gmpy2
from gmpy2 import mpfr

from .errors import DomainError, NotACycle, ResourceError

DEFAULT_BITS = 128
DEFAULT_ITERATION_BUDGET = 10**8


@dataclass(frozen=True)
class PrecisionConfig:
    """Mantissa width for a computation; rounding is always nearest-even."""

    mantissa_bits: int = DEFAULT_BITS

    def __post_init__(self):
        if int(self.mantissa_bits) != self.mantissa_bits or self.mantissa_bits < 53:
            raise DomainError("mantissa_bits must be an integer >= 53")

    @property
    def tolerance(self) -> mpfr:
        return default_tolerance(self.mantissa_bits)

    def context(self):
        return working_precision(self.mantissa_bits)


def _check_bits(bits: int) -> int:
    if int(bits) != bits or bits < 53:
        raise DomainError("mantissa_bits must be an integer >= 53")
    return int(bits)


@contextmanager
def working_precision(bits: int) -> Iterator[None]:
    """Fresh MPFR context (nearest-even) at ``bits`` for the enclosed block."""
    with gmpy2.context(precision=_check_bits(bits)):
        yield


def to_real(value, bits: int = DEFAULT_BITS) -> mpfr:
    """Convert str / int / float / Fraction / mpfr to an mpfr of width ``bits``."""
    bits = _check_bits(bits)
    if isinstance(value, Fraction):
        return mpfr(gmpy2.mpq(value.numerator, value.denominator), bits)
    if isinstance(value, str):
        s = value.strip()
        if "/" in s:
            return to_real(Fraction(s), bits)
        return mpfr(s, bits)
    return mpfr(value, bits)


def default_tolerance(bits: int) -> mpfr:
    """Residual bound 2^(-bits/2) used for root and cycle acceptance."""
    return mpfr(2) ** (-(_check_bits(bits) // 2))


def merge_tolerance(bits: int) -> mpfr:
    """Locations closer than 2^(-bits+8) are treated as one point."""
    return mpfr(2) ** (-_check_bits(bits) + 8)


def to_decimal(x) -> str:
    """Shortest decimal string that reads back to the same mpfr at its precision."""
    if not isinstance(x, type(mpfr(0))):
        x = mpfr(x)
    if gmpy2.is_nan(x) or gmpy2.is_infinite(x):
        raise DomainError("non-finite value")
    if x == 0:
        return "0"
    mant, exp, _prec = x.digits(10)
    sign = ""
    if mant.startswith("-"):
        sign, mant = "-", mant[1:]
    mant = mant.rstrip("0") or "0"
    # value = 0.mant * 10^exp
    if -6 < exp <= 21:
        if exp <= 0:
            body = "0." + "0" * (-exp) + mant
        elif exp >= len(mant):
            body = mant + "0" * (exp - len(mant))
        else:
            body = mant[:exp] + "." + mant[exp:]
    else:
        body = mant[0] + ("." + mant[1:] if len(mant) > 1 else "") + f"e{exp - 1}"
    return sign + body


def check_parameter(a) -> None:
    if not (0 < a <= 4):
        raise DomainError(f"parameter a={a} outside (0, 4]")


def check_point(x) -> None:
    if not (0 <= x <= 1):
        raise DomainError(f"point x={x} outside [0, 1]")


def step(a: mpfr, x: mpfr) -> mpfr:
    """One application of f_a in the current context (no validation).

    Evaluated as a*(u*(1-u)) with u = min(x, 1-x); for x in [1/2, 1] the
    subtraction 1-x is exact, so f(x) == f(1-x) bit for bit and the result
    never leaves [0, a/4].
    """
    u = x if x <= 0.5 else 1 - x
    return a * (u * (1 - u))


def advance(a: mpfr, x: mpfr, n: int) -> mpfr:
    """f_a^n(x) in the current context (no validation)."""
    for _ in range(n):
        u = x if x <= 0.5 else 1 - x
        x = a * (u * (1 - u))
    return x


def f_eval(a, x, bits: int = DEFAULT_BITS) -> mpfr:
    """f_a(x) at ``bits`` of precision."""
    with working_precision(bits):
        a, x = to_real(a, bits), to_real(x, bits)
        check_parameter(a)
        check_point(x)
        return step(a, x)


def f_derivative(a, x, bits: int = DEFAULT_BITS) -> mpfr:
    """f_a'(x) = a (1 - 2x)."""
    with working_precision(bits):
        a, x = to_real(a, bits), to_real(x, bits)
        check_parameter(a)
        check_point(x)
        return a * (1 - 2 * x)


@dataclass(frozen=True)
class OrbitSegment:
    """x_0 .. x_{n-1} with x_{k+1} = f_a(x_k) at the stated precision."""

    a: mpfr
    start: mpfr
    points: tuple
    bits: int

    def __len__(self):
        return len(self.points)

    @property
    def last(self) -> mpfr:
        return self.points[-1]


def iterate(a, x, n: int, bits: int = DEFAULT_BITS,
            budget: int = DEFAULT_ITERATION_BUDGET) -> OrbitSegment:
    """Orbit segment of length n starting at x (x itself is the first point)."""
    if n < 1:
        raise DomainError("n must be >= 1")
    if n > budget:
        raise ResourceError(f"n={n} exceeds the iteration budget {budget}")
    with working_precision(bits):
        a, x = to_real(a, bits), to_real(x, bits)
        check_parameter(a)
        check_point(x)
        pts = [x]
        y = x
        for _ in range(n - 1):
            y = step(a, y)
            pts.append(y)
    return OrbitSegment(a=a, start=x, points=tuple(pts), bits=bits)


def _check_cycle(a: mpfr, cycle: Sequence[mpfr], tol: mpfr) -> None:
    p = len(cycle)
    if p == 0:
        raise NotACycle("empty cycle")
    for k in range(p):
        nxt = step(a, cycle[k])
        if abs(nxt - cycle[(k + 1) % p]) >= tol:
            raise NotACycle(f"f(x_{k}) does not match x_{(k + 1) % p} within tolerance")


def cycle_multiplier(a, cycle: Sequence, bits: int = DEFAULT_BITS, tol=None) -> mpfr:
    """Derivative of f_a^p along a p-cycle, i.e. the product of f_a'(x_k)."""
    with working_precision(bits):
        a = to_real(a, bits)
        check_parameter(a)
        pts = [to_real(v, bits) for v in cycle]
        for v in pts:
            check_point(v)
        tol = default_tolerance(bits) if tol is None else to_real(tol, bits)
        _check_cycle(a, pts, tol)
        m = mpfr(1)
        for v in pts:
            m *= a * (1 - 2 * v)
        return m


def parameter_sensitivity(a, x, n: int, bits: int = DEFAULT_BITS) -> list:
    """s_0..s_n with s_k = d x_k / d a along the orbit of x (x held fixed)."""
    if n < 1:
        raise DomainError("n must be >= 1")
    with working_precision(bits):
        a, x = to_real(a, bits), to_real(x, bits)
        check_parameter(a)
        check_point(x)
        s = mpfr(0)
        out = [s]
        for _ in range(n):
            s = x * (1 - x) + a * (1 - 2 * x) * s
            out.append(s)
            x = step(a, x)
        return out


def orbit_jet(a: mpfr, x: mpfr, n: int):
    """Forward-mode derivatives of x_n = f_a^n(x) in the current context.

    Returns (x_n, dx, da, dxx, dxa): first derivatives in x and a, the second
    x-derivative and the mixed derivative.  Used by Newton polishing.
    """
    dx, da, dxx, dxa = mpfr(1), mpfr(0), mpfr(0), mpfr(0)
    for _ in range(n):
        fx = a * (1 - 2 * x)
        fa = x * (1 - x)
        fxa = 1 - 2 * x
        fxx = -2 * a
        dxa = (fxa + fxx * da) * dx + fx * dxa
        dxx = fxx * dx * dx + fx * dxx
        da = fa + fx * da
        dx = fx * dx
        x = step(a, x)
    return x, dx, da, dxx, dxa


def orbit_derivative(a: mpfr, x: mpfr, n: int):
    """(f_a^n(x), (f_a^n)'(x)) in the current context."""
    d = mpfr(1)
    for _ in range(n):
        d *= a * (1 - 2 * x)
        x = step(a, x)
    return x, d


def solve_bracketed(fn: Callable[[mpfr], mpfr], lo: mpfr, hi: mpfr, xtol: mpfr,
                    flo=None, fhi=None, max_iter: int = 100000) -> mpfr:
    """Root of a continuous function with a sign change on [lo, hi].

    Illinois false position, with a forced bisection whenever the bracket
    fails to halve, so the worst case is that of plain bisection.  Runs in
    the caller's context; ``xtol`` bounds the final bracket width.
    """
    from .errors import NoSignChange

    flo = fn(lo) if flo is None else flo
    fhi = fn(hi) if fhi is None else fhi
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise NoSignChange(f"no sign change on [{lo}, {hi}]")
    rlo, rhi = abs(flo), abs(fhi)
    side = 0
    for it in range(max_iter):
        width = hi - lo
        if width <= xtol:
            break
        if it % 3 == 2:
            mid = lo + width / 2
        else:
            mid = (lo * fhi - hi * flo) / (fhi - flo)
        if not (lo < mid < hi):
            mid = lo + width / 2
            if not (lo < mid < hi):
                break
        fm = fn(mid)
        if fm == 0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo, rlo = mid, fm, abs(fm)
            if side == -1:
                fhi = fhi / 2
            side = -1
        else:
            hi, fhi, rhi = mid, fm, abs(fm)
            if side == 1:
                flo = flo / 2
            side = 1
    return lo if rlo <= rhi else hi


def log2_abs(x) -> float:
    x = abs(mpfr(x))
    if x == 0:
        return -math.inf
    return float(gmpy2.log2(x))
