"""Folding structure of g_a = f_a^3, itineraries, periodic words and orbits.

For a above the folding threshold c the third iterate maps two disjoint
intervals L = [beta', l] and R = [r, beta] monotonically onto
I = [beta', beta]; points that never leave L u R form a Cantor set coded by
the full 2-shift (0 for L, 1 for R).

beta_a is taken to be the smallest repelling fixed point of g_a above 1/2.
It lies on a repelling 3-cycle of f_a (at a = 4 it equals sin^2(2 pi / 7)),
not on the fixed point 1 - 1/a of f_a, which sits outside the folding
interval once a > c.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass

import gmpy2
from gmpy2 import mpfr

from .dynamics import (DEFAULT_BITS, advance, check_parameter, default_tolerance,
                       log2_abs, merge_tolerance, solve_bracketed, step, to_decimal,
                       to_real, working_precision)
from .errors import (Ambiguous, BranchDegenerate, ChaostatError, DomainError, NotFound, OutOfRange,
                     PrecisionExhausted)
from .measures import PointSet

C_SCAN_LO = 3.85
C_SCAN_HI = 4.0
C_SCAN_CELLS = 2**12


def g_eval(a: mpfr, x: mpfr) -> mpfr:
    return advance(a, x, 3)


def g_with_derivative(a: mpfr, x: mpfr):
    d = mpfr(1)
    for _ in range(3):
        d *= a * (1 - 2 * x)
        x = step(a, x)
    return x, d


def _g_float(a: float, x: float) -> float:
    for _ in range(3):
        x = a * x * (1.0 - x)
    return x


def _beta(a: mpfr, bits: int) -> mpfr:
    """Smallest fixed point of g_a above 1/2 where g - id changes sign from - to +."""
    af = float(a)
    cells = 2048
    prev_x, prev_v = 0.5, _g_float(af, 0.5) - 0.5
    bracket = None
    for i in range(1, cells + 1):
        x = 0.5 + 0.5 * i / cells
        v = _g_float(af, x) - x
        if prev_v < 0 <= v:
            bracket = (prev_x, x)
            break
        prev_x, prev_v = x, v
    if bracket is None:
        raise NotFound(f"no repelling fixed point of g above 1/2 at a={af}")
    fn = lambda x: g_eval(a, x) - x
    lo, hi = mpfr(bracket[0]), mpfr(bracket[1])
    flo, fhi = fn(lo), fn(hi)
    if not (flo < 0 <= fhi):
        # float scan disagrees with the precise signs; rescan finely at full precision
        lo = hi = None
        for i in range(1, 8 * cells + 1):
            x = mpfr(0.5) + mpfr(i) / (16 * cells)
            if fn(x) >= 0:
                lo, hi = x - mpfr(1) / (16 * cells), x
                break
        if lo is None:
            raise NotFound("fixed point bracket lost at high precision")
    return solve_bracketed(fn, lo, hi, mpfr(2) ** (-bits - 2))


def beta_of(a, bits: int = DEFAULT_BITS) -> mpfr:
    """beta_a at ``bits`` of precision (defined for a in [c, 4])."""
    with working_precision(bits):
        a = to_real(a, bits)
        check_parameter(a)
        return _beta(a, bits)


def fold_gap(a, bits: int = DEFAULT_BITS) -> mpfr:
    """h(a) = g_a(1/2) - (1 - beta_a); its first zero above 3.85 is c."""
    with working_precision(bits):
        a = to_real(a, bits)
        return g_eval(a, mpfr(0.5)) - (1 - _beta(a, bits))


@dataclass(frozen=True)
class FoldingThreshold:
    c: mpfr
    beta: mpfr
    beta_prime: mpfr
    fold_residual: mpfr      # |g_c(1/2) - (1 - g_c^2(1/2))|
    cycle_residual: mpfr     # |g_c^2(1/2) - g_c^3(1/2)|
    bits: int

    def to_dict(self) -> dict:
        return {"c": to_decimal(self.c), "beta": to_decimal(self.beta),
                "beta_prime": to_decimal(self.beta_prime),
                "fold_residual": to_decimal(self.fold_residual),
                "cycle_residual": to_decimal(self.cycle_residual), "precision": self.bits}


@functools.lru_cache(maxsize=16)
def find_c(bits: int = DEFAULT_BITS) -> FoldingThreshold:
    """Smallest zero of h(a) = g_a(1/2) - (1 - beta_a) in (3.85, 4)."""
    with working_precision(bits):
        lo_a = mpfr(C_SCAN_LO)
        width = (mpfr(C_SCAN_HI) - lo_a) / C_SCAN_CELLS
        prev = lo_a
        hprev = fold_gap(prev, bits)
        bracket = None
        for i in range(1, C_SCAN_CELLS + 1):
            a = lo_a + width * i
            h = fold_gap(a, bits)
            if (h > 0) != (hprev > 0) or h == 0:
                bracket = (prev, a, hprev, h)
                break
            prev, hprev = a, h
        if bracket is None:
            raise NotFound("no sign change of h on (3.85, 4)")
        lo, hi, flo, fhi = bracket
        c = solve_bracketed(lambda a: fold_gap(a, bits), lo, hi, mpfr(2) ** (-bits - 2),
                            flo=flo, fhi=fhi)
        beta = _beta(c, bits)
        half = mpfr(0.5)
        g1 = g_eval(c, half)
        g2 = g_eval(c, g1)
        g3 = g_eval(c, g2)
        res = FoldingThreshold(c=c, beta=beta, beta_prime=1 - beta,
                               fold_residual=abs(g1 - (1 - g2)),
                               cycle_residual=abs(g2 - g3), bits=bits)
    tol = default_tolerance(bits)
    if res.fold_residual >= tol or res.cycle_residual >= tol:
        raise NotFound("threshold residuals exceed tolerance")
    return res


def threshold(bits: int = DEFAULT_BITS) -> mpfr:
    return find_c(bits).c


@dataclass(frozen=True)
class BranchSystem:
    """beta, beta' = 1 - beta and the cut points l <= 1/2 <= r of g_a on I_a."""

    a: mpfr
    beta: mpfr
    beta_prime: mpfr
    l_cut: mpfr
    r_cut: mpfr
    bits: int

    @property
    def tol(self) -> mpfr:
        return default_tolerance(self.bits)

    def g(self, x) -> mpfr:
        with working_precision(self.bits):
            return g_eval(self.a, to_real(x, self.bits))

    def to_dict(self) -> dict:
        return {k: to_decimal(getattr(self, k)) for k in
                ("a", "beta", "beta_prime", "l_cut", "r_cut")} | {"precision": self.bits}


def _monotone_on(a: mpfr, lo: mpfr, hi: mpfr, samples: int = 64) -> int:
    """+1 / -1 if g is strictly monotone on the sample grid of [lo, hi], else 0."""
    vals = [g_eval(a, lo + (hi - lo) * i / samples) for i in range(samples + 1)]
    diffs = [v2 - v1 for v1, v2 in zip(vals, vals[1:])]
    if all(d > 0 for d in diffs):
        return 1
    if all(d < 0 for d in diffs):
        return -1
    return 0


@functools.lru_cache(maxsize=4096)
def _branch_system_cached(a: mpfr, bits: int) -> BranchSystem:
    with working_precision(bits):
        c = threshold(bits)
        tol = default_tolerance(bits)
        if a < c - tol:
            raise OutOfRange(f"a={a} is below the folding threshold c={c}")
        beta = _beta(a, bits)
        bp = 1 - beta
        half = mpfr(0.5)
        fn = lambda x: g_eval(a, x) - bp
        xtol = mpfr(2) ** (-bits - 2)
        if g_eval(a, half) >= bp:
            l = r = half
        else:
            l = solve_bracketed(fn, bp, half, xtol)
            r = solve_bracketed(fn, half, beta, xtol)
        if l < r:
            if _monotone_on(a, bp, l) != -1 or _monotone_on(a, r, beta) != 1:
                raise BranchDegenerate(f"g is not monotone on the branches at a={a}")
        return BranchSystem(a=a, beta=beta, beta_prime=bp, l_cut=l, r_cut=r, bits=bits)


def branch_system(a, bits: int = DEFAULT_BITS) -> BranchSystem:
    """Folding data of g_a for a in [c, 4]."""
    a = to_real(a, bits)
    check_parameter(a)
    return _branch_system_cached(a, bits)


def _solve_monotone_g(a: mpfr, lo: mpfr, hi: mpfr, y: mpfr, bits: int, guess=None) -> mpfr:
    """x in [lo, hi] with g(x) = y for g monotone on [lo, hi]; safeguarded Newton."""
    glo, ghi = g_eval(a, lo) - y, g_eval(a, hi) - y
    if glo == 0:
        return lo
    if ghi == 0:
        return hi
    if (glo > 0) == (ghi > 0):
        raise DomainError("target value outside the branch image")
    inc = ghi > 0
    x = (lo + hi) / 2 if guess is None or not (lo < guess < hi) else guess
    eps = mpfr(2) ** (-bits + 2)
    # a Newton step this small leaves an error of order its square
    quad = mpfr(2) ** (-(bits // 2) - 16)
    for _ in range(4 * bits + 50):
        gx, d = g_with_derivative(a, x)
        r = gx - y
        if r == 0:
            return x
        if (r > 0) == inc:
            hi = x
        else:
            lo = x
        newton = d != 0 and lo < x - r / d < hi
        nx = x - r / d if newton else (lo + hi) / 2
        if abs(nx - x) <= eps * abs(x) or hi - lo <= eps:
            return nx
        if newton and abs(nx - x) <= quad * abs(x):
            return nx
        x = nx
    return x


def inverse_branch(bs: BranchSystem, symbol: int, y, guess=None) -> mpfr:
    """The unique x in L (symbol 0) or R (symbol 1) with g(x) = y, for y in I."""
    bits = bs.bits
    with working_precision(bits):
        y = to_real(y, bits)
        tol = bs.tol
        if not (bs.beta_prime - tol <= y <= bs.beta + tol):
            raise DomainError("y must lie in I = [beta', beta]")
        if symbol == 1:
            if y >= bs.beta:
                return bs.beta
            if y <= bs.beta_prime:
                return bs.r_cut
            return _solve_monotone_g(bs.a, bs.r_cut, bs.beta, y, bits, guess)
        if symbol == 0:
            if y >= bs.beta:
                return bs.beta_prime
            if y <= bs.beta_prime:
                return bs.l_cut
            return _solve_monotone_g(bs.a, bs.beta_prime, bs.l_cut, y, bits, guess)
    raise DomainError("symbol must be 0 or 1")


def g_fold_max(a: mpfr) -> mpfr:
    """First critical point of g_a above 1/2 (where f_a^2 hits 1/2); g increases up to it."""
    y = (1 + gmpy2.sqrt(1 - 2 / a)) / 2
    return (1 + gmpy2.sqrt(1 - 4 * y / a)) / 2


def inverse_right_extended(bs: BranchSystem, y, guess=None) -> mpfr:
    """Inverse of g on [r, x*] (x* the next critical point), defined for y up to g(x*)."""
    bits = bs.bits
    with working_precision(bits):
        y = to_real(y, bits)
        if y <= bs.beta:
            return inverse_branch(bs, 1, y, guess)
        xs = g_fold_max(bs.a)
        return _solve_monotone_g(bs.a, bs.beta, xs, y, bits, guess)


@dataclass(frozen=True)
class Escaped:
    """The orbit left L u R; ``step`` counts symbols (1-based) up to the exit."""

    step: int


def itinerary(bs: BranchSystem, x, n: int):
    """First n symbols of x under g, or Escaped(k) when the k-th iterate leaves L u R."""
    bits = bs.bits
    with working_precision(bits):
        x = to_real(x, bits)
        tol = bs.tol
        out = []
        for k in range(n):
            if abs(x - bs.l_cut) < tol or abs(x - bs.r_cut) < tol:
                if bs.l_cut != bs.r_cut:
                    raise Ambiguous(k + 1)
            if bs.beta_prime - tol <= x <= bs.l_cut:
                out.append("0")
            elif bs.r_cut <= x <= bs.beta + tol:
                out.append("1")
            else:
                return Escaped(k + 1)
            x = g_eval(bs.a, x)
        return "".join(out)


# ---- periodic words -------------------------------------------------------

def _lyndon_words(k: int) -> list:
    """Primitive necklaces of length k in the order with 1 before 0 (FKM algorithm).

    Words are generated over digits 0 < 1 and then relabelled (0 -> '1', 1 -> '0'),
    so lexicographic order in the generator is the 1-before-0 order.
    """
    out = []
    w = [-1]
    while w:
        w[-1] += 1
        m = len(w)
        if m == k:
            out.append("".join("1" if d == 0 else "0" for d in w))
        while len(w) < k:
            w.append(w[len(w) - m])
        while w and w[-1] == 1:
            w.pop()
    return out


@functools.lru_cache(maxsize=64)
def primitive_classes(k: int) -> tuple:
    if k < 1:
        raise DomainError("period must be >= 1")
    return tuple(_lyndon_words(k))


def necklace_enumerate(n: int) -> str:
    """n-th primitive cyclic class (1-based), by period then 1-before-0 order."""
    if n < 1:
        raise DomainError("index must be >= 1")
    k = 1
    while True:
        classes = primitive_classes(k)
        if n <= len(classes):
            return classes[n - 1]
        n -= len(classes)
        k += 1


def is_primitive(word: str) -> bool:
    k = len(word)
    return all(word != word[d:] + word[:d] for d in range(1, k) if k % d == 0)


def _check_word(word: str) -> str:
    if not word or any(ch not in "01" for ch in word):
        raise DomainError("word must be a nonempty string over {0, 1}")
    return word


@dataclass(frozen=True)
class PeriodicOrbitFamily:
    index: int | None
    word: str
    k_n: int
    g_points: tuple
    per_set: PointSet | None
    a: mpfr
    bits: int
    residual: mpfr

    def to_dict(self) -> dict:
        return {"index": self.index, "word": self.word, "k_n": self.k_n,
                "g_points": [to_decimal(p) for p in self.g_points],
                "per_set": [to_decimal(p) for p in self.per_set] if self.per_set else [],
                "residual": to_decimal(self.residual)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def compose_inverse(bs: BranchSystem, word: str, y: mpfr) -> mpfr:
    """psi_{w_1} o ... o psi_{w_k} (y): the point of cylinder [w] that g^k sends to y."""
    for s in reversed(word):
        y = inverse_branch(bs, int(s), y)
    return y


def _least_period(word: str) -> int:
    k = len(word)
    for d in range(1, k + 1):
        if k % d == 0 and word == word[d:] + word[:d]:
            return d
    return k


SEED_BITS = 160


def _contract(bs: BranchSystem, word: str) -> mpfr:
    p = (bs.beta_prime + bs.beta) / 2
    eps = mpfr(2) ** (-bs.bits + 4)
    for _ in range(40 * bs.bits):
        q = compose_inverse(bs, word, p)
        if abs(q - p) <= eps:
            return q
        p = q
    return p


def _seed_point(bs: BranchSystem, word: str) -> mpfr:
    """Fixed point of psi_w by contraction, at reduced precision when that is safe."""
    if bs.bits > SEED_BITS:
        try:
            with working_precision(SEED_BITS):
                lo = branch_system(mpfr(bs.a, SEED_BITS), SEED_BITS)
                seed = _contract(lo, word) if lo.l_cut < lo.r_cut else None
        except ChaostatError:
            seed = None
        if seed is not None:
            return mpfr(seed, bs.bits)
    return _contract(bs, word)


def locate_periodic_orbit(bs: BranchSystem, word: str, index: int | None = None) -> PeriodicOrbitFamily:
    """Periodic orbit of g with the given itinerary, by inverse-branch contraction."""
    word = _check_word(word)
    bits = bs.bits
    if not bs.l_cut < bs.r_cut:
        raise OutOfRange("the Cantor regime needs a > c")
    k = _least_period(word)
    word = word[:k]
    with working_precision(bits):
        p = _seed_point(bs, word)
        # Newton polish on g^k(x) - x; quadratic from the seed's accuracy
        limit = mpfr(2) ** (-min(bits, SEED_BITS) // 2)
        for _ in range(2 * bits.bit_length() + 4):
            x, d = p, mpfr(1)
            for _ in range(k):
                x, dg = g_with_derivative(bs.a, x)
                d *= dg
            if d == 1:
                break
            nxt = p - (x - p) / (d - 1)
            st = abs(nxt - p)
            if st > limit:
                break
            p = nxt
            if st <= mpfr(2) ** (-bits + 4) * abs(p):
                break
        if log2_abs(d) > bits - 16:
            raise PrecisionExhausted(f"cylinder of {word!r} is below resolution at {bits} bits")
        pts = [p]
        y = p
        for s in reversed(word[1:]):
            y = inverse_branch(bs, int(s), y)
            pts.append(y)
        # pts = p^1, p^k, p^{k-1}, ..., p^2
        g_points = (pts[0],) + tuple(reversed(pts[1:]))
        residual = mpfr(0)
        for j in range(k):
            residual = max(residual, abs(g_eval(bs.a, g_points[j]) - g_points[(j + 1) % k]))
    itin = itinerary(bs, g_points[0], k)
    if itin != word:
        raise PrecisionExhausted(f"itinerary check failed for {word!r}: got {itin!r}")
    return PeriodicOrbitFamily(index=index, word=word, k_n=k, g_points=g_points, per_set=None,
                               a=bs.a, bits=bits, residual=residual)


def per_set(a, n: int, bits: int = DEFAULT_BITS) -> PeriodicOrbitFamily:
    """The family of the n-th periodic class with Per_a(n) = union of f^j(g_points), j<3."""
    bs = branch_system(a, bits)
    return _per_set_cached(bs, n)


@functools.lru_cache(maxsize=4096)
def _per_set_cached(bs: BranchSystem, n: int) -> PeriodicOrbitFamily:
    fam = locate_periodic_orbit(bs, necklace_enumerate(n), index=n)
    with working_precision(bs.bits):
        pts = []
        for p in fam.g_points:
            pts.extend([p, step(bs.a, p), advance(bs.a, p, 2)])
    ps = PointSet.of(pts, bs.bits)
    return PeriodicOrbitFamily(index=n, word=fam.word, k_n=fam.k_n, g_points=fam.g_points,
                               per_set=ps, a=fam.a, bits=fam.bits, residual=fam.residual)


def orbit_sets(a, N: int, bits: int = DEFAULT_BITS) -> list:
    return [per_set(a, n, bits) for n in range(1, N + 1)]


def min_gap(a, N: int, bits: int = DEFAULT_BITS) -> mpfr:
    """Smallest distance between distinct points of Per_a(1) u ... u Per_a(N).

    For N = 1 this is the spacing inside Per_a(1).
    """
    if N < 1:
        raise DomainError("N must be >= 1")
    fams = orbit_sets(a, N, bits)
    with working_precision(bits):
        pts = sorted(p for f in fams for p in f.per_set)
        gaps = [y - x for x, y in zip(pts, pts[1:])]
        if not gaps:
            raise DomainError("need at least two points")
        g = min(gaps)
        if g < merge_tolerance(bits):
            raise PrecisionExhausted("two orbit points coincide at this precision")
        return g
