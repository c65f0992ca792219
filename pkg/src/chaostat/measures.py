"""Finite atomic measures on [0, 1] and the statistics built from them.

Weights are exact rationals: an :class:`AtomicMeasure` stores integer counts
over one common denominator, so masses like k/n never pick up rounding error.
Locations are mpfr values at the measure's precision.

Wasserstein-1 is computed as the L1 distance between cumulative distribution
functions.  On the line this equals the supremum of the difference of
integrals over 1-Lipschitz test functions (Kantorovich-Rubinstein duality
combined with the one-dimensional monotone coupling), and for atomic
measures the integral is a finite sum over the merged breakpoints.
"""

from __future__ import annotations

import bisect
import csv
import io
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import gmpy2
import numpy as np
from gmpy2 import mpfr

from .dynamics import (DEFAULT_BITS, DEFAULT_ITERATION_BUDGET, check_parameter,
                       check_point, merge_tolerance, step, to_decimal, to_real,
                       working_precision, _check_cycle, default_tolerance)
from .errors import DomainError, NotProbability, ResourceError

PROBABILITY_TOL = Fraction(1, 2**64)
_MPFR = type(mpfr(0))


def _as_fraction(w) -> Fraction:
    if isinstance(w, Fraction):
        return w
    if isinstance(w, (int, float)):
        return Fraction(w)
    if isinstance(w, str):
        return Fraction(w.strip())
    if isinstance(w, type(gmpy2.mpq(0))):
        return Fraction(int(w.numerator), int(w.denominator))
    return Fraction(*mpfr(w).as_integer_ratio())


@dataclass(frozen=True)
class AtomicMeasure:
    """Atoms (location, counts[i] / denominator), locations sorted and merged."""

    locations: tuple
    counts: tuple
    denominator: int
    bits: int = DEFAULT_BITS

    @classmethod
    def from_counts(cls, locations: Sequence, counts: Sequence[int], denominator: int,
                    bits: int = DEFAULT_BITS, merge: bool = True) -> "AtomicMeasure":
        if denominator <= 0:
            raise DomainError("denominator must be positive")
        if len(locations) != len(counts):
            raise DomainError("locations and counts differ in length")
        locs = [v if isinstance(v, _MPFR) and v.precision == bits else to_real(v, bits)
                for v in locations]
        if locs and not (0 <= min(locs) and max(locs) <= 1):
            raise DomainError("atom location outside [0, 1]")
        if any(c < 0 for c in counts):
            raise DomainError("negative weight")
        if all(c == 1 for c in counts):
            locs.sort()
            order = range(len(locs))
        else:
            order = sorted(range(len(locs)), key=locs.__getitem__)
        tol = merge_tolerance(bits)
        out_l, out_c = [], []
        anchor = None
        for i in order:
            x, c = locs[i], int(counts[i])
            if c == 0:
                continue
            if merge and out_l and x - anchor < tol:
                out_c[-1] += c
            else:
                out_l.append(x)
                out_c.append(c)
                anchor = x
        g = math.gcd(denominator, *out_c) if out_c else denominator
        return cls(tuple(out_l), tuple(c // g for c in out_c), denominator // g, bits)

    @classmethod
    def from_weights(cls, atoms: Iterable, bits: int = DEFAULT_BITS) -> "AtomicMeasure":
        """Build from (location, weight) pairs; weights are converted exactly."""
        pairs = [(loc, _as_fraction(w)) for loc, w in atoms]
        den = 1
        for _, w in pairs:
            if w < 0:
                raise DomainError("negative weight")
            den = den * w.denominator // math.gcd(den, w.denominator)
        counts = [int(w * den) for _, w in pairs]
        return cls.from_counts([p[0] for p in pairs], counts, den, bits)

    @classmethod
    def dirac(cls, x, bits: int = DEFAULT_BITS) -> "AtomicMeasure":
        return cls.from_counts([x], [1], 1, bits)

    def __len__(self):
        return len(self.locations)

    @property
    def total(self) -> Fraction:
        return Fraction(sum(self.counts), self.denominator)

    def weight(self, i: int) -> Fraction:
        return Fraction(self.counts[i], self.denominator)

    @property
    def atoms(self) -> list:
        return [(x, Fraction(c, self.denominator)) for x, c in zip(self.locations, self.counts)]

    def is_probability(self, tol: Fraction = PROBABILITY_TOL) -> bool:
        return abs(self.total - 1) <= tol

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        with working_precision(self.bits):
            den = mpfr(self.denominator)
            atoms = [{"x": to_decimal(x), "w": to_decimal(mpfr(c) / den),
                      "w_exact": f"{c}/{self.denominator}"}
                     for x, c in zip(self.locations, self.counts)]
        return {"precision": self.bits, "total": str(self.total), "atoms": atoms}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict, bits: int | None = None) -> "AtomicMeasure":
        bits = int(d.get("precision", DEFAULT_BITS)) if bits is None else bits
        pairs = [(a["x"], a.get("w_exact", a["w"])) for a in d["atoms"]]
        return cls.from_weights(pairs, bits)

    @classmethod
    def from_json(cls, text: str, bits: int | None = None) -> "AtomicMeasure":
        return cls.from_dict(json.loads(text), bits)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["location", "weight"])
        with working_precision(self.bits):
            den = mpfr(self.denominator)
            for x, c in zip(self.locations, self.counts):
                w.writerow([to_decimal(x), to_decimal(mpfr(c) / den)])
        return buf.getvalue()

    def histogram(self, bins: int = 20) -> list:
        """Exact masses of [i/bins, (i+1)/bins) (last bin closed)."""
        out = [0] * bins
        for x, c in zip(self.locations, self.counts):
            i = min(int(x * bins), bins - 1)
            out[i] += c
        return [Fraction(c, self.denominator) for c in out]


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Birkhoff average (1/n) sum_{k<n} delta_{f^k x} with its provenance."""

    measure: AtomicMeasure
    a: mpfr
    x: mpfr
    n: int


@dataclass(frozen=True)
class PointSet:
    """Sorted set of distinct locations in [0, 1]."""

    points: tuple

    @classmethod
    def of(cls, values: Iterable, bits: int = DEFAULT_BITS, tol=None) -> "PointSet":
        vals = sorted(to_real(v, bits) for v in values)
        tol = merge_tolerance(bits) if tol is None else tol
        out = []
        for v in vals:
            check_point(v)
            if out and v - out[-1] < tol:
                continue
            out.append(v)
        return cls(tuple(out))

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def distance(self, x) -> mpfr:
        """Distance from x to the nearest point of the set."""
        pts = self.points
        i = bisect.bisect_left(pts, x)
        best = None
        for j in (i - 1, i):
            if 0 <= j < len(pts):
                d = abs(x - pts[j])
                if best is None or d < best:
                    best = d
        return best


def orbit_measure(a: mpfr, x: mpfr, n: int, bits: int, skip_start: bool = False) -> AtomicMeasure:
    with working_precision(bits):
        pts = []
        y = x
        if skip_start:
            y = step(a, y)
        for _ in range(n):
            pts.append(y)
            y = step(a, y)
    return AtomicMeasure.from_counts(pts, [1] * n, n, bits)


def birkhoff_measure(a, x, n: int, bits: int = DEFAULT_BITS,
                     budget: int = DEFAULT_ITERATION_BUDGET) -> EmpiricalMeasure:
    """nu_a^n(x) = (1/n) sum_{k=0}^{n-1} delta_{f_a^k x}."""
    if n < 1:
        raise DomainError("n must be >= 1")
    if n > budget:
        raise ResourceError(f"n={n} exceeds the iteration budget {budget}")
    a, x = to_real(a, bits), to_real(x, bits)
    check_parameter(a)
    check_point(x)
    return EmpiricalMeasure(orbit_measure(a, x, n, bits), a, x, n)


def uniform_starts(seed: int, count: int, bits: int = DEFAULT_BITS) -> list:
    """Seeded uniform points of [0,1): 64-bit PCG64 words divided by 2^64."""
    if count <= 0:
        return []
    raw = np.random.PCG64(seed).random_raw(count)
    with working_precision(max(bits, 64)):
        scale = mpfr(2) ** -64
        vals = [mpfr(int(r)) * scale for r in raw]
    return [to_real(v, bits) for v in vals]


def monte_carlo_measure(a, k: int, n: int, seed: int, bits: int = DEFAULT_BITS,
                        budget: int = DEFAULT_ITERATION_BUDGET) -> AtomicMeasure:
    """mu_{k,n} = (1/kn) sum_{l=1}^{k} sum_{m=1}^{n} delta_{f^m(x_l)}, x_l seeded uniform."""
    if k < 1 or n < 1:
        raise DomainError("k and n must be >= 1")
    if k * n > budget:
        raise ResourceError(f"k*n={k * n} exceeds the iteration budget {budget}")
    a = to_real(a, bits)
    check_parameter(a)
    starts = uniform_starts(seed, k, bits)
    pts = []
    with working_precision(bits):
        for x in starts:
            y = x
            for _ in range(n):
                y = step(a, y)
                pts.append(y)
    return AtomicMeasure.from_counts(pts, [1] * len(pts), k * n, bits)


def _require_probability(mu: AtomicMeasure) -> None:
    if not mu.is_probability():
        raise NotProbability(f"total mass {mu.total} is not 1")


def w1_distance(mu: AtomicMeasure, nu: AtomicMeasure, bits: int | None = None) -> mpfr:
    """Integral over [0,1] of |F_mu - F_nu|, exact up to the final roundings."""
    _require_probability(mu)
    _require_probability(nu)
    bits = max(mu.bits, nu.bits) if bits is None else bits
    dm, dn = mu.denominator, nu.denominator
    with working_precision(bits):
        scale = mpfr(dm) * mpfr(dn)
        i = j = 0
        cm = cn = 0  # cumulative counts
        total = mpfr(0)
        prev = None
        lm, ln = mu.locations, nu.locations
        while i < len(lm) or j < len(ln):
            if j >= len(ln) or (i < len(lm) and lm[i] <= ln[j]):
                t = lm[i]
            else:
                t = ln[j]
            if prev is not None:
                diff = abs(cm * dn - cn * dm)
                if diff:
                    total += mpfr(diff) * (t - prev)
            while i < len(lm) and lm[i] == t:
                cm += mu.counts[i]
                i += 1
            while j < len(ln) and ln[j] == t:
                cn += nu.counts[j]
                j += 1
            prev = t
        return total / scale


def orbit_uniform_measure(a, cycle: Sequence, bits: int = DEFAULT_BITS, tol=None) -> AtomicMeasure:
    """Uniform probability 1/p on the points of a p-cycle."""
    with working_precision(bits):
        a = to_real(a, bits)
        check_parameter(a)
        pts = [to_real(v, bits) for v in cycle]
        tol = default_tolerance(bits) if tol is None else to_real(tol, bits)
        _check_cycle(a, pts, tol)
    return AtomicMeasure.from_counts(pts, [1] * len(pts), len(pts), bits)


def neighborhood_weight(mu: AtomicMeasure, target: PointSet, delta) -> Fraction:
    """Mass of the atoms lying within distance delta of some target point."""
    with working_precision(mu.bits):
        delta = to_real(delta, mu.bits)
        if delta <= 0:
            raise DomainError("delta must be positive")
        if not len(target):
            return Fraction(0)
        hit = 0
        for x, c in zip(mu.locations, mu.counts):
            if target.distance(x) <= delta:
                hit += c
    return Fraction(hit, mu.denominator)


def hat_upper_sequence(mu: AtomicMeasure, target: PointSet, l: int) -> mpfr:
    """Integral of the tent phi_l: 1 on target, 0 beyond distance 2^-l, linear between."""
    if l < 1:
        raise DomainError("l must be >= 1")
    with working_precision(mu.bits):
        if not len(target):
            return mpfr(0)
        width = mpfr(2) ** (-l)
        acc = mpfr(0)
        for x, c in zip(mu.locations, mu.counts):
            d = target.distance(x)
            if d < width:
                acc += c * (1 - d / width)
        return acc / mu.denominator


def dwell_counts(points: Sequence, sets: Sequence[PointSet], delta) -> list:
    """Number of points within delta of each set (the sets' neighbourhoods are disjoint)."""
    out = []
    for s in sets:
        hit = 0
        for x in points:
            if s.distance(x) <= delta:
                hit += 1
        out.append(hit)
    return out
