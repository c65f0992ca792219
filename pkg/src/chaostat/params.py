"""Parameter-space searches: sinks, superattracting centres, parabolic boundary
points, admissibility witnesses and the parameter-stability radius."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from gmpy2 import mpfr

from .dynamics import (DEFAULT_BITS, advance, check_parameter, default_tolerance, orbit_jet, orbit_derivative,
                       parameter_sensitivity, solve_bracketed, step, to_decimal, to_real,
                       working_precision)
from .errors import DomainError, LostCycle, NoSignChange, NotFound, Underflow
from .measures import AtomicMeasure, orbit_measure, orbit_uniform_measure, uniform_starts, w1_distance


# ---- sinks -----------------------------------------------------------------

@dataclass(frozen=True)
class SinkReport:
    cycle: tuple
    period: int
    multiplier: mpfr
    measure: AtomicMeasure

    def to_dict(self) -> dict:
        return {"period": self.period, "cycle": [to_decimal(x) for x in self.cycle],
                "multiplier": to_decimal(self.multiplier)}


@dataclass(frozen=True)
class NoneFound:
    reason: str


def _newton_cycle(a: mpfr, x: mpfr, q: int, iters: int = 60, tol=None):
    """Refine a q-periodic point by Newton on f^q(x) - x; returns (x, multiplier) or None."""
    tol = tol if tol is not None else mpfr(2) ** (-(x.precision - 4))
    mu = None
    for _ in range(iters):
        y, d = orbit_derivative(a, x, q)
        mu = d
        if d == 1:
            return None
        dx = (y - x) / (d - 1)
        x = x - dx
        if not (0 <= x <= 1):
            return None
        if abs(dx) <= tol:
            _, mu = orbit_derivative(a, x, q)
            return x, mu
    return None


def detect_sink(a, burn_in: int = 10000, max_period: int = 64, bits: int = DEFAULT_BITS,
                recurrence_tol=None):
    """Iterate 1/2 for burn_in steps, then look for a recurrence of period <= max_period."""
    if burn_in < 1:
        raise DomainError("burn_in must be >= 1")
    with working_precision(bits):
        a = to_real(a, bits)
        check_parameter(a)
        rtol = mpfr(2) ** (-(bits // 4)) if recurrence_tol is None else to_real(recurrence_tol, bits)
        x = advance(a, mpfr(0.5), burn_in)
        orb = [x]
        for _ in range(max_period):
            orb.append(step(a, orb[-1]))
        for p in range(1, max_period + 1):
            if abs(orb[p] - orb[0]) < rtol:
                ref = _newton_cycle(a, orb[0], p)
                if ref is None:
                    continue
                x0, mu = ref
                if abs(mu) > 1 + default_tolerance(bits):
                    continue
                cyc = [x0]
                for _ in range(p - 1):
                    cyc.append(step(a, cyc[-1]))
                meas = orbit_uniform_measure(a, cyc, bits)
                return SinkReport(tuple(cyc), p, mu, meas)
    return NoneFound(f"no recurrence of period <= {max_period} after {burn_in} steps")


@dataclass(frozen=True)
class BasinCheck:
    fraction: float
    w1_values: tuple
    threshold: mpfr
    samples: int
    horizon: int
    seed: int

    @property
    def mean_w1(self) -> mpfr:
        return sum(self.w1_values, mpfr(0)) / len(self.w1_values) if self.w1_values else mpfr(0)

    @property
    def max_w1(self) -> mpfr:
        return max(self.w1_values) if self.w1_values else mpfr(0)


def basin_convergence_check(a, report: SinkReport, samples: int, horizon: int, seed: int,
                            bits: int = DEFAULT_BITS) -> BasinCheck:
    """Share of seeded starts whose nu_a^horizon is W1-close to the sink measure."""
    a = to_real(a, bits)
    with working_precision(bits):
        thr = mpfr(10) * report.period / horizon + mpfr("1e-3")
        w1s = []
        for x in uniform_starts(seed, samples, bits):
            nu = orbit_measure(a, x, horizon, bits)
            w1s.append(w1_distance(nu, report.measure, bits))
        ok = sum(1 for w in w1s if w < thr)
    return BasinCheck(ok / samples if samples else 0.0, tuple(w1s), thr, samples, horizon, seed)


# ---- superattracting and parabolic parameters ------------------------------

def find_superattracting(q: int, bracket: Sequence, bits: int = DEFAULT_BITS) -> mpfr:
    """Parameter in the bracket where 1/2 is periodic with period q (bisection-type search)."""
    if q < 1:
        raise DomainError("q must be >= 1")
    with working_precision(bits):
        lo, hi = (to_real(b, bits) for b in bracket)
        if not lo < hi:
            raise DomainError("empty bracket")
        check_parameter(hi)
        half = mpfr(0.5)
        fn = lambda a: advance(a, half, q) - half
        a = solve_bracketed(fn, lo, hi, mpfr(2) ** (-bits - 2))
        if abs(fn(a)) >= default_tolerance(bits):
            raise NotFound("superattracting residual above tolerance")
        return a


@dataclass(frozen=True)
class ParabolicParameter:
    a: mpfr
    point: mpfr
    period: int
    multiplier_residual: mpfr
    cycle_residual: mpfr
    bits: int
    bracket: tuple = ()

    def residuals(self, bits: int | None = None):
        """(|f^j(p) - p|, |Df^j(p) - 1|) recomputed at ``bits`` (default: stored precision)."""
        bits = self.bits if bits is None else bits
        with working_precision(bits):
            a, p = mpfr(self.a, bits), mpfr(self.point, bits)
            y, d = orbit_jet(a, p, self.period)[:2]
            return abs(y - p), abs(d - 1)

    def to_dict(self) -> dict:
        return {"a": to_decimal(self.a), "point": to_decimal(self.point), "period": self.period,
                "multiplier_residual": to_decimal(self.multiplier_residual),
                "cycle_residual": to_decimal(self.cycle_residual), "precision": self.bits,
                "bracket": [to_decimal(b) for b in self.bracket]}

    @classmethod
    def from_dict(cls, d: dict) -> "ParabolicParameter":
        bits = int(d["precision"])
        return cls(a=to_real(d["a"], bits), point=to_real(d["point"], bits), period=int(d["period"]),
                   multiplier_residual=to_real(d["multiplier_residual"], bits),
                   cycle_residual=to_real(d["cycle_residual"], bits), bits=bits,
                   bracket=tuple(to_real(b, bits) for b in d.get("bracket", [])))


def _window_scale(a0: mpfr, q: int):
    """Signed distance from a superattracting centre to its saddle-node, quadratic model."""
    _, _, da, dxx, _ = orbit_jet(a0, mpfr(0.5), q)
    if da == 0 or dxx == 0:
        raise LostCycle("degenerate centre")
    return 1 / (2 * dxx * da)


def _least_period_ok(a: mpfr, x: mpfr, q: int, tol: mpfr) -> bool:
    y = x
    for d in range(1, q):
        y = step(a, y)
        if q % d == 0 and abs(y - x) < tol:
            return False
    return True


def _track(a: mpfr, x: mpfr, q: int, tol: mpfr):
    """Cycle point near x at parameter a, or None when the cycle is gone or degenerate."""
    ref = _newton_cycle(a, x, q)
    if ref is None:
        return None
    y, mu = ref
    if not (tol < y < 1 - tol) or not _least_period_ok(a, y, q, tol):
        return None
    return y, mu


def _continue(q: int, a0: mpfr, direction: int, steps: int, span: mpfr, stop_at_one=True):
    """March from the centre; yields list of (a, x, multiplier) and the first failing a."""
    tol = default_tolerance(a0.precision)
    h = span / steps * direction
    a, x = a0, mpfr(0.5)
    curve = [(a, x, mpfr(0))]
    for _ in range(steps):
        an = a + h
        if not (0 < an <= 4):
            return curve, None
        # predictor: dx/da = -F_a / F_x for F = f^q(x) - x
        _, d, da, _, _ = orbit_jet(a, x, q)
        xn = x - da / (d - 1) * h if d != 1 else x
        if not (0 < xn < 1):
            xn = x
        tr = _track(an, xn, q, tol)
        if tr is None:
            tr = _track(an, x, q, tol)
        if tr is None:
            return curve, an
        x, mu = tr
        a = an
        curve.append((a, x, mu))
        if stop_at_one and abs(mu) >= 1:
            return curve, None
    return curve, None


def multiplier_curve(q: int, a0, direction: int, steps: int = 64, bits: int = DEFAULT_BITS,
                     span=None) -> list:
    """(a, multiplier) along the q-cycle continued from the centre a0 in the given direction.

    The default span is four times the quadratic-model distance to the saddle-node,
    which covers both window ends.
    """
    if direction not in (1, -1):
        raise DomainError("direction must be +1 or -1")
    with working_precision(bits):
        a0 = to_real(a0, bits)
        span = abs(_window_scale(a0, q)) * 4 if span is None else to_real(span, bits)
        curve, lost = _continue(q, a0, direction, steps, span)
        if lost is not None and len(curve) > 1 and abs(curve[-1][2]) < mpfr("0.5"):
            raise LostCycle(f"cycle lost at a={lost} with |multiplier| < 1/2")
        return [(a, mu) for a, _, mu in curve]


def _polish_parabolic(a: mpfr, x: mpfr, q: int, lo: mpfr, hi: mpfr, iters: int = 30, target=1):
    """2D Newton on (f^q(x) - x, Df^q(x) - target); returns improved (a, x) or None."""
    def resid(a, x):
        y, d = orbit_jet(a, x, q)[:2]
        return abs(y - x) + abs(d - target)

    best = resid(a, x)
    cur = (a, x)
    for _ in range(iters):
        a_, x_ = cur
        y, dx, da, dxx, dxa = orbit_jet(a_, x_, q)
        F1, F2 = y - x_, dx - target
        J11, J12 = dx - 1, da   # d/dx, d/da of F1
        J21, J22 = dxx, dxa     # d/dx, d/da of F2
        det = J11 * J22 - J12 * J21
        if det == 0:
            break
        ddx = (F1 * J22 - J12 * F2) / det
        dda = (J11 * F2 - J21 * F1) / det
        nx, na = x_ - ddx, a_ - dda
        if not (lo <= na <= hi) or not (0 < nx < 1):
            break
        r = resid(na, nx)
        if r < best:
            best, cur = r, (na, nx)
        else:
            break
        if r == 0:
            break
    return cur if cur != (a, x) else None


def _period_doubling(a: mpfr, x: mpfr, q: int, lo: mpfr, hi: mpfr):
    """When the q-cycle collapses onto a q/2-cycle, the parabolic point is that cycle at
    multiplier -1 (so f^q has multiplier +1 there)."""
    if q % 2:
        return None
    d = q // 2
    ref = _newton_cycle(a, x, d)
    if ref is None:
        return None
    pol = _polish_parabolic(a, ref[0], d, lo, hi, iters=60, target=-1)
    if pol is None:
        return None
    y, m = orbit_jet(pol[0], pol[1], d)[:2]
    if abs(m + 1) > mpfr(2) ** (-(a.precision // 2)):
        return None
    return pol


def _solve_a(a: mpfr, x: mpfr, q: int, bits: int):
    """Parameter near a at which x is q-periodic (Newton in a); returns (a, multiplier)."""
    eps = mpfr(2) ** (-bits + 4)
    for _ in range(80):
        y, d, da, _, _ = orbit_jet(a, x, q)
        if da == 0:
            return None
        st = (y - x) / da
        a = a - st
        if not (0 < a <= 4):
            return None
        if abs(st) <= eps * a:
            return a, orbit_derivative(a, x, q)[1]
    return None


def _fold_by_x(a: mpfr, x: mpfr, mu: mpfr, q: int, bits: int):
    """Saddle-node (a, x) reached by parametrising the periodic curve by x.

    Along {f_a^q(x) = x} the multiplier passes through 1 transversally at a
    saddle-node, while a itself turns around; stepping in x avoids that turn.
    """
    for _ in range(200):
        _, _, _, dxx, _ = orbit_jet(a, x, q)
        if dxx == 0:
            return None
        sgn = 1 if dxx > 0 else -1
        dist = (1 - mu) / abs(dxx) * mpfr(1.5)
        found = None
        for _ in range(40):
            xt = x + sgn * dist
            if not (0 < xt < 1):
                dist /= 2
                continue
            r = _solve_a(a, xt, q, bits)
            if r is not None:
                found = (xt,) + r
                break
            dist /= 2
        if found is None:
            return None
        xt, at, mut = found
        if mut >= 1:
            break
        if mut <= mu:
            return None
        x, a, mu = xt, at, mut
    else:
        return None
    cache = {"a": a}

    def phi(xx):
        r = _solve_a(cache["a"], xx, q, bits)
        if r is None:
            raise LostCycle("periodic curve lost while locating the fold")
        cache["a"] = r[0]
        return r[1] - 1

    try:
        lo, hi = (x, xt) if x < xt else (xt, x)
        xs = solve_bracketed(phi, lo, hi, mpfr(2) ** (-bits + 2))
        r = _solve_a(cache["a"], xs, q, bits)
    except (LostCycle, NoSignChange):
        return None
    if r is None:
        return None
    return r[0], xs


def find_parabolic(q: int, a0, bits: int = DEFAULT_BITS, direction: int | None = None,
                   steps: int = 64, span=None, tol=None) -> ParabolicParameter:
    """Multiplier +1 boundary of the q-periodic window whose centre is a0.

    Residuals are accepted below ``tol``; by default the larger of 2^(-bits/2)
    and the rounding floor 2^(-bits+16) * (1 + |(f^q)''| + |d f^q/da|) at the
    result, since the multiplier cannot be resolved more finely than that.
    """
    with working_precision(bits):
        a0 = to_real(a0, bits)
        check_parameter(a0)
        user_tol = None if tol is None else to_real(tol, bits)
        tol = default_tolerance(bits)
        w = _window_scale(a0, q)
        if direction is None:
            direction = 1 if w > 0 else -1
        span = abs(w) * 4 if span is None else to_real(span, bits)
        curve, lost = _continue(q, a0, direction, steps, span)
        a_good, x_good, mu_good = curve[-1]
        if lost is not None:
            a_bad = lost
        elif len(curve) > 1 and mu_good >= 1:
            a_bad = a_good
            a_good, x_good, mu_good = curve[-2]
        else:
            raise NotFound(f"no +1 crossing within {steps} continuation steps")
        if mu_good <= -1:
            raise NotFound("continuation reached multiplier -1 first")
        fold = _fold_by_x(a_good, x_good, mu_good, q, bits)
        degenerate = not (fold is not None and _least_period_ok(fold[0], fold[1], q, tol))
        if not degenerate:
            a_good, x_good = fold
        else:
            # degenerate boundary (the cycle collapses onto a shorter one): bisection
            # on the predicate 'cycle of least period q present with multiplier < 1'
            res = mpfr(2) ** (-bits + 2) * abs(a0)
            while abs(a_bad - a_good) > res:
                mid = (a_good + a_bad) / 2
                if mid == a_good or mid == a_bad:
                    break
                tr = _track(mid, x_good, q, tol)
                if tr is not None and tr[1] < 1:
                    a_good, x_good, mu_good = mid, tr[0], tr[1]
                else:
                    a_bad = mid
        lo, hi = (a_good, a_bad) if a_good < a_bad else (a_bad, a_good)
        pol = _polish_parabolic(a_good, x_good, q, lo - abs(hi - lo), hi + abs(hi - lo))
        a_fin, x_fin = pol if pol is not None else (a_good, x_good)
        y, d = orbit_jet(a_fin, x_fin, q)[:2]
        if degenerate or abs(d - 1) + abs(y - x_fin) >= tol:
            # pitchfork: the q-cycle merges into a q/2-cycle of multiplier -1
            dbl = _period_doubling(a_good, x_good, q, lo - abs(w), hi + abs(w))
            if dbl is not None:
                a_fin, x_fin = dbl
        y, d, da, dxx, _ = orbit_jet(a_fin, x_fin, q)
        if user_tol is not None:
            tol = user_tol
        else:
            tol = max(tol, mpfr(2) ** (-bits + 16) * (1 + abs(dxx) + abs(da)))
        pp = ParabolicParameter(a=a_fin, point=x_fin, period=q, multiplier_residual=abs(d - 1),
                                cycle_residual=abs(y - x_fin), bits=bits, bracket=(lo, hi))
    if pp.multiplier_residual >= tol or pp.cycle_residual >= tol:
        raise NotFound(f"parabolic residuals above tolerance: {pp.multiplier_residual}, {pp.cycle_residual}")
    return pp


def superattracting_cycle(a, q: int, bits: int = DEFAULT_BITS) -> list:
    with working_precision(bits):
        a = to_real(a, bits)
        pts = [mpfr(0.5)]
        for _ in range(q - 1):
            pts.append(step(a, pts[-1]))
        return pts


# ---- admissibility ------------------------------------------------------------

@dataclass(frozen=True)
class AdmissibilityWitness:
    parabolic: ParabolicParameter
    J: tuple
    i: int
    surrogate: str = "immediate domain of repulsion approximated by the one-sided expanding interval"

    def to_dict(self) -> dict:
        return {"parabolic": self.parabolic.to_dict(), "J": [to_decimal(v) for v in self.J],
                "i": self.i, "surrogate": self.surrogate}


@dataclass(frozen=True)
class NotVerified:
    reason: str
    deepest_covering: float = 0.0
    budget: int = 0

    def to_dict(self) -> dict:
        return {"not_verified": self.reason, "deepest_covering": self.deepest_covering,
                "budget": self.budget}


def _repelling_side(a: mpfr, p: mpfr, j: int) -> int:
    _, d, _, dxx, _ = orbit_jet(a, p, j)
    if abs(d - 1) < mpfr("1e-6") and dxx != 0:
        return 1 if dxx > 0 else -1
    return 1 if p >= 0.5 else -1


def _repulsion_extent(a: mpfr, p: mpfr, j: int, side: int, bits: int) -> mpfr:
    """Largest dyadic D with f^j(x) - x of sign `side` on (p, p + side*D] (sampled)."""
    for e in range(1, bits // 2):
        D = mpfr(2) ** (-e)
        end = p + side * D
        if not (0 < end < 1):
            continue
        ok = True
        for i in range(1, 17):
            x = p + side * D * i / 16
            if (advance(a, x, j) - x) * side <= 0:
                ok = False
                break
        if ok:
            return D
    return mpfr(0)


def verify_admissible(pp: ParabolicParameter, i_max: int = 64, grid: int = 64,
                      bits: int | None = None):
    """Search for J next to pp.point with f^i(J) = [beta', beta] monotonically."""
    from .symbolic import branch_system, threshold

    bits = pp.bits if bits is None else bits
    if i_max <= 0:
        return NotVerified("empty iterate budget", 0.0, i_max)
    with working_precision(bits):
        a = mpfr(pp.a, bits)
        p = mpfr(pp.point, bits)
        if a < threshold(bits) - default_tolerance(bits):
            return NotVerified("parameter below c: the folding interval is undefined", 0.0, i_max)
        bs = branch_system(a, bits)
        lo_I, hi_I = bs.beta_prime, bs.beta
        side = _repelling_side(a, p, pp.period)
        D = _repulsion_extent(a, p, pp.period, side, bits)
        if D == 0:
            return NotVerified("no repelling side detected", 0.0, i_max)
        best = 0.0
        for e in range(0, 24):
            u0 = p + side * D * mpfr(2) ** (-e - 1)
            v0 = p + side * D * mpfr(2) ** (-e)
            J = (min(u0, v0), max(u0, v0))
            x, y = J
            for i in range(1, i_max + 1):
                # f^i stays monotone on J while 1/2 is outside f^t(J) for t < i
                if min(x, y) < 0.5 < max(x, y):
                    break
                x, y = step(a, x), step(a, y)
                lo, hi = min(x, y), max(x, y)
                cover = max(mpfr(0), min(hi, hi_I) - max(lo, lo_I)) / (hi_I - lo_I)
                best = max(best, float(cover))
                if lo <= lo_I and hi >= hi_I:
                    wit = _refine_witness(a, J, i, lo_I, hi_I, grid, bits)
                    if wit is not None:
                        return AdmissibilityWitness(pp, wit, i)
        return NotVerified("iterate budget exhausted", best, i_max)


def _refine_witness(a, J, i, lo_I, hi_I, grid, bits):
    fn = lambda t: lambda x: advance(a, x, i) - t
    xtol = mpfr(2) ** (-bits + 4)
    try:
        u = solve_bracketed(fn(lo_I), J[0], J[1], xtol)
        v = solve_bracketed(fn(hi_I), J[0], J[1], xtol)
    except NoSignChange:
        return None
    u, v = min(u, v), max(u, v)
    sign = None
    for k in range(grid + 1):
        x = u + (v - u) * k / grid
        d = orbit_jet(a, x, i)[1]
        if d == 0:
            return None
        s = d > 0
        if sign is None:
            sign = s
        elif s != sign:
            return None
    return (u, v)


# ---- stability radius --------------------------------------------------------

def stability_radius(a, m: int, slack, x=0.5, bits: int = DEFAULT_BITS) -> mpfr:
    """epsilon = slack / (2 max_{k<=m} |s_k|) along the orbit of x."""
    if m < 1:
        raise DomainError("m must be >= 1")
    with working_precision(bits):
        s = parameter_sensitivity(a, x, m, bits)
        big = max(abs(v) for v in s)
        slack = to_real(slack, bits)
        if big == 0:
            return mpfr("inf")
        eps = slack / (2 * big)
        if eps < mpfr(2) ** (-bits + 8) * to_real(a, bits):
            raise Underflow(f"radius {eps} below resolution at {bits} bits")
        return eps
