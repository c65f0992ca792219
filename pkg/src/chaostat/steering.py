"""Steering the critical orbit: backward ladders, nested landings and stage records.

The critical orbit of f_a is steered through a prescribed sequence of
*pieces*.  An exit piece starts in the right half H+ = [1/2, r] of the hole
of g_a, leaves the folding interval, lingers n g-steps next to beta on the
beta ladder, re-enters through J_0 and lands in I after 8 + 3n f-steps.  A
segment piece starts at phi_w^j(e), the point of I that follows the periodic
word w for j loops before reaching e in H+.  Whenever x_T(a) sweeps I (or
H+) monotonically over a parameter bracket, the next piece is selected by
solving x_T(a) = y(a) for the endpoints of its landing interval, which shrinks
the bracket.  The last segment lands exactly on 1/2, giving a superattracting
centre; its saddle-node neighbour is the stage parameter.
"""

from __future__ import annotations

import bisect
import json
import logging

import gmpy2
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

from gmpy2 import mpfr

from .dynamics import (advance, log2_abs, orbit_jet,
                       solve_bracketed, step, to_decimal, to_real, working_precision)
from .errors import (BudgetExhausted, DomainError, LadderBlocked, NoSignChange, NoSweep,
                     OutOfRange, Underflow)
from .measures import PointSet, uniform_starts
from .params import (NotVerified, ParabolicParameter, _window_scale,
                     find_parabolic, stability_radius, verify_admissible)
from .symbolic import (BranchSystem, branch_system, compose_inverse, inverse_branch,
                       inverse_right_extended, locate_periodic_orbit, min_gap, necklace_enumerate,
                       per_set, threshold)

log = logging.getLogger(__name__)

STEER_BITS = 256
GUARD_BITS = 64


# ---- targets -------------------------------------------------------------------

@dataclass(frozen=True)
class TargetWeights:
    """Weights l_1..l_N on Per(1)..Per(N) with sum l_n >= 1 - tail_bound."""

    weights: tuple
    tail_bound: Fraction = Fraction(0)

    def __post_init__(self):
        w = tuple(Fraction(x) if not isinstance(x, str) else Fraction(x) for x in self.weights)
        t = Fraction(self.tail_bound)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "tail_bound", t)
        if any(x < 0 for x in w):
            raise DomainError("weights must be nonnegative")
        s = sum(w, Fraction(0))
        if s > 1:
            raise DomainError("weights sum above 1")
        if s < 1 - t:
            raise DomainError("weights leave more mass than the tail bound allows")

    @property
    def N(self) -> int:
        return len(self.weights)

    def to_dict(self) -> dict:
        return {"weights": [str(x) for x in self.weights], "tail_bound": str(self.tail_bound)}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetWeights":
        return cls(tuple(Fraction(x) for x in d["weights"]), Fraction(d.get("tail_bound", "0")))


# ---- ladders -------------------------------------------------------------------

def beta_entry_interval(bs: BranchSystem):
    """J_0 = [u, v] right of beta with f^2(u) = beta', f^2(v) = beta (f^2 increasing there)."""
    a = bs.a
    with working_precision(bs.bits):
        xf = (1 + gmpy2.sqrt(1 - 2 / a)) / 2      # f(xf) = 1/2, so f^2 peaks at xf
        xtol = mpfr(2) ** (-bs.bits - 2)
        f2 = lambda t: lambda x: advance(a, x, 2) - t
        try:
            u = solve_bracketed(f2(bs.beta_prime), bs.beta, xf, xtol)
            v = solve_bracketed(f2(bs.beta), bs.beta, xf, xtol)
        except NoSignChange as exc:
            raise LadderBlocked(f"J_0 not found at a={a}") from exc
    return u, v


@dataclass(frozen=True)
class BackwardLadder:
    """Rungs J_0, J_-1, ..., J_-depth pulled back toward a periodic base point."""

    a: mpfr
    base: str                 # "beta" or the periodic word of the base orbit
    base_point: mpfr
    intervals: tuple          # ((lo, hi), ...) starting with J_0
    entry_iterate: int        # s with f^s(J_0) = I
    bits: int

    @property
    def depth(self) -> int:
        return len(self.intervals) - 1

    def to_dict(self) -> dict:
        return {"a": to_decimal(self.a), "base": self.base, "base_point": to_decimal(self.base_point),
                "entry_iterate": self.entry_iterate,
                "intervals": [[to_decimal(u), to_decimal(v)] for u, v in self.intervals]}


def _pull_beta(bs: BranchSystem, y: mpfr, n: int) -> mpfr:
    for _ in range(n):
        y = inverse_right_extended(bs, y)
    return y


def backward_ladder(a, target="beta", depth: int = 0, bits: int = STEER_BITS,
                    exit_rung: int | None = None) -> BackwardLadder:
    """Ladder toward beta (J_0 right of beta) or toward a periodic orbit.

    For a periodic target with word w, J_0 is the exit interval E(n) in H+
    (``exit_rung`` = n, default the shallowest available) and the rungs are
    its images under the inverse branch phi_w of g^{|w|} that fixes the orbit.
    """
    bs = branch_system(a, bits)
    if not bs.l_cut < bs.r_cut:
        raise OutOfRange("ladders need a > c")
    with working_precision(bits):
        if target == "beta":
            u, v = beta_entry_interval(bs)
            rungs = [(u, v)]
            for _ in range(depth):
                u, v = inverse_right_extended(bs, u), inverse_right_extended(bs, v)
                rungs.append((u, v))
            return BackwardLadder(bs.a, "beta", bs.beta, tuple(rungs), 2, bits)
        word = target if isinstance(target, str) else target.word
        n = critical_rung(bs) if exit_rung is None else exit_rung
        e0, e1 = exit_interval(bs, n)
        rungs = [(e0, e1)]
        for _ in range(depth):
            y0, y1 = compose_inverse(bs, word, e0), compose_inverse(bs, word, e1)
            e0, e1 = min(y0, y1), max(y0, y1)
            rungs.append((e0, e1))
        base_point = locate_periodic_orbit(bs, word).g_points[0]
        return BackwardLadder(bs.a, word, base_point, tuple(rungs), 8 + 3 * n, bits)


def critical_rung(bs: BranchSystem, n_max: int = 4000) -> int:
    """Smallest n such that the rung J_-n lies strictly between beta and g^2(1/2)."""
    with working_precision(bs.bits):
        cv = advance(bs.a, mpfr(0.5), 6)
        if cv <= bs.beta:
            raise OutOfRange("critical value not right of beta (a <= c)")
        u, v = beta_entry_interval(bs)
        for n in range(0, n_max + 1):
            if v < cv:
                return n
            u, v = inverse_right_extended(bs, u), inverse_right_extended(bs, v)
    raise LadderBlocked("critical value too close to beta")


def _g2_inverse_hplus(bs: BranchSystem, y: mpfr) -> mpfr:
    """x in H+ = [1/2, r] with g^2(x) = y (g^2 decreases there from g^2(1/2) to beta)."""
    a = bs.a
    fn = lambda x: advance(a, x, 6) - y
    return solve_bracketed(fn, mpfr(0.5), bs.r_cut, mpfr(2) ** (-bs.bits - 2))


def exit_interval(bs: BranchSystem, n: int):
    """E(n) in H+: points whose orbit lingers n g-steps next to beta, then lands in I."""
    with working_precision(bs.bits):
        u, v = beta_entry_interval(bs)
        u, v = _pull_beta(bs, u, n), _pull_beta(bs, v, n)
        cv = advance(bs.a, mpfr(0.5), 6)
        if not (bs.beta < u < v < cv):
            raise LadderBlocked(f"rung {n} is not inside (beta, g^2(1/2))")
        x0, x1 = _g2_inverse_hplus(bs, u), _g2_inverse_hplus(bs, v)
        return min(x0, x1), max(x0, x1)


def tune_landing(a_interval, ladder: BackwardLadder, n_dwell: int, bits: int | None = None):
    """Sub-interval of parameters on which g_a^2(1/2) lies in the rung J_-n_dwell(a)."""
    bits = ladder.bits if bits is None else bits
    with working_precision(bits):
        lo, hi = (to_real(v, bits) for v in a_interval)
        c = threshold(bits)
        if lo <= c:
            lo = c + (hi - c) * mpfr(2) ** (-bits // 2)

        def D(which):
            def fn(a):
                bs = branch_system(a, bits)
                u, v = beta_entry_interval(bs)
                end = u if which == 0 else v
                return advance(a, mpfr(0.5), 6) - _pull_beta(bs, end, n_dwell)
            return fn
        xtol = mpfr(2) ** (-bits + 8) * hi
        fu, fv = D(0), D(1)
        # the critical value leaves beta as a rises from c but may fold back further out,
        # so scan geometrically upward from c and keep the first crossing
        span = hi - lo
        pt = lambda s: lo + span * mpfr(2) ** (-s)
        s = min(bits / 2, 3 * n_dwell + 30)
        while fu(pt(s)) >= 0:
            s += 4
            if s > bits - 16:
                raise NoSweep(f"rung {n_dwell} not resolved at {bits} bits")
        p_lo = pt(s)
        while True:
            s -= 0.5
            if s < 0:
                raise NoSweep(f"g^2(1/2) does not sweep rung {n_dwell} on the interval")
            p = pt(s)
            if fv(p) > 0:
                p_hi = p
                break
            if fu(p) < 0:
                p_lo = p
        out = [solve_bracketed(fn, p_lo, p_hi, xtol) for fn in (fu, fv)]
        return min(out), max(out)


# ---- dwell bookkeeping ------------------------------------------------------------

class DwellCounter:
    """Classifies points into the disjoint delta-neighbourhoods of Per(1..N)."""

    def __init__(self, sets: Sequence[PointSet], delta: mpfr):
        iv = []
        for idx, s in enumerate(sets):
            for p in s:
                iv.append((p - delta, p + delta, idx))
        iv.sort(key=lambda t: t[0])
        self.lows = [t[0] for t in iv]
        self.highs = [t[1] for t in iv]
        self.index = [t[2] for t in iv]
        self.N = len(sets)
        self.delta = delta

    def classify(self, x) -> int:
        i = bisect.bisect_right(self.lows, x) - 1
        if i >= 0 and x <= self.highs[i]:
            return self.index[i]
        return -1

    def count_orbit(self, a: mpfr, x: mpfr, m: int) -> list:
        counts = [0] * self.N
        lows, highs, index = self.lows, self.highs, self.index
        br = bisect.bisect_right
        for _ in range(m):
            i = br(lows, x) - 1
            if i >= 0 and x <= highs[i]:
                counts[index[i]] += 1
            u = x if x <= 0.5 else 1 - x
            x = a * (u * (1 - u))
        return counts


def orbit_sets_and_delta(a: mpfr, N: int, bits: int):
    fams = [per_set(a, n, bits) for n in range(1, N + 1)]
    with working_precision(bits):
        delta = min_gap(a, N, bits) / 4
    return fams, delta


def max_deviation(counts: Sequence[int], length: int, targets: TargetWeights) -> Fraction:
    if length <= 0:
        return Fraction(1)
    return max((abs(Fraction(c, length) - l) for c, l in zip(counts, targets.weights)),
               default=Fraction(0))


# ---- plan model -----------------------------------------------------------------

@dataclass
class _Piece:
    kind: str        # "exit" or "seg"
    n: int = 0       # exit rung
    target: int = 0  # 0-based target index for segments
    j: int = 0       # loops for segments


@dataclass
class _Model:
    """Dwell counts and expansion (in bits) of pieces at a reference parameter."""

    a: mpfr
    bits: int
    bs: BranchSystem
    counter: DwellCounter
    words: list
    exit_cache: dict = field(default_factory=dict)
    seg_suffix: dict = field(default_factory=dict)

    def exit_piece(self, n: int):
        if n not in self.exit_cache:
            with working_precision(self.bits):
                try:
                    e0, e1 = exit_interval(self.bs, n)
                except LadderBlocked:
                    self.exit_cache[n] = None
                    return None
                x = (e0 + e1) / 2
                self.exit_cache[n] = self._simulate(x, 8 + 3 * n)
        return self.exit_cache[n]

    def _simulate(self, x: mpfr, steps: int, a=None):
        a = self.a if a is None else a
        counts = [0] * self.counter.N
        bits_used = 0.0
        for t in range(steps):
            idx = self.counter.classify(x)
            if idx >= 0:
                counts[idx] += 1
            d = a * (1 - 2 * x)
            if t > 0 or abs(x - mpfr(0.5)) > mpfr("1e-9"):
                bits_used += log2_abs(d) if d != 0 else 0.0
            x = step(a, x)
        return counts, steps, bits_used

    def seg_piece(self, t: int, j: int, jmax: int):
        """Counts over the last j loops of a 3k*jmax-step run ending at 1/2."""
        key = t
        if key not in self.seg_suffix or self.seg_suffix[key][0] < j:
            word = self.words[t]
            k = len(word)
            J = max(j, jmax)
            with working_precision(self.bits):
                ys = [mpfr(0.5)]
                y = mpfr(0.5)
                for _ in range(J):
                    y = compose_inverse(self.bs, word, y)
                    ys.append(y)
                # ys[i] = phi^i(1/2); simulate each loop forward from ys[i] to ys[i-1]
                per_loop = []
                for i in range(1, J + 1):
                    per_loop.append(self._simulate(ys[i], 3 * k))
            # suffix sums: loops 1..j are the last j loops
            cum_c = [[0] * self.counter.N]
            cum_b = [0.0]
            for i in range(J):
                c, _, b = per_loop[i]
                cum_c.append([u + v for u, v in zip(cum_c[-1], c)])
                cum_b.append(cum_b[-1] + b)
            self.seg_suffix[key] = (J, cum_c, cum_b, 3 * k)
        J, cum_c, cum_b, step_len = self.seg_suffix[key]
        return cum_c[j], step_len * j, cum_b[j]


@dataclass
class Plan:
    pieces: list
    predicted_counts: list
    predicted_length: int
    predicted_bits: float
    predicted_deviation: Fraction

    def to_dict(self) -> dict:
        return {"pieces": [p.__dict__ for p in self.pieces],
                "predicted_counts": self.predicted_counts,
                "predicted_length": self.predicted_length,
                "predicted_bits": round(self.predicted_bits, 3),
                "predicted_deviation": str(self.predicted_deviation)}


def _plan(model: _Model, targets: TargetWeights, margin: Fraction, first_exit, exit_n: int,
          prefix_counts, prefix_len: int, prefix_bits: float, bit_budget: float):
    """One segment per weighted target (plus a filler for the tail), sized proportionally.

    For a trial cycle length L each target n gets the fewest loops bringing its
    count to l_n * L; the filler pads the length to L.  The smallest L on a
    geometric grid whose predicted deviation meets ``margin`` wins.  Returns the
    best plan found (possibly above the margin) or None.
    """
    N = targets.N
    active = [t for t in range(N) if targets.weights[t] > 0]
    tail = 1 - sum(targets.weights, Fraction(0))
    filler = N if tail > 0 and len(model.words) > N else None
    if isinstance(first_exit, int):
        ex0 = model.exit_piece(first_exit)
        n_first = first_exit
    else:
        ex0, n_first = first_exit[:3], first_exit[3]
    ex = model.exit_piece(exit_n)
    if ex0 is None or ex is None:
        return None
    order = sorted(active, key=lambda t: -targets.weights[t]) + ([filler] if filler is not None else [])
    if not order:
        order = [None]
    n_exits = max(0, len(order) - 1)
    C0 = [p + q + n_exits * r for p, q, r in zip(prefix_counts, ex0[0], ex[0])]
    L0 = prefix_len + ex0[1] + n_exits * ex[1]
    B0 = prefix_bits + ex0[2] + n_exits * ex[2]
    jcap = {}
    for t in order:
        if t is None:
            continue
        per_loop = max(model.seg_piece(t, 1, 4)[2], 0.25)
        jcap[t] = max(1, int((bit_budget - B0) / per_loop))
        model.seg_piece(t, 1, jcap[t])

    def evaluate(Lstar):
        C, L, B = list(C0), L0, B0
        js = {}
        for t in order:
            if t is None:
                continue
            if t == filler:
                continue
            need = targets.weights[t] * Lstar
            lo, hi = 0, jcap[t]
            while lo < hi:
                mid = (lo + hi) // 2
                if C[t] + model.seg_piece(t, mid, jcap[t])[0][t] >= need:
                    hi = mid
                else:
                    lo = mid + 1
            js[t] = lo
            c2, l2, b2 = model.seg_piece(t, lo, jcap[t])
            C = [u + v for u, v in zip(C, c2)]
            L, B = L + l2, B + b2
        if filler is not None:
            step_len = 3 * len(model.words[filler])
            jf = max(0, min(jcap[filler], -(-(int(Lstar) - L) // step_len)))
            js[filler] = jf
            c2, l2, b2 = model.seg_piece(filler, jf, jcap[filler])
            C = [u + v for u, v in zip(C, c2)]
            L, B = L + l2, B + b2
        return max_deviation(C, L, targets), B, C, L, js

    best = None
    Lstar = max(L0, 8)
    while True:
        dev, B, C, L, js = evaluate(Lstar)
        if B > bit_budget:
            break
        if best is None or (dev <= margin, -dev if dev > margin else 0) > (best[0] <= margin,
                                                                          -best[0] if best[0] > margin else 0):
            best = (dev, B, C, L, js)
        if dev <= margin:
            break
        Lstar = int(Lstar * 1.08) + 1
    if best is None:
        return None
    dev, B, C, L, js = best
    pieces = [_Piece("exit", n=n_first)]
    for idx, t in enumerate(order):
        if t is None:
            continue
        if idx > 0:
            pieces.append(_Piece("exit", n=exit_n))
        pieces.append(_Piece("seg", target=t, j=js[t]))
    return Plan(pieces, C, L, B, dev)


# ---- nested landings ------------------------------------------------------------------

@dataclass
class _Sweep:
    lo: mpfr
    hi: mpfr
    T: int          # x_T(a) sweeps the region monotonically for a in [lo, hi]
    region: str     # "I" or "H+"


def _orbit_at(a: mpfr, T: int) -> mpfr:
    return advance(a, mpfr(0.5), T)


def _land(sweep: _Sweep, target_fns, bits: int):
    """Solve x_T(a) = y(a) for each endpoint function; returns the sorted parameters."""
    xtol = mpfr(2) ** (-bits + 2) * sweep.hi
    out = []
    for yfn in target_fns:
        fn = lambda a: _orbit_at(a, sweep.T) - yfn(a)
        try:
            out.append(solve_bracketed(fn, sweep.lo, sweep.hi, xtol))
        except NoSignChange as exc:
            raise NoSweep("landing target not swept on the current bracket") from exc
    return sorted(out)


def _seg_target(word: str, j: int, base_fn, bits: int):
    """a -> phi_w^j(base(a)); Newton solves are warm-started from the previous call
    (or from the previous loop, whose points are nearly the same once near the orbit)."""
    k = len(word)
    memo = []

    def y(a):
        bs = branch_system(a, bits)
        v = base_fn(bs)
        out = []
        for pos in range(j * k):
            sym = int(word[k - 1 - pos % k])
            if memo:
                guess = memo[pos]
            else:
                guess = out[pos - k] if pos >= k else None
            v = inverse_branch(bs, sym, v, guess)
            out.append(v)
        memo[:] = out
        return v
    return y


def _exit_endpoint(n: int, which: int):
    def base(bs):
        return exit_interval(bs, n)[which]
    return base


def _close_base(variant: str):
    def base(bs):
        half = mpfr(0.5)
        if variant == "half":
            return half
        return inverse_branch(bs, 0 if variant == "psi0" else 1, half)
    return base


def _build(plan: Plan, sweep: _Sweep, words: list, bits: int, close_variant: str):
    """Nested landings along the plan; returns (a_star, q, bracket history)."""
    history = [(sweep.lo, sweep.hi)]
    pieces = list(plan.pieces)
    # the plan starts with the exit that produced the current sweep of I (if any)
    i = 0
    if pieces and pieces[0].kind == "exit" and sweep.region == "I":
        i = 1
    cur = sweep
    while i < len(pieces):
        pc = pieces[i]
        if pc.kind == "exit":
            # landing directly into E(n) (a segment with zero loops)
            fns = [_seg_target("1", 0, _exit_endpoint(pc.n, w), bits) for w in (0, 1)]
            lo, hi = _land(cur, fns, bits)
            cur = _Sweep(lo, hi, cur.T + 8 + 3 * pc.n, "I")
            history.append((lo, hi))
            i += 1
            continue
        word = words[pc.target]
        k = len(word)
        nxt = pieces[i + 1] if i + 1 < len(pieces) else None
        if nxt is not None and nxt.kind == "exit":
            fns = [_seg_target(word, pc.j, _exit_endpoint(nxt.n, w), bits) for w in (0, 1)]
            lo, hi = _land(cur, fns, bits)
            cur = _Sweep(lo, hi, cur.T + 3 * k * pc.j + 8 + 3 * nxt.n, "I")
            history.append((lo, hi))
            i += 2
            continue
        # closing segment
        fn = _seg_target(word, pc.j, _close_base(close_variant), bits)
        (a_star,) = _land(cur, [fn], bits)
        extra = 0 if close_variant == "half" else 3
        return a_star, cur.T + 3 * k * pc.j + extra, history
    fn = _seg_target("1", 0, _close_base(close_variant), bits)
    (a_star,) = _land(cur, [fn], bits)
    extra = 0 if close_variant == "half" else 3
    return a_star, cur.T + extra, history


def find_sweep(lo, hi, bits: int, t_max: int = 20000, grid: int = 33, depth: int = 0) -> _Sweep:
    """Earliest time T and sub-bracket on which x_T(a) sweeps H+ = [1/2, r] monotonically."""
    with working_precision(bits):
        lo, hi = to_real(lo, bits), to_real(hi, bits)
        As = [lo + (hi - lo) * i / (grid - 1) for i in range(grid)]
        xs = [mpfr(0.5)] * grid
        folded = [False] * (grid - 1)
        half = mpfr(0.5)
        for t in range(1, t_max + 1):
            xs = [step(a, x) for a, x in zip(As, xs)]
            for i in range(grid - 1):
                if folded[i]:
                    continue
                x0, x1 = xs[i], xs[i + 1]
                if (x0 - half) * (x1 - half) < 0:
                    folded[i] = True
                    res = _sweep_candidate(As[i], As[i + 1], x0, x1, t, bits)
                    if res is not None:
                        return res
                    if depth < 3:
                        try:
                            return find_sweep(As[i], As[i + 1], bits, t_max, grid, depth + 1)
                        except NoSweep:
                            pass
            if all(folded):
                break
    raise NoSweep("no monotone sweep of H+ found")


def _sweep_candidate(a0, a1, x0, x1, t, bits):
    half = mpfr(0.5)
    fn = lambda a: _orbit_at(a, t) - half
    xtol = mpfr(2) ** (-bits + 2) * a1
    a_c = solve_bracketed(fn, a0, a1, xtol)
    a_far = a1 if x1 > half else a0
    r_fn = lambda a: _orbit_at(a, t) - branch_system(a, bits).r_cut
    if r_fn(a_far) <= 0:
        return None
    try:
        a_r = solve_bracketed(r_fn, min(a_c, a_far), max(a_c, a_far), xtol)
    except NoSignChange:
        return None
    lo, hi = min(a_c, a_r), max(a_c, a_r)
    # monotonicity spot-check on a sample grid, plus no earlier passage through 1/2
    prev = None
    sgn = None
    for i in range(17):
        a = lo + (hi - lo) * i / 16
        x = mpfr(0.5)
        for s in range(1, t):
            x = step(a, x)
        xt = step(a, x)
        if prev is not None:
            d = xt - prev
            if sgn is None:
                sgn = d > 0
            elif (d > 0) != sgn:
                return None
        prev = xt
    return _Sweep(lo, hi, t, "H+")


# ---- records -----------------------------------------------------------------------------

@dataclass
class VerificationReport:
    sample_count: int
    pass_fraction: float | None
    passed: bool | None
    deviations: list          # per (r, x) pair: max_n |w_n - l_n| as Fraction
    per_orbit_max: list       # per target: max over pairs
    mean_dwell: list          # per target: average dwell fraction
    delta: mpfr
    seed: int
    m: int
    probes: list
    threshold: Fraction = Fraction(0)
    flagged: str = ""

    def to_dict(self) -> dict:
        return {"sample_count": self.sample_count,
                "pass_fraction": None if self.pass_fraction is None else repr(self.pass_fraction),
                "passed": self.passed, "delta": to_decimal(self.delta), "seed": self.seed,
                "m": self.m, "threshold": str(self.threshold),
                "per_orbit_max": [str(x) for x in self.per_orbit_max],
                "mean_dwell": [str(x) for x in self.mean_dwell],
                "probes": [to_decimal(r) for r in self.probes],
                "deviations": [str(x) for x in self.deviations], "flagged": self.flagged}


@dataclass
class StageRecord:
    a_bar: ParabolicParameter
    epsilon: mpfr
    m: int
    targets: TargetWeights
    k: int
    certificate: VerificationReport | None
    delta: mpfr = mpfr(0)
    center: mpfr | None = None
    period: int = 0
    plan: Plan | None = None
    achieved: list = field(default_factory=list)
    escape_fraction: Fraction = Fraction(0)
    critical_deviation: Fraction = Fraction(0)
    brackets: list = field(default_factory=list)
    start_check: object = None
    saddle_node_side: str = ""
    bits: int = STEER_BITS
    notes: list = field(default_factory=list)

    @property
    def interval(self):
        with working_precision(self.bits):
            return (self.a_bar.a - self.epsilon, self.a_bar.a + self.epsilon)

    def to_dict(self) -> dict:
        sc = self.start_check
        return {"a_bar": self.a_bar.to_dict(), "epsilon": to_decimal(self.epsilon), "m": self.m,
                "targets": self.targets.to_dict(), "k": self.k,
                "certificate": self.certificate.to_dict() if self.certificate else None,
                "delta": to_decimal(self.delta),
                "center": to_decimal(self.center) if self.center is not None else None,
                "period": self.period, "plan": self.plan.to_dict() if self.plan else None,
                "achieved": [str(x) for x in self.achieved],
                "escape_fraction": str(self.escape_fraction),
                "critical_deviation": str(self.critical_deviation),
                "brackets": [[to_decimal(u), to_decimal(v)] for u, v in self.brackets],
                "start_check": sc.to_dict() if hasattr(sc, "to_dict") else sc,
                "saddle_node_side": self.saddle_node_side, "precision": self.bits,
                "notes": self.notes}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


# ---- verification ------------------------------------------------------------------------

def verify_stage(record: StageRecord, samples: int, param_probes: int, seed: int,
                 bits: int | None = None) -> VerificationReport:
    """Sample (r, x) pairs over [a_bar - eps, a_bar + eps] and score nu_r^m(x) against the targets."""
    bits = record.bits if bits is None else bits
    targets, k, m = record.targets, record.k, record.m
    thr = Fraction(1, 2**k)
    N = targets.N
    if samples <= 0 or param_probes <= 0 or N == 0:
        return VerificationReport(0, None, None, [], [Fraction(0)] * N, [Fraction(0)] * N,
                                  record.delta, seed, m, [], thr,
                                  flagged="no samples: pass undefined" if samples <= 0 or param_probes <= 0
                                  else "no targets")
    with working_precision(bits):
        abar = mpfr(record.a_bar.a, bits)
        eps = mpfr(record.epsilon, bits)
        if param_probes == 1:
            probes = [abar]
        else:
            probes = [abar - eps + 2 * eps * i / (param_probes - 1) for i in range(param_probes)]
        starts = uniform_starts(seed, samples, bits)
        delta = mpfr(record.delta, bits)
        devs = []
        worst = [Fraction(0)] * N
        dwell_sum = [Fraction(0)] * N
        for r in probes:
            sets = [per_set(r, n, bits).per_set for n in range(1, N + 1)]
            counter = DwellCounter(sets, delta)
            for x in starts:
                counts = counter.count_orbit(r, x, m)
                per = [abs(Fraction(c, m) - l) for c, l in zip(counts, targets.weights)]
                devs.append(max(per))
                for n in range(N):
                    worst[n] = max(worst[n], per[n])
                    dwell_sum[n] += Fraction(counts[n], m)
        total = len(devs)
        ok = sum(1 for d in devs if d < thr)
        frac = ok / total
        return VerificationReport(total, frac, frac >= 1 - float(thr), devs, worst,
                                  [s / total for s in dwell_sum], delta, seed, m, probes, thr)


# ---- the stage driver ----------------------------------------------------------------------

@dataclass(frozen=True)
class SteerConfig:
    bits: int = STEER_BITS
    samples: int = 100
    probes: int = 5
    seed: int = 0
    pilot_samples: int | None = None   # None: same as samples
    pilot_probes: int | None = None
    pilot_rounds: int = 4
    m_cap: int = 8192
    max_first_exit: int = 80
    replans: int = 3
    t_max_sweep: int = 20000


def _critical_dwell(a: mpfr, q: int, counter: DwellCounter):
    return counter.count_orbit(a, mpfr(0.5), q)


def _running_first_fit(a: mpfr, counter: DwellCounter, targets: TargetWeights, margin: Fraction,
                       start: int, stop: int):
    """First t in [start, stop] at which the critical orbit's running dwell meets the margin."""
    counts = [0] * counter.N
    x = mpfr(0.5)
    for t in range(1, stop + 1):
        idx = counter.classify(x)
        if idx >= 0:
            counts[idx] += 1
        x = step(a, x)
        if t >= start and max_deviation(counts, t, targets) < margin:
            return t
    return None


def _orientation(a_star: mpfr, q: int) -> str:
    w = _window_scale(a_star, q)
    return "left" if w < 0 else "right"


def steer_stage(start: ParabolicParameter, targets: TargetWeights, delta_param, k: int,
                config: SteerConfig = SteerConfig(), search_interval=None) -> StageRecord:
    """One finite stage: steer the critical orbit so its dwell matches the targets."""
    bits = config.bits
    notes = []
    if k < 1:
        raise DomainError("k must be >= 1")
    if targets.N == 0:
        rec = StageRecord(a_bar=start, epsilon=mpfr(0), m=1, targets=targets, k=k,
                          certificate=None, bits=bits, notes=["no targets: start returned unchanged"])
        rec.certificate = verify_stage(rec, 0, 0, config.seed)
        return rec
    margin = Fraction(1, 2 ** (k + 2))
    inner = margin * 3 / 4
    with working_precision(bits):
        c = threshold(bits)
        a0 = mpfr(start.a, bits)
        dp = to_real(delta_param, bits)
        if search_interval is None:
            lo, hi = max(a0 - dp, c), min(a0 + dp, mpfr(4))
        else:
            lo, hi = (to_real(v, bits) for v in search_interval)
            lo = max(lo, c)
        if not lo < hi:
            raise OutOfRange("search interval does not meet (c, 4]")
        # start admissibility is recorded, never assumed
        try:
            start_check = verify_admissible(start, i_max=64, grid=32, bits=max(start.bits, 128))
        except Exception as exc:  # noqa: BLE001 - report, do not fail the stage
            start_check = NotVerified(f"admissibility check raised {type(exc).__name__}")
        near_c = search_interval is None and a0 - dp <= c
        N = targets.N
        words = [necklace_enumerate(n) for n in range(1, N + 2)]
        bit_budget = bits - GUARD_BITS

        # -- initial sweep and reference parameter
        if near_c:
            prefix = ([0] * N, 0, 0.0)
            sweep0 = None
        else:
            sweep0 = find_sweep(lo, hi, bits, config.t_max_sweep)
            a_mid = (sweep0.lo + sweep0.hi) / 2
            fams, delta = orbit_sets_and_delta(a_mid, N, bits)
            counter = DwellCounter([f.per_set for f in fams], delta)
            pc = counter.count_orbit(a_mid, mpfr(0.5), sweep0.T)
            sens = log2_abs(_orbit_sens(a_mid, sweep0.T)) + 2
            prefix = (pc, sweep0.T, sens)
            notes.append(f"nested start: H+ swept at time {sweep0.T}")
            log.info("nested sweep at time %d", sweep0.T)

        best = None
        rungs = {}
        a_ref = (c + mpfr("1e-6")) if near_c else (sweep0.lo + sweep0.hi) / 2
        def make_model(a):
            fams, delta = orbit_sets_and_delta(a, N, bits)
            return _Model(a, bits, branch_system(a, bits),
                          DwellCounter([f.per_set for f in fams], delta), words)

        chosen_n0 = None
        for attempt in range(config.replans):
            plans = []
            if near_c:
                first_ok = None
                cands = range(1, config.max_first_exit + 1) if chosen_n0 is None else [chosen_n0]
                for n0 in cands:
                    if first_ok is not None and n0 > first_ok + 6:
                        break
                    if n0 not in rungs:
                        try:
                            rungs[n0] = tune_landing((lo, hi), BackwardLadder(lo, "beta", lo, (), 2, bits),
                                                     n0, bits)
                        except (NoSweep, NoSignChange, LadderBlocked, OutOfRange):
                            rungs[n0] = None
                    if rungs[n0] is None:
                        continue
                    a_n = (rungs[n0][0] + rungs[n0][1]) / 2 if chosen_n0 is None else a_ref
                    model = make_model(a_n)
                    cnt, ln, _ = model._simulate(mpfr(0.5), 8 + 3 * n0)
                    first = (cnt, ln, log2_abs(_orbit_sens(a_n, 8 + 3 * n0)), n0)
                    p = _plan(model, targets, inner, first, n0 + 1, *prefix, bit_budget=bit_budget - 8)
                    if p is not None:
                        plans.append((p.predicted_deviation > inner, p.predicted_bits, n0, p))
                        if p.predicted_deviation <= inner and first_ok is None:
                            first_ok = n0
            else:
                n_min = critical_rung(branch_system(sweep0.lo, bits)) + 1
                model = make_model(a_ref)
                p = _plan(model, targets, inner, n_min, n_min, *prefix, bit_budget=bit_budget - 8)
                if p is not None:
                    plans.append((p.predicted_deviation > inner, p.predicted_bits, n_min, p))
            if not plans:
                raise BudgetExhausted("no feasible plan within the precision budget")
            plans.sort(key=lambda t: (t[0], t[1] if not t[0] else float(t[3].predicted_deviation)))
            plan = plans[0][3]
            if plans[0][0] and best is None:
                raise BudgetExhausted(f"no plan meets the margin within {bits} bits")
            chosen_n0 = plans[0][2]
            log.info("plan: %d pieces, length %d, %.1f bits, deviation %s", len(plan.pieces),
                     plan.predicted_length, plan.predicted_bits, plan.predicted_deviation)
            built = _build_with_orientation(plan, words, bits, near_c, lo, hi, sweep0, rungs)
            a_star, q, history, side = built
            fams_s, delta_s = orbit_sets_and_delta(a_star, N, bits)
            counter_s = DwellCounter([f.per_set for f in fams_s], delta_s)
            ach = _critical_dwell(a_star, q, counter_s)
            dev = max_deviation(ach, q, targets)
            log.info("built centre: period %d, deviation %s", q, dev)
            cand = (dev, a_star, q, history, side, plan, ach, delta_s, counter_s)
            if best is None or dev < best[0]:
                best = cand
            if dev < margin:
                break
            a_ref = a_star
            notes.append(f"replan {attempt + 1}: achieved deviation {dev} above margin {margin}")
        dev, a_star, q, history, side, plan, ach, delta_s, counter_s = best

        # -- parabolic neighbour of the centre
        pp = find_parabolic(q, a_star, bits)
        log.info("parabolic neighbour found")
        abar = pp.a
        partial = StageRecord(a_bar=pp, epsilon=mpfr(0), m=q, targets=targets, k=k, certificate=None,
                              delta=delta_s, center=a_star, period=q, plan=plan,
                              achieved=[Fraction(x, q) for x in ach],
                              escape_fraction=Fraction(q - sum(ach), q), critical_deviation=dev,
                              brackets=history, start_check=start_check, saddle_node_side=side,
                              bits=bits, notes=notes)
        if dev >= margin:
            raise BudgetExhausted(f"best critical-orbit deviation {dev} exceeds margin {margin}", partial)

        # -- horizon m and radius epsilon
        fams_b, delta_b = orbit_sets_and_delta(abar, N, bits)
        counter_b = DwellCounter([f.per_set for f in fams_b], delta_b)
        m0 = _running_first_fit(abar, counter_b, targets, margin, q, 4 * q) or q
        slack = delta_b / 4
        m = m0
        chosen = None
        pilot_seed = (config.seed * 0x9E3779B97F4A7C15 + 0x5EED) % 2**64
        while True:
            try:
                eps = stability_radius(abar, m, slack, bits=bits)
            except Underflow:
                break
            trial = replace(partial, epsilon=eps, m=m, delta=delta_b)
            passed = True
            for r in range(config.pilot_rounds):
                pilot = verify_stage(trial, config.pilot_samples or config.samples,
                                     config.pilot_probes or config.probes, pilot_seed + r)
                if pilot.pass_fraction is None or pilot.pass_fraction < 1 - 2.0 ** -(k + 1):
                    passed = False
                    break
            if passed:
                chosen = (m, eps)
                break
            if 2 * m > config.m_cap:
                break
            m *= 2
        if chosen is None:
            notes.append(f"pilot sample never passed up to m={m}; horizon kept at the critical-orbit value {m0}")
            m = m0
            eps = stability_radius(abar, m, slack, bits=bits)
        else:
            m, eps = chosen
        rec = replace(partial, epsilon=eps, m=m, delta=delta_b)
        rec.certificate = verify_stage(rec, config.samples, config.probes, config.seed)
        return rec


def _orbit_sens(a: mpfr, T: int) -> mpfr:
    _, _, da, _, _ = orbit_jet(a, mpfr(0.5), T)
    return da


def _build_with_orientation(plan, words, bits, near_c, lo, hi, sweep0, rungs=None):
    """Build the plan, preferring a closing variant whose saddle-node lies left of the centre."""
    if near_c:
        n0 = plan.pieces[0].n
        if rungs and rungs.get(n0):
            r_lo, r_hi = rungs[n0]
        else:
            r_lo, r_hi = tune_landing((lo, hi), BackwardLadder(lo, "beta", lo, (), 2, bits), n0, bits)
        sweep = _Sweep(r_lo, r_hi, 8 + 3 * n0, "I")
    else:
        sweep = sweep0
    first = None
    for variant in ("half", "psi0", "psi1"):
        try:
            a_star, q, history = _build(plan, sweep, words, bits, variant)
        except (NoSweep, NoSignChange, LadderBlocked):
            continue
        side = _orientation(a_star, q)
        if first is None:
            first = (a_star, q, history, side)
        if side == "left":
            return a_star, q, history, side
    if first is None:
        raise BudgetExhausted("nested landings failed for every closing variant")
    return first
