"""Toy Turing machines, halting-defined target weights and the nested-stage driver.

Machine n of a finite suite owns the pair of orbit indices (2n - 1, 2n).  The
target weight 2^-n sits on 2n if the machine halts and on 2n - 1 otherwise.
The driver starts from the all-running table, steers one stage per round
inside the previous parameter interval, and moves a pair's mass as soon as
dovetailed simulation sees the machine halt.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Sequence

from gmpy2 import mpfr

from .dynamics import to_decimal, to_real, working_precision
from .errors import BudgetExhausted, ChaostatError, DomainError, Inconclusive, InvalidSwitch
from .measures import AtomicMeasure, hat_upper_sequence
from .params import ParabolicParameter, find_parabolic
from .steering import SteerConfig, StageRecord, TargetWeights, steer_stage
from .symbolic import per_set

HALT = "HALT"


# ---- machines --------------------------------------------------------------

@dataclass(frozen=True)
class MachineSpec:
    """Transition table over {0, 1}; row 2*s + symbol holds (write, move, next)."""

    states: int
    transitions: tuple
    name: str = ""

    def __post_init__(self):
        if self.states < 1:
            raise DomainError("a machine needs at least one state")
        rows = tuple(tuple(r) for r in self.transitions)
        if len(rows) != 2 * self.states:
            raise DomainError(f"expected {2 * self.states} transitions, got {len(rows)}")
        for write, move, nxt in rows:
            if write not in (0, 1) or move not in ("L", "R"):
                raise DomainError(f"bad transition {(write, move, nxt)}")
            if nxt != HALT and not (isinstance(nxt, int) and 0 <= nxt < self.states):
                raise DomainError(f"bad next state {nxt!r}")
        object.__setattr__(self, "transitions", rows)

    def to_dict(self) -> dict:
        return {"name": self.name, "states": self.states,
                "transitions": [list(r) for r in self.transitions]}

    @classmethod
    def from_dict(cls, d: dict) -> "MachineSpec":
        return cls(int(d["states"]), tuple(tuple(r) for r in d["transitions"]), d.get("name", ""))


@dataclass(frozen=True)
class Halted:
    t: int


@dataclass(frozen=True)
class StillRunning:
    budget: int


def tm_run(machine: MachineSpec, budget: int):
    """Run from a blank tape; Halted(t) if the t-th transition (t <= budget) is a HALT."""
    if budget < 0:
        raise DomainError("budget must be >= 0")
    tape = {}
    head, state = 0, 0
    for t in range(1, budget + 1):
        write, move, nxt = machine.transitions[2 * state + tape.get(head, 0)]
        tape[head] = write
        head += 1 if move == "R" else -1
        if nxt == HALT:
            return Halted(t)
        state = nxt
    return StillRunning(budget)


def load_suite(path=None) -> list:
    """Machines from a JSON file (a list, or {"machines": [...]}); default is the shipped suite."""
    if path is None:
        text = resources.files("chaostat").joinpath("data/suite.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    data = json.loads(text)
    if isinstance(data, dict):
        data = data["machines"]
    return [MachineSpec.from_dict(d) for d in data]


# ---- weight tables ----------------------------------------------------------------

@dataclass(frozen=True)
class HaltingTargetMeasure:
    weights: dict          # orbit index -> Fraction
    budget: int
    N: int
    status: tuple          # per machine: Halted / StillRunning

    def pair_mass(self, n: int) -> Fraction:
        return self.weights.get(2 * n, Fraction(0)) + self.weights.get(2 * n - 1, Fraction(0))

    def as_targets(self) -> TargetWeights:
        return _targets_from_dict(self.weights, Fraction(1, 2**self.N))

    def to_dict(self) -> dict:
        return {"N": self.N, "budget": self.budget,
                "weights": {str(k): str(v) for k, v in sorted(self.weights.items())},
                "status": [{"halted": isinstance(s, Halted), "t": getattr(s, "t", None)}
                           for s in self.status]}


def _targets_from_dict(w: dict, tail: Fraction) -> TargetWeights:
    top = max((k for k, v in w.items() if v), default=0)
    return TargetWeights(tuple(w.get(i, Fraction(0)) for i in range(1, top + 1)), tail)


def nonzero_weights(t: TargetWeights) -> dict:
    return {i + 1: v for i, v in enumerate(t.weights) if v}


def halting_weights(suite: Sequence[MachineSpec], budget: int, N: int) -> HaltingTargetMeasure:
    if N < 1 or len(suite) < N:
        raise DomainError("need 1 <= N <= len(suite)")
    weights, status = {}, []
    for n in range(1, N + 1):
        st = tm_run(suite[n - 1], budget)
        status.append(st)
        weights[2 * n if isinstance(st, Halted) else 2 * n - 1] = Fraction(1, 2**n)
    return HaltingTargetMeasure(weights, budget, N, tuple(status))


def initial_weights(N: int) -> TargetWeights:
    """Mass 2^-n on index 2n - 1 for n <= N (nobody has halted yet)."""
    if N < 1:
        raise DomainError("N must be >= 1")
    return _targets_from_dict({2 * n - 1: Fraction(1, 2**n) for n in range(1, N + 1)},
                              Fraction(1, 2**N))


def switch_weights(current: TargetWeights, n: int) -> TargetWeights:
    """Move 2^-n from index 2n - 1 to 2n."""
    w = nonzero_weights(current)
    if n < 1 or w.get(2 * n - 1) != Fraction(1, 2**n):
        raise InvalidSwitch(f"index {2 * n - 1} does not carry 2^-{n}")
    w.pop(2 * n - 1)
    w[2 * n] = Fraction(1, 2**n)
    return _targets_from_dict(w, current.tail_bound)


# ---- driver -------------------------------------------------------------------

@dataclass(frozen=True)
class DriverConfig:
    start_period: int = 5
    start_center: str = "3.9057"
    delta_param: str = "0.06"
    step_quantum: int = 1          # machine steps granted per stage
    bits: int = 256
    max_bits: int = 4096
    samples: int = 20
    probes: int = 3
    seed: int = 0
    m_cap: int = 4096
    pilot_rounds: int = 1


@dataclass
class ConstructionState:
    stage: int
    interval: tuple
    weights: TargetWeights
    switched: list = field(default_factory=list)    # (stage, machine index, halting time)
    records: list = field(default_factory=list)
    intervals: list = field(default_factory=list)
    log: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"stage": self.stage,
                "interval": [to_decimal(v) for v in self.interval],
                "weights": self.weights.to_dict(),
                "switched": [{"stage": s, "machine": n, "t": t} for s, n, t in self.switched],
                "intervals": [[to_decimal(u), to_decimal(v)] for u, v in self.intervals],
                "records": [r.to_dict() for r in self.records],
                "log": self.log}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _stage(start, targets, delta, k, cfg: DriverConfig, search, bits):
    """steer_stage with precision doubled on budget failure."""
    while True:
        sc = SteerConfig(bits=bits, samples=cfg.samples, probes=cfg.probes, seed=cfg.seed,
                         m_cap=cfg.m_cap, pilot_rounds=cfg.pilot_rounds)
        try:
            return steer_stage(start, targets, delta, k, sc, search_interval=search)
        except BudgetExhausted:
            if 2 * bits > cfg.max_bits:
                raise
            bits *= 2


def construction_driver(suite: Sequence[MachineSpec], K: int,
                        config: DriverConfig = DriverConfig()) -> ConstructionState:
    """Stages 0..K; before stage s >= 1 every running machine is granted s * quantum steps."""
    if K < 1:
        raise DomainError("K must be >= 1")
    N = len(suite)
    if N < 1:
        raise DomainError("empty suite")
    weights = initial_weights(N)
    bits = config.bits
    with working_precision(bits):
        start = find_parabolic(config.start_period, config.start_center, bits)
    state = ConstructionState(stage=0, interval=(start.a, start.a), weights=weights)
    state.log.append(f"start: period-{start.period} parabolic at {to_decimal(start.a)}")
    halted_at = {}
    pending = []
    prev: StageRecord | None = None
    for s in range(K + 1):
        if s >= 1:
            # dovetail: all machines get the same cumulative step allowance
            allowance = s * config.step_quantum
            for n, mach in enumerate(suite, start=1):
                if n in halted_at:
                    continue
                res = tm_run(mach, allowance)
                if isinstance(res, Halted):
                    halted_at[n] = res.t
                    pending.append(n)
                    state.log.append(f"stage {s}: machine {n} ({mach.name}) halted after {res.t} steps")
            if pending:
                n = pending.pop(0)
                weights = switch_weights(weights, n)
                state.switched.append((s, n, halted_at[n]))
                state.log.append(f"stage {s}: weight 2^-{n} switched from index {2 * n - 1} to {2 * n}")
        k = s + 1
        try:
            if prev is None:
                rec = _stage(start, weights, config.delta_param, k, config, None, bits)
            else:
                search = (prev.interval[0], prev.a_bar.a)
                rec = _stage(prev.a_bar, weights, prev.epsilon, k, config, search, max(bits, prev.bits))
        except ChaostatError as exc:
            state.log.append(f"stage {s}: failed ({type(exc).__name__}: {exc})")
            raise BudgetExhausted(f"stage {s} failed: {exc}", state) from exc
        left, right = rec.interval[0], rec.a_bar.a
        if state.intervals:
            pl, pr = state.intervals[-1]
            if not (pl < left and right < pr):
                state.log.append(f"stage {s}: nesting violated: [{to_decimal(left)}, {to_decimal(right)}]"
                                 f" vs [{to_decimal(pl)}, {to_decimal(pr)}]")
                raise BudgetExhausted(f"stage {s} interval not strictly nested", state)
            if (right - left) * 2 > (pr - pl):
                state.log.append(f"stage {s}: half-size violated")
                raise BudgetExhausted(f"stage {s} interval more than half the previous", state)
        state.intervals.append((left, right))
        state.records.append(rec)
        state.interval = (left, right)
        state.stage = s
        state.weights = weights
        pf = rec.certificate.pass_fraction if rec.certificate else None
        state.log.append(f"stage {s}: k={k} period {rec.period} bits {rec.bits} m {rec.m} "
                         f"critical deviation {rec.critical_deviation} pass fraction {pf}")
        prev = rec
    return state


# ---- the decision device ----------------------------------------------------------------

@dataclass(frozen=True)
class SemicomputeReport:
    n: int
    q1: tuple        # hats around Per(2n)
    q2: tuple        # hats around Per(2n - 1)
    decision: str    # "halts" or "does not halt"
    level: int

    def to_dict(self) -> dict:
        return {"n": self.n, "q1": [to_decimal(v) for v in self.q1],
                "q2": [to_decimal(v) for v in self.q2], "decision": self.decision, "level": self.level}


def upper_semicompute_demo(measure: AtomicMeasure, n: int, levels: int, a, bits: int | None = None):
    """Compare hat upper bounds of the weights near Per(2n) and Per(2n - 1) against 2^-n.

    q1(l) < 2^-n certifies that Per(2n) does not carry the pair mass (does not halt);
    q2(l) < 2^-n certifies the same for Per(2n - 1) (halts).
    """
    if n < 1 or levels < 1:
        raise DomainError("n and levels must be >= 1")
    bits = measure.bits if bits is None else bits
    a = to_real(a, bits)
    s_even = per_set(a, 2 * n, bits).per_set
    s_odd = per_set(a, 2 * n - 1, bits).per_set
    bound = mpfr(2) ** (-n)
    q1, q2 = [], []
    with working_precision(bits):
        for l in range(1, levels + 1):
            q1.append(hat_upper_sequence(measure, s_even, l))
            q2.append(hat_upper_sequence(measure, s_odd, l))
            if q1[-1] < bound:
                return SemicomputeReport(n, tuple(q1), tuple(q2), "does not halt", l)
            if q2[-1] < bound:
                return SemicomputeReport(n, tuple(q1), tuple(q2), "halts", l)
    raise Inconclusive(levels)


__all__ = ["MachineSpec", "Halted", "StillRunning", "tm_run", "load_suite", "HaltingTargetMeasure",
           "halting_weights", "initial_weights", "switch_weights", "nonzero_weights", "DriverConfig",
           "ConstructionState", "construction_driver", "SemicomputeReport", "upper_semicompute_demo",
           "ParabolicParameter"]
