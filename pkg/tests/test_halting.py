import json
from fractions import Fraction

import gmpy2
import pytest

from chaostat import halting
from chaostat.dynamics import to_real, working_precision
from chaostat.errors import BudgetExhausted, DomainError, Inconclusive, InvalidSwitch
from chaostat.halting import (DriverConfig, Halted, MachineSpec, StillRunning, construction_driver,
                              halting_weights, initial_weights, load_suite, nonzero_weights,
                              switch_weights, tm_run, upper_semicompute_demo)
from chaostat.measures import AtomicMeasure
from chaostat.params import ParabolicParameter
from chaostat.steering import StageRecord
from chaostat.symbolic import per_set

SUITE = load_suite()
HALTER, LOOPER, ZIGZAG = SUITE


def test_suite_contents():
    assert [m.name for m in SUITE] == ["immediate-halter", "looper", "zigzag-2"]


@pytest.mark.parametrize("budget", [1, 5, 1000])
def test_immediate_halter(budget):
    assert tm_run(HALTER, budget) == Halted(1)


@pytest.mark.parametrize("budget", [0, 1, 10, 10000])
def test_looper(budget):
    assert tm_run(LOOPER, budget) == StillRunning(budget)


def test_zigzag_fixture():
    # 2-state busy beaver: six transitions, the last one halting
    assert tm_run(ZIGZAG, 100) == Halted(6)
    assert tm_run(ZIGZAG, 5) == StillRunning(5)


def test_machine_validation():
    with pytest.raises(DomainError):
        MachineSpec(1, ((1, "R", "HALT"),))
    with pytest.raises(DomainError):
        MachineSpec(1, ((1, "X", 0), (0, "L", 0)))
    with pytest.raises(DomainError):
        MachineSpec(1, ((1, "R", 3), (0, "L", 0)))
    with pytest.raises(DomainError):
        tm_run(HALTER, -1)
    assert MachineSpec.from_dict(ZIGZAG.to_dict()) == ZIGZAG


def test_load_suite_from_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps([LOOPER.to_dict()]))
    assert load_suite(str(p)) == [LOOPER]


def test_halting_weights_examples():
    assert halting_weights([HALTER], 10, 1).weights == {2: Fraction(1, 2)}
    assert halting_weights([LOOPER], 10, 1).weights == {1: Fraction(1, 2)}
    hw = halting_weights(SUITE, 10, 3)
    assert hw.weights == {2: Fraction(1, 2), 3: Fraction(1, 4), 6: Fraction(1, 8)}
    # budget too small for the zigzag machine
    assert halting_weights(SUITE, 5, 3).weights[5] == Fraction(1, 8)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_halting_pair_mass(N):
    hw = halting_weights(SUITE, 50, N)
    assert sum(hw.weights.values()) == 1 - Fraction(1, 2**N)
    for n in range(1, N + 1):
        assert hw.pair_mass(n) == Fraction(1, 2**n)


def test_initial_weights():
    assert initial_weights(1).weights == (Fraction(1, 2),)
    w3 = initial_weights(3)
    assert nonzero_weights(w3) == {1: Fraction(1, 2), 3: Fraction(1, 4), 5: Fraction(1, 8)}
    assert w3.tail_bound == Fraction(1, 8)
    with pytest.raises(DomainError):
        initial_weights(0)


def test_switch_weights():
    w = switch_weights(initial_weights(2), 1)
    assert w.weights == (Fraction(0), Fraction(1, 2), Fraction(1, 4))
    assert sum(w.weights) == sum(initial_weights(2).weights)
    with pytest.raises(InvalidSwitch):
        switch_weights(w, 1)
    with pytest.raises(InvalidSwitch):
        switch_weights(w, 0)


def test_switch_matches_halting_weights():
    w = switch_weights(initial_weights(2), 1)
    assert nonzero_weights(w) == halting_weights(SUITE[:2], 10, 2).weights


# ---- driver bookkeeping with the steering stubbed out --------------------------

def _fake_stage_factory(shrink=Fraction(1, 4), nest=True):
    calls = []

    def fake(start, targets, delta, k, cfg, search, bits):
        calls.append((targets, k, search))
        with working_precision(bits):
            if search is None:
                a, eps = to_real("3.86", bits), to_real("0.001", bits)
            else:
                lo, hi = search
                width = hi - lo
                a = hi - width / 8 if nest else hi + width
                eps = width * float(shrink)
        z = gmpy2.mpfr(0)
        pp = ParabolicParameter(a=a, point=z, period=1, multiplier_residual=z, cycle_residual=z, bits=bits)
        return StageRecord(a_bar=pp, epsilon=eps, m=1, targets=targets, k=k, certificate=None, bits=bits)
    return fake, calls


def test_driver_dovetail_and_switch(monkeypatch):
    fake, calls = _fake_stage_factory()
    monkeypatch.setattr(halting, "_stage", fake)
    st = construction_driver(SUITE[:2], 2, DriverConfig())
    assert [c[1] for c in calls] == [1, 2, 3]
    assert st.switched == [(1, 1, 1)]
    assert nonzero_weights(st.weights) == halting_weights(SUITE[:2], 10, 2).weights
    assert calls[0][0] == initial_weights(2)
    for (l0, h0), (l1, h1) in zip(st.intervals, st.intervals[1:]):
        assert l0 < l1 and h1 < h0
        assert (h1 - l1) * 4 <= (h0 - l0) * 2


def test_driver_looper_never_switches(monkeypatch):
    fake, calls = _fake_stage_factory()
    monkeypatch.setattr(halting, "_stage", fake)
    st = construction_driver([LOOPER], 1)
    assert st.switched == []
    assert st.weights == initial_weights(1)


def test_driver_late_halter(monkeypatch):
    # zigzag halts after 6 steps: with quantum 1 the switch happens at stage 6
    fake, calls = _fake_stage_factory()
    monkeypatch.setattr(halting, "_stage", fake)
    st = construction_driver([LOOPER, ZIGZAG], 7)
    assert st.switched == [(6, 2, 6)]


def test_driver_one_switch_per_stage(monkeypatch):
    fake, calls = _fake_stage_factory()
    monkeypatch.setattr(halting, "_stage", fake)
    st = construction_driver([HALTER, HALTER, LOOPER], 3)
    assert [s for s, _, _ in st.switched] == [1, 2]


def test_driver_rejects_broken_nesting(monkeypatch):
    fake, _ = _fake_stage_factory(nest=False)
    monkeypatch.setattr(halting, "_stage", fake)
    with pytest.raises(BudgetExhausted) as exc:
        construction_driver(SUITE[:2], 2)
    assert "nest" in str(exc.value)


def test_driver_rejects_slow_shrink(monkeypatch):
    fake, _ = _fake_stage_factory(shrink=Fraction(3, 4))
    monkeypatch.setattr(halting, "_stage", fake)
    with pytest.raises(BudgetExhausted):
        construction_driver(SUITE[:2], 2)


def test_driver_args():
    with pytest.raises(DomainError):
        construction_driver(SUITE[:2], 0)
    with pytest.raises(DomainError):
        construction_driver([], 2)


# ---- decision device -------------------------------------------------------------

def _pair_measure(a, n, halts):
    """Mass 2^-n spread on Per(2n) (halts) or Per(2n - 1), the rest on a far orbit."""
    on = per_set(a, 2 * n if halts else 2 * n - 1).per_set
    rest = per_set(a, 9).per_set
    w = Fraction(1, 2**n)
    atoms = [(p, w / len(on)) for p in on] + [(p, (1 - w) / len(rest)) for p in rest]
    return AtomicMeasure.from_weights(atoms)


@pytest.mark.parametrize("n", [1, 2])
def test_semicompute_halts(n):
    rep = upper_semicompute_demo(_pair_measure("3.95", n, True), n, 30, "3.95")
    assert rep.decision == "halts"
    assert all(b <= a for a, b in zip(rep.q1, rep.q1[1:]))
    assert all(b <= a for a, b in zip(rep.q2, rep.q2[1:]))


@pytest.mark.parametrize("n", [1, 2])
def test_semicompute_does_not_halt(n):
    rep = upper_semicompute_demo(_pair_measure("3.95", n, False), n, 30, "3.95")
    assert rep.decision == "does not halt"


def test_semicompute_inconclusive():
    # both pair members loaded: neither upper bound drops below 2^-n
    a = "3.95"
    s1, s2 = per_set(a, 1).per_set, per_set(a, 2).per_set
    atoms = [(p, Fraction(1, 2) / len(s1)) for p in s1] + [(p, Fraction(1, 2) / len(s2)) for p in s2]
    with pytest.raises(Inconclusive):
        upper_semicompute_demo(AtomicMeasure.from_weights(atoms), 1, 20, a)
