import json
import random
from fractions import Fraction

import gmpy2
import pytest
from dataclasses import replace

from chaostat.dynamics import advance, to_real, working_precision
from chaostat.errors import DomainError, OutOfRange
from chaostat.params import find_parabolic
from chaostat.steering import (BackwardLadder, DwellCounter, SteerConfig, TargetWeights, backward_ladder,
                               beta_entry_interval, critical_rung, exit_interval, max_deviation,
                               orbit_sets_and_delta, steer_stage, tune_landing, verify_stage)
from chaostat.symbolic import branch_system, find_c, per_set


@pytest.fixture(scope="module")
def start3():
    return find_parabolic(3, "3.8284", 256)


@pytest.fixture(scope="module")
def single_target(start3):
    return steer_stage(start3, TargetWeights((Fraction(1),)), "0.05", 3, SteerConfig(bits=256))


# ---- target weights -----------------------------------------------------------

def test_target_weights_validation():
    tw = TargetWeights(("1/2", "1/4"), "1/4")
    assert tw.N == 2 and tw.weights == (Fraction(1, 2), Fraction(1, 4))
    assert TargetWeights.from_dict(tw.to_dict()) == tw
    with pytest.raises(DomainError):
        TargetWeights((Fraction(3, 4), Fraction(1, 2)))
    with pytest.raises(DomainError):
        TargetWeights((Fraction(1, 2),), Fraction(1, 4))
    with pytest.raises(DomainError):
        TargetWeights((Fraction(-1, 2), Fraction(1)))


@pytest.mark.parametrize("counts, length, weights, want", [
    ([5], 10, ["1/2"], Fraction(0)),
    ([2, 6], 8, ["1/2", "1/2"], Fraction(1, 4)),
    ([0, 0], 0, ["1", "0"], Fraction(1)),
])
def test_max_deviation(counts, length, weights, want):
    assert max_deviation(counts, length, TargetWeights(tuple(weights), 1)) == want


# ---- ladders ------------------------------------------------------------------

@pytest.mark.parametrize("a", ["3.87", "3.95", "4"])
def test_entry_interval_covers(a):
    bs = branch_system(a, 256)
    u, v = beta_entry_interval(bs)
    assert bs.beta < u < v
    with working_precision(256):
        tol = gmpy2.mpfr(2) ** -200
        assert abs(advance(bs.a, u, 2) - bs.beta_prime) < tol
        assert abs(advance(bs.a, v, 2) - bs.beta) < tol
        # monotone on the rung: sample the image
        xs = [u + (v - u) * i / 16 for i in range(17)]
        ys = [advance(bs.a, x, 2) for x in xs]
        assert all(y2 > y1 for y1, y2 in zip(ys, ys[1:]))


def test_ladder_depth_zero():
    lad = backward_ladder("3.95", depth=0)
    assert lad.depth == 0 and lad.entry_iterate == 2
    assert lad.intervals[0] == beta_entry_interval(branch_system("3.95", 256))


def test_ladder_geometric_decay():
    lad = backward_ladder("3.95", depth=8)
    bs = branch_system("3.95", 256)
    with working_precision(256):
        h = gmpy2.mpfr(2) ** -100
        y1 = bs.g(bs.beta + h)
        y0 = bs.g(bs.beta - h)
        dg = abs(y1 - y0) / (2 * h)
        lengths = [v - u for u, v in lad.intervals]
        ratios = [lengths[i + 1] / lengths[i] for i in range(len(lengths) - 1)]
        assert abs(ratios[-1] * dg - 1) < 0.05
        # psi(J_0) sits within |J_0| of beta
        u1, v1 = lad.intervals[1]
        assert max(abs(u1 - bs.beta), abs(v1 - bs.beta)) <= lengths[0] + abs(lad.intervals[0][1] - bs.beta)


def test_ladder_periodic_target():
    lad = backward_ladder("3.87", target="10", depth=2)
    assert lad.base == "10"
    fam = per_set("3.87", 3, 256)
    assert abs(lad.base_point - fam.g_points[0]) < 1e-60
    assert lad.entry_iterate == 8 + 3 * critical_rung(branch_system("3.87", 256))
    # each rung is the phi_w image of the previous one, so it approaches the base orbit
    d = [min(abs(u - lad.base_point), abs(v - lad.base_point)) for u, v in lad.intervals]
    assert d[2] < d[1]


def test_ladder_below_threshold():
    with pytest.raises(OutOfRange):
        backward_ladder("3.8", depth=1)


@pytest.mark.parametrize("a", ["3.857", "3.86", "3.87"])
def test_exit_interval_lands_in_I(a):
    bs = branch_system(a, 256)
    n = critical_rung(bs)
    e0, e1 = exit_interval(bs, n)
    assert gmpy2.mpfr("0.5") < e0 < e1 < bs.r_cut
    with working_precision(256):
        for t in range(1, 8):
            x = e0 + (e1 - e0) * t / 8
            y = advance(bs.a, x, 8 + 3 * n)
            assert bs.beta_prime <= y <= bs.beta


def test_exit_interval_needs_critical_value_right_of_beta():
    with pytest.raises(OutOfRange):
        critical_rung(branch_system("3.95", 256))


@pytest.mark.parametrize("n", [2, 4, 7])
def test_tune_landing_dwell(n):
    c = find_c(256).c
    lad = BackwardLadder(c, "beta", c, (), 2, 256)
    with working_precision(256):
        lo, hi = tune_landing((c, c + gmpy2.mpfr("0.05")), lad, n)
        assert c < lo < hi
        a = (lo + hi) / 2
        bs = branch_system(a, 256)
        y = advance(a, gmpy2.mpfr("0.5"), 6)
    # g^2(1/2) sits right of beta and is pushed away by g for n steps before reaching J_0
    u, v = beta_entry_interval(bs)
    with working_precision(256):
        z, prev = y, gmpy2.mpfr(0)
        for _ in range(n):
            assert bs.beta < z < u
            assert z - bs.beta > prev
            prev = z - bs.beta
            z = advance(a, z, 3)
        assert u <= z <= v


def test_tune_landing_rungs_approach_c():
    c = find_c(256).c
    lad = BackwardLadder(c, "beta", c, (), 2, 256)
    with working_precision(256):
        out = [tune_landing((c, c + gmpy2.mpfr("0.05")), lad, n) for n in (2, 3, 4, 5)]
    # deeper rungs are reached closer to c, on disjoint parameter windows
    for (l1, h1), (l2, h2) in zip(out, out[1:]):
        assert h2 < l1


# ---- dwell counting -----------------------------------------------------------

def test_dwell_counter_classify():
    a = to_real("3.95", 256)
    fams, delta = orbit_sets_and_delta(a, 3, 256)
    counter = DwellCounter([f.per_set for f in fams], delta)
    for idx, f in enumerate(fams):
        for p in f.per_set:
            assert counter.classify(p) == idx
    assert counter.classify(gmpy2.mpfr("0.0001")) == -1


def test_dwell_counter_on_periodic_orbit():
    a = to_real("3.95", 256)
    fams, delta = orbit_sets_and_delta(a, 2, 256)
    counter = DwellCounter([f.per_set for f in fams], delta)
    with working_precision(256):
        counts = counter.count_orbit(a, fams[0].g_points[0], 30)
    assert counts == [30, 0]


# ---- stage driver -------------------------------------------------------------

def test_empty_targets_return_start(start3):
    rec = steer_stage(start3, TargetWeights((), 1), "0.05", 3)
    assert rec.a_bar == start3 and rec.m == 1
    assert rec.certificate.pass_fraction is None
    assert rec.certificate.flagged


def test_bad_accuracy(start3):
    with pytest.raises(DomainError):
        steer_stage(start3, TargetWeights((Fraction(1),)), "0.05", 0)


def test_single_target_certificate(single_target):
    rec = single_target
    cert = rec.certificate
    assert cert.sample_count == 500
    assert cert.pass_fraction >= 1 - 2**-3
    assert rec.critical_deviation < Fraction(1, 32)
    assert rec.a_bar.a > find_c(256).c
    cyc, mul = rec.a_bar.residuals()
    assert cyc < 2**-60 and mul < 2**-60


def test_single_target_probes_span_radius(single_target):
    cert = single_target.certificate
    with working_precision(256):
        lo = single_target.a_bar.a - single_target.epsilon
        hi = single_target.a_bar.a + single_target.epsilon
        assert cert.probes[0] == lo
        assert abs(cert.probes[-1] - hi) < gmpy2.mpfr(2) ** -240
    assert len(cert.probes) == 5


def test_verify_seed_honesty(single_target):
    small = replace(single_target, m=200)
    r1 = verify_stage(small, 8, 2, seed=3)
    r2 = verify_stage(small, 8, 2, seed=3)
    r3 = verify_stage(small, 8, 2, seed=4)
    assert r1.deviations == r2.deviations
    assert r1.deviations != r3.deviations


def test_verify_no_samples(single_target):
    rep = verify_stage(single_target, 0, 5, seed=0)
    assert rep.pass_fraction is None and rep.passed is None and rep.flagged


def test_verify_negative_control(single_target):
    # all the mass demanded on Per(2) while orbits sit next to Per(1)
    wrong = replace(single_target, targets=TargetWeights((Fraction(0), Fraction(1))))
    rep = verify_stage(wrong, 20, 2, seed=1)
    assert rep.pass_fraction < 0.05


def test_record_json_round(single_target):
    d = json.loads(single_target.to_json())
    assert d["k"] == 3 and d["targets"]["weights"] == ["1"]
    assert d["certificate"]["sample_count"] == 500


def test_uniform_start_pairs_random_subset(single_target):
    # a handful of random pairs re-simulated directly agree with the certificate's verdict rate
    rng = random.Random(0)
    fams, delta = orbit_sets_and_delta(single_target.a_bar.a, 1, 256)
    counter = DwellCounter([f.per_set for f in fams], single_target.delta)
    hits = 0
    with working_precision(256):
        for _ in range(10):
            x = to_real(repr(rng.random()), 256)
            cnt = counter.count_orbit(single_target.a_bar.a, x, single_target.m)
            hits += abs(Fraction(cnt[0], single_target.m) - 1) < Fraction(1, 8)
    assert hits >= 8
