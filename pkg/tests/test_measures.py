import json
import random
from fractions import Fraction

import gmpy2
import pytest

from chaostat.dynamics import to_real, working_precision
from chaostat.errors import DomainError, NotProbability, ResourceError
from chaostat.measures import (AtomicMeasure, PointSet, birkhoff_measure, hat_upper_sequence,
                               monte_carlo_measure, neighborhood_weight, orbit_uniform_measure,
                               uniform_starts, w1_distance)
from chaostat.params import find_superattracting, superattracting_cycle
from oracles import kantorovich_dual, w1_cdf_mpmath

CRIT4 = AtomicMeasure.from_weights([("0.5", "1/4"), (1, "1/4"), (0, "1/2")])


def test_birkhoff_fixed_point():
    nu = birkhoff_measure("2.5", "0.6", 10).measure
    # 0.6 is not exactly representable, so the orbit may drift by a rounding unit
    assert nu.total == 1
    assert float(w1_distance(nu, AtomicMeasure.dirac("0.6"))) < 1e-35


def test_birkhoff_critical_a4():
    nu = birkhoff_measure(4, "0.5", 4).measure
    assert nu.atoms == CRIT4.atoms


def test_birkhoff_transient():
    nu = birkhoff_measure("2.5", "0.2", 10000).measure
    assert w1_distance(nu, AtomicMeasure.dirac("0.6")) < 1e-2


def test_birkhoff_budget():
    with pytest.raises(ResourceError):
        birkhoff_measure("3", "0.3", 100, budget=10)


def test_monte_carlo_k1_is_shifted_birkhoff():
    x = uniform_starts(5, 1)[0]
    mc = monte_carlo_measure("2.5", 1, 50, seed=5)
    with working_precision(128):
        y = to_real("2.5") * x * (1 - x)
    bk = birkhoff_measure("2.5", y, 50).measure
    assert mc == bk


def test_monte_carlo_sink():
    mc = monte_carlo_measure("2.5", 50, 2000, seed=7)
    assert w1_distance(mc, AtomicMeasure.dirac("0.6")) < 1e-3


@pytest.mark.slow
def test_monte_carlo_a4_seeds_agree():
    m1 = monte_carlo_measure(4, 100, 1000, seed=1, bits=64)
    m2 = monte_carlo_measure(4, 100, 1000, seed=2, bits=64)
    assert w1_distance(m1, m2) < 1e-2


def test_monte_carlo_deterministic():
    assert monte_carlo_measure("3.7", 5, 100, seed=9) == monte_carlo_measure("3.7", 5, 100, seed=9)
    assert monte_carlo_measure("3.7", 5, 100, seed=9) != monte_carlo_measure("3.7", 5, 100, seed=10)


@pytest.mark.parametrize("x, y", [("0.1", "0.7"), ("0.3", "0.3"), ("0", "1")])
def test_w1_diracs(x, y):
    d = w1_distance(AtomicMeasure.dirac(x), AtomicMeasure.dirac(y))
    with working_precision(128):
        assert d == abs(to_real(x) - to_real(y))


def test_w1_half_split():
    nu = AtomicMeasure.from_weights([(0, "1/2"), (1, "1/2")])
    assert w1_distance(AtomicMeasure.dirac(0), nu) == gmpy2.mpfr("0.5")


def test_w1_against_dense_dual():
    d = w1_distance(CRIT4, AtomicMeasure.dirac(0))
    assert d == gmpy2.mpfr("0.375")
    lp = kantorovich_dual([0.5, 1.0, 0.0], [0.25, 0.25, 0.5], [0.0], [1.0], grid=2**14)
    assert abs(lp - 0.375) < 2**-10


def test_w1_random_against_mpmath():
    rng = random.Random(21)
    for _ in range(50):
        xs = [rng.random() for _ in range(4)]
        ys = [rng.random() for _ in range(6)]
        ps = [Fraction(rng.randint(1, 9)) for _ in xs]
        qs = [Fraction(rng.randint(1, 9)) for _ in ys]
        ps = [p / sum(ps) for p in ps]
        qs = [q / sum(qs) for q in qs]
        mu = AtomicMeasure.from_weights([(repr(x), p) for x, p in zip(xs, ps)])
        nu = AtomicMeasure.from_weights([(repr(y), q) for y, q in zip(ys, qs)])
        want = w1_cdf_mpmath([float(x) for x in mu.locations], [float(p) for _, p in mu.atoms],
                             [float(y) for y in nu.locations], [float(q) for _, q in nu.atoms])
        assert abs(float(w1_distance(mu, nu)) - float(want)) < 1e-12


def test_w1_rejects_sub_probability():
    half = AtomicMeasure.from_weights([("0.2", "1/2")])
    with pytest.raises(NotProbability):
        w1_distance(half, AtomicMeasure.dirac(0))


def test_orbit_uniform_fixed():
    assert orbit_uniform_measure("2.5", ["0.6"]).atoms == AtomicMeasure.dirac("0.6").atoms


def test_orbit_uniform_two_cycle_vieta():
    # x1 + x2 = (a+1)/a on the 2-cycle
    with working_precision(128):
        a = to_real("3.2")
        s, p = (a + 1) / a, (a + 1) / (a * a)
        disc = gmpy2.sqrt(s * s - 4 * p)
        cyc = [(s + disc) / 2, (s - disc) / 2]
    mu = orbit_uniform_measure(a, cyc)
    assert [w for _, w in mu.atoms] == [Fraction(1, 2)] * 2
    with working_precision(128):
        assert abs(sum(mu.locations) - s) < gmpy2.mpfr(2) ** -120


def test_orbit_uniform_period3_superattracting():
    a = find_superattracting(3, ("3.8", "3.9"))
    mu = orbit_uniform_measure(a, superattracting_cycle(a, 3))
    assert len(mu) == 3
    assert all(w == Fraction(1, 3) for _, w in mu.atoms)
    assert to_real("0.5") in mu.locations


@pytest.mark.parametrize("delta", ["0.001", "0.1", "0.5"])
def test_neighborhood_self(delta):
    assert neighborhood_weight(AtomicMeasure.dirac("0.6"), PointSet.of(["0.6"]), delta) == 1


def test_neighborhood_values():
    assert neighborhood_weight(AtomicMeasure.dirac("0.6"), PointSet.of(["0.9"]), "0.1") == 0
    assert neighborhood_weight(CRIT4, PointSet.of([0, "0.5"]), "0.01") == Fraction(3, 4)
    with pytest.raises(DomainError):
        neighborhood_weight(CRIT4, PointSet.of([0]), 0)


@pytest.mark.parametrize("l", [1, 3, 10, 40])
def test_hat_plateau(l):
    assert hat_upper_sequence(AtomicMeasure.dirac("0.3"), PointSet.of(["0.3"]), l) == 1


@pytest.mark.parametrize("l", [2, 5, 20])
def test_hat_outside_support(l):
    assert hat_upper_sequence(AtomicMeasure.dirac("0.5"), PointSet.of([0]), l) == 0


@pytest.mark.parametrize("l", [2, 6, 30])
def test_hat_half_depth(l):
    with working_precision(128):
        off = gmpy2.mpfr(2) ** (-l) / 2
    mu = AtomicMeasure.from_weights([(0, "1/2"), (off, "1/2")])
    assert hat_upper_sequence(mu, PointSet.of([0]), l) == gmpy2.mpfr("0.75")


def test_hat_nonincreasing():
    rng = random.Random(4)
    mu = AtomicMeasure.from_weights([(repr(rng.random()), 1) for _ in range(30)])
    mu = AtomicMeasure.from_counts(mu.locations, mu.counts, sum(mu.counts))
    target = PointSet.of(["0.25", "0.75"])
    seq = [hat_upper_sequence(mu, target, l) for l in range(1, 25)]
    assert all(b <= a for a, b in zip(seq, seq[1:]))


def test_histogram_and_serialization():
    mu = monte_carlo_measure("3.9", 4, 200, seed=2)
    assert sum(mu.histogram(16)) == 1
    back = AtomicMeasure.from_json(mu.to_json())
    assert back == mu
    assert json.loads(mu.to_json())["total"] == "1"


def test_merge_within_precision():
    mu = AtomicMeasure.from_counts(["0.5", "0.5"], [1, 1], 2)
    assert len(mu) == 1 and mu.atoms[0][1] == 1
