import math

import mpmath as mp
import numpy as np
import pytest

from qadvlab import attacks, bounds, models, simulator as sim
from qadvlab.attacks import PerturbationLayer
from qadvlab.bounds import BoundDomainError
from qadvlab.simulator import GateOp

mp.mp.dps = 50


# independent high-precision evaluations of the closed forms
def mp_theorem1(d, k, mu, R):
    return mp.sqrt(mp.mpf(4) / d * mp.log(2 * mp.mpf(k) / (mp.mpf(mu) * (1 - mp.mpf(R)))))


def mp_levy(a, b, d, mu, R):
    return mp.sqrt(mp.log(mp.mpf(a) ** 2 / (mp.mpf(mu) * (1 - mp.mpf(R)))) / (mp.mpf(b) * d))


def mp_hoeffding(n, delta):
    return mp.sqrt(mp.log(2 / mp.mpf(delta)) / (2 * mp.mpf(n)))


def mp_qnfl(d, dp, N):
    return 1 - mp.mpf(dp) * (mp.mpf(N) ** 2 + d + 1) / (mp.mpf(d) * (d + 1))


def rel(a, b):
    return abs(mp.mpf(a) - b) / max(abs(b), mp.mpf("1e-300"))


def random_grid(seed, size=50):
    rng = np.random.default_rng(seed)
    return [dict(d=int(2 ** rng.integers(1, 21)), k=int(rng.integers(1, 50)),
                 mu=float(rng.uniform(1e-3, 1.0)), R=float(rng.uniform(0.0, 0.999)),
                 a=float(rng.uniform(1.0, 5.0)), b=float(rng.uniform(0.01, 3.0)),
                 n=int(rng.integers(1, 10 ** 6)), delta=float(rng.uniform(1e-6, 0.999)),
                 dp=int(rng.integers(1, 10)), N=int(rng.integers(0, 2000))) for _ in range(size)]


@pytest.mark.parametrize("q", random_grid(0))
def test_closed_forms_match_high_precision(q):
    assert rel(bounds.theorem1_min_epsilon(q["d"], q["k"], q["mu"], q["R"]),
               mp_theorem1(q["d"], q["k"], q["mu"], q["R"])) < 1e-12
    assert rel(bounds.lemma_a1_min_epsilon(q["d"], q["mu"], q["R"]),
               mp_theorem1(q["d"], 1, q["mu"], q["R"])) < 1e-12
    assert rel(bounds.levy_min_epsilon(q["a"], q["b"], q["d"], q["mu"], q["R"]),
               mp_levy(q["a"], q["b"], q["d"], q["mu"], q["R"])) < 1e-12
    assert rel(bounds.hoeffding_deviation(q["n"], q["delta"]), mp_hoeffding(q["n"], q["delta"])) < 1e-12
    assert rel(bounds.qnfl_classifier_bound(q["d"], q["dp"], q["N"]), mp_qnfl(q["d"], q["dp"], q["N"])) < 1e-12
    assert rel(bounds.qnfl_unitary_bound(q["d"], q["N"]), mp_qnfl(q["d"], 1, q["N"])) < 1e-12


def test_reference_values():
    # frozen from the 50-digit evaluations above
    assert bounds.theorem1_min_epsilon(4, 1, 1, 0) == pytest.approx(math.sqrt(math.log(2)), rel=1e-15)
    assert bounds.theorem1_min_epsilon(256, 8, 0.05, 0.5) == pytest.approx(0.3177427265186834, rel=1e-14)
    assert bounds.lemma_a1_min_epsilon(256, 0.05, 0.5) == pytest.approx(0.26166613492536515, rel=1e-14)
    assert bounds.levy_min_epsilon(2, 0.5, 64, 0.1, 0.2) == pytest.approx(0.34964370281706714, rel=1e-14)
    assert bounds.hoeffding_deviation(100, 0.05) == pytest.approx(0.13581015157406195, rel=1e-14)
    assert bounds.hoeffding_deviation(1, 2 / math.e ** 2) == pytest.approx(1.0, rel=1e-15)
    assert bounds.qnfl_classifier_bound(256, 2, 10) == pytest.approx(0.9891476167315175, rel=1e-14)
    assert bounds.qnfl_classifier_bound(2, 2, 0) == 0.0
    assert bounds.qnfl_unitary_bound(2, 1) == pytest.approx(1 / 3, rel=1e-15)
    assert bounds.levy_min_epsilon(1, 1, 100, 1, 0) == 0.0


def test_union_bound_examples():
    assert bounds.union_risk_lower_bound([1, 1, 1]) == 1.0
    assert bounds.union_risk_lower_bound([0.9, 0.9, 0.9]) == pytest.approx(0.7, abs=1e-15)
    assert bounds.union_risk_lower_bound([0.1, 0.1]) == 0.0
    assert bounds.union_risk_lower_bound([0.3]) == 0.3
    with pytest.raises(BoundDomainError):
        bounds.union_risk_lower_bound([1.2])
    with pytest.raises(BoundDomainError):
        bounds.union_risk_lower_bound([])


def test_scaling_laws():
    for d in (4, 64, 1000):
        ratio = bounds.theorem1_min_epsilon(d, 3, 0.2, 0.4) / bounds.theorem1_min_epsilon(2 * d, 3, 0.2, 0.4)
        assert ratio == pytest.approx(math.sqrt(2), rel=1e-14)
    for n in (1, 7, 250):
        assert bounds.hoeffding_deviation(4 * n, 0.1) == pytest.approx(bounds.hoeffding_deviation(n, 0.1) / 2,
                                                                      rel=1e-14)
    for d in (2, 16, 300):
        assert bounds.qnfl_unitary_bound(d, 0) == pytest.approx(1 - 1 / d, rel=1e-14)


def test_single_classifier_identities_exact():
    rng = np.random.default_rng(1)
    for _ in range(100):
        d = int(rng.integers(2, 5000))
        mu = float(rng.uniform(1e-4, 1))
        R = float(rng.uniform(0, 0.999))
        t = bounds.theorem1_min_epsilon(d, 1, mu, R)
        assert t == bounds.lemma_a1_min_epsilon(d, mu, R)
        assert t == bounds.levy_min_epsilon(math.sqrt(2), 0.25, d, mu, R)
        assert bounds.levy_min_epsilon(1.4142135, 0.25, d, mu, R) == pytest.approx(t, rel=1e-6)
        N = int(rng.integers(0, 100))
        assert bounds.qnfl_classifier_bound(d, 1, N) == bounds.qnfl_unitary_bound(d, N)


def test_monotonicity_sweeps():
    rng = np.random.default_rng(2)
    for _ in range(200):
        d, k = int(rng.integers(2, 1000)), int(rng.integers(1, 20))
        mu, R = float(rng.uniform(0.01, 0.9)), float(rng.uniform(0, 0.9))
        base = bounds.theorem1_min_epsilon(d, k, mu, R)
        assert bounds.theorem1_min_epsilon(d + 1, k, mu, R) < base
        assert bounds.theorem1_min_epsilon(d, k, mu * 1.05, R) < base
        assert bounds.theorem1_min_epsilon(d, k + 1, mu, R) > base
        assert bounds.theorem1_min_epsilon(d, k, mu, R + 0.05) > base
        n, delta = int(rng.integers(1, 10 ** 5)), float(rng.uniform(0.01, 0.9))
        h = bounds.hoeffding_deviation(n, delta)
        assert bounds.hoeffding_deviation(n + 1, delta) < h
        assert bounds.hoeffding_deviation(n, delta * 1.05) < h
        dp, N = int(rng.integers(1, 5)), int(rng.integers(0, 50))
        q = bounds.qnfl_classifier_bound(d, dp, N)
        assert bounds.qnfl_classifier_bound(d, dp, N + 1) < q
        assert bounds.qnfl_classifier_bound(d, dp + 1, N) < q


def test_lemma_bound_diverges_as_target_risk_approaches_one():
    vals = [bounds.lemma_a1_min_epsilon(256, 0.1, 1 - 10.0 ** -j) for j in range(1, 12)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    # the squared budget grows by (4/d) ln 10 per decade of 1 - R
    steps = np.diff(np.square(vals))
    np.testing.assert_allclose(steps, 4 * math.log(10) / 256, rtol=1e-5)


def test_qnfl_clamped_accessor():
    raw = bounds.qnfl_classifier_bound(4, 2, 5)
    assert raw < 0
    assert bounds.qnfl_classifier_bound_clamped(4, 2, 5) == 0.0
    assert bounds.qnfl_classifier_bound_clamped(256, 2, 10) == bounds.qnfl_classifier_bound(256, 2, 10)


@pytest.mark.parametrize("call", [
    lambda: bounds.theorem1_min_epsilon(1, 1, 0.5, 0.5),
    lambda: bounds.theorem1_min_epsilon(4, 0, 0.5, 0.5),
    lambda: bounds.theorem1_min_epsilon(4, 1, 0.0, 0.5),
    lambda: bounds.theorem1_min_epsilon(4, 1, 1.5, 0.5),
    lambda: bounds.theorem1_min_epsilon(4, 1, 0.5, 1.0),
    lambda: bounds.lemma_a1_min_epsilon(4, 0.5, -0.1),
    lambda: bounds.levy_min_epsilon(0, 1, 4, 0.5, 0.5),
    lambda: bounds.levy_min_epsilon(1, -1, 4, 0.5, 0.5),
    lambda: bounds.levy_min_epsilon(0.5, 1, 4, 1.0, 0.0),
    lambda: bounds.hoeffding_deviation(0, 0.5),
    lambda: bounds.hoeffding_deviation(10, 1.0),
    lambda: bounds.qnfl_classifier_bound(1, 1, 0),
    lambda: bounds.qnfl_classifier_bound(4, 0, 0),
    lambda: bounds.qnfl_unitary_bound(4, -1),
])
def test_domain_errors(call):
    with pytest.raises(BoundDomainError):
        call()


def test_domain_error_names_the_constraint():
    with pytest.raises(BoundDomainError, match="mu"):
        bounds.theorem1_min_epsilon(8, 1, 2.0, 0.1)
    with pytest.raises(BoundDomainError, match="log argument"):
        bounds.levy_min_epsilon(0.5, 1, 4, 1.0, 0.0)


# --- quantum risk estimator --------------------------------------------------

def test_quantum_risk_identical_circuits_exactly_zero():
    gates = [GateOp("RX", 0, angle=0.3), GateOp("CNOT", 1, control=0), GateOp("RZ", 1, angle=-1.1)]
    assert bounds.estimate_quantum_risk((2, gates), (2, gates), 1000, 0) == (0.0, 0.0)
    u = sim.unitary_of(gates, 2)
    assert bounds.estimate_quantum_risk(u, u.copy(), 10, 1) == (0.0, 0.0)


def test_quantum_risk_global_phase_is_zero():
    ident = np.eye(4, dtype=complex)
    est, se = bounds.estimate_quantum_risk(ident, np.exp(0.7j) * ident, 2000, 3)
    assert est == 0.0 and se == 0.0
    # RZ(a) RZ(-a) on the same qubit reduces to the identity up to rounding
    pair = (1, [GateOp("RZ", 0, angle=0.4), GateOp("RZ", 0, angle=-0.4)])
    assert bounds.estimate_quantum_risk((1, []), pair, 500, 0)[0] == 0.0


def test_quantum_risk_x_versus_identity_matches_haar_integral():
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    est, se = bounds.estimate_quantum_risk(np.eye(2), x, 100_000, 11)
    assert abs(est - 8 / 3) <= 3 * se
    halved, hse = bounds.estimate_quantum_risk(np.eye(2), x, 100_000, 11, norm="halved")
    assert halved == pytest.approx(est / 4, rel=1e-14)
    # independent Monte-Carlo: Bloch-sphere uniform points, <X> = sin(theta) cos(phi)
    rng = np.random.default_rng(5)
    z = rng.uniform(-1, 1, 200_000)
    phi = rng.uniform(0, 2 * np.pi, 200_000)
    ex = np.sqrt(1 - z ** 2) * np.cos(phi)
    assert abs(np.mean(4 * (1 - ex ** 2)) - est) < 4 * np.hypot(se, np.std(4 * (1 - ex ** 2)) / np.sqrt(z.size))


def test_quantum_risk_range_and_errors():
    rng = np.random.default_rng(7)
    for seed in range(10):
        gates = [GateOp("RX" if rng.random() < 0.5 else "RZ", int(rng.integers(3)), angle=float(rng.uniform(-3, 3)))
                 for _ in range(6)] + [GateOp("CNOT", 2, control=0)]
        est, _ = bounds.estimate_quantum_risk((3, []), (3, gates), 300, seed)
        assert 0.0 <= est <= 4.0
    with pytest.raises(sim.DimensionMismatchError):
        bounds.estimate_quantum_risk(np.eye(2), np.eye(4), 10, 0)
    with pytest.raises(sim.DimensionMismatchError):
        bounds.estimate_quantum_risk(np.eye(3), np.eye(3), 10, 0)
    with pytest.raises(ValueError):
        bounds.estimate_quantum_risk(np.eye(2), np.eye(2), 0, 0)
    with pytest.raises(ValueError):
        bounds.estimate_quantum_risk(np.eye(2), np.eye(2), 5, 0, norm="frobenius")


# --- Hoeffding coverage ------------------------------------------------------

@pytest.fixture(scope="module")
def toy():
    m = models.build_variational_classifier(2, 2, 3)
    r, _ = attacks.haar_error_rate(m, None, 20_000, seed=0)
    assert 0.2 < r < 0.8
    return m


def test_hoeffding_coverage(toy):
    cov = bounds.verify_hoeffding(toy, None, 50_000, 1000, 200, 0.05, seed=0)
    assert cov >= 0.95
    assert cov == bounds.verify_hoeffding(toy, None, 50_000, 1000, 200, 0.05, seed=0)


def test_hoeffding_coverage_near_one_delta_and_large_n(toy):
    layer = PerturbationLayer(2, np.linspace(-0.5, 0.5, 6))
    delta = 0.95
    cov = bounds.verify_hoeffding(toy, layer, 50_000, 200, 200, delta, seed=1)
    assert cov >= 1 - delta - 3 * math.sqrt(delta * (1 - delta) / 200)
    cov = bounds.verify_hoeffding(toy, None, 200_000, 100, 10_000, 0.05, seed=2)
    assert cov >= 0.95


def test_hoeffding_requires_enough_trials(toy):
    with pytest.raises(ValueError):
        bounds.verify_hoeffding(toy, None, 100, 99, 10, 0.1, seed=0)
