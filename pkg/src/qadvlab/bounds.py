"""Closed-form robustness and learnability bounds, with Monte-Carlo checks.

Conventions: ``d`` is the Hilbert-space dimension, risks are probabilities,
and distances between pure states use the trace distance unless an
operation says otherwise.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import simulator as sim
from .attacks import PerturbationLayer, empirical_error_rate, freeze, haar_error_rate


class BoundDomainError(ValueError):
    """An argument lies outside the range where the bound is defined."""


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise BoundDomainError(msg)


def _check_risk_pair(d, mu, R) -> None:
    _check(d >= 2, f"d must be >= 2, got {d}")
    _check(0 < mu <= 1, f"mu must lie in (0, 1], got {mu}")
    _check(0 <= R < 1, f"target risk must lie in [0, 1), got {R}")


def theorem1_min_epsilon(d: float, k: int, mu_min: float, R0: float) -> float:
    """Smallest budget guaranteeing universal risk ``R0`` against ``k`` classifiers."""
    _check_risk_pair(d, mu_min, R0)
    _check(k >= 1, f"k must be >= 1, got {k}")
    return math.sqrt(4.0 / d * math.log(2.0 * k / (mu_min * (1.0 - R0))))


def lemma_a1_min_epsilon(d: float, mu: float, R: float) -> float:
    """Single-classifier budget; coincides with ``theorem1_min_epsilon`` at ``k = 1``."""
    return theorem1_min_epsilon(d, 1, mu, R)


def levy_min_epsilon(alpha: float, beta: float, d: float, mu: float, R: float) -> float:
    """Budget implied by an ``(alpha, beta)``-normal Levy family."""
    _check(alpha > 0 and beta > 0, "alpha and beta must be positive")
    _check_risk_pair(d, mu, R)
    arg = alpha ** 2 / (mu * (1.0 - R))
    _check(arg >= 1.0, f"log argument {arg} gives a negative radicand")
    if alpha == math.sqrt(2.0) and beta == 0.25:
        # alpha**2 rounds to 2.0000000000000004; keep the identity with the k=1 bound exact.
        return lemma_a1_min_epsilon(d, mu, R)
    return math.sqrt(math.log(arg) / (beta * d))


def union_risk_lower_bound(adversarial_risks: Sequence[float]) -> float:
    """``max(0, sum(r) - (k - 1))``: joint risk from the individual ones."""
    r = np.asarray(adversarial_risks, dtype=float)
    _check(r.ndim == 1 and r.size >= 1, "need a nonempty vector of risks")
    _check(bool(np.all((r >= 0) & (r <= 1))), "risks must lie in [0, 1]")
    return max(0.0, float(math.fsum(r)) - (r.size - 1))


def hoeffding_deviation(n: int, delta: float) -> float:
    """Two-sided deviation holding with probability ``1 - delta`` for ``n`` samples."""
    _check(n >= 1, f"n must be >= 1, got {n}")
    _check(0 < delta < 1, f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))


def qnfl_classifier_bound(d: int, d_prime: int, N: int) -> float:
    """Average-case lower bound on classifier risk; negative values mean vacuous."""
    _check(d >= 2, f"d must be >= 2, got {d}")
    _check(d_prime >= 1, f"d_prime must be >= 1, got {d_prime}")
    _check(N >= 0, f"N must be >= 0, got {N}")
    return 1.0 - d_prime * (N * N + d + 1) / (d * (d + 1))


def qnfl_classifier_bound_clamped(d: int, d_prime: int, N: int) -> float:
    return max(0.0, qnfl_classifier_bound(d, d_prime, N))


def qnfl_unitary_bound(d: int, N: int) -> float:
    """Average risk of learning a unitary from ``N`` pairs."""
    return qnfl_classifier_bound(d, 1, N)


# --- Monte-Carlo estimators -------------------------------------------------

def _as_unitary(circuit, n_qubits: int | None = None) -> np.ndarray:
    """Accept a unitary matrix or an ``(n_qubits, gates)`` pair."""
    if isinstance(circuit, np.ndarray):
        u = np.asarray(circuit, dtype=complex)
        if u.ndim != 2 or u.shape[0] != u.shape[1] or u.shape[0] & (u.shape[0] - 1):
            raise sim.DimensionMismatchError(f"not a qubit unitary: shape {u.shape}")
        return u
    n, gates = circuit
    return sim.unitary_of(list(gates), n)


def estimate_quantum_risk(truth_circuit, hypothesis_circuit, n_samples: int, seed: int,
                          norm: str = "trace") -> tuple[float, float]:
    """Haar average of the squared trace norm between the two output projectors.

    ``norm="trace"`` uses ``Tr|A|``, giving ``4 (1 - |<psi|t^dag V|psi>|^2)`` per
    state; ``norm="halved"`` uses the trace distance, giving ``1 - |...|^2``.
    Returns ``(mean, standard error)``.
    """
    if norm not in ("trace", "halved"):
        raise ValueError(f"unknown norm convention {norm!r}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    t = _as_unitary(truth_circuit)
    v = _as_unitary(hypothesis_circuit)
    if t.shape != v.shape:
        raise sim.DimensionMismatchError(f"circuit dimensions differ: {t.shape} vs {v.shape}")
    scale = 4.0 if norm == "trace" else 1.0
    if np.array_equal(t, v):
        return 0.0, 0.0
    w = t.conj().T @ v
    n = int(np.log2(t.shape[0]))
    rng = np.random.default_rng(seed)
    psi = sim.haar_random_amplitudes(n, n_samples, rng)
    amp = np.einsum("bi,bi->b", psi.conj(), psi @ w.T)
    gap = 1.0 - np.abs(amp) ** 2
    # Rounding can leave tiny negative or sub-ulp gaps for states the two circuits agree on.
    gap = np.where(gap < 64 * np.finfo(float).eps, 0.0, gap)
    vals = scale * gap
    err = float(vals.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    return float(vals.mean()), err


def verify_hoeffding(model, layer: PerturbationLayer | None, true_risk_oracle_samples: int,
                     trials: int, n: int, delta: float, seed: int, truth=0) -> float:
    """Fraction of ``trials`` whose ``n``-sample error rate lies within the Hoeffding band.

    The reference risk comes from one large Haar run of
    ``true_risk_oracle_samples`` states; each trial uses fresh Haar states.
    """
    if trials < 100:
        raise ValueError("trials must be >= 100")
    bound = hoeffding_deviation(n, delta)
    (clf,) = freeze([model])
    ss = np.random.SeedSequence(seed)
    oracle_seed, trial_seed = ss.spawn(2)
    mu_hat, _ = haar_error_rate(clf, layer, true_risk_oracle_samples,
                                int(oracle_seed.generate_state(1)[0]), truth)
    rng = np.random.default_rng(trial_seed)
    hits = 0
    for _ in range(trials):
        amps = sim.haar_random_amplitudes(clf.n_in, n, rng)
        r = empirical_error_rate(clf, layer, amps, truth)
        hits += abs(r - mu_hat) <= bound
    return hits / trials
