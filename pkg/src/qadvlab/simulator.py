"""Dense pure-state simulation.

Qubit 0 is the most significant bit of a basis index, so ``|q0 q1 ... q_{n-1}>``
maps to index ``q0 * 2**(n-1) + ... + q_{n-1}``.  Rotations follow
``R_P(theta) = exp(-i theta P / 2)``.

Batched kernels work on arrays of shape ``(2**n, batch)``: one column per state.
Keeping the batch axis last makes every gate a single contiguous pass.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

NORM_ATOL = 1e-10

GATE_KINDS = ("RX", "RZ", "CNOT")


class InvalidGateError(ValueError):
    pass


class InvalidQueryError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StateVector:
    """Normalized amplitude vector over ``n_qubits`` qubits (read-only)."""

    amplitudes: np.ndarray
    n_qubits: int

    def __init__(self, amplitudes, n_qubits: int | None = None, *, normalize: bool = False):
        amps = np.array(amplitudes, dtype=complex).reshape(-1)
        dim = amps.size
        if dim < 2 or dim & (dim - 1):
            raise ValueError(f"amplitude count {dim} is not a power of two >= 2")
        n = dim.bit_length() - 1
        if n_qubits is not None and n_qubits != n:
            raise ValueError(f"n_qubits={n_qubits} but {dim} amplitudes given")
        norm = np.linalg.norm(amps)
        if normalize:
            if norm == 0:
                raise ValueError("cannot normalize the zero vector")
            amps = amps / norm
        elif abs(norm - 1.0) > NORM_ATOL:
            raise ValueError(f"state norm {norm!r} differs from 1 by more than {NORM_ATOL}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "n_qubits", n)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @classmethod
    def basis(cls, bits: str | Sequence[int]) -> "StateVector":
        """Computational basis state from a bit string, qubit 0 first."""
        bits = [int(b) for b in bits]
        amps = np.zeros(2 ** len(bits), dtype=complex)
        amps[int("".join(map(str, bits)), 2)] = 1.0
        return cls(amps)

    def __repr__(self) -> str:
        return f"StateVector(n_qubits={self.n_qubits})"


@dataclass(frozen=True)
class GateOp:
    kind: str
    target: int
    control: int | None = None
    angle: float = 0.0

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise InvalidGateError(f"unknown gate kind {self.kind!r}")
        if self.kind == "CNOT":
            if self.control is None:
                raise InvalidGateError("CNOT needs a control qubit")
            if self.control == self.target:
                raise InvalidGateError("control and target coincide")
        elif self.control is not None:
            raise InvalidGateError(f"{self.kind} takes no control qubit")

    def inverse(self) -> "GateOp":
        if self.kind == "CNOT":
            return self
        return GateOp(self.kind, self.target, angle=-self.angle)

    def check(self, n_qubits: int) -> None:
        for q in (self.target, self.control):
            if q is not None and not 0 <= q < n_qubits:
                raise InvalidGateError(f"qubit index {q} out of range for {n_qubits} qubits")


def rotation_matrix(kind: str, angle: float) -> np.ndarray:
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    if kind == "RX":
        return np.array([[c, -1j * s], [-1j * s, c]])
    if kind == "RZ":
        return np.array([[c - 1j * s, 0], [0, c + 1j * s]])
    raise InvalidGateError(f"{kind!r} is not a rotation")


# --- batched kernels --------------------------------------------------------

def _split(psi: np.ndarray, target: int, n: int) -> np.ndarray:
    return psi.reshape(1 << target, 2, -1)


def apply_rotation(psi: np.ndarray, kind: str, angle: float, target: int, n: int) -> np.ndarray:
    """Return ``R_kind(angle)`` applied to qubit ``target`` of every column."""
    v = _split(psi, target, n)
    if kind == "RZ":
        ph = np.exp(-0.5j * angle)
        return (v * np.array([ph, ph.conjugate()])[None, :, None]).reshape(psi.shape)
    return np.matmul(rotation_matrix(kind, angle), v).reshape(psi.shape)


@lru_cache(maxsize=None)
def _cnot_permutation(control: int, target: int, n: int) -> np.ndarray:
    idx = np.arange(1 << n)
    cbit = 1 << (n - 1 - control)
    tbit = 1 << (n - 1 - target)
    perm = np.where(idx & cbit, idx ^ tbit, idx)
    perm.setflags(write=False)
    return perm


def apply_cnot(psi: np.ndarray, control: int, target: int, n: int) -> np.ndarray:
    return psi[_cnot_permutation(control, target, n)]


def apply_pauli(psi: np.ndarray, pauli: str, target: int, n: int) -> np.ndarray:
    v = _split(psi, target, n)
    if pauli == "X":
        return v[:, ::-1].reshape(psi.shape)
    if pauli == "Z":
        return (v * np.array([1.0, -1.0])[None, :, None]).reshape(psi.shape)
    raise InvalidGateError(f"unsupported Pauli {pauli!r}")


def apply_gate_batch(psi: np.ndarray, gate: GateOp, n: int) -> np.ndarray:
    if gate.kind == "CNOT":
        return apply_cnot(psi, gate.control, gate.target, n)
    return apply_rotation(psi, gate.kind, gate.angle, gate.target, n)


def qubit_marginals(psi: np.ndarray, qubit: int, n: int) -> np.ndarray:
    """``(2, batch)`` array of outcome probabilities on one qubit."""
    batch = psi.shape[1] if psi.ndim == 2 else 1
    p = np.abs(psi.reshape(1 << qubit, 2, 1 << (n - qubit - 1), batch)) ** 2
    return p.sum(axis=(0, 2))


def unitary_of(gates: Iterable[GateOp], n: int) -> np.ndarray:
    """Dense matrix of a gate sequence (first gate acts first)."""
    u = np.eye(1 << n, dtype=complex)
    for g in gates:
        g.check(n)
        u = apply_gate_batch(u, g, n)
    return u


# --- single-state API -------------------------------------------------------

def apply_gate(state: StateVector, gate: GateOp) -> StateVector:
    gate.check(state.n_qubits)
    out = apply_gate_batch(state.amplitudes[:, None], gate, state.n_qubits)[:, 0]
    return StateVector(out, normalize=True)


def apply_gates(state: StateVector, gates: Iterable[GateOp]) -> StateVector:
    n = state.n_qubits
    psi = state.amplitudes[:, None]
    for g in gates:
        g.check(n)
        psi = apply_gate_batch(psi, g, n)
    return StateVector(psi[:, 0], normalize=True)


def measure_probabilities(state: StateVector, qubits: Sequence[int]) -> np.ndarray:
    """Marginal distribution over the listed qubits.

    Outcome ``j`` of the returned vector reads the listed qubits as a bit
    string, first listed qubit most significant.
    """
    qubits = list(qubits)
    n = state.n_qubits
    if not qubits:
        raise InvalidQueryError("empty qubit list")
    if len(set(qubits)) != len(qubits):
        raise InvalidQueryError(f"duplicate qubit indices in {qubits}")
    for q in qubits:
        if not 0 <= q < n:
            raise InvalidQueryError(f"qubit {q} out of range for {n} qubits")
    p = state.probabilities().reshape([2] * n)
    rest = [q for q in range(n) if q not in qubits]
    p = p.sum(axis=tuple(rest)) if rest else p
    # remaining axes are in ascending qubit order; reorder to the listed order
    order = sorted(qubits)
    p = np.transpose(p, [order.index(q) for q in qubits])
    return p.reshape(-1)


def _check_pair(a: StateVector, b: StateVector) -> None:
    if a.n_qubits != b.n_qubits:
        raise DimensionMismatchError(f"{a.n_qubits} vs {b.n_qubits} qubits")


def overlap_fidelity(a: StateVector, b: StateVector) -> float:
    """Square-root fidelity ``|<a|b>|``."""
    _check_pair(a, b)
    return float(min(1.0, abs(np.vdot(a.amplitudes, b.amplitudes))))


def fidelity(a: StateVector, b: StateVector) -> float:
    """Squared overlap ``|<a|b>|^2``; the fidelity quoted in reports."""
    return overlap_fidelity(a, b) ** 2


def trace_distance_pure(a: StateVector, b: StateVector) -> float:
    return float(np.sqrt(max(0.0, 1.0 - fidelity(a, b))))


def hs_distance_pure(a: StateVector, b: StateVector) -> float:
    """Hilbert-Schmidt distance ``sqrt(Tr[(rho - sigma)^2])`` of two pure states."""
    return float(np.sqrt(2.0 * max(0.0, 1.0 - fidelity(a, b))))


def trace_distance_columns(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pure-state trace distance between matching columns of two batches."""
    ov = np.abs(np.einsum("ib,ib->b", a.conj(), b)) ** 2
    return np.sqrt(np.clip(1.0 - ov, 0.0, None))


def haar_random_amplitudes(n_qubits: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``(count, 2**n_qubits)`` rows of Haar-distributed unit vectors."""
    d = 1 << n_qubits
    z = rng.standard_normal((count, d)) + 1j * rng.standard_normal((count, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def haar_random_state(n_qubits: int, seed: int) -> StateVector:
    if n_qubits < 1:
        raise ValueError("n_qubits must be >= 1")
    amps = haar_random_amplitudes(n_qubits, 1, np.random.default_rng(seed))[0]
    return StateVector(amps, normalize=True)
