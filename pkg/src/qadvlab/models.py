"""Variational and QCNN binary classifiers.

A circuit is compiled to a flat tuple of :class:`Slot` objects.  Each slot is a
gate whose angle is ``scale * params[param] + offset`` (or just ``offset`` when
``param`` is None), which covers plain angles, weight sharing and the fixed
gates of decomposed controlled rotations with one mechanism.

The input register of ``n_in`` qubits is followed by a single readout qubit
prepared in ``|1>``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import simulator as sim
from .simulator import StateVector

ARCHITECTURES = ("variational", "qcnn")
QCNN_VARIANTS = ("small", "large")


@dataclass(frozen=True)
class Slot:
    kind: str
    target: int
    control: int | None = None
    param: int | None = None
    scale: float = 1.0
    offset: float = 0.0

    def angle(self, params: np.ndarray) -> float:
        if self.param is None:
            return self.offset
        return self.scale * params[self.param] + self.offset


@dataclass(frozen=True)
class LayerSpec:
    label: str
    kind: str  # "variational", "conv", "pool", "fc"
    qubits: tuple[int, ...]
    params: tuple[int, int]  # half-open range of parameter indices


@dataclass(frozen=True)
class CircuitSpec:
    architecture: str
    n_in: int
    layers: tuple[LayerSpec, ...]
    slots: tuple[Slot, ...]
    readout_qubit: int
    param_count: int
    depth: int | None = None
    variant: str | None = None
    m_readout: int = 1

    def __post_init__(self):
        n = self.n_qubits
        used = {s.param for s in self.slots if s.param is not None}
        if used != set(range(self.param_count)):
            raise ValueError("param_count does not match the parameter slots")
        for s in self.slots:
            sim.GateOp(s.kind, s.target, s.control).check(n)
        if not 0 <= self.readout_qubit < n:
            raise ValueError("readout qubit out of range")

    @property
    def n_qubits(self) -> int:
        return self.n_in + self.m_readout

    def describe(self) -> str:
        if self.architecture == "variational":
            return f"variational(n_in={self.n_in}, depth={self.depth})"
        return f"qcnn(n_in={self.n_in}, variant={self.variant})"

    def gates(self, params: np.ndarray) -> list[sim.GateOp]:
        return [sim.GateOp(s.kind, s.target, s.control,
                           0.0 if s.kind == "CNOT" else float(s.angle(params)))
                for s in self.slots]


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    spec: CircuitSpec
    params: np.ndarray
    label_set_size: int = 2
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.array(self.params, dtype=float).reshape(-1)
        if p.size != self.spec.param_count:
            raise ValueError(f"expected {self.spec.param_count} parameters, got {p.size}")
        p.setflags(write=False)
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def name(self) -> str:
        return self.metadata.get("name", self.spec.describe())

    def with_params(self, params, **meta) -> "ClassifierModel":
        return ClassifierModel(self.spec, params, self.label_set_size, {**self.metadata, **meta})


# --- builders ---------------------------------------------------------------

class _Builder:
    def __init__(self):
        self.slots: list[Slot] = []
        self.count = 0

    def new_params(self, k: int) -> list[int]:
        idx = list(range(self.count, self.count + k))
        self.count += k
        return idx

    def rot(self, kind, q, p, scale=1.0, offset=0.0):
        self.slots.append(Slot(kind, q, None, p, scale, offset))

    def cnot(self, c, t):
        self.slots.append(Slot("CNOT", t, c))

    def euler(self, q, pa, pb):
        # X first, then Z: the unit Z(b) X(a)
        self.rot("RX", q, pa)
        self.rot("RZ", q, pb)

    def hadamard_like(self, q):
        # RZ(pi/2) RX(pi/2) RZ(pi/2) equals H up to a global phase
        for kind in ("RZ", "RX", "RZ"):
            self.rot(kind, q, None, offset=np.pi / 2)

    def crx(self, c, t, p):
        """Controlled RX(theta) from CNOT and RZ gates conjugated into the X basis."""
        self.hadamard_like(t)
        self.rot("RZ", t, p, scale=0.5)
        self.cnot(c, t)
        self.rot("RZ", t, p, scale=-0.5)
        self.cnot(c, t)
        self.hadamard_like(t)


def _init_params(count: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, 2 * np.pi, size=count)


def variational_spec(n_in: int, depth: int) -> CircuitSpec:
    if n_in < 1 or depth < 1:
        raise ValueError("n_in and depth must be >= 1")
    n = n_in + 1
    b = _Builder()
    layers = []
    for i in range(depth):
        start = b.count
        for q in range(n):
            pa, pb = b.new_params(2)
            b.euler(q, pa, pb)
        for q in range(n - 1):
            b.cnot(q, q + 1)
        for q in range(n):
            pc, pd = b.new_params(2)
            b.euler(q, pc, pd)
        layers.append(LayerSpec(f"L{i + 1}", "variational", tuple(range(n)), (start, b.count)))
    return CircuitSpec("variational", n_in, tuple(layers), tuple(b.slots), n - 1, b.count, depth=depth)


def build_variational_classifier(n_in: int, depth: int, seed: int, name: str | None = None) -> ClassifierModel:
    """Layered circuit: per-qubit X/Z rotations, CNOT chain, per-qubit X/Z rotations."""
    spec = variational_spec(n_in, depth)
    meta = {"name": name or f"variational-d{depth}", "seed": seed}
    return ClassifierModel(spec, _init_params(spec.param_count, seed), metadata=meta)


def _conv(b: _Builder, active: list[int], shared: list[int], pairs) -> None:
    for a, c in pairs:
        b.euler(a, shared[0], shared[1])
        b.euler(c, shared[2], shared[3])
        b.cnot(a, c)
        b.euler(a, shared[4], shared[5])
        b.euler(c, shared[6], shared[7])


def qcnn_spec(n_in: int, variant: str = "small") -> CircuitSpec:
    """Three conv layers, pool, three conv layers, pool, fully connected.

    Conv layers act on neighbouring pairs of active qubits in a brickwork
    (even pairs then odd pairs).  The ``small`` variant shares one 8-angle
    unit across every pair of a layer; ``large`` uses separate units for the
    even and odd bricks and adds a second rotation unit to the FC block.
    Pooling applies a controlled RX from each discarded qubit onto its kept
    neighbour, with one angle shared per pooling layer.
    """
    if variant not in QCNN_VARIANTS:
        raise ValueError(f"unknown QCNN variant {variant!r}")
    n = n_in + 1
    if n < 4:
        raise ValueError("QCNN needs at least 4 qubits including the readout")
    b = _Builder()
    layers = []
    active = list(range(n))
    conv_no = 0
    for block in range(2):
        for _ in range(3):
            conv_no += 1
            start = b.count
            even = [(active[i], active[i + 1]) for i in range(0, len(active) - 1, 2)]
            odd = [(active[i], active[i + 1]) for i in range(1, len(active) - 1, 2)]
            unit = b.new_params(8)
            _conv(b, active, unit, even)
            if odd:
                if variant == "large":
                    unit = b.new_params(8)
                _conv(b, active, unit, odd)
            layers.append(LayerSpec(f"C{conv_no}", "conv", tuple(active), (start, b.count)))
        start = b.count
        (p,) = b.new_params(1)
        kept = []
        for i in range(0, len(active) - 1, 2):
            b.crx(active[i], active[i + 1], p)
            kept.append(active[i + 1])
        if len(active) % 2:
            kept.append(active[-1])
        layers.append(LayerSpec(f"P{block + 1}", "pool", tuple(active), (start, b.count)))
        active = kept
    start = b.count
    for q in active:
        pa, pb = b.new_params(2)
        b.euler(q, pa, pb)
    for a, c in zip(active, active[1:]):
        b.cnot(a, c)
    if variant == "large":
        for q in active:
            pa, pb = b.new_params(2)
            b.euler(q, pa, pb)
    layers.append(LayerSpec("FC", "fc", tuple(active), (start, b.count)))
    return CircuitSpec("qcnn", n_in, tuple(layers), tuple(b.slots), active[-1], b.count, variant=variant)


def build_qcnn(n_in: int, seed: int, variant: str = "small", name: str | None = None) -> ClassifierModel:
    spec = qcnn_spec(n_in, variant)
    meta = {"name": name or f"qcnn-{variant}", "seed": seed}
    return ClassifierModel(spec, _init_params(spec.param_count, seed), metadata=meta)


def build_spec(architecture: str, n_in: int, depth: int | None = None, variant: str | None = None) -> CircuitSpec:
    if architecture == "variational":
        return variational_spec(n_in, int(depth))
    if architecture == "qcnn":
        return qcnn_spec(n_in, variant or "small")
    raise ValueError(f"unknown architecture {architecture!r}")


ROSTER = (
    ("qcnn", "small"),
    ("qcnn", "large"),
    ("variational", 5),
    ("variational", 6),
    ("variational", 7),
    ("variational", 8),
    ("variational", 9),
    ("variational", 10),
)


def build_roster(n_in: int, seed: int, members: Sequence[int] | None = None) -> list[ClassifierModel]:
    """The eight-member ensemble: classifiers 1-2 are QCNNs, 3-8 variational depths 5-10."""
    members = list(members) if members is not None else list(range(1, 9))
    out = []
    for i in members:
        arch, arg = ROSTER[i - 1]
        name = f"classifier-{i}"
        if arch == "qcnn":
            out.append(build_qcnn(n_in, seed + i, variant=arg, name=name))
        else:
            out.append(build_variational_classifier(n_in, arg, seed + i, name=name))
    return out


# --- evaluation -------------------------------------------------------------

def prepare_inputs(amps: np.ndarray, n_in: int) -> np.ndarray:
    """Embed rows of ``amps`` as columns of ``psi_in (x) |1>``."""
    amps = np.atleast_2d(amps)
    if amps.shape[1] != 1 << n_in:
        raise sim.DimensionMismatchError(
            f"inputs have dimension {amps.shape[1]}, model expects {1 << n_in}")
    psi = np.zeros((amps.shape[1] * 2, amps.shape[0]), dtype=complex)
    psi[1::2] = amps.T
    return psi


def run_slots(psi: np.ndarray, slots: Sequence[Slot], params: np.ndarray, n: int) -> np.ndarray:
    for s in slots:
        if s.kind == "CNOT":
            psi = sim.apply_cnot(psi, s.control, s.target, n)
        else:
            psi = sim.apply_rotation(psi, s.kind, s.angle(params), s.target, n)
    return psi


def output_states(model: ClassifierModel, amps: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
    spec = model.spec
    p = model.params if params is None else params
    return run_slots(prepare_inputs(amps, spec.n_in), spec.slots, p, spec.n_qubits)


def forward_batch(model: ClassifierModel, amps: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
    """``(batch, 2)`` array of ``(P(y=0), P(y=1))`` for input rows ``amps``."""
    spec = model.spec
    out = output_states(model, amps, params)
    return sim.qubit_marginals(out, spec.readout_qubit, spec.n_qubits).T


def forward(model: ClassifierModel, state: StateVector) -> np.ndarray:
    if state.n_qubits != model.spec.n_in:
        raise sim.DimensionMismatchError(
            f"model takes {model.spec.n_in} input qubits, state has {state.n_qubits}")
    return forward_batch(model, state.amplitudes[None, :])[0]


def labels_from_probs(probs: np.ndarray) -> np.ndarray:
    """Label 1 wherever ``P(y=1) >= P(y=0)``."""
    probs = np.asarray(probs)
    return (probs[..., 1] >= probs[..., 0]).astype(int)


def predict(model: ClassifierModel, state: StateVector) -> int:
    return int(labels_from_probs(forward(model, state)))


def predict_batch(model: ClassifierModel, amps: np.ndarray) -> np.ndarray:
    return labels_from_probs(forward_batch(model, amps))


def readout_operator(model: ClassifierModel) -> np.ndarray:
    """Hermitian ``M`` on the input space with ``P(y=1 | psi) = <psi|M|psi>``.

    Only valid while the parameters stay frozen; attacks use it to evaluate a
    trained classifier with one matrix-vector product per state.
    """
    spec = model.spec
    d = 1 << spec.n_in
    phi = output_states(model, np.eye(d, dtype=complex))
    n = spec.n_qubits
    r = spec.readout_qubit
    proj = phi.reshape(1 << r, 2, 1 << (n - r - 1), d)[:, 1].reshape(-1, d)
    m = proj.conj().T @ proj
    return 0.5 * (m + m.conj().T)


def probs_from_operator(op: np.ndarray, amps: np.ndarray) -> np.ndarray:
    """``(batch, 2)`` readout probabilities from a precomputed readout operator."""
    amps = np.atleast_2d(amps)
    p1 = np.einsum("bi,bi->b", amps.conj(), amps @ op.T).real
    p1 = np.clip(p1, 0.0, 1.0)
    return np.stack([1.0 - p1, p1], axis=1)
