"""Adversarial attacks on frozen classifiers.

Frozen classifiers are compiled to their readout operator ``M`` so that the
label probability is the quadratic form ``<psi|M|psi>``; the loss gradient
with respect to the amplitudes is then exact and costs one matrix product.

Perturbation strength is the pure-state trace distance
``sqrt(1 - |<clean|adv>|^2)`` throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import models
from . import simulator as sim
from .data import LabeledDataset, as_arrays
from .models import ClassifierModel
from .simulator import StateVector
from .textio import format_scalar, parse_header, parse_scalar, write_csv

MODES = ("white_box", "transfer")
RISK_COLUMNS = ("epsilon", "risk", "mean_fidelity", "n_samples", "seed")


@dataclass
class AttackConfig:
    step_alpha: float = 0.02
    epsilon_budget: float = 0.18
    max_iters: int = 100
    mode: str = "white_box"
    seed: int = 0
    sample_size: int | None = None
    prob_floor: float = 1e-12
    max_halvings: int = 12

    def __post_init__(self):
        if self.step_alpha <= 0:
            raise ValueError("step_alpha must be positive")
        if self.epsilon_budget < 0:
            raise ValueError("epsilon_budget must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True, eq=False)
class FrozenClassifier:
    name: str
    n_in: int
    operator: np.ndarray

    @classmethod
    def from_model(cls, model: ClassifierModel) -> "FrozenClassifier":
        return cls(model.name, model.spec.n_in, models.readout_operator(model))

    def probs(self, amps: np.ndarray) -> np.ndarray:
        return models.probs_from_operator(self.operator, amps)


def freeze(classifiers) -> list[FrozenClassifier]:
    if isinstance(classifiers, (ClassifierModel, FrozenClassifier)):
        classifiers = [classifiers]
    out = [c if isinstance(c, FrozenClassifier) else FrozenClassifier.from_model(c) for c in classifiers]
    if not out:
        raise ValueError("at least one classifier is required")
    if len({c.n_in for c in out}) != 1:
        raise ValueError("classifiers disagree on input dimension")
    return out


def _losses(clf: FrozenClassifier, amps, labels, floor):
    p = clf.probs(amps)
    q = p[np.arange(len(labels)), labels]
    return -np.log(np.maximum(q, floor)), p


def _loss_grad(clf: FrozenClassifier, amps, labels, floor):
    """Wirtinger gradient ``dL/d conj(psi)`` for each row."""
    m_psi = amps @ clf.operator.T
    p1 = np.einsum("bi,bi->b", amps.conj(), m_psi).real
    q = np.where(labels == 1, p1, 1.0 - p1)
    sign = np.where(labels == 1, 1.0, -1.0)
    slope = np.where(q > floor, -sign / np.maximum(q, floor), 0.0)
    return slope[:, None] * m_psi


def _fooled(frozen, amps, labels) -> np.ndarray:
    """``(batch, k)`` boolean mask of misclassification per classifier."""
    return np.stack([models.labels_from_probs(c.probs(amps)) != labels for c in frozen], axis=1)


def _overlaps(clean, amps):
    return np.einsum("bi,bi->b", clean.conj(), amps)


def trace_distances(clean: np.ndarray, amps: np.ndarray) -> np.ndarray:
    return np.sqrt(np.clip(1.0 - np.abs(_overlaps(clean, amps)) ** 2, 0.0, None))


def project_to_budget(clean: np.ndarray, amps: np.ndarray, epsilon: float) -> np.ndarray:
    """Pull rows farther than ``epsilon`` back along the geodesic to the budget sphere."""
    ov = _overlaps(clean, amps)
    c = np.abs(ov)
    over = np.sqrt(np.clip(1.0 - c ** 2, 0.0, None)) > epsilon
    if not np.any(over):
        return amps
    out = amps.copy()
    phase = np.where(c[over] > 0, ov[over] / np.where(c[over] > 0, c[over], 1.0), 1.0)
    aligned = amps[over] * phase.conj()[:, None]
    perp = aligned - c[over][:, None] * clean[over]
    perp /= np.linalg.norm(perp, axis=1, keepdims=True)
    moved = np.sqrt(1.0 - epsilon ** 2) * clean[over] + epsilon * perp
    out[over] = moved * phase[:, None]
    return out


def _qbim(frozen, clean, labels, config: AttackConfig, start=None):
    """Batched qBIM core; returns ``(adversarial rows, iterations used)``."""
    eps = config.epsilon_budget
    amps = clean.copy() if start is None else project_to_budget(clean, np.array(start, dtype=complex), eps)
    iters = np.zeros(len(labels), dtype=int)
    if config.max_iters == 0 or eps == 0:
        return clean.copy() if eps == 0 else amps, iters
    active = np.ones(len(labels), dtype=bool)
    for _ in range(config.max_iters):
        done = _fooled(frozen, amps, labels).all(axis=1) & (trace_distances(clean, amps) >= eps - 1e-9)
        active &= ~done
        if not active.any():
            break
        a = amps[active]
        g = sum(_loss_grad(c, a, labels[active], config.prob_floor) for c in frozen)
        g -= np.einsum("bi,bi->b", a.conj(), g)[:, None] * a
        norm = np.linalg.norm(g, axis=1)
        if not np.all(np.isfinite(norm)):
            raise FloatingPointError("non-finite loss gradient during qBIM")
        moving = norm > 0
        step = np.zeros_like(a)
        step[moving] = g[moving] / norm[moving, None]
        a = a + config.step_alpha * step
        a /= np.linalg.norm(a, axis=1, keepdims=True)
        amps[active] = project_to_budget(clean[active], a, eps)
        iters[active] += 1
    return amps, iters


@dataclass
class SampleRecord:
    index: int
    label: int
    initial_loss: np.ndarray
    final_loss: np.ndarray
    fooled: np.ndarray
    fidelity: float
    iterations: int

    @property
    def universal(self) -> bool:
        return bool(np.all(self.fooled))

    @property
    def trace_distance(self) -> float:
        return float(np.sqrt(max(0.0, 1.0 - self.fidelity)))


@dataclass
class AttackReport:
    kind: str
    epsilon: float
    seed: int
    model_names: list[str]
    records: list[SampleRecord]
    adversarial: np.ndarray | None = field(default=None, repr=False)
    info: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return len(self.records)

    @property
    def risk(self) -> float:
        """Fraction of samples misclassified by every listed classifier."""
        return float(np.mean([r.universal for r in self.records])) if self.records else 0.0

    @property
    def mean_fidelity(self) -> float:
        """Mean squared overlap of the successful universal examples (nan if none)."""
        f = [r.fidelity for r in self.records if r.universal]
        return float(np.mean(f)) if f else float("nan")

    @property
    def mean_fidelity_all(self) -> float:
        return float(np.mean([r.fidelity for r in self.records])) if self.records else float("nan")

    def fooled_matrix(self) -> np.ndarray:
        return np.array([r.fooled for r in self.records], dtype=bool)


def _records(frozen, clean, adv, labels, indices, iters, floor):
    init = np.stack([_losses(c, clean, labels, floor)[0] for c in frozen], axis=1)
    final = np.stack([_losses(c, adv, labels, floor)[0] for c in frozen], axis=1)
    fooled = _fooled(frozen, adv, labels)
    fid = np.clip(np.abs(_overlaps(clean, adv)) ** 2, 0.0, 1.0)
    return [SampleRecord(int(indices[i]), int(labels[i]), init[i], final[i], fooled[i],
                         float(fid[i]), int(iters[i])) for i in range(len(labels))]


def _select(test_set, config: AttackConfig):
    amps, labels = as_arrays(test_set)
    idx = np.arange(len(labels))
    if config.sample_size is not None and config.sample_size < len(labels):
        rng = np.random.default_rng(config.seed)
        idx = np.sort(rng.choice(len(labels), size=config.sample_size, replace=False))
    return amps[idx], labels[idx], idx


def qbim_state_attack(classifiers, sample, config: AttackConfig, start: StateVector | None = None):
    """Perturb one state to maximize the summed loss of ``classifiers``.

    Each iteration steps ``step_alpha`` along the normalized tangent gradient,
    renormalizes, and projects back onto the trace-distance ball of radius
    ``epsilon_budget``.  Iteration stops once every classifier misclassifies
    a state on the budget sphere, or after ``max_iters``.
    """
    frozen = freeze(classifiers)
    if sample.state.n_qubits != frozen[0].n_in:
        raise sim.DimensionMismatchError("sample and classifiers disagree on qubit count")
    clean = sample.state.amplitudes[None, :].copy()
    labels = np.array([sample.label])
    st = None if start is None else start.amplitudes[None, :]
    adv, iters = _qbim(frozen, clean, labels, config, st)
    record = _records(frozen, clean, adv, labels, [0], iters, config.prob_floor)[0]
    return StateVector(adv[0], normalize=True), record


def universal_example_search(classifiers, test_set, config: AttackConfig, start=None) -> AttackReport:
    """Per-sample qBIM on the summed loss; risk = fraction fooling every classifier."""
    frozen = freeze(classifiers)
    clean, labels, idx = _select(test_set, config)
    adv, iters = _qbim(frozen, clean, labels, config, start)
    recs = _records(frozen, clean, adv, labels, idx, iters, config.prob_floor)
    return AttackReport("universal-example", config.epsilon_budget, config.seed,
                        [c.name for c in frozen], recs, adv)


def risk_curve(classifiers, test_set, epsilon_grid: Sequence[float], config: AttackConfig):
    """Universal risk over an ascending epsilon grid.

    Each budget warm-starts from the previous budget's adversarial states, and
    a sample already fooled by all classifiers keeps its earlier state when the
    new run does not fool them all, so the curve is non-decreasing exactly.
    Returns ``(rows, reports)`` with rows ``(epsilon, risk, mean_fidelity,
    n_samples, seed)``.
    """
    grid = [float(e) for e in epsilon_grid]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("epsilon grid must be ascending")
    frozen = freeze(classifiers)
    clean, labels, idx = _select(test_set, config)
    rows, reports = [], []
    prev = None
    prev_fooled = np.zeros(len(labels), dtype=bool)
    for eps in grid:
        cfg = AttackConfig(**{**config.__dict__, "epsilon_budget": eps})
        adv, iters = _qbim(frozen, clean, labels, cfg, prev)
        now = _fooled(frozen, adv, labels).all(axis=1)
        keep = prev_fooled & ~now
        if keep.any():
            adv[keep] = prev[keep]
        recs = _records(frozen, clean, adv, labels, idx, iters, cfg.prob_floor)
        rep = AttackReport("universal-example", eps, config.seed, [c.name for c in frozen], recs, adv)
        reports.append(rep)
        rows.append((eps, rep.risk, rep.mean_fidelity, rep.n_samples, config.seed))
        prev, prev_fooled = adv, now | keep
    return rows, reports


def transfer_attack_eval(surrogate, targets, test_set, config: AttackConfig,
                         epsilon_grid: Sequence[float] | None = None):
    """Craft against ``surrogate`` alone, score the joint fooling rate on ``targets``.

    Returns one report per budget (a single-element list when no grid is given).
    """
    (sur,) = freeze([surrogate])
    tgt = freeze(targets)
    clean, labels, idx = _select(test_set, config)
    grid = [config.epsilon_budget] if epsilon_grid is None else [float(e) for e in epsilon_grid]
    reports = []
    for eps in grid:
        cfg = AttackConfig(**{**config.__dict__, "epsilon_budget": eps, "mode": "transfer"})
        adv, iters = _qbim([sur], clean, labels, cfg)
        recs = _records(tgt, clean, adv, labels, idx, iters, cfg.prob_floor)
        reports.append(AttackReport("transfer", eps, config.seed, [c.name for c in tgt], recs, adv,
                                    {"surrogate": sur.name}))
    return reports


# --- universal perturbations ------------------------------------------------

@dataclass(frozen=True, eq=False)
class PerturbationLayer:
    """Per-qubit Euler rotations ``Z(gamma) X(beta) Z(alpha)``; angles stored as (alpha, beta, gamma) per qubit."""

    n_qubits: int
    angles: np.ndarray

    def __post_init__(self):
        a = np.array(self.angles, dtype=float).reshape(-1)
        if a.size != 3 * self.n_qubits:
            raise ValueError(f"expected {3 * self.n_qubits} angles, got {a.size}")
        a.setflags(write=False)
        object.__setattr__(self, "angles", a)

    @classmethod
    def identity(cls, n_qubits: int) -> "PerturbationLayer":
        return cls(n_qubits, np.zeros(3 * n_qubits))

    def gates(self) -> list[sim.GateOp]:
        out = []
        for q in range(self.n_qubits):
            a, b, c = self.angles[3 * q: 3 * q + 3]
            out += [sim.GateOp("RZ", q, angle=a), sim.GateOp("RX", q, angle=b), sim.GateOp("RZ", q, angle=c)]
        return out

    def inverse_gates(self) -> list[sim.GateOp]:
        return [g.inverse() for g in reversed(self.gates())]

    def apply(self, amps: np.ndarray, angles: np.ndarray | None = None) -> np.ndarray:
        """Apply the layer to each row of ``amps``."""
        ang = self.angles if angles is None else angles
        n = self.n_qubits
        psi = np.atleast_2d(amps).T
        for q in range(n):
            for j, kind in enumerate(("RZ", "RX", "RZ")):
                psi = sim.apply_rotation(psi, kind, ang[3 * q + j], q, n)
        return psi.T

    def apply_state(self, state: StateVector) -> StateVector:
        return StateVector(self.apply(state.amplitudes[None, :])[0], normalize=True)

    @property
    def is_identity(self) -> bool:
        return not np.any(np.mod(self.angles, 4 * np.pi))


def _mean_loss(clf, amps, labels, floor):
    loss, p = _losses(clf, amps, labels, floor)
    acc = float(np.mean(models.labels_from_probs(p) == labels))
    return float(loss.mean()), acc


def _layer_shift_gradient(layer, clf, amps, labels, angles, floor):
    """Shift-rule gradient of the mean loss over the layer angles."""
    base = clf.probs(layer.apply(amps, angles))
    rows = np.arange(len(labels))
    q = base[rows, labels]
    slopes = np.where(q > floor, -1.0 / np.maximum(q, floor), 0.0)
    grad = np.zeros(angles.size)
    for j in range(angles.size):
        shifted = []
        for sign in (1.0, -1.0):
            a = angles.copy()
            a[j] += sign * np.pi / 2
            shifted.append(clf.probs(layer.apply(amps, a))[rows, labels])
        grad[j] = np.mean(slopes * 0.5 * (shifted[0] - shifted[1]))
    return grad


def universal_perturbation_search(classifier, test_set, config: AttackConfig):
    """Ascend the mean test loss over one shared local-unitary layer.

    Steps of length ``step_alpha`` follow the normalized shift-rule gradient; a
    step that lowers the loss is halved and retried, so accepted losses never
    decrease.  The search ends after ``max_iters`` steps, when no halving
    helps, or when the mean trace distance the layer induces would exceed
    ``epsilon_budget``.

    Returns ``(layer, report, trajectory)`` where trajectory rows are
    ``(iteration, epsilon_proxy, loss, accuracy)``.
    """
    (clf,) = freeze([classifier])
    clean, labels, idx = _select(test_set, config)
    layer = PerturbationLayer.identity(clf.n_in)
    angles = layer.angles.copy()
    loss, acc = _mean_loss(clf, clean, labels, config.prob_floor)
    trajectory = [(0, 0.0, loss, acc)]
    for it in range(1, config.max_iters + 1):
        g = _layer_shift_gradient(layer, clf, clean, labels, angles, config.prob_floor)
        norm = np.linalg.norm(g)
        if not np.isfinite(norm):
            raise FloatingPointError("non-finite gradient in perturbation search")
        if norm == 0:
            break
        step = config.step_alpha
        accepted = None
        for _ in range(config.max_halvings + 1):
            cand = angles + step * g / norm
            c_loss, c_acc = _mean_loss(clf, layer.apply(clean, cand), labels, config.prob_floor)
            if c_loss >= loss:
                accepted = (cand, c_loss, c_acc)
                break
            step /= 2
        if accepted is None:
            break
        cand, c_loss, c_acc = accepted
        eps_proxy = float(trace_distances(clean, layer.apply(clean, cand)).mean())
        if eps_proxy > config.epsilon_budget:
            break
        angles, loss, acc = cand, c_loss, c_acc
        trajectory.append((it, eps_proxy, loss, acc))
    layer = PerturbationLayer(clf.n_in, angles)
    adv = layer.apply(clean)
    iters = np.full(len(labels), len(trajectory) - 1)
    recs = _records([clf], clean, adv, labels, idx, iters, config.prob_floor)
    report = AttackReport("universal-perturbation", trajectory[-1][1], config.seed, [clf.name], recs, adv,
                          {"final_loss": loss, "final_accuracy": acc})
    return layer, report, trajectory


# --- error rates ------------------------------------------------------------

def _truth_labels(truth, amps: np.ndarray) -> np.ndarray:
    if isinstance(truth, (ClassifierModel, FrozenClassifier)):
        (t,) = freeze([truth])
        return models.labels_from_probs(t.probs(amps))
    if callable(truth):
        return np.asarray(truth(amps), dtype=int)
    return np.full(len(amps), int(truth), dtype=int)


def empirical_error_rate(classifier, layer: PerturbationLayer | None, samples, truth=None) -> float:
    """Fraction of samples misclassified after the layer acts on them.

    ``samples`` is a dataset (its labels are the truth) or an array of rows;
    ``truth`` overrides the labels with a function of the perturbed state
    (a classifier, a callable on amplitude rows, or a constant label).
    """
    (clf,) = freeze([classifier])
    if isinstance(samples, np.ndarray):
        amps, labels = np.atleast_2d(samples), None
    else:
        amps, labels = as_arrays(samples)
    if len(amps) == 0:
        raise ValueError("no samples")
    moved = amps if layer is None else layer.apply(amps)
    if truth is not None:
        labels = _truth_labels(truth, moved)
    elif labels is None:
        raise ValueError("raw amplitude rows need a truth labelling")
    return float(np.mean(models.labels_from_probs(clf.probs(moved)) != labels))


def haar_error_rate(classifier, layer: PerturbationLayer | None, n_samples: int, seed: int,
                    truth=0, chunk: int = 4096) -> tuple[float, float]:
    """Monte-Carlo risk on Haar-random inputs: ``(rate, binomial standard error)``."""
    (clf,) = freeze([classifier])
    rng = np.random.default_rng(seed)
    wrong = 0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        amps = sim.haar_random_amplitudes(clf.n_in, m, rng)
        wrong += empirical_error_rate(clf, layer, amps, truth) * m
        done += m
    rate = wrong / n_samples
    return float(rate), float(np.sqrt(max(rate * (1 - rate), 0.0) / n_samples))


# --- serialization ----------------------------------------------------------

REPORT_FORMAT = "qadvlab-attack-report/1"
_SAMPLE_COLUMNS = ("index", "label", "fooled", "fidelity", "iterations", "initial_loss", "final_loss")


def report_to_text(report: AttackReport, extra: dict | None = None) -> str:
    head = {"format": REPORT_FORMAT, "kind": report.kind, "epsilon": report.epsilon,
            "seed": report.seed, "models": ",".join(report.model_names),
            "n_samples": report.n_samples, "risk": report.risk,
            "mean_fidelity": report.mean_fidelity}
    head.update({f"info.{k}": v for k, v in sorted(report.info.items())})
    head.update(extra or {})
    lines = [f"{k} = {format_scalar(v)}" for k, v in head.items()]
    lines.append("[samples]")
    lines.append("\t".join(_SAMPLE_COLUMNS))
    for r in report.records:
        lines.append("\t".join([
            str(r.index), str(r.label), "".join("1" if f else "0" for f in r.fooled),
            repr(r.fidelity), str(r.iterations),
            ",".join(repr(float(x)) for x in r.initial_loss),
            ",".join(repr(float(x)) for x in r.final_loss)]))
    return "\n".join(lines) + "\n"


def report_from_text(text: str) -> AttackReport:
    head, sep, body = text.partition("[samples]\n")
    if not sep:
        raise ValueError("samples: missing [samples] section")
    fields = parse_header(head.splitlines(), "attack report")
    if fields.get("format") != REPORT_FORMAT:
        raise ValueError(f"format: unsupported {fields.get('format')!r}")
    rows = body.splitlines()[1:]
    recs = []
    for row in rows:
        i, lab, fooled, fid, iters, init, final = row.split("\t")
        recs.append(SampleRecord(int(i), int(lab), np.array(init.split(","), dtype=float),
                                 np.array(final.split(","), dtype=float),
                                 np.array([c == "1" for c in fooled]), float(fid), int(iters)))
    info = {k[5:]: parse_scalar(v) for k, v in fields.items() if k.startswith("info.")}
    return AttackReport(fields["kind"], float(fields["epsilon"]), int(fields["seed"]),
                        fields["models"].split(","), recs, None, info)


def write_risk_csv(path, rows, extra: dict | None = None) -> None:
    extra = extra or {}
    write_csv(path, RISK_COLUMNS + tuple(extra), (tuple(r) + tuple(extra.values()) for r in rows))
