"""Loss, gradients, Adam and the training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import models
from . import simulator as sim
from .data import as_arrays
from .models import ClassifierModel, Slot
from .textio import atomic_write_text, format_scalar, parse_header, parse_scalar, write_csv

GRADIENT_METHODS = ("adjoint", "parameter_shift", "finite_difference")
HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointFormatError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 10
    epochs: int = 30
    seed: int = 0
    prob_floor: float = 1e-12
    gradient: str = "adjoint"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.gradient not in GRADIENT_METHODS:
            raise ValueError(f"unknown gradient method {self.gradient!r}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def rows(self):
        for i in range(len(self)):
            yield (i + 1, self.train_loss[i], self.train_acc[i], self.val_loss[i], self.val_acc[i])

    def to_csv(self, path, extra: dict | None = None) -> None:
        extra = extra or {}
        write_csv(path, HISTORY_COLUMNS + tuple(extra),
                  (row + tuple(extra.values()) for row in self.rows()))


# --- loss -------------------------------------------------------------------

def cross_entropy(probs, label: int, floor: float = 1e-12) -> float:
    """``-ln max(probs[label], floor)`` for a one-hot target."""
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (2,) or np.any(probs < -1e-12) or abs(probs.sum() - 1.0) > 1e-8:
        raise ValueError(f"malformed probability vector {probs!r}")
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    return -math.log(max(float(probs[label]), floor))


def _label_probs(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return probs[np.arange(len(labels)), labels]


def batch_losses(probs: np.ndarray, labels: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    return -np.log(np.maximum(_label_probs(probs, labels), floor))


def empirical_loss(model: ClassifierModel, batch, floor: float = 1e-12, params=None) -> float:
    amps, labels = as_arrays(batch)
    return float(batch_losses(models.forward_batch(model, amps, params), labels, floor).mean())


def _loss_slopes(q: np.ndarray, floor: float) -> np.ndarray:
    """``dL/dq_y``; zero where the floor clamps the logarithm."""
    safe = np.where(q > floor, q, 1.0)
    return np.where(q > floor, -1.0 / safe, 0.0)


# --- gradients --------------------------------------------------------------

def gradient_parameter_shift(model: ClassifierModel, batch, floor: float = 1e-12, params=None) -> np.ndarray:
    """Batch-mean loss gradient from the two-term shift rule.

    Every parameterized gate is shifted by +-pi/2 on its own angle; a
    parameter used by several gates (weight sharing, scaled angles) collects
    ``scale * shift-derivative`` from each of them.
    """
    amps, labels = as_arrays(batch)
    spec = model.spec
    n = spec.n_qubits
    p = model.params if params is None else np.asarray(params, dtype=float)
    rows = np.arange(len(labels))
    base = models.forward_batch(model, amps, p)
    slopes = _loss_slopes(base[rows, labels], floor)
    grad = np.zeros(spec.param_count)
    psi = models.prepare_inputs(amps, spec.n_in)
    for g, s in enumerate(spec.slots):
        if s.param is not None:
            angle = s.angle(p)
            shifted = []
            for sign in (1.0, -1.0):
                out = sim.apply_rotation(psi, s.kind, angle + sign * np.pi / 2, s.target, n)
                out = models.run_slots(out, spec.slots[g + 1:], p, n)
                shifted.append(sim.qubit_marginals(out, spec.readout_qubit, n).T[rows, labels])
            dq = 0.5 * (shifted[0] - shifted[1])
            grad[s.param] += s.scale * np.mean(slopes * dq)
        psi = models.run_slots(psi, (s,), p, n)
    return grad


def gradient_finite_difference(model: ClassifierModel, batch, h: float = 1e-5, floor: float = 1e-12,
                               params=None) -> np.ndarray:
    """Central differences of the batch-mean loss, one parameter at a time."""
    if h <= 0:
        raise ValueError("h must be positive")
    p = model.params if params is None else np.asarray(params, dtype=float)
    amps, labels = as_arrays(batch)
    grad = np.zeros(p.size)
    for i in range(p.size):
        up, down = p.copy(), p.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (empirical_loss(model, (amps, labels), floor, up)
                   - empirical_loss(model, (amps, labels), floor, down)) / (2 * h)
    return grad


_GENERATOR = {"RX": "X", "RZ": "Z"}


def gradient_adjoint(model: ClassifierModel, batch, floor: float = 1e-12, params=None,
                     return_loss: bool = False):
    """Exact reverse-mode gradient of the batch-mean loss.

    One forward sweep, then a backward sweep that un-applies each gate to the
    state and to the weighted co-state ``sum_b w_b P_{y_b} |phi_b>``.  For a
    rotation ``exp(-i a P/2)`` the derivative is ``Im <lambda|P|phi>``.
    """
    amps, labels = as_arrays(batch)
    spec = model.spec
    n, r = spec.n_qubits, spec.readout_qubit
    p = model.params if params is None else np.asarray(params, dtype=float)
    batch_size = len(labels)
    phi = models.run_slots(models.prepare_inputs(amps, spec.n_in), spec.slots, p, n)
    probs = sim.qubit_marginals(phi, r, n).T
    q = _label_probs(probs, labels)
    weights = _loss_slopes(q, floor) / batch_size
    lam = phi.reshape(1 << r, 2, 1 << (n - r - 1), batch_size).copy()
    lam[:, 1 - labels, :, np.arange(batch_size)] = 0.0
    lam = lam.reshape(phi.shape) * weights[None, :]
    grad = np.zeros(spec.param_count)
    for s in reversed(spec.slots):
        if s.kind == "CNOT":
            phi = sim.apply_cnot(phi, s.control, s.target, n)
            lam = sim.apply_cnot(lam, s.control, s.target, n)
            continue
        if s.param is not None:
            grad[s.param] += s.scale * np.vdot(lam, sim.apply_pauli(phi, _GENERATOR[s.kind], s.target, n)).imag
        a = -s.angle(p)
        phi = sim.apply_rotation(phi, s.kind, a, s.target, n)
        lam = sim.apply_rotation(lam, s.kind, a, s.target, n)
    if return_loss:
        return grad, float(np.mean(-np.log(np.maximum(q, floor))))
    return grad


def compute_gradient(model, batch, method: str = "adjoint", floor: float = 1e-12, params=None):
    if method == "adjoint":
        return gradient_adjoint(model, batch, floor, params)
    if method == "parameter_shift":
        return gradient_parameter_shift(model, batch, floor, params)
    if method == "finite_difference":
        return gradient_finite_difference(model, batch, floor=floor, params=params)
    raise ValueError(f"unknown gradient method {method!r}")


# --- optimizer and loop -----------------------------------------------------

def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(f"length mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    t = state.t + 1
    m = config.beta1 * state.m + (1 - config.beta1) * grads
    v = config.beta2 * state.v + (1 - config.beta2) * grads * grads
    m_hat = m / (1 - config.beta1 ** t)
    v_hat = v / (1 - config.beta2 ** t)
    new = params - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
    return new, AdamState(m, v, t)


def _scores(model, amps, labels, floor, params=None) -> tuple[float, float]:
    probs = models.forward_batch(model, amps, params)
    acc = float(np.mean(models.labels_from_probs(probs) == labels))
    return acc, float(batch_losses(probs, labels, floor).mean())


def evaluate(model: ClassifierModel, dataset, floor: float = 1e-12) -> tuple[float, float]:
    """``(accuracy, mean cross-entropy)`` over a dataset."""
    amps, labels = as_arrays(dataset)
    return _scores(model, amps, labels, floor)


def train(model: ClassifierModel, train_set, val_set, config: TrainConfig, log=None):
    """Mini-batch Adam; returns the best-validation-accuracy model and the history.

    Ties in validation accuracy go to the lower validation loss.
    """
    amps, labels = as_arrays(train_set)
    vamps, vlabels = as_arrays(val_set)
    d = 1 << model.spec.n_in
    if amps.shape[1] != d or vamps.shape[1] != d:
        raise sim.DimensionMismatchError("dataset qubit count does not match the model")
    history = TrainHistory()
    if config.epochs == 0:
        return model, history
    rng = np.random.default_rng(config.seed)
    params = model.params.copy()
    state = AdamState.zeros(params.size)
    best = (-1.0, math.inf, params, 0)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(labels))
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            grad = compute_gradient(model, (amps[idx], labels[idx]), config.gradient,
                                    config.prob_floor, params)
            if not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(f"{model.name}: non-finite gradient in epoch {epoch}")
            params, state = adam_step(params, grad, state, config)
        tr_acc, tr_loss = _scores(model, amps, labels, config.prob_floor, params)
        va_acc, va_loss = _scores(model, vamps, vlabels, config.prob_floor, params)
        if not (math.isfinite(tr_loss) and math.isfinite(va_loss)):
            raise TrainingDivergedError(f"{model.name}: non-finite loss in epoch {epoch}")
        history.train_loss.append(tr_loss)
        history.train_acc.append(tr_acc)
        history.val_loss.append(va_loss)
        history.val_acc.append(va_acc)
        if va_acc > best[0] or (va_acc == best[0] and va_loss < best[1]):
            best = (va_acc, va_loss, params.copy(), epoch)
        if log is not None:
            log(f"{model.name} epoch {epoch}: loss {tr_loss:.4f} acc {tr_acc:.3f} "
                f"val_loss {va_loss:.4f} val_acc {va_acc:.3f}")
    trained = model.with_params(best[2], epochs=config.epochs, best_epoch=best[3])
    return trained, history


# --- checkpoints ------------------------------------------------------------

CHECKPOINT_FORMAT = "qadvlab-checkpoint/1"


def checkpoint_text(model: ClassifierModel) -> str:
    spec = model.spec
    fields = {
        "format": CHECKPOINT_FORMAT,
        "architecture": spec.architecture,
        "n_in": spec.n_in,
        "depth": spec.depth if spec.depth is not None else "",
        "variant": spec.variant or "",
        "label_set_size": model.label_set_size,
        "param_count": spec.param_count,
    }
    fields.update({f"meta.{k}": v for k, v in sorted(model.metadata.items())})
    lines = [f"{k} = {format_scalar(v)}" for k, v in fields.items()]
    lines.append("[params]")
    lines += [f"{x:.17e}" for x in model.params]
    return "\n".join(lines) + "\n"


def save_checkpoint(model: ClassifierModel, path) -> None:
    atomic_write_text(path, checkpoint_text(model))


def parse_checkpoint(text: str, where: str = "checkpoint") -> ClassifierModel:
    head, sep, body = text.partition("[params]\n")
    if not sep:
        raise CheckpointFormatError(f"params: missing [params] section in {where}")
    try:
        fields = parse_header(head.splitlines(), where)
    except ValueError as exc:
        raise CheckpointFormatError(str(exc)) from None
    for key in ("format", "architecture", "n_in", "param_count"):
        if key not in fields:
            raise CheckpointFormatError(f"{key}: missing field in {where}")
    if fields["format"] != CHECKPOINT_FORMAT:
        raise CheckpointFormatError(f"format: unsupported {fields['format']!r}")
    try:
        spec = models.build_spec(fields["architecture"], int(fields["n_in"]),
                                 depth=parse_scalar(fields.get("depth", "")) or None,
                                 variant=fields.get("variant") or None)
    except (ValueError, TypeError) as exc:
        raise CheckpointFormatError(f"architecture: {exc}") from None
    count = int(fields["param_count"])
    if count != spec.param_count:
        raise CheckpointFormatError(f"param_count: file says {count}, architecture implies {spec.param_count}")
    try:
        params = np.array([float(x) for x in body.split()])
    except ValueError:
        raise CheckpointFormatError(f"params: non-numeric entry in {where}") from None
    if params.size != count:
        raise CheckpointFormatError(f"params: expected {count} values, found {params.size}")
    meta = {k[5:]: parse_scalar(v) for k, v in fields.items() if k.startswith("meta.")}
    return ClassifierModel(spec, params, int(fields.get("label_set_size", 2)), meta)


def load_checkpoint(path) -> ClassifierModel:
    return parse_checkpoint(Path(path).read_text(encoding="utf-8"), str(path))
