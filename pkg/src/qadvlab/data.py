"""Datasets: transverse-field Ising ground states and amplitude-encoded images."""
from __future__ import annotations

import gzip
import struct
from functools import lru_cache
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .simulator import StateVector
from .textio import atomic_write_text, parse_scalar

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CRITICAL_WINDOW = (0.95, 1.05)
MAX_CHAIN = 14


class IdxFormatError(ValueError):
    pass


class EncodingError(ValueError):
    pass


class DegenerateGroundStateError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LabeledSample:
    state: StateVector
    label: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


@dataclass(eq=False)
class LabeledDataset:
    samples: list[LabeledSample]
    split: str
    seed: int
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.samples:
            n = {s.state.n_qubits for s in self.samples}
            if len(n) != 1:
                raise ValueError(f"samples disagree on qubit count: {sorted(n)}")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def n_qubits(self) -> int:
        return self.samples[0].state.n_qubits

    def amplitudes(self) -> np.ndarray:
        return np.stack([s.state.amplitudes for s in self.samples])

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=int)

    def subset(self, indices: Sequence[int], split: str | None = None) -> "LabeledDataset":
        return LabeledDataset([self.samples[i] for i in indices], split or self.split, self.seed, dict(self.info))


def as_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    """``(amplitudes, labels)`` from a dataset, a sample list or an array pair."""
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray):
        return np.atleast_2d(batch[0]), np.asarray(batch[1], dtype=int)
    samples = list(batch)
    if not samples:
        raise ValueError("empty batch")
    return (np.stack([s.state.amplitudes for s in samples]),
            np.array([s.label for s in samples], dtype=int))


# --- MNIST IDX --------------------------------------------------------------

def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, expected_magic: int, what: str) -> tuple[tuple[int, ...], bytes]:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise IdxFormatError(f"{what}: truncated header in {path}")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{what}: bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{what}: truncated dimension header in {path}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    body = raw[header:]
    expected = int(np.prod(dims))
    if len(body) != expected:
        raise IdxFormatError(f"{what}: count mismatch, header promises {expected} bytes, file has {len(body)}")
    return dims, body


def load_mnist_idx(images_path, labels_path) -> list[tuple[np.ndarray, int]]:
    """Read an IDX image/label file pair into ``(28x28 uint8 grid, digit)`` pairs."""
    dims, body = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    ldims, lbody = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if ldims[0] != dims[0]:
        raise IdxFormatError(f"count: {dims[0]} images but {ldims[0]} labels")
    images = np.frombuffer(body, dtype=np.uint8).reshape(dims)
    labels = np.frombuffer(lbody, dtype=np.uint8)
    return [(images[i], int(labels[i])) for i in range(dims[0])]


def write_mnist_idx(images: Sequence[np.ndarray], labels: Sequence[int], images_path, labels_path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    rows, cols = images.shape[1:]
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, len(images), rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


def find_mnist(directory) -> tuple[Path, Path] | None:
    """Locate a test or train IDX pair under ``directory`` (plain or gzipped)."""
    if directory is None:
        return None
    d = Path(directory)
    for stem in ("t10k", "train"):
        for sep in ("-", "."):
            for suffix in ("", ".gz"):
                img = d / f"{stem}-images{sep}idx3-ubyte{suffix}"
                lab = d / f"{stem}-labels{sep}idx1-ubyte{suffix}"
                if img.exists() and lab.exists():
                    return img, lab
    return None


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    w = np.zeros((n_out, n_in))
    step = n_in / n_out
    for i in range(n_out):
        lo, hi = i * step, (i + 1) * step
        for j in range(int(np.floor(lo)), min(n_in, int(np.ceil(hi)))):
            w[i, j] = max(0.0, min(hi, j + 1) - max(lo, j))
    return w / step


_W16 = _area_weights(28, 16)


def resize_16(image: np.ndarray) -> np.ndarray:
    """Area-averaged 28x28 -> 16x16 resampling, scaled to [0, 1]."""
    image = np.asarray(image, dtype=float)
    if image.shape != (28, 28):
        raise ValueError(f"expected a 28x28 image, got {image.shape}")
    return _W16 @ (image / 255.0) @ _W16.T


def amplitude_encode(v) -> StateVector:
    """Zero-pad ``v`` to a power-of-two length and normalize it into a state."""
    v = np.asarray(v, dtype=float).reshape(-1)
    norm = np.linalg.norm(v)
    if norm == 0 or not np.isfinite(norm):
        raise EncodingError("cannot amplitude-encode a zero or non-finite vector")
    size = max(2, 1 << int(np.ceil(np.log2(v.size))))
    padded = np.zeros(size)
    padded[: v.size] = v / norm
    return StateVector(padded)


# --- transverse-field Ising chain -------------------------------------------

_SX = sparse.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
_SZ = sparse.csr_matrix(np.array([[1.0, 0.0], [0.0, -1.0]]))


def _site_op(op, i: int, L: int):
    return sparse.kron(sparse.kron(sparse.identity(1 << i), op), sparse.identity(1 << (L - i - 1)), "csr")


def _check_chain(L: int, J_x: float) -> None:
    if not 2 <= L <= MAX_CHAIN:
        raise ValueError(f"chain length L={L} outside [2, {MAX_CHAIN}]")
    if J_x < 0:
        raise ValueError(f"J_x={J_x} must be nonnegative")


@lru_cache(maxsize=None)
def _ising_terms(L: int) -> tuple[np.ndarray, np.ndarray]:
    zz = sum(_site_op(_SZ, i, L) @ _site_op(_SZ, i + 1, L) for i in range(L - 1))
    x = sum(_site_op(_SX, i, L) for i in range(L))
    zz, x = zz.toarray(), x.toarray()
    zz.setflags(write=False)
    x.setflags(write=False)
    return zz, x


def build_ising_hamiltonian(L: int, J_x: float) -> np.ndarray:
    """Dense open-chain ``H = -sum Z_i Z_{i+1} - J_x sum X_i`` (site 1 = qubit 0)."""
    _check_chain(L, J_x)
    zz, x = _ising_terms(L)
    return -zz - J_x * x


def _parity_flip(psi: np.ndarray) -> np.ndarray:
    # prod_i X_i maps basis index b to its bitwise complement
    return psi[::-1]


def ising_ground_state(L: int, J_x: float, degeneracy_tol: float = 1e-9) -> tuple[float, StateVector]:
    """Lowest eigenpair of the Ising chain by dense diagonalization.

    When the two lowest levels are closer than ``degeneracy_tol`` (deep in the
    ordered phase the splitting shrinks like ``J_x**L``) the returned vector is
    the spin-flip-even combination, the limit of the unique ground state.
    The largest-magnitude amplitude is made real and positive.
    """
    _check_chain(L, J_x)
    if J_x == 0:
        raise DegenerateGroundStateError("J_x = 0 has a two-fold degenerate ground state")
    w, v = np.linalg.eigh(build_ising_hamiltonian(L, J_x))
    psi = v[:, 0].astype(complex)
    if w[1] - w[0] < degeneracy_tol:
        even = v[:, 0] + _parity_flip(v[:, 0])
        if np.linalg.norm(even) < 1e-6:
            even = v[:, 1] + _parity_flip(v[:, 1])
        psi = (even / np.linalg.norm(even)).astype(complex)
    k = np.argmax(np.abs(psi))
    psi = psi * (abs(psi[k]) / psi[k])
    return float(w[0]), StateVector(psi, normalize=True)


def free_fermion_ground_energy(L: int, J_x: float) -> float:
    """Ground energy through the Jordan-Wigner / Bogoliubov-de Gennes route.

    After exchanging the X and Z axes the chain reads
    ``-sum X_i X_{i+1} - J_x sum Z_i`` which maps to the quadratic form
    ``sum A_ij c_i^dag c_j + 1/2 sum (B_ij c_i^dag c_j^dag + h.c.) - J_x L``.
    The ground energy is ``1/2 (Tr A + sum of negative BdG eigenvalues) - J_x L``.
    """
    _check_chain(L, J_x)
    a = np.diag(np.full(L, 2.0 * J_x)) - np.eye(L, k=1) - np.eye(L, k=-1)
    b = -np.eye(L, k=1) + np.eye(L, k=-1)
    bdg = np.block([[a, b], [-b, -a]])
    e = np.linalg.eigvalsh(bdg)
    return float(0.5 * (np.trace(a) + e[e < 0].sum()) - J_x * L)


def ising_label(J_x: float) -> int:
    """0 on the ferromagnetic side (J_x < 1), 1 on the paramagnetic side."""
    return int(J_x > 1.0)


def sample_couplings(count: int, rng: np.random.Generator, window=CRITICAL_WINDOW) -> np.ndarray:
    out = []
    while len(out) < count:
        j = rng.uniform(0.0, 2.0)
        if j <= 0.0 or window[0] <= j <= window[1]:
            continue
        out.append(j)
    return np.array(out)


def _ising_split(L, couplings, split, seed) -> LabeledDataset:
    samples = []
    for j in couplings:
        energy, psi = ising_ground_state(L, float(j))
        samples.append(LabeledSample(psi, ising_label(j), {"J_x": float(j), "energy": energy}))
    return LabeledDataset(samples, split, seed, {"task": "ising", "L": L})


def generate_ising_dataset(L: int = 8, n_train: int = 300, n_test: int = 100, seed: int = 0):
    """Ground states with J_x uniform on (0, 2) minus the critical window."""
    if n_train < 1 or n_test < 1:
        raise ValueError("split sizes must be >= 1")
    rng = np.random.default_rng(seed)
    train_j = sample_couplings(n_train, rng)
    test_j = sample_couplings(n_test, rng)
    return _ising_split(L, train_j, "train", seed), _ising_split(L, test_j, "test", seed)


# --- image datasets ---------------------------------------------------------

def _encode_images(pairs, split, seed, info) -> LabeledDataset:
    samples = []
    for image, label, meta in pairs:
        samples.append(LabeledSample(amplitude_encode(resize_16(image)), label, meta))
    return LabeledDataset(samples, split, seed, info)


def _balanced_split(by_class: list[list], n_train: int, n_test: int, rng):
    sizes = {"train": n_train, "test": n_test}
    picks = {}
    for c, pool in enumerate(by_class):
        need = (n_train + 1 - c) // 2 + (n_test + 1 - c) // 2
        if len(pool) < need:
            raise ValueError(f"class {c} has {len(pool)} source images, {need} needed")
        picks[c] = [pool[i] for i in rng.permutation(len(pool))[:need]]
    out = {}
    for split, size in sizes.items():
        rows = []
        for c in (0, 1):
            k = (size + 1 - c) // 2
            rows += [(img, c, meta) for img, meta in picks[c][:k]]
            picks[c] = picks[c][k:]
        out[split] = [rows[i] for i in rng.permutation(len(rows))]
    return out["train"], out["test"]


def build_mnist_dataset(images: list[tuple[np.ndarray, int]], digits=(1, 9), n_train: int = 300,
                        n_test: int = 100, seed: int = 0):
    """Balanced two-digit task; first digit gets label 0."""
    a, b = digits
    if a == b:
        raise ValueError("digits must differ")
    by_class = [[], []]
    for idx, (img, digit) in enumerate(images):
        if digit in (a, b):
            by_class[int(digit == b)].append((img, {"digit": digit, "index": idx}))
    rng = np.random.default_rng(seed)
    train, test = _balanced_split(by_class, n_train, n_test, rng)
    info = {"task": "mnist", "digits": f"{a},{b}"}
    return _encode_images(train, "train", seed, info), _encode_images(test, "test", seed, info)


def synthetic_images(count_per_class: int, seed: int) -> list[tuple[np.ndarray, int]]:
    """Two classes of 28x28 byte images built from axis-aligned Gaussian blobs.

    Class 0 is a tall narrow stroke (a "1"-like shape); class 1 is a round
    blob in the upper half over a short stroke (a "9"-like shape).  Position,
    widths and intensity jitter per image.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:28, 0:28].astype(float)

    def blob(cy, cx, sy, sx):
        return np.exp(-0.5 * (((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2))

    out = []
    for i in range(2 * count_per_class):
        cls = i % 2
        dy, dx = rng.normal(0, 1.2, size=2)
        if cls == 0:
            img = blob(14 + dy, 14 + dx, rng.uniform(6, 8), rng.uniform(1.2, 2.0))
        else:
            img = blob(9 + dy, 14 + dx, rng.uniform(3, 4), rng.uniform(3, 4))
            img = img + 0.8 * blob(19 + dy, 16 + dx, rng.uniform(3, 5), rng.uniform(1.2, 2.0))
        img = img / img.max() * rng.uniform(0.7, 1.0)
        img = img + rng.uniform(0, 0.05, size=img.shape)
        out.append((np.clip(np.round(img * 255), 0, 255).astype(np.uint8), cls))
    return out


def build_synthetic_dataset(n_train: int = 300, n_test: int = 100, seed: int = 0):
    images = synthetic_images((n_train + n_test) // 2 + 2, seed)
    train, test = build_mnist_dataset(images, digits=(0, 1), n_train=n_train, n_test=n_test, seed=seed)
    for ds in (train, test):
        ds.info = {"task": "synthetic"}
    return train, test


# --- dataset cache ----------------------------------------------------------

def _format_meta(meta: dict) -> str:
    return ";".join(f"{k}={meta[k]!r}" if isinstance(meta[k], float) else f"{k}={meta[k]}"
                    for k in sorted(meta))


def _parse_meta(text: str) -> dict:
    out = {}
    for item in filter(None, text.split(";")):
        k, _, v = item.partition("=")
        out[k] = parse_scalar(v)
    return out


def dataset_to_text(ds: LabeledDataset, extra: dict | None = None) -> str:
    header = {"format": "qadvlab-dataset/1", "split": ds.split, "seed": ds.seed,
              "n_samples": len(ds), "n_qubits": ds.n_qubits if len(ds) else 0}
    header.update({f"info.{k}": v for k, v in sorted(ds.info.items())})
    header.update(extra or {})
    lines = [f"{k} = {v}" for k, v in header.items()]
    lines.append("[samples]")
    for s in ds.samples:
        amps = " ".join(f"{z.real:.17e} {z.imag:.17e}" for z in s.state.amplitudes)
        lines.append(f"{s.label}\t{_format_meta(s.meta)}\t{amps}")
    return "\n".join(lines) + "\n"


def dataset_from_text(text: str) -> LabeledDataset:
    head, sep, body = text.partition("[samples]\n")
    if not sep:
        raise DatasetFormatError("samples: missing [samples] section")
    fields = {}
    for line in head.splitlines():
        if line.strip():
            k, eq, v = line.partition(" = ")
            if not eq:
                raise DatasetFormatError(f"header: malformed line {line!r}")
            fields[k] = v
    for key in ("format", "split", "seed", "n_samples"):
        if key not in fields:
            raise DatasetFormatError(f"{key}: missing header field")
    samples = []
    for ln, line in enumerate(body.splitlines()):
        parts = line.split("\t")
        if len(parts) != 3:
            raise DatasetFormatError(f"samples: malformed row {ln}")
        vals = np.array(parts[2].split(), dtype=float)
        amps = vals[0::2] + 1j * vals[1::2]
        samples.append(LabeledSample(StateVector(amps), int(parts[0]), _parse_meta(parts[1])))
    if len(samples) != int(fields["n_samples"]):
        raise DatasetFormatError(f"n_samples: header says {fields['n_samples']}, found {len(samples)}")
    info = {k[5:]: parse_scalar(v) for k, v in fields.items() if k.startswith("info.")}
    return LabeledDataset(samples, fields["split"], int(fields["seed"]), info)


def save_dataset(ds: LabeledDataset, path, extra: dict | None = None) -> None:
    atomic_write_text(path, dataset_to_text(ds, extra))


def load_dataset(path) -> LabeledDataset:
    return dataset_from_text(Path(path).read_text())
