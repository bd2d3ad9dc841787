import gzip
import struct
from itertools import product

import numpy as np
import pytest

from qadvlab import data, simulator as sim
from qadvlab.data import LabeledSample


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, size=(2, 28, 28), dtype=np.uint8)
    data.write_mnist_idx(imgs, [1, 9], tmp_path / "i", tmp_path / "l")
    back = data.load_mnist_idx(tmp_path / "i", tmp_path / "l")
    assert [lab for _, lab in back] == [1, 9]
    for (img, _), ref in zip(back, imgs):
        np.testing.assert_array_equal(img, ref)


def test_idx_gzip_and_discovery(tmp_path):
    imgs = np.zeros((3, 28, 28), dtype=np.uint8)
    data.write_mnist_idx(imgs, [1, 9, 1], tmp_path / "a", tmp_path / "b")
    for src, dst in (("a", "t10k-images-idx3-ubyte.gz"), ("b", "t10k-labels-idx1-ubyte.gz")):
        with gzip.open(tmp_path / dst, "wb") as fh:
            fh.write((tmp_path / src).read_bytes())
    found = data.find_mnist(tmp_path)
    assert found is not None
    assert len(data.load_mnist_idx(*found)) == 3
    assert data.find_mnist(tmp_path / "nowhere") is None


def test_idx_wrong_magic(tmp_path):
    imgs = np.zeros((1, 28, 28), dtype=np.uint8)
    data.write_mnist_idx(imgs, [1], tmp_path / "i", tmp_path / "l")
    with pytest.raises(data.IdxFormatError, match="magic"):
        data.load_mnist_idx(tmp_path / "l", tmp_path / "i")


def test_idx_truncated_and_count_mismatch(tmp_path):
    imgs = np.zeros((2, 28, 28), dtype=np.uint8)
    data.write_mnist_idx(imgs, [1, 9], tmp_path / "i", tmp_path / "l")
    raw = (tmp_path / "i").read_bytes()
    (tmp_path / "t").write_bytes(raw[:-10])
    with pytest.raises(data.IdxFormatError):
        data.load_mnist_idx(tmp_path / "t", tmp_path / "l")
    (tmp_path / "l3").write_bytes(struct.pack(">II", 0x801, 3) + bytes([1, 9, 1]))
    with pytest.raises(data.IdxFormatError, match="count"):
        data.load_mnist_idx(tmp_path / "i", tmp_path / "l3")


def test_resize_constant_zero_and_mass():
    np.testing.assert_allclose(data.resize_16(np.full((28, 28), 200)), 200 / 255, atol=1e-12)
    np.testing.assert_array_equal(data.resize_16(np.zeros((28, 28))), 0)
    img = np.zeros((28, 28))
    img[13, 5] = 255
    assert data.resize_16(img).sum() == pytest.approx(256 / 784, abs=1e-9)
    with pytest.raises(ValueError):
        data.resize_16(np.zeros((16, 16)))


def test_resize_weights_are_overlap_fractions():
    w = data._area_weights(28, 16)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
    assert w[0, 0] == pytest.approx(1 / 1.75)
    assert w[0, 1] == pytest.approx(0.75 / 1.75)


def test_amplitude_encode_examples():
    np.testing.assert_allclose(data.amplitude_encode([1, 0, 0, 0]).amplitudes, [1, 0, 0, 0])
    np.testing.assert_allclose(data.amplitude_encode([1, 1, 1, 1]).amplitudes, [0.5] * 4)
    s = data.amplitude_encode([1, 2, 3, 4, 5, 6])
    assert s.n_qubits == 3
    np.testing.assert_allclose(s.amplitudes[:6], np.arange(1, 7) / np.sqrt(91), atol=1e-15)
    np.testing.assert_array_equal(s.amplitudes[6:], 0)
    with pytest.raises(data.EncodingError):
        data.amplitude_encode(np.zeros(5))


def test_hamiltonian_small_cases():
    np.testing.assert_allclose(data.build_ising_hamiltonian(2, 0.0), np.diag([-1, 1, 1, -1]))
    h = data.build_ising_hamiltonian(5, 0.7)
    np.testing.assert_allclose(h, h.conj().T, atol=1e-12)
    with pytest.raises(ValueError):
        data.build_ising_hamiltonian(1, 0.5)
    with pytest.raises(ValueError):
        data.build_ising_hamiltonian(4, -0.1)


def test_ground_state_paramagnetic_limit():
    _, psi = data.ising_ground_state(4, 50.0)
    plus = np.full(16, 0.25)
    assert abs(np.vdot(plus, psi.amplitudes)) ** 2 > 0.999


def test_ground_state_is_eigenpair_and_parity_even():
    for L, J in ((3, 0.4), (6, 1.3), (8, 0.05), (8, 1.9)):
        e, psi = data.ising_ground_state(L, J)
        h = data.build_ising_hamiltonian(L, J)
        assert np.linalg.norm(h @ psi.amplitudes - e * psi.amplitudes) < 1e-8
        parity = np.vdot(psi.amplitudes, psi.amplitudes[::-1]).real
        assert abs(abs(parity) - 1) < 1e-8
        k = np.argmax(np.abs(psi.amplitudes))
        assert psi.amplitudes[k].imag == 0 and psi.amplitudes[k].real > 0


def test_ground_state_rejects_zero_field():
    with pytest.raises(data.DegenerateGroundStateError):
        data.ising_ground_state(4, 0.0)


def test_free_fermion_small_cases():
    assert data.free_fermion_ground_energy(2, 0.0) == pytest.approx(-1.0, abs=1e-12)
    assert data.free_fermion_ground_energy(2, 1e-3) == pytest.approx(data.ising_ground_state(2, 1e-3)[0], abs=1e-8)
    assert data.free_fermion_ground_energy(8, 1.0) == pytest.approx(data.ising_ground_state(8, 1.0)[0], abs=1e-8)


@pytest.mark.parametrize("L,J", list(product(range(2, 9), (0.2, 0.6, 1.0, 1.4, 1.8))))
def test_free_fermion_matches_dense(L, J):
    dense = np.linalg.eigvalsh(data.build_ising_hamiltonian(L, J))[0]
    assert abs(data.free_fermion_ground_energy(L, J) - dense) <= 1e-8


def test_labels_and_coupling_window():
    assert data.ising_label(0.2) == 0 and data.ising_label(1.8) == 1
    j = data.sample_couplings(2000, np.random.default_rng(0))
    assert np.all((j > 0) & (j < 2))
    assert not np.any((j >= 0.95) & (j <= 1.05))


def test_ising_dataset_shape_and_determinism():
    tr, te = data.generate_ising_dataset(4, 12, 5, seed=3)
    assert (len(tr), len(te)) == (12, 5)
    assert tr.n_qubits == 4
    for s in list(tr) + list(te):
        assert s.label == data.ising_label(s.meta["J_x"])
        assert abs(s.state.norm() - 1) < 1e-10
    tr2, te2 = data.generate_ising_dataset(4, 12, 5, seed=3)
    assert data.dataset_to_text(tr) == data.dataset_to_text(tr2)
    assert [s.meta["J_x"] for s in te] == [s.meta["J_x"] for s in te2]


def test_mnist_style_dataset_from_synthetic_images():
    imgs = data.synthetic_images(30, seed=0)
    tr, te = data.build_mnist_dataset(imgs, digits=(0, 1), n_train=20, n_test=11, seed=0)
    assert tr.n_qubits == 8
    for ds in (tr, te):
        labels = ds.labels()
        assert abs(int((labels == 0).sum()) - int((labels == 1).sum())) <= 1
        assert all(abs(s.state.norm() - 1) < 1e-10 for s in ds)
    with pytest.raises(ValueError):
        data.build_mnist_dataset(imgs, digits=(0, 1), n_train=100, n_test=100, seed=0)
    with pytest.raises(ValueError):
        data.build_mnist_dataset(imgs, digits=(1, 1), n_train=4, n_test=2, seed=0)


def test_first_digit_gets_label_zero():
    imgs = [(np.full((28, 28), 10 + i, dtype=np.uint8), d) for i, d in enumerate([9, 1] * 6)]
    tr, _ = data.build_mnist_dataset(imgs, digits=(1, 9), n_train=6, n_test=2, seed=1)
    for s in tr:
        assert s.label == (s.meta["digit"] == 9)


def test_dataset_cache_round_trip(tmp_path):
    tr, _ = data.generate_ising_dataset(3, 4, 1, seed=0)
    path = tmp_path / "c.txt"
    data.save_dataset(tr, path, {"config_hash": "abc"})
    back = data.load_dataset(path)
    assert back.split == "train" and back.seed == 0 and len(back) == 4
    np.testing.assert_array_equal(back.amplitudes(), tr.amplitudes())
    assert [s.meta for s in back] == [s.meta for s in tr]


def test_dataset_cache_errors():
    with pytest.raises(data.DatasetFormatError):
        data.dataset_from_text("format = x\n")
    with pytest.raises(data.DatasetFormatError, match="n_samples"):
        data.dataset_from_text("format = x\nsplit = train\nseed = 0\nn_samples = 2\n[samples]\n"
                               "0\t\t1.0 0.0 0.0 0.0\n")


def test_labeled_sample_and_dataset_invariants():
    with pytest.raises(ValueError):
        LabeledSample(sim.StateVector.basis("0"), 2)
    with pytest.raises(ValueError):
        data.LabeledDataset([LabeledSample(sim.StateVector.basis("0"), 0),
                             LabeledSample(sim.StateVector.basis("00"), 1)], "train", 0)
