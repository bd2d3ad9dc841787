"""
Learning the phase of a transverse-field Ising chain
====================================================

Ground states of the chain are encoded directly as input states; the label
says whether the coupling sits on the ferromagnetic (0) or paramagnetic (1)
side of the transition at J_x = 1.  We train one small variational circuit
and one QCNN on a 6-site chain.
"""
import numpy as np

from qadvlab import data, models, training

# ground states and their labels, with the critical window around J_x = 1 left out
train, test = data.generate_ising_dataset(L=6, n_train=120, n_test=60, seed=0)
val, _ = data.generate_ising_dataset(L=6, n_train=60, n_test=1, seed=1)
print("train:", len(train), "test:", len(test), "qubits:", train.n_qubits)
print("label balance in test:", np.bincount(test.labels()))

# exact diagonalization and the free-fermion solution agree on the ground energy
e_dense, _ = data.ising_ground_state(6, 1.4)
print("ground energy, dense vs free fermion:", e_dense, data.free_fermion_ground_energy(6, 1.4))

# analytic gradients: the shift rule matches finite differences
m = models.build_variational_classifier(6, 2, seed=0)
batch = data.as_arrays(train)
batch = (batch[0][:4], batch[1][:4])
ps = training.gradient_parameter_shift(m, batch)
fd = training.gradient_finite_difference(m, batch, h=1e-5)
print("max |shift - finite difference|:", np.max(np.abs(ps - fd)))

cfg = training.TrainConfig(learning_rate=0.02, epochs=6, batch_size=10, seed=0)
for model in (models.build_variational_classifier(6, 3, seed=1), models.build_qcnn(6, seed=2)):
    trained, hist = training.train(model, train, val, cfg)
    acc, loss = training.evaluate(trained, test)
    print(f"{model.name:>16}: {model.spec.param_count:4d} params, "
          f"val acc by epoch {np.round(hist.val_acc, 2)}, test acc {acc:.2f}")
