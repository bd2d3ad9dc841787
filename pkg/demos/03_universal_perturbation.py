"""
One perturbation for every input
================================

A layer of single-qubit rotations is prepended to a trained classifier and
tuned to raise its mean loss over the whole test set.  Accuracy drops and
then levels off while the loss keeps growing.  Over Haar-random inputs, a
fixed unitary layer cannot change the error rate at all.
"""
import numpy as np

from qadvlab import attacks, data, models, simulator as sim, training
from qadvlab.attacks import AttackConfig, PerturbationLayer

train, test = data.generate_ising_dataset(L=5, n_train=100, n_test=50, seed=0)
model, _ = training.train(models.build_qcnn(5, 4, "large"), train, train,
                          training.TrainConfig(learning_rate=0.03, epochs=6, batch_size=10))

layer, report, trajectory = attacks.universal_perturbation_search(model, test, AttackConfig(0.05, 1.0, 60))
print("step  eps-proxy  loss    accuracy")
for it, eps, loss, acc in trajectory[::6]:
    print(f"{it:4d}  {eps:.3f}      {loss:.3f}   {acc:.2f}")
print("mean fidelity to the clean states:", round(report.mean_fidelity_all, 3))

# the layer and its inverse
s = test[0].state
back = layer.inverse_gates()
print("inverse restores the input:", np.allclose(
    sim.apply_gates(layer.apply_state(s), back).amplitudes, s.amplitudes))

# Haar inputs: the error rate against a constant labelling is unchanged by the layer
for name, lay in (("no layer", None), ("learned layer", layer),
                  ("random layer", PerturbationLayer(5, np.random.default_rng(0).uniform(-3, 3, 15)))):
    rate, se = attacks.haar_error_rate(model, lay, 20_000, seed=7)
    print(f"Haar error rate, {name:>13}: {rate:.3f} +/- {se:.3f}")
