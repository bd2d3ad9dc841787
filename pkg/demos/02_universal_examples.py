"""
Universal adversarial examples against an ensemble
==================================================

A single perturbed input that fools every classifier in a set.  Three small
classifiers are trained on Ising ground states, then each test state is
pushed (within a trace-distance budget eps) to raise the summed loss.  The
risk is the fraction of test states that end up misclassified by all three.
"""
import numpy as np

from qadvlab import attacks, data, models, training
from qadvlab.attacks import AttackConfig

train, test = data.generate_ising_dataset(L=5, n_train=100, n_test=50, seed=0)
cfg = training.TrainConfig(learning_rate=0.03, epochs=6, batch_size=10)
ensemble = [training.train(m, train, train, cfg)[0]
            for m in (models.build_qcnn(5, 1), models.build_variational_classifier(5, 3, 2),
                      models.build_variational_classifier(5, 4, 3))]
for m in ensemble:
    print(m.name, "test accuracy", training.evaluate(m, test)[0])

# risk as a function of the budget; warm starts make the curve non-decreasing
grid = np.round(np.arange(0, 0.31, 0.05), 2)
rows, reports = attacks.risk_curve(ensemble, test, grid, AttackConfig(step_alpha=0.02, max_iters=100))
print("\n eps   risk   fidelity of fooled states")
for eps, risk, fid, *_ in rows:
    print(f"{eps:.2f}  {risk:.2f}   {fid:.3f}")

# why the curve is bounded: a state at trace distance eps moves any
# measured probability by at most eps, so confident samples cannot flip
amps, labels = data.as_arrays(test)
q = np.stack([models.forward_batch(m, amps)[np.arange(len(labels)), labels] for m in ensemble], axis=1)
for eps in (0.1, 0.2, 0.3):
    print(f"eps {eps}: at most {np.mean(q.max(axis=1) - eps <= 0.5):.2f} of samples are reachable")

# transfer: craft against the first classifier only, score on all three
for rep in attacks.transfer_attack_eval(ensemble[0], ensemble, test, AttackConfig(), epsilon_grid=[0.1, 0.2, 0.3]):
    print(f"transfer eps {rep.epsilon:.1f}: joint risk {rep.risk:.2f}")
