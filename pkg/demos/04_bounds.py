"""
How much perturbation guarantees an attack?
===========================================

Concentration of measure gives a budget eps beyond which a target fraction
of inputs is adversarial for every one of k classifiers.  The budget
shrinks like 1/sqrt(d) in the Hilbert dimension d and grows only
logarithmically with k.  Also shown: the no-free-lunch average risk and a
Hoeffding coverage check.
"""
import numpy as np

from qadvlab import bounds, models

print("budget for risk 0.5, k=8 classifiers each with error 0.05:")
for n in (4, 8, 12, 16, 20):
    d = 2 ** n
    print(f"  {n:2d} qubits: eps >= {bounds.theorem1_min_epsilon(d, 8, 0.05, 0.5):.4f}")

print("\ngrowth with the ensemble size at 8 qubits:")
for k in (1, 2, 8, 64, 1024):
    print(f"  k = {k:5d}: {bounds.theorem1_min_epsilon(256, k, 0.05, 0.5):.4f}")

print("\nunion bound on joint risk from individual risks (0.9, 0.9, 0.9):",
      bounds.union_risk_lower_bound([0.9, 0.9, 0.9]))

print("\nno-free-lunch average risk, d = 256, two labels:")
# with two labels the bound turns vacuous near N = 181 for d = 256
for N in (0, 64, 128, 181, 182, 256):
    print(f"  N = {N:3d}: raw {bounds.qnfl_classifier_bound(256, 2, N):+.4f}, "
          f"clamped {bounds.qnfl_classifier_bound_clamped(256, 2, N):.4f}")

x = np.array([[0, 1], [1, 0]], dtype=complex)
est, se = bounds.estimate_quantum_risk(np.eye(2), x, 100_000, seed=0)
print(f"\nquantum risk of X against identity: {est:.4f} +/- {se:.4f} (Haar value 8/3)")

toy = models.build_variational_classifier(3, 2, seed=3)
cov = bounds.verify_hoeffding(toy, None, 50_000, trials=300, n=200, delta=0.05, seed=0)
print(f"Hoeffding band at n=200, delta=0.05 covers {cov:.3f} of trials "
      f"(half-width {bounds.hoeffding_deviation(200, 0.05):.4f})")
