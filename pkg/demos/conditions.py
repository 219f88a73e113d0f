"""
Reading a coupling model
========================

Classify a few two- and three-species couplings without running anything:
the subset functional, the spectral shortcut, the dissipativity chain and
the tridiagonal rescaling.
"""

import numpy as np

from mspks import species as sm
from mspks.species import CouplingModel

pi = np.pi

# Competition: each species feeds only the other's attractant.
# One mass below 4 pi keeps the whole system subcritical, however big the other.
B = np.array([[0.0, 1.0], [1.0, 0.0]])
for M in ([3.9 * pi, 12 * pi], [3.9 * pi, 1000 * pi], [5 * pi, 100 * pi]):
    v = sm.subcritical_check(CouplingModel(B, np.array(M)))
    print(f"M/pi = {np.round(np.array(M) / pi, 2)}  Q/pi = {v.q_full / pi:.3f}  {v.verdict.value}")

# The eigenvalue test is only sufficient: (7 pi, 9 pi) fails it but is subcritical.
m = CouplingModel(B, np.array([7 * pi, 9 * pi]))
print("spectral bound holds:", sm.spectral_sufficient(m).bound_holds,
      "| verdict:", sm.subcritical_check(m).verdict.value)

# Second-moment slope: positive means spreading, negative forces a singularity.
print("dV/dt for (4 pi, 12 pi):", sm.second_moment_slope(CouplingModel(B, np.array([4 * pi, 12 * pi]))) / pi, "pi")
print("dV/dt for single 16 pi:", sm.second_moment_slope(CouplingModel(np.eye(1), np.array([16 * pi]))) / pi, "pi")

# Chasing and escaping: species 1 runs from species 2, which follows it.
chain = sm.essentially_dissipative([[0, 1], [-1, 0]])
print("chasing-escaping chain:", [sorted(s) for s in chain.chain], chain.is_essentially_dissipative)

# A non-symmetric tridiagonal chain that becomes symmetric after tagging.
s = sm.symmetrize_tridiagonal([[0, 2, 0], [1, 0, 6], [0, 3, 0]])
print("eta =", s.eta)
print(s.B_sym)
