"""The elementwise proximal operators used for the loss step."""

import numpy as np

from kernelsplit.proxops import LossSpec, prox_absolute, prox_hinge, prox_loss_matrix, prox_squared

v = np.linspace(-2, 3, 11)
print("      v   hinge(y=1)  squared(y=1)  absolute(y=1)   (lam=0.5)")
for a in v:
    print(f"{a:7.2f}  {prox_hinge(a, 1.0, 0.5):10.3f}  {prox_squared(a, 1.0, 0.5):12.3f}  {prox_absolute(a, 1.0, 0.5):13.3f}")

# the matrix form applies the scalar prox entry by entry
A = np.array([[2.0, -0.3], [0.7, 0.0]])
Y = np.array([[1.0, -1.0], [1.0, 1.0]])
print(prox_loss_matrix(A, Y, LossSpec("hinge"), 0.5))
