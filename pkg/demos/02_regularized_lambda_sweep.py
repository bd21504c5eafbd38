"""L1 loss with an L1 penalty: a window of penalty levels gives zero error.

Both the noise (70% zeros) and the signal (90% zeros) are sparse. Above the
regularized threshold the limiting error vanishes on an interval of penalty
levels; below it the curve stays positive everywhere, with a shallow
minimum.

Run with ``python3 demos/02_regularized_lambda_sweep.py``.
"""
import numpy as np

from mrisk.marginals import MarginalLaw
from mrisk.scalar_convex import abs_loss
from mrisk.system_solver import risk_curve
from mrisk.threshold import delta_perfect_reg

noise, signal = MarginalLaw.sparse(0.3), MarginalLaw.sparse(0.1)
dp = delta_perfect_reg(abs_loss(), abs_loss(), noise, signal).delta_perfect
print(f"regularized threshold delta_perfect = {dp:.4f}\n")

lams = np.logspace(-1, 1, 13)
for mult in (1.3, 0.7):
    print(f"delta = {mult} x threshold")
    for pt in risk_curve(abs_loss(), abs_loss(), noise, signal, mult * dp, lams):
        print(f"  lambda = {pt.lam:7.3f}  alpha^2 = {pt.alpha ** 2:.5f}  {pt.status}")
    print()
