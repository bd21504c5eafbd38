"""Robust regression without a penalty: where does exact recovery start?

Noise is sparse: 90% of the observations are clean and 10% carry N(0, 1)
errors. A differentiable loss (Huber) always pays for the noise, so its
limiting error stays positive at every sampling ratio. The absolute loss
can ignore the clean-but-few outliers exactly, and its error drops to zero
once delta = n/p passes a finite threshold.

Run with ``python3 demos/01_threshold_and_risk.py``.
"""
import numpy as np

from mrisk.marginals import MarginalLaw
from mrisk.scalar_convex import abs_loss, huber
from mrisk.system_solver import solve_unreg
from mrisk.threshold import delta_perfect_unreg

noise = MarginalLaw.sparse(0.1)

for loss in (abs_loss(), huber()):
    rep = delta_perfect_unreg(loss, noise)
    print(f"{loss}: delta_perfect = {rep.delta_perfect:.4f}, min J = {rep.j_loss_min:.4f}")

print("\n delta   alpha^2 (abs)   alpha^2 (huber)   status (abs)")
for delta in np.arange(1.1, 2.01, 0.1):
    a = solve_unreg(abs_loss(), noise, delta)
    h = solve_unreg(huber(), noise, delta)
    print(f" {delta:4.2f}   {a.alpha ** 2:12.6f}   {h.alpha ** 2:14.6f}   {a.status}")
