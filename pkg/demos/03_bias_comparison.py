"""Doubly discounted versus average-advantage estimators as H grows.

First the measured biases against their bounds on the two-state fixture, then
the plateau comparison.  Under the prescribed lambda and step schedule the
iterates stay near their start, so the comparison is repeated with a small
lambda and a fixed step to show where each biased gradient field settles.
"""

import numpy as np

from fictdisc.audit import bias_scaling_study, dae_envelope, loglog_slope
from fictdisc.core import finite_horizon_value
from fictdisc.dp import finite_horizon_optimal
from fictdisc.estimators import EstimatorConfig, exact_estimator_expectation
from fictdisc.mdp import generate_mdp, load_fixture
from fictdisc.softmax import SoftmaxParams, policy_from_params

# %% Bias table with gamma = 1 - H^-1/2
grid = [8, 16, 32, 64, 128]
rows = bias_scaling_study(load_fixture("fix2"), grid, 0.5)
print("   H   dae_bias  dae_bound   dd_bias   dd_bound")
for r in rows:
    print(f"{r['H']:4d}  {r['dae_bias']:.3e}  {r['dae_bound']:.3e}  {r['dd_bias']:.3e}  {r['dd_bound']:.3e}")
print(f"log-log slope: dd bias {loglog_slope(grid, [r['dd_bias'] for r in rows]):.2f}, "
      f"dae envelope {loglog_slope(grid, [dae_envelope(H, 0.5, 0.5) for H in grid]):.2f}")


# %% Where each biased field settles, lambda = 0.01 and a fixed step
def settle(mdp, H, alg, lam=0.01, iters=3000):
    gamma = 1 - H**-0.5
    cfg = EstimatorConfig(gamma, H, beta=0.5)
    step = 0.5 if alg == "dae" else 0.5 * (1 - gamma)  # the DD field scales like 1/(1-gamma)
    theta = np.zeros((mdp.S, mdp.A))
    for _ in range(iters):
        theta = theta + step * exact_estimator_expectation(mdp, SoftmaxParams(theta, lam), cfg, alg)
    return finite_horizon_optimal(mdp, H)[0] - float(finite_horizon_value(mdp, policy_from_params(theta), H))


mdps = [load_fixture("fix2")] + [generate_mdp(3, 2, 200 + i, floor=0.02) for i in range(5)]
for H in (32, 128):
    gaps = np.array([[settle(m, H, alg) for alg in ("dae", "dd")] for m in mdps])
    print(f"H={H}: mean V^H gap dae {gaps[:, 0].mean():.4f}, dd {gaps[:, 1].mean():.4f}, "
          f"dd <= dae on {int((gaps[:, 1] <= gaps[:, 0]).sum())}/{len(mdps)}")
