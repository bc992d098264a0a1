"""How far apart are the finite-horizon, discounted and average-reward values?

Walks through the two-state fixture: mixing constants, the three values of the
uniform policy, and the gap bounds evaluated with those constants.
"""

import numpy as np

from fictdisc.audit import audit_gap_lemmas, bound_vgamma_eta, bound_vh_eta
from fictdisc.core import average_reward, discounted_value, finite_horizon_value
from fictdisc.dp import relative_value_iteration
from fictdisc.mdp import load_fixture
from fictdisc.mixing import mixing_constants

# %% Mixing constants of the two-state chain
mdp = load_fixture("fix2")
c = mixing_constants(mdp)
print(f"m_p={c.m_p}  p_min={c.p_min:.2f}  alpha={c.alpha:.2f}  C={c.C:.3f}  D={c.D:.2f}")

# %% The three values of the uniform policy
pi = np.full((2, 2), 0.5)
eta = float(average_reward(mdp, pi))
print(f"eta = {eta:.4f}")
for H in (1, 10, 100):
    vh = float(finite_horizon_value(mdp, pi, H))
    print(f"H={H:4d}  V^H={vh:.4f}  |V^H - eta|={abs(vh - eta):.4f}  bound={bound_vh_eta(c, 1.0, H):.4f}")
for gamma in (0.5, 0.9, 0.99):
    vg = float(discounted_value(mdp, pi, gamma))
    print(f"gamma={gamma:.2f}  V^gamma={vg:.4f}  bound={bound_vgamma_eta(c, 1.0, gamma):.4f}")

# %% The optimal gain, bracketed by relative value iteration
rvi = relative_value_iteration(mdp)
print(f"eta* in [{rvi.lo:.12f}, {rvi.hi:.12f}] after {rvi.iterations} sweeps")

# %% Sweep all five gap bounds over random policies
rng = np.random.default_rng(0)
pols = [rng.dirichlet(np.ones(2), size=2) for _ in range(20)]
recs = audit_gap_lemmas(mdp, pols, [1, 4, 16, 64], [0.5, 0.9, "1-1/H"], "fix2")
for cid in ("L2.2", "L2.3", "C2.4", "L2.5", "L2.6"):
    sub = [r for r in recs if r.claim_id == cid]
    print(f"{cid:5s} {len(sub):4d} checks  min margin {min(r.margin for r in sub):.3e}  "
          f"vacuous {sum(r.vacuous for r in sub)}")
