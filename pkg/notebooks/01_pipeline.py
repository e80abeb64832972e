"""From simulated trajectories to one load-shed decision.

Run from the repository root: ``python notebooks/01_pipeline.py``.
Uses a reduced training set so it finishes in a few seconds.
"""

import numpy as np

from drefc import harness as hx
from drefc.ambiguity import AmbiguitySet
from drefc.control import one_shot_load_shed
from drefc.dro import approx_icdf, exact_icdf, worst_case_margin
from drefc.gmm import histogram_rmse

cfg = hx.ExperimentConfig.from_dict({"data": {"n_train": 100}, "dro": {"n_bootstrap": 8}})

# training data, Koopman model, nadir shortfalls, reference mixture and radius
art = hx.build_artifacts(cfg)
print(f"lift dimension {art.model.lift_dim}, {len(art.train)} trajectories")
print(f"nadir shortfall: mean {art.nadir_shortfall.mean():.2e}, std {art.nadir_shortfall.std():.2e}")
ref = art.reference
print("reference mixture")
for w, m, s in zip(ref.weights, ref.means, ref.stds):
    print(f"  w={w:.3f}  mean={m:+.2e}  std={s:.2e}")
print(f"histogram RMSE of the mixture: {histogram_rmse(ref, art.nadir_shortfall):.3f}")
print(f"radius {art.radius:.3e} (median of {len(art.radius_samples)} bootstrap distances)")

# margin: exact quantile, component-weighted approximation, worst case over the ball
var = cfg.dro.var()
wc = worst_case_margin(AmbiguitySet(ref, art.radius), var)
print(f"95% quantile exact {exact_icdf(ref, 0.95):.3e}, approximate {approx_icdf(ref, 0.95):.3e}, "
      f"worst case {wc.zeta:.3e}")

# shed decision for a few disturbance sizes
cc = cfg.control
for deficit in (0.05, 0.08, 0.11, 0.14):
    g0 = hx.base_event_lift(cfg, art.model, deficit)
    sol = one_shot_load_shed(art.model, g0, AmbiguitySet(ref, art.radius), var, cc.f_min,
                             art.model.dt, cc.horizon, cc.u_max)
    print(f"deficit {deficit:.2f}: shed {sol.u[0]:.4f} pu, predicted nadir "
          f"{np.min(sol.predicted):+.4f} (limit {cc.f_min + wc.zeta:+.4f})")
