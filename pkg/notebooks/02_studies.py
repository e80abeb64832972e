"""The experiment studies at reduced size.

Run from the repository root: ``python notebooks/02_studies.py`` (about a minute).
The full-size versions are the ``drefc`` subcommands and the acceptance suite;
at these sizes the numbers scatter too much to compare against its thresholds.
"""

from drefc import harness as hx

cfg = hx.ExperimentConfig.from_dict({
    "data": {"n_train": 150}, "dro": {"n_bootstrap": 8}, "scenarios": {"n": 150},
    "timing": {"repeats": 5}})
art = hx.build_artifacts(cfg, with_joint=True)

print("load shedding, 150 scenarios")
ref = hx.load_shed_study(cfg, art, "reference")
worst = hx.load_shed_study(cfg, art, "worst")
print(f"  safety: reference {ref.indicators['safety']:.3f}, "
      f"worst case {worst.indicators['safety']:.3f}, margin {ref.extra['zeta']:.3e}")

print("cost against the robust baseline")
cr = hx.cost_ratio_study(cfg, art)
print(f"  robust margin {cr['ro_zeta']:.3e}")
for row in cr["rows"]:
    print(f"  confidence {row['confidence']:.3f}: margin {row['zeta']:.3e}, "
          f"ratio {row['ratio']:.3f}")

print("solve time, median over 5 rounds")
tm = hx.timing_study(cfg, art)
for n, d, s in zip(tm["counts"], tm["median"]["drefc"], tm["median"]["so"]):
    print(f"  {n:5d} samples: drefc {d * 1e3:.2f} ms, scenario baseline {s * 1e3:.2f} ms")

print("quantile approximation")
for c in hx.icdf_study(n_gmms=50, alphas=(0.05,))["cells"]:
    print(f"  K={c['K']}: Pearson {c['pearson']:.4f}, order reversal {c['reversal']:.3f}")

print("conditioning on the last observed error (held-out log-density)")
pairs = hx.shortfall_pairs(hx.holdout_step_shortfall(cfg, art), cfg.errors.n_past)
print(" ", hx.conditional_density_study(art.joint, pairs))

print("DC regulation, 40 scenarios")
dc = hx.dc_study(cfg, art, n=40)
for mode, r in dc.items():
    print(f"  {mode}: safety {r.indicators['safety']:.3f}")
