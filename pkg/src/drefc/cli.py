"""Command-line entry point ``drefc``.

All experiment commands read an optional JSON config (see README for the
schema) and write a JSON report plus CSV tables. ``--check`` turns the exit
code nonzero when an acceptance threshold is violated.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness as hx
from . import io, sfr
from .ambiguity import AmbiguitySet
from .dro import VarSpec, closed_form_margin, worst_case_margin
from .gmm import fit_em
from .koopman import DictionarySpec, one_step_residual, train_edmd


def _config(path) -> hx.ExperimentConfig:
    return hx.ExperimentConfig() if path is None else hx.ExperimentConfig.load(path)


def _finish(checks, args) -> int:
    for c in checks:
        print(c.line())
    if args.check and not all(c.passed for c in checks):
        return 1
    return 0


def _artifacts(cfg, with_joint=False):
    print("building model and error mixtures ...", file=sys.stderr)
    art = hx.build_artifacts(cfg, with_joint=with_joint)
    print(f"radius {art.radius:.4g}; timings {json.dumps({k: round(v, 2) for k, v in art.timings.items()})}",
          file=sys.stderr)
    return art


def cmd_sim(args) -> int:
    cfg = _config(args.config)
    d = cfg.data
    ds = sfr.generate_dataset(cfg.plant, d.n_train, d.deficit_range, d.horizon, d.seed,
                              d.onset_time, d.control_amplitude, d.control_hold, d.anchor_time)
    path = io.save_dataset(ds, args.out, cfg.plant, d.seed)
    print(f"{len(ds)} trajectories -> {path.parent}")
    finite = all(np.all(np.isfinite(t.freq_dev)) for t in ds)
    return _finish([hx.Check("trajectories finite", finite, f"{len(ds)} trajectories")], args)


def cmd_train(args) -> int:
    cfg = _config(args.config)
    ds, _ = io.load_dataset(args.data)
    if args.dict is None:
        spec = cfg.model.dictionary()
    else:
        text = Path(args.dict).read_text() if Path(args.dict).exists() else args.dict
        raw = json.loads(text)
        if "rbf_range" in raw:
            lo, hi = raw.pop("rbf_range")
            spec = DictionarySpec.with_grid(raw.pop("delay_count", 10), raw.pop("rbf_count", 0),
                                            lo, hi, **raw)
        else:
            spec = DictionarySpec(**raw)
    model = train_edmd(ds, spec, cfg.model.ridge, cfg.model.stride, cfg.data.anchor_time)
    io.save_model(model, args.out)
    res = one_step_residual(model, ds, cfg.data.anchor_time)
    print(f"lift dim {model.lift_dim}, one-step residual {res:.3e} -> {args.out}")
    return _finish([hx.Check("model finite", bool(np.all(np.isfinite(model.A))
                                                  and np.all(np.isfinite(model.B))), f"residual {res:.3e}")], args)


def cmd_fit_gmm(args) -> int:
    x = io.load_samples(args.samples)
    g, rep = fit_em(x, K=args.k, seed=args.seed, n_past=args.n_past)
    io.save_mixture(g, args.out)
    print(f"log-likelihood {rep.log_likelihood:.6g} after {rep.iterations} iterations -> {args.out}")
    return _finish([hx.Check("em monotone", rep.monotone, f"{len(rep.history)} iterations"),
                    hx.Check("em converged", rep.converged, f"restart {rep.restart}")], args)


def cmd_worst_case(args) -> int:
    ref = io.load_mixture(args.gmm)
    var = VarSpec(args.alpha)
    res = worst_case_margin(AmbiguitySet(ref, args.gamma), var)
    out = res.to_dict()
    print(json.dumps({"zeta": res.zeta, "active_distance": res.active_distance}))
    if args.out:
        io.save_json(out, args.out)
    bound = closed_form_margin(ref, args.gamma, var.z)
    return _finish([hx.Check("attains closed-form bound", abs(res.zeta - bound) <= 1e-8 * max(1, abs(bound)),
                             f"zeta {res.zeta:.10g} vs {bound:.10g}"),
                    hx.Check("on ball boundary", abs(res.active_distance - args.gamma) <= 1e-6,
                             f"distance {res.active_distance:.3e} vs {args.gamma:.3e}")], args)


def _dump_dc_trajectories(cfg, art, out: Path, n: int):
    deficits, seeds = hx.dc_scenarios(cfg, cfg.scenarios.n, cfg.scenarios.seed)
    var = cfg.dro.var()
    static = hx.marginal(art.joint, "future")
    for i in range(min(n, len(seeds))):
        for mode in ("online", "static"):
            res = hx.closed_loop_dc(cfg.plant, sfr.Disturbance(cfg.data.onset_time, float(deficits[i])),
                                    art.model, art.joint, art.radius, var, cfg.dc, seeds[i],
                                    static if mode == "static" else None)
            hx.write_table(out / f"dc_{mode}_traj_{i:03d}.csv",
                           ["time", "freq_dev", "clean_freq_dev", "control"],
                           zip(res.times, res.freq_dev, res.clean_freq_dev, res.controls))


def cmd_run(args) -> int:
    cfg = _config(args.config)
    out = Path(args.out)
    if args.mode == "loadshed":
        art = _artifacts(cfg)
        wc = worst_case_margin(AmbiguitySet(art.reference, art.radius), cfg.dro.var())
        io.save_json(wc.to_dict(), out / "worst_case.json")
        reps = {d: hx.load_shed_study(cfg, art, d, wc) for d in ("reference", "worst")}
        for r in reps.values():
            hx.emit_report(r, out)
        checks = hx.check_safety(reps["reference"], reps["worst"])
    else:
        art = _artifacts(cfg, with_joint=True)
        reps = hx.dc_study(cfg, art)
        for r in reps.values():
            hx.emit_report(r, out)
        _dump_dc_trajectories(cfg, art, out, args.dump)
        checks = hx.check_dc(reps)
    for name, r in reps.items():
        print(name, json.dumps(r.indicators))
    return _finish(checks, args)


def cmd_run_scenarios(args) -> int:
    args.mode = "loadshed"
    args.dump = 0
    return cmd_run(args)


def cmd_bench(args) -> int:
    cfg = _config(args.config)
    art = _artifacts(cfg)
    st = hx.timing_study(cfg, art)
    st["slope"] = {k: hx.timing_slope(st["counts"], v) for k, v in st["median"].items()}
    io.save_json(st, Path(args.out) / "timing.json")
    hx.write_table(Path(args.out) / "timing.csv", ["count", "drefc_s", "so_s"],
                   zip(st["counts"], st["median"]["drefc"], st["median"]["so"]))
    return _finish(hx.check_timing(st), args)


def cmd_icdf_study(args) -> int:
    cfg = _config(args.config)
    s = cfg.study
    st = hx.icdf_study(s.icdf_n_gmms, s.icdf_alphas, s.icdf_Ks, s.icdf_seed)
    io.save_json(st, Path(args.out) / "icdf.json")
    hx.write_table(Path(args.out) / "icdf.csv", ["K", "alpha", "pearson", "reversal"],
                   [(c["K"], c["alpha"], c["pearson"], c["reversal"]) for c in st["cells"]])
    return _finish(hx.check_icdf(st), args)


def cmd_compare_baselines(args) -> int:
    cfg = _config(args.config)
    art = _artifacts(cfg)
    st = hx.cost_ratio_study(cfg, art)
    io.save_json(st, Path(args.out) / "cost_ratio.json")
    hx.write_table(Path(args.out) / "cost_ratio.csv",
                   ["confidence", "zeta", "drefc_cost", "ro_cost", "ratio", "ratio_nadir_history"],
                   [[r[k] for k in ("confidence", "zeta", "drefc_cost", "ro_cost", "ratio",
                                    "ratio_nadir_history")] for r in st["rows"]])
    return _finish(hx.check_cost_ratio(st), args)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drefc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, config=True, out=True):
        s = sub.add_parser(name, help=help_)
        if config:
            s.add_argument("--config", help="JSON experiment config (defaults if omitted)")
        if out:
            s.add_argument("--out", default="results", help="output directory or file")
        s.add_argument("--check", action="store_true", help="nonzero exit on threshold violations")
        s.set_defaults(func=fn)
        return s

    add("sim", cmd_sim, "simulate the training dataset")
    s = add("train", cmd_train, "fit the Koopman model")
    s.add_argument("--data", required=True, help="dataset directory written by 'sim'")
    s.add_argument("--dict", help="dictionary spec as JSON text or file")
    s = add("fit-gmm", cmd_fit_gmm, "fit a Gaussian mixture to samples", config=False)
    s.add_argument("--samples", required=True, help="CSV of samples")
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--n-past", type=int, default=None, help="past block size for a joint fit")
    s.add_argument("--seed", type=int, default=0)
    s = add("worst-case", cmd_worst_case, "worst-case margin over an ambiguity ball", config=False)
    s.set_defaults(out=None)
    s.add_argument("--gmm", required=True)
    s.add_argument("--gamma", type=float, required=True)
    s.add_argument("--alpha", type=float, default=0.05)
    s = add("run", cmd_run, "run the load-shed or DC experiment")
    s.add_argument("--mode", choices=("loadshed", "dc"), required=True)
    s.add_argument("--dump", type=int, default=3, help="DC trajectories dumped as CSV")
    add("run-scenarios", cmd_run_scenarios, "load-shed safety study under reference and worst case")
    add("bench", cmd_bench, "timing study against the scenario baseline")
    add("icdf-study", cmd_icdf_study, "ICDF approximation study")
    add("compare-baselines", cmd_compare_baselines, "cost ratio against the robust baseline")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
