"""Command-line entry points for training, probing, evaluation, and figures.

Every command writes its artifacts into one output directory (``--out``, or
``$MEANFLOW_CV_OUT/<command default>``, or ``./runs/<command default>``) and
drops a ``manifest.json`` there recording the package version, the resolved
configuration, and the artifact paths, so any run can be traced back to its
inputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import datasets, gmm, losses, net, probes, svgplots, swdist, trainer

ENV_OUT = "MEANFLOW_CV_OUT"

__all__ = ["main", "ENV_OUT"]


# ---------------------------------------------------------------------------
# small shared helpers
# ---------------------------------------------------------------------------

def _floats(text):
    return tuple(float(x) for x in str(text).split(",") if x.strip() != "")


def _ints(text):
    return tuple(int(x) for x in str(text).split(",") if x.strip() != "")


def _out_dir(args, default_name) -> Path:
    if args.out is not None:
        path = Path(args.out)
    else:
        root = os.environ.get(ENV_OUT, "runs")
        path = Path(root) / default_name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v
                        for v in row])


def _dataset_spec(args) -> datasets.DatasetSpec:
    return datasets.DatasetSpec(kind=args.dataset, dim=args.dim,
                                seed=args.data_seed)


def _policy(args) -> losses.TangentPolicy:
    kw = {}
    if args.beta is not None:
        kw["beta"] = args.beta
    if args.proxy is not None:
        kw["proxy"] = args.proxy
    if args.anchor_lambda is not None:
        kw["anchor_lambda"] = args.anchor_lambda
    if getattr(args, "anchor_delta", None) is not None:
        kw["anchor_delta"] = _floats(args.anchor_delta)
    return losses.TangentPolicy(**kw)


def _load_model(args):
    model, ema, step, seed = net.load_checkpoint(args.ckpt)
    return model, ema, step, seed


def _mixture(args) -> gmm.MixtureSpec:
    if args.mixture == "triangle":
        return gmm.triangle_mixture()
    if args.mixture == "single":
        d = args.dim
        return gmm.MixtureSpec(weights=[1.0], means=np.zeros((1, d)),
                               covs=0.5 * np.eye(d)[None])
    return datasets.dgmm_mixture_spec(
        datasets.DatasetSpec(kind="dgmm", dim=args.dim, seed=args.data_seed))


# ---------------------------------------------------------------------------
# argument groups
# ---------------------------------------------------------------------------

def _add_out(p):
    p.add_argument("--out", help="output directory (default: "
                                 f"$${ENV_OUT} or ./runs, plus a run name)")


def _add_dataset_flags(p, default_kind=None):
    p.add_argument("--dataset", choices=datasets.KINDS, default=default_kind)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--data-seed", type=int, default=0,
                   help="dataset layout seed (dgmm mode placement)")


def _add_policy_flags(p):
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--proxy", choices=losses.PROXIES, default=None)
    p.add_argument("--anchor-lambda", type=float, default=None)
    p.add_argument("--anchor-delta", default=None, help="dmin,dmax")


def _add_config_flags(p):
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--preset", choices=sorted(cfgmod.PRESETS), default=None)
    p.add_argument("--dataset", choices=datasets.KINDS, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--data-seed", type=int, default=None)
    _add_policy_flags(p)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--hidden", default=None, help="comma list, e.g. 128,128,128")
    p.add_argument("--optimizer", choices=trainer.OPTIMIZERS, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--ema-decay", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--probe-every", type=int, default=None)
    p.add_argument("--probe-replicas", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--eval-sw-every", type=int, default=None)
    p.add_argument("--overlap-prob", type=float, default=None)


def _resolve_config(args) -> trainer.TrainConfig:
    if args.config:
        cfg = cfgmod.load(args.config)
    else:
        cfg = cfgmod.preset(args.preset or "baseline")

    ds_kw = {}
    if args.dataset is not None:
        ds_kw["kind"] = args.dataset
    if args.dim is not None:
        ds_kw["dim"] = args.dim
    if args.data_seed is not None:
        ds_kw["seed"] = args.data_seed
    if ds_kw:
        cfg = replace(cfg, dataset=replace(cfg.dataset, **ds_kw))

    pol_kw = {}
    if args.beta is not None:
        pol_kw["beta"] = args.beta
    if args.proxy is not None:
        pol_kw["proxy"] = args.proxy
    if args.anchor_lambda is not None:
        pol_kw["anchor_lambda"] = args.anchor_lambda
    if args.anchor_delta is not None:
        pol_kw["anchor_delta"] = _floats(args.anchor_delta)
    if pol_kw:
        cfg = replace(cfg, policy=replace(cfg.policy, **pol_kw))

    top_kw = {}
    for name in ("steps", "batch_size", "optimizer", "lr", "ema_decay",
                 "seed", "probe_every", "probe_replicas", "checkpoint_every",
                 "eval_sw_every", "overlap_prob"):
        val = getattr(args, name)
        if val is not None:
            top_kw[name] = val
    if args.hidden is not None:
        top_kw["hidden"] = _ints(args.hidden)
    if top_kw:
        cfg = replace(cfg, **top_kw)
    return cfg


def _sw_config(args) -> swdist.SwConfig:
    kw = {}
    if getattr(args, "n_samples", None) is not None:
        kw["n_samples"] = args.n_samples
    if getattr(args, "n_projections", None) is not None:
        kw["n_projections"] = args.n_projections
    return swdist.SwConfig(**kw)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args):
    cfg = _resolve_config(args)
    out = _out_dir(args, f"train_{cfg.dataset.kind}_seed{cfg.seed}")
    record = trainer.train(cfg, out_dir=out, resume_from=args.resume)
    cfgmod.save(out / "config.yaml", cfg)
    final = record.final
    print(f"trained {cfg.steps} steps on {cfg.dataset.kind} "
          f"(beta={cfg.policy.beta:g}) in {record.wall_time_s:.1f}s")
    if final:
        print(f"final: mf_loss={final['mf_loss']:.6g} "
              f"var_trace={final['var_trace']:.6g}")
    print(f"artifacts in {out}")
    return 0


def cmd_sweep(args):
    base = _resolve_config(args)
    betas = _floats(args.betas)
    seeds = _ints(args.seeds)
    out = _out_dir(args, f"sweep_{base.dataset.kind}")
    result = trainer.sweep(base, betas, seeds, out_dir=out,
                           threads=args.threads, sw_cfg=_sw_config(args),
                           eval_seeds=_ints(args.eval_seeds))
    _write_json(out / "sweep.json", result)
    summary = result["summary"]
    _write_csv(out / "sweep.csv",
               ["beta", "sw1_mean", "sw1_sem", "var_mean", "var_sem"],
               [[s["beta"], s["sw1_mean"], s["sw1_sem"], s["var_mean"],
                 s["var_sem"]] for s in summary])
    labels = [f"{s['beta']:g}" for s in summary]
    (out / "sw1_vs_beta.svg").write_text(svgplots.bar_chart(
        labels, [s["sw1_mean"] for s in summary],
        errors=[s["sw1_sem"] for s in summary],
        title=f"SW1 vs beta ({base.dataset.kind})", ylabel="SW1"))
    (out / "var_vs_beta.svg").write_text(svgplots.bar_chart(
        labels, [s["var_mean"] for s in summary],
        errors=[s["var_sem"] for s in summary],
        title="tail gradient variance vs beta", ylabel="trace"))
    trainer.write_manifest(out / "manifest.json",
                           {"base": asdict(base), "betas": list(betas),
                            "seeds": list(seeds)},
                           {"sweep": out / "sweep.json",
                            "csv": out / "sweep.csv"},
                           extra={"summary": summary})
    for s in summary:
        print(f"beta={s['beta']:g}: sw1={s['sw1_mean']:.4f}"
              f"+-{s['sw1_sem']:.4f} var={s['var_mean']:.4g}")
    print(f"artifacts in {out}")
    return 0


def cmd_probe_variance(args):
    model, ema, step, _ = _load_model(args)
    spec = _dataset_spec(args)
    policy = _policy(args)
    source = datasets.x0_source(spec)
    mix = datasets.dgmm_mixture_spec(spec) if spec.kind == "dgmm" else None
    out = _out_dir(args, "probe_variance")

    rows = probes.loss_variance_vs_t(model, policy, source, _floats(args.ts),
                                     gap=args.gap, n=args.n, seed=args.seed,
                                     ema=ema, mix=mix)
    rep = probes.grad_variance(
        model, policy, source, args.batch_size, args.replicas,
        np.random.SeedSequence(args.seed, spawn_key=(trainer.TAG_PROBE, step)),
        ema=ema, mix=mix)
    _write_csv(out / "loss_variance.csv",
               ["t", "r", "loss_mean", "loss_var", "loss_sem"],
               [[r["t"], r["r"], r["loss_mean"], r["loss_var"], r["loss_sem"]]
                for r in rows])
    _write_json(out / "grad_variance.json", asdict(rep))
    ts = [r["t"] for r in rows]
    (out / "loss_variance.svg").write_text(svgplots.line_plot(
        [("per-sample loss variance", ts, [r["loss_var"] for r in rows]),
         ("per-sample loss mean", ts, [r["loss_mean"] for r in rows])],
        title="loss statistics vs t", xlabel="t", ylabel="value"))
    trainer.write_manifest(out / "manifest.json",
                           {"ckpt": str(args.ckpt), "dataset": asdict(spec),
                            "policy": asdict(policy), "step": step},
                           {"loss_variance": out / "loss_variance.csv",
                            "grad_variance": out / "grad_variance.json"})
    print(f"grad variance trace at step {step}: {rep.trace_cov:.6g}")
    print(f"artifacts in {out}")
    return 0


def cmd_probe_beta(args):
    model, _, step, _ = _load_model(args)
    mix = _mixture(args)
    bias_fn = None
    if args.bias is not None:
        bias = np.asarray(_floats(args.bias))
        if bias.shape != (mix.d,):
            raise SystemExit(f"--bias needs {mix.d} components")
        bias_fn = lambda x, r, t: np.broadcast_to(bias, x.shape)  # noqa: E731
    rep = probes.estimate_beta_star(model, mix, ts=_floats(args.ts),
                                    gap=args.gap, n_per_t=args.n_per_t,
                                    seed=args.seed, bias_fn=bias_fn)
    out = _out_dir(args, "probe_beta")
    _write_json(out / "beta_star.json", asdict(rep))
    _write_csv(out / "beta_star.csv",
               ["t", "r", "beta_star_no_bias", "beta_star_matrix", "kappa",
                "sigma2d", "bias_sq", "alpha0", "alpha1", "alpha2"],
               [[p["t"], p["r"], p["beta_star_no_bias"], p["beta_star_matrix"],
                 p["kappa"], p["sigma2d"], p["bias_sq"], p["alpha0"],
                 p["alpha1"], p["alpha2"]] for p in rep.probe_points])
    ts = [p["t"] for p in rep.probe_points]
    (out / "beta_vs_t.svg").write_text(svgplots.line_plot(
        [("beta* (no bias)", ts, [p["beta_star_no_bias"] for p in rep.probe_points]),
         ("beta* (with bias)", ts, [p["beta_star_matrix"] for p in rep.probe_points])],
        title="optimal mixing coefficient vs t", xlabel="t", ylabel="beta*"))
    trainer.write_manifest(out / "manifest.json",
                           {"ckpt": str(args.ckpt), "mixture": args.mixture,
                            "dim": args.dim, "step": step},
                           {"report": out / "beta_star.json",
                            "per_t": out / "beta_star.csv"})
    print(f"beta* matrix={rep.beta_star_matrix:.4f} "
          f"no-bias={rep.beta_star_no_bias:.4f} "
          f"scalar={rep.beta_star_scalar:.4f} kappa={rep.kappa_hat:.4f}")
    print(f"artifacts in {out}")
    return 0


def cmd_probe_gap(args):
    model, ema, step, _ = _load_model(args)
    mix = _mixture(args)
    rng_tags = np.random.SeedSequence(args.seed).spawn(3)
    d_rng, n_rng, t_rng = (np.random.default_rng(s) for s in rng_tags)
    batch = datasets.sample_interpolant(
        d_rng, n_rng, t_rng,
        lambda rng, n: datasets.sample_mixture(mix, rng, n), args.n)
    rep = probes.semigradient_gap(model, batch, mix)
    out = _out_dir(args, "probe_gap")
    doc = dict(rep.norms)
    doc["n_params"] = model.n_params
    doc["batch"] = args.n
    _write_json(out / "gap.json", doc)
    trainer.write_manifest(out / "manifest.json",
                           {"ckpt": str(args.ckpt), "mixture": args.mixture,
                            "step": step},
                           {"gap": out / "gap.json"})
    print("gap norms: " + " ".join(f"{k}={v:.6g}" for k, v in rep.norms.items()))
    print(f"artifacts in {out}")
    return 0


def cmd_probe_asymmetry(args):
    mix = _mixture(args)
    bias = np.zeros(mix.d)
    bias[0] = args.bias_norm
    rep = probes.bias_asymmetry_probe(
        mix, bias, steps=args.steps, batch_size=args.batch_size,
        hidden=_ints(args.hidden), lr=args.lr, seed=args.seed,
        n_eval=args.n_eval, eval_ts=_floats(args.eval_ts))
    out = _out_dir(args, "probe_asymmetry")
    _write_json(out / "asymmetry.json", {
        "bias_norm": rep.bias_norm,
        "boundary_error_tangent": rep.boundary_error_tangent,
        "boundary_error_target": rep.boundary_error_target,
        "boundary_error_baseline": rep.boundary_error_baseline,
        "per_t": list(rep.per_t),
    })
    trainer.write_manifest(out / "manifest.json",
                           {"mixture": args.mixture, "bias_norm": args.bias_norm,
                            "steps": args.steps, "seed": args.seed},
                           {"report": out / "asymmetry.json"})
    print(f"boundary error: tangent={rep.boundary_error_tangent:.4f} "
          f"target={rep.boundary_error_target:.4f} "
          f"baseline={rep.boundary_error_baseline:.4f} (|b|={rep.bias_norm:g})")
    print(f"artifacts in {out}")
    return 0


def cmd_eval_sw(args):
    model, ema, step, _ = _load_model(args)
    spec = _dataset_spec(args)
    res = swdist.evaluate_checkpoint(
        model, spec, _sw_config(args), _ints(args.eval_seeds),
        ema_params=None if args.raw_weights else ema.params)
    out = _out_dir(args, "eval_sw")
    res["step"] = step
    _write_json(out / "eval.json", res)
    trainer.write_manifest(out / "manifest.json",
                           {"ckpt": str(args.ckpt), "dataset": asdict(spec),
                            "step": step},
                           {"eval": out / "eval.json"})
    print(f"sw1={res['sw1_mean']:.4f}+-{res['sw1_sem']:.4f} "
          f"sw2={res['sw2_mean']:.4f} (step {step})")
    print(f"artifacts in {out}")
    return 0


def cmd_field_map(args):
    mix = _mixture(args)
    if mix.d != 2:
        raise SystemExit("field-map draws a 2-D grid; use a 2-D mixture")
    rows = gmm.variance_field_grid(mix, _floats(args.ts),
                                   xlim=_floats(args.xlim),
                                   ylim=_floats(args.ylim),
                                   resolution=args.resolution)
    out = _out_dir(args, "field_map")
    gmm.write_variance_field(out / "field.csv", rows,
                             svg_path=out / "field.svg")
    trainer.write_manifest(out / "manifest.json",
                           {"mixture": args.mixture, "ts": list(_floats(args.ts)),
                            "resolution": args.resolution},
                           {"csv": out / "field.csv", "svg": out / "field.svg"})
    print(f"artifacts in {out}")
    return 0


def cmd_dump_dataset(args):
    spec = _dataset_spec(args)
    x = datasets.sample_data(spec, np.random.default_rng(args.seed), args.n)
    out = _out_dir(args, f"dataset_{spec.kind}")
    _write_csv(out / "samples.csv", [f"x{i}" for i in range(x.shape[1])],
               [[float(v) for v in row] for row in x])
    paths = {"csv": out / "samples.csv"}
    if x.shape[1] == 2:
        (out / "samples.svg").write_text(
            svgplots.scatter_panels([(spec.kind, x)], title="x0 draws"))
        paths["svg"] = out / "samples.svg"
    trainer.write_manifest(out / "manifest.json", asdict(spec), paths)
    print(f"wrote {len(x)} draws of {spec.kind} to {out}")
    return 0


def cmd_dump_config(args):
    text = cfgmod.emit(cfgmod.preset(args.preset), preset_name=args.preset)
    if args.path:
        Path(args.path).write_text(text)
        print(f"wrote preset {args.preset!r} to {args.path}")
    else:
        print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# reproduce
# ---------------------------------------------------------------------------

REPRO_TAGS = ("fig1", "fig2", "fig3", "table_toy", "table_dgmm")


def _scale_params(tag, scale):
    if scale == "desk":
        return {"steps": 3000, "probe_every": 250, "seeds": (42,)}
    steps = 50_000 if tag == "table_toy" else 20_000
    return {"steps": steps, "probe_every": 2000, "seeds": (42, 0, 1)}


def _beta0_config(dataset, steps, probe_every, seed=42):
    cfg = cfgmod.preset("baseline")
    return replace(cfg, dataset=dataset, steps=steps,
                   probe_every=probe_every, seed=seed)


def _beta1_config(dataset, steps, probe_every, seed=42):
    cfg = cfgmod.preset("recipe")
    return replace(cfg, dataset=dataset, steps=steps,
                   probe_every=probe_every, seed=seed)


def _repro_fig1(out, scale, threads):
    mix = gmm.triangle_mixture()
    rows = gmm.variance_field_grid(mix, ts=(0.05, 0.25, 0.6),
                                   xlim=(-3.0, 3.0), ylim=(-3.0, 3.0),
                                   resolution=80 if scale == "desk" else 160)
    gmm.write_variance_field(out / "fig1.csv", rows, svg_path=out / "fig1.svg")
    return {"csv": out / "fig1.csv", "svg": out / "fig1.svg"}


def _repro_fig2(out, scale, threads):
    p = _scale_params("fig2", scale)
    ds = datasets.DatasetSpec(kind="eight_gaussians")
    recs = {}
    for label, factory in (("beta0", _beta0_config), ("beta1", _beta1_config)):
        cfg = factory(ds, p["steps"], p["probe_every"], seed=p["seeds"][0])
        recs[label] = trainer.train(cfg, out_dir=out / label)
    steps0 = [r["step"] for r in recs["beta0"].rows]
    rows = [[s,
             recs["beta0"].rows[i]["var_trace"],
             recs["beta1"].rows[i]["var_trace"]]
            for i, s in enumerate(steps0)]
    _write_csv(out / "fig2.csv", ["step", "var_beta0", "var_beta1"], rows)
    (out / "fig2.svg").write_text(svgplots.line_plot(
        [("beta 0", steps0, [np.log10(r[1]) for r in rows]),
         ("beta 1 recipe", steps0, [np.log10(r[2]) for r in rows])],
        title="gradient variance during training (eight_gaussians)",
        xlabel="step", ylabel="log10 trace"))
    return {"csv": out / "fig2.csv", "svg": out / "fig2.svg"}


def _repro_fig3(out, scale, threads):
    p = _scale_params("fig3", scale)
    base = _beta1_config(datasets.DatasetSpec(kind="eight_gaussians"),
                         p["steps"], p["probe_every"])
    result = trainer.sweep(base, betas=(0.0, 0.25, 0.5, 0.75, 1.0),
                           seeds=p["seeds"], out_dir=out / "cells",
                           threads=threads)
    _write_json(out / "fig3.json", result)
    summary = result["summary"]
    _write_csv(out / "fig3.csv",
               ["beta", "sw1_mean", "sw1_sem", "var_mean", "var_sem"],
               [[s["beta"], s["sw1_mean"], s["sw1_sem"], s["var_mean"],
                 s["var_sem"]] for s in summary])
    labels = [f"{s['beta']:g}" for s in summary]
    (out / "fig3.svg").write_text(svgplots.bar_chart(
        labels, [s["sw1_mean"] for s in summary],
        errors=[s["sw1_sem"] for s in summary],
        title="SW1 vs beta (eight_gaussians, shared anchor)", ylabel="SW1"))
    (out / "fig3_var.svg").write_text(svgplots.bar_chart(
        labels, [s["var_mean"] for s in summary],
        errors=[s["var_sem"] for s in summary],
        title="tail gradient variance vs beta", ylabel="trace"))
    return {"json": out / "fig3.json", "csv": out / "fig3.csv",
            "svg": out / "fig3.svg"}


def _table_rows_markdown(path, header, rows):
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join("---" for _ in header) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(
            f"{v:.4f}" if isinstance(v, float) else str(v) for v in row) + " |")
    Path(path).write_text("\n".join(lines) + "\n")


def _repro_table_toy(out, scale, threads):
    p = _scale_params("table_toy", scale)
    kinds = ("eight_gaussians", "checkerboard", "swiss_roll", "two_spirals")
    rows = []
    for kind in kinds:
        ds = datasets.DatasetSpec(kind=kind)
        res0 = trainer.sweep(_beta0_config(ds, p["steps"], p["probe_every"]),
                             betas=(0.0,), seeds=p["seeds"],
                             out_dir=out / kind / "beta0", threads=threads)
        res1 = trainer.sweep(_beta1_config(ds, p["steps"], p["probe_every"]),
                             betas=(1.0,), seeds=p["seeds"],
                             out_dir=out / kind / "beta1", threads=threads)
        s0, s1 = res0["summary"][0], res1["summary"][0]
        rows.append([kind, s0["sw1_mean"], s0["sw1_sem"],
                     s1["sw1_mean"], s1["sw1_sem"],
                     s0["sw1_mean"] / max(s1["sw1_mean"], 1e-12)])
    header = ["dataset", "sw1_beta0", "sem0", "sw1_beta1", "sem1",
              "ratio_beta0_over_beta1"]
    _write_csv(out / "table_toy.csv", header, rows)
    _table_rows_markdown(out / "table_toy.md", header, rows)
    return {"csv": out / "table_toy.csv", "md": out / "table_toy.md"}


def _repro_table_dgmm(out, scale, threads):
    p = _scale_params("table_dgmm", scale)
    ds = datasets.DatasetSpec(kind="dgmm", dim=16, seed=0)
    mix = datasets.dgmm_mixture_spec(ds)
    res0 = trainer.sweep(_beta0_config(ds, p["steps"], p["probe_every"]),
                         betas=(0.0,), seeds=p["seeds"],
                         out_dir=out / "beta0", threads=threads)
    res1 = trainer.sweep(_beta1_config(ds, p["steps"], p["probe_every"]),
                         betas=(1.0,), seeds=p["seeds"],
                         out_dir=out / "beta1", threads=threads)
    ckpt = res0["cells"][0]["paths"]["checkpoint"]
    model, _, _, _ = net.load_checkpoint(ckpt)
    rep = probes.estimate_beta_star(model, mix, n_per_t=256, seed=0)
    _write_json(out / "beta_star.json", asdict(rep))
    s0, s1 = res0["summary"][0], res1["summary"][0]
    header = ["quantity", "value", "sem"]
    rows = [
        ["sw1_beta0", s0["sw1_mean"], s0["sw1_sem"]],
        ["sw1_beta1", s1["sw1_mean"], s1["sw1_sem"]],
        ["var_tail_beta0", s0["var_mean"], s0["var_sem"]],
        ["var_tail_beta1", s1["var_mean"], s1["var_sem"]],
        ["beta_star_no_bias", rep.beta_star_no_bias, 0.0],
        ["beta_star_scalar", rep.beta_star_scalar, 0.0],
        ["kappa_hat", rep.kappa_hat, 0.0],
    ]
    _write_csv(out / "table_dgmm.csv", header, rows)
    _table_rows_markdown(out / "table_dgmm.md", header, rows)
    return {"csv": out / "table_dgmm.csv", "md": out / "table_dgmm.md",
            "beta_star": out / "beta_star.json"}


def cmd_reproduce(args):
    out = _out_dir(args, f"reproduce_{args.tag}_{args.scale}")
    fn = {"fig1": _repro_fig1, "fig2": _repro_fig2, "fig3": _repro_fig3,
          "table_toy": _repro_table_toy, "table_dgmm": _repro_table_dgmm}
    paths = fn[args.tag](out, args.scale, args.threads)
    trainer.write_manifest(out / "manifest.json",
                           {"tag": args.tag, "scale": args.scale}, paths)
    print(f"reproduced {args.tag} at {args.scale} scale; artifacts in {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="meanflow-cv",
        description="variance-aware training and probing of one-step "
                    "average-velocity samplers")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("train", help="run one training job")
    _add_config_flags(q)
    q.add_argument("--resume", default=None, help="checkpoint to resume from")
    _add_out(q)
    q.set_defaults(func=cmd_train)

    q = sub.add_parser("sweep", help="grid over beta and seed")
    _add_config_flags(q)
    q.add_argument("--betas", default="0,0.25,0.5,0.75,1")
    q.add_argument("--seeds", default="42")
    q.add_argument("--eval-seeds", default="101,102,103")
    q.add_argument("--threads", type=int, default=1)
    q.add_argument("--n-samples", type=int, default=None)
    q.add_argument("--n-projections", type=int, default=None)
    _add_out(q)
    q.set_defaults(func=cmd_sweep)

    q = sub.add_parser("probe-variance",
                       help="loss and gradient variance of a checkpoint")
    q.add_argument("--ckpt", required=True)
    _add_dataset_flags(q, default_kind="eight_gaussians")
    _add_policy_flags(q)
    q.add_argument("--ts", default="0.1,0.3,0.5,0.7,0.9")
    q.add_argument("--gap", type=float, default=0.25)
    q.add_argument("-n", type=int, default=4096)
    q.add_argument("--batch-size", type=int, default=256)
    q.add_argument("--replicas", type=int, default=8)
    q.add_argument("--seed", type=int, default=0)
    _add_out(q)
    q.set_defaults(func=cmd_probe_variance)

    q = sub.add_parser("probe-beta",
                       help="closed-form optimal mixing coefficient")
    q.add_argument("--ckpt", required=True)
    q.add_argument("--mixture", choices=("dgmm", "triangle", "single"),
                   default="dgmm")
    q.add_argument("--dim", type=int, default=16)
    q.add_argument("--data-seed", type=int, default=0)
    q.add_argument("--ts", default="0.1,0.3,0.5,0.7,0.9")
    q.add_argument("--gap", type=float, default=0.25)
    q.add_argument("--n-per-t", type=int, default=512)
    q.add_argument("--bias", default=None, help="constant proxy bias vector")
    q.add_argument("--seed", type=int, default=0)
    _add_out(q)
    q.set_defaults(func=cmd_probe_beta)

    q = sub.add_parser("probe-gap",
                       help="semigradient gap decomposition (small nets)")
    q.add_argument("--ckpt", required=True)
    q.add_argument("--mixture", choices=("triangle", "single", "dgmm"),
                   default="triangle")
    q.add_argument("--dim", type=int, default=2)
    q.add_argument("--data-seed", type=int, default=0)
    q.add_argument("-n", type=int, default=64)
    q.add_argument("--seed", type=int, default=0)
    _add_out(q)
    q.set_defaults(func=cmd_probe_gap)

    q = sub.add_parser("probe-asymmetry",
                       help="tangent-vs-target bias propagation")
    q.add_argument("--mixture", choices=("single", "triangle"),
                   default="single")
    q.add_argument("--dim", type=int, default=2)
    q.add_argument("--data-seed", type=int, default=0)
    q.add_argument("--bias-norm", type=float, default=0.5)
    q.add_argument("--steps", type=int, default=6000)
    q.add_argument("--batch-size", type=int, default=256)
    q.add_argument("--hidden", default="64,64")
    q.add_argument("--lr", type=float, default=2e-3)
    q.add_argument("--n-eval", type=int, default=2048)
    q.add_argument("--eval-ts", default="0.5,0.75")
    q.add_argument("--seed", type=int, default=0)
    _add_out(q)
    q.set_defaults(func=cmd_probe_asymmetry)

    q = sub.add_parser("eval-sw", help="sliced Wasserstein of a checkpoint")
    q.add_argument("--ckpt", required=True)
    _add_dataset_flags(q, default_kind="eight_gaussians")
    q.add_argument("--eval-seeds", default="101,102,103")
    q.add_argument("--n-samples", type=int, default=None)
    q.add_argument("--n-projections", type=int, default=None)
    q.add_argument("--raw-weights", action="store_true",
                   help="evaluate raw weights instead of the EMA shadow")
    _add_out(q)
    q.set_defaults(func=cmd_eval_sw)

    q = sub.add_parser("field-map",
                       help="target-variance heat map over (x, t)")
    q.add_argument("--mixture", choices=("triangle", "single", "dgmm"),
                   default="triangle")
    q.add_argument("--dim", type=int, default=2)
    q.add_argument("--data-seed", type=int, default=0)
    q.add_argument("--ts", default="0.05,0.25,0.6")
    q.add_argument("--xlim", default="-3,3")
    q.add_argument("--ylim", default="-3,3")
    q.add_argument("--resolution", type=int, default=80)
    _add_out(q)
    q.set_defaults(func=cmd_field_map)

    q = sub.add_parser("dump-dataset", help="write dataset draws to CSV/SVG")
    _add_dataset_flags(q, default_kind="eight_gaussians")
    q.add_argument("-n", type=int, default=4096)
    q.add_argument("--seed", type=int, default=0)
    _add_out(q)
    q.set_defaults(func=cmd_dump_dataset)

    q = sub.add_parser("dump-config", help="print a named preset as YAML")
    q.add_argument("--preset", choices=sorted(cfgmod.PRESETS),
                   default="recipe")
    q.add_argument("--path", default=None)
    q.set_defaults(func=cmd_dump_config)

    q = sub.add_parser("reproduce",
                       help="rebuild a named figure or table end to end")
    q.add_argument("--tag", choices=REPRO_TAGS, required=True)
    q.add_argument("--scale", choices=("desk", "full"), default="desk")
    q.add_argument("--threads", type=int, default=1)
    _add_out(q)
    q.set_defaults(func=cmd_reproduce)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
