"""Training loop, optimizers, sweeps, and one-step sampling.

One training step follows the standard recipe for the tangent-mixed loss:
draw an interpolant batch, build the tangent from the policy (EMA shadow
tangents are read before this step's update), take the stop-gradient
semigradient, apply the optimizer, then update the EMA shadow.

Randomness discipline: the master seed is split into named streams via
``SeedSequence(seed, spawn_key=(tag,))`` with fixed tags (init, data, noise,
time). Probe and eval randomness is derived statelessly from
(seed, tag, step), so changing probe cadence can never perturb the training
trajectory, and resumed runs probe identically.

Checkpoints use the net module's binary format; a resumable run additionally
writes a ``<ckpt>.state.npz`` sidecar holding optimizer moments, the exact
bit-generator states of the training streams, and the metric rows so far.
Resuming from step k and continuing to 2k reproduces an uninterrupted 2k-step
run bit for bit.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import datasets, losses, net, swdist

__all__ = [
    "TAG_INIT", "TAG_DATA", "TAG_NOISE", "TAG_TIME", "TAG_PROBE",
    "TAG_EVAL_NOISE", "TAG_EVAL_DATA",
    "TrainConfig", "RunRecord", "TrainingDiverged",
    "AdamState", "SgdState", "make_optimizer",
    "train", "sweep", "one_step_sample", "tail_stats",
    "write_metrics_csv", "read_metrics_csv", "write_manifest",
]

TAG_INIT = 0
TAG_DATA = 1
TAG_NOISE = 2
TAG_TIME = 3
TAG_PROBE = 4
TAG_EVAL_NOISE = 5
TAG_EVAL_DATA = 6

METRIC_FIELDS = ("step", "mf_loss", "fm_loss", "var_trace", "sw1")

OPTIMIZERS = ("adam", "sgd")


def stream(seed, tag, *extra):
    """Named deterministic generator for (seed, tag[, step...])."""
    return np.random.default_rng(np.random.SeedSequence(int(seed),
                                                        spawn_key=(tag, *extra)))


@dataclass(frozen=True)
class TrainConfig:
    """Everything that defines a run; two equal configs give equal runs."""

    dataset: datasets.DatasetSpec
    policy: losses.TangentPolicy = losses.TangentPolicy()
    steps: int = 20_000
    batch_size: int = 256
    hidden: tuple = (128, 128, 128)
    optimizer: str = "adam"
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    ema_decay: float = 0.999
    seed: int = 42
    probe_every: int = 2000
    probe_replicas: int = 8
    checkpoint_every: int = 0   # 0: only the final checkpoint
    eval_sw_every: int = 0      # 0: never evaluate SW during training
    overlap_prob: float = 0.0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.ema_decay < 1):
            raise ValueError("ema_decay must lie in [0, 1)")
        if self.probe_every < 0 or self.checkpoint_every < 0 or self.eval_sw_every < 0:
            raise ValueError("cadences must be >= 0")
        if self.probe_replicas < 2:
            raise ValueError("probe_replicas must be >= 2 for variance estimates")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


class TrainingDiverged(RuntimeError):
    """Raised when the loss or parameters stop being finite."""

    def __init__(self, step, last_good_path=None):
        msg = f"non-finite loss or parameters at step {step}"
        if last_good_path:
            msg += f"; last finite checkpoint at {last_good_path}"
        super().__init__(msg)
        self.step = step
        self.last_good_path = last_good_path


@dataclass
class RunRecord:
    """Outcome of train(): config echo, probe rows, final state, artifacts."""

    config: TrainConfig
    rows: list
    final: dict
    wall_time_s: float
    paths: dict
    model: net.Mlp
    ema: net.EmaState


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float
    beta1: float
    beta2: float
    eps: float
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    def update(self, params, grad):
        self.step += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1**self.step)
        vhat = self.v / (1.0 - self.beta2**self.step)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class SgdState:
    lr: float
    step: int = 0

    def update(self, params, grad):
        self.step += 1
        return params - self.lr * grad


def make_optimizer(cfg: TrainConfig, n_params: int):
    if cfg.optimizer == "adam":
        return AdamState(lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
                         eps=cfg.adam_eps, m=np.zeros(n_params), v=np.zeros(n_params))
    return SgdState(lr=cfg.lr)


# ---------------------------------------------------------------------------
# run-state sidecar (optimizer + stream states + metric rows)
# ---------------------------------------------------------------------------

def _save_run_state(ckpt_path, model, ema, opt, streams, rows, step, cfg):
    net.save_checkpoint(ckpt_path, model, ema, step=step, seed=cfg.seed)
    rng_states = {name: s.bit_generator.state for name, s in streams.items()}
    if isinstance(opt, AdamState):
        m, v, opt_step = opt.m, opt.v, opt.step
    else:
        m = v = np.zeros(0)
        opt_step = opt.step
    np.savez(
        str(ckpt_path) + ".state.npz",
        m=m, v=v, opt_step=np.int64(opt_step),
        rng_json=np.array(json.dumps(rng_states)),
        rows_json=np.array(json.dumps(rows)),
        config_json=np.array(json.dumps(asdict(cfg))),
    )


def _load_run_state(ckpt_path, cfg):
    model, ema, step, seed = net.load_checkpoint(ckpt_path)
    data = np.load(str(ckpt_path) + ".state.npz")
    if model.hidden != cfg.hidden or model.data_dim != cfg.dataset.dim:
        raise ValueError("checkpoint architecture does not match config")
    if seed != cfg.seed:
        raise ValueError(f"checkpoint seed {seed} does not match config seed {cfg.seed}")
    opt = make_optimizer(cfg, model.n_params)
    if isinstance(opt, AdamState):
        opt.m = data["m"].copy()
        opt.v = data["v"].copy()
    opt.step = int(data["opt_step"])
    rng_states = json.loads(str(data["rng_json"]))
    streams = {name: stream(cfg.seed, tag) for name, tag in
               (("data", TAG_DATA), ("noise", TAG_NOISE), ("time", TAG_TIME))}
    for name, s in streams.items():
        s.bit_generator.state = rng_states[name]
    rows = json.loads(str(data["rows_json"]))
    return model, ema, opt, streams, rows, step


# ---------------------------------------------------------------------------
# metrics CSV
# ---------------------------------------------------------------------------

def _fmt(v):
    return "" if v is None else repr(float(v))


def write_metrics_csv(path, rows):
    """Header step,mf_loss,fm_loss,var_trace,sw1; blank for absent values."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([int(r["step"])] + [_fmt(r.get(k)) for k in METRIC_FIELDS[1:]])


def read_metrics_csv(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(METRIC_FIELDS):
            raise ValueError(f"unexpected metrics header {reader.fieldnames}")
        for row in reader:
            parsed = {"step": int(row["step"])}
            for k in METRIC_FIELDS[1:]:
                parsed[k] = float(row[k]) if row[k] else None
            out.append(parsed)
    return out


def write_manifest(path, cfg, paths, extra=None):
    """JSON run manifest: config echo, package version, artifact paths.

    cfg may be a TrainConfig, a plain dict (probe commands), or None.
    """
    import dataclasses

    from . import __version__

    doc = {
        "package": "meanflow-cv",
        "version": __version__,
        "created_unix": time.time(),
        "config": asdict(cfg) if dataclasses.is_dataclass(cfg) else cfg,
        "paths": {k: str(v) for k, v in paths.items()},
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _training_mix(cfg: TrainConfig):
    if cfg.policy.proxy == "analytic_oracle":
        if cfg.dataset.kind != "dgmm":
            raise ValueError("analytic_oracle tangents require a dgmm dataset")
        return datasets.dgmm_mixture_spec(cfg.dataset)
    return None


def train(config: TrainConfig, out_dir=None, resume_from=None,
          source=None) -> RunRecord:
    """Run (or resume) one training job; see the module docstring for order.

    source, a callable (rng, n) -> (n, dim), replaces the dataset's built-in
    sampler; datasets of kind "custom" require it.
    """
    from pathlib import Path

    from . import probes

    t0 = time.perf_counter()
    mix = _training_mix(config)
    if config.dataset.kind == "custom" and config.eval_sw_every > 0:
        raise ValueError("in-training SW evaluation needs a dataset with a "
                         "built-in sampler")
    if source is None:
        source = datasets.x0_source(config.dataset)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        model, ema, opt, streams, rows, start_step = _load_run_state(
            resume_from, config)
    else:
        init_rng = stream(config.seed, TAG_INIT)
        model = net.Mlp.init(config.dataset.dim, config.hidden, init_rng)
        ema = net.EmaState.from_model(model, decay=config.ema_decay)
        opt = make_optimizer(config, model.n_params)
        streams = {"data": stream(config.seed, TAG_DATA),
                   "noise": stream(config.seed, TAG_NOISE),
                   "time": stream(config.seed, TAG_TIME)}
        rows = []
        start_step = 0

    lam = config.policy.anchor_lambda
    dmin, dmax = config.policy.anchor_delta
    last_ckpt = None

    for step in range(start_step + 1, config.steps + 1):
        batch = datasets.sample_interpolant(
            streams["data"], streams["noise"], streams["time"], source,
            config.batch_size, overlap_prob=config.overlap_prob,
        )
        deltas = streams["time"].uniform(dmin, dmax, config.batch_size) \
            if lam > 0 else None
        grad, bd = losses.semigrad(model, batch, config.policy,
                                   anchor_deltas=deltas, ema=ema, mix=mix)
        new_params = opt.update(model.params, grad)
        if not np.isfinite(bd.total) or not np.all(np.isfinite(new_params)):
            path = None
            if out is not None:
                path = out / "diverged_last_good.mfck"
                _save_run_state(path, model, ema, opt, streams, rows,
                                step - 1, config)
            raise TrainingDiverged(step, last_good_path=path)
        model = model.with_params(new_params)
        net.ema_update(ema, model.params)

        probe_now = (config.probe_every > 0 and step % config.probe_every == 0) \
            or step == config.steps
        if probe_now:
            rep = probes.grad_variance(
                model, config.policy, source, config.batch_size,
                config.probe_replicas,
                np.random.SeedSequence(config.seed, spawn_key=(TAG_PROBE, step)),
                ema=ema, mix=mix, overlap_prob=config.overlap_prob,
            )
            row = {"step": step, "mf_loss": bd.mf_loss, "fm_loss": bd.fm_loss,
                   "var_trace": rep.trace_cov, "sw1": None}
            if config.eval_sw_every > 0 and step % config.eval_sw_every == 0:
                ev = swdist.evaluate_checkpoint(
                    model, config.dataset, swdist.SwConfig(),
                    eval_seeds=[config.seed], ema_params=ema.params,
                )
                row["sw1"] = ev["sw1_mean"]
            rows.append(row)

        if out is not None and config.checkpoint_every > 0 \
                and step % config.checkpoint_every == 0 and step < config.steps:
            last_ckpt = out / f"ckpt_{step:08d}.mfck"
            _save_run_state(last_ckpt, model, ema, opt, streams, rows, step, config)

    paths = {}
    if out is not None:
        final_ckpt = out / "ckpt_final.mfck"
        _save_run_state(final_ckpt, model, ema, opt, streams, rows,
                        config.steps, config)
        metrics_path = out / "metrics.csv"
        write_metrics_csv(metrics_path, rows)
        paths = {"checkpoint": final_ckpt, "metrics": metrics_path,
                 "manifest": out / "manifest.json"}
        if last_ckpt is not None:
            paths["last_intermediate"] = last_ckpt
        write_manifest(paths["manifest"], config, paths)

    final = dict(rows[-1]) if rows else {}
    return RunRecord(
        config=config, rows=rows, final=final,
        wall_time_s=time.perf_counter() - t0, paths=paths,
        model=model, ema=ema,
    )


def one_step_sample(model: net.Mlp, noise_rng, n) -> np.ndarray:
    """x1 - u(x1, 0, 1) for n standard-normal draws of x1."""
    x1 = noise_rng.standard_normal((int(n), model.data_dim))
    return x1 - net.forward(model, x1, 0.0, 1.0)


def tail_stats(rows, steps, key="var_trace"):
    """Mean and standard error of a probe metric over the second half of a run."""
    vals = np.array([r[key] for r in rows
                     if r.get(key) is not None and r["step"] > steps / 2])
    if vals.size == 0:
        return float("nan"), float("nan")
    sem = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return float(vals.mean()), sem


# ---------------------------------------------------------------------------
# sweeps over (beta, seed)
# ---------------------------------------------------------------------------

def _run_cell(args):
    cfg, out_dir, sw_cfg, eval_seeds = args
    record = train(cfg, out_dir=out_dir)
    ev = swdist.evaluate_checkpoint(record.model, cfg.dataset, sw_cfg,
                                    eval_seeds, ema_params=record.ema.params)
    tail_mean, tail_sem = tail_stats(record.rows, cfg.steps)
    return {
        "beta": cfg.policy.beta,
        "seed": cfg.seed,
        "sw1": ev["sw1_mean"], "sw1_sem_eval": ev["sw1_sem"],
        "sw2": ev["sw2_mean"],
        "var_tail_mean": tail_mean, "var_tail_sem": tail_sem,
        "final_mf": record.final.get("mf_loss"),
        "wall_time_s": record.wall_time_s,
        "paths": {k: str(v) for k, v in record.paths.items()},
    }


def sweep(base: TrainConfig, betas, seeds, out_dir=None, threads=1,
          sw_cfg=None, eval_seeds=(101, 102, 103)):
    """Train a (beta, seed) grid and aggregate SW1 and tail gradient variance.

    Only the policy's beta and the master seed vary across cells; everything
    else (including the anchor) is held fixed so the sweep turns one knob.
    All cells share the SW projection seed. Returns {"cells": [...],
    "summary": [{beta, sw1_mean, sw1_sem, var_mean, var_sem}, ...]}.
    """
    from pathlib import Path

    sw_cfg = sw_cfg or swdist.SwConfig()
    jobs = []
    for beta in betas:
        pol = replace(base.policy, beta=float(beta))
        for seed in seeds:
            cfg = replace(base, policy=pol, seed=int(seed))
            cell_dir = None
            if out_dir is not None:
                cell_dir = str(Path(out_dir) / f"beta{beta:g}_seed{seed}")
            jobs.append((cfg, cell_dir, sw_cfg, tuple(eval_seeds)))

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            cells = list(ex.map(_run_cell, jobs))
    else:
        cells = [_run_cell(j) for j in jobs]

    summary = []
    for beta in betas:
        sub = [c for c in cells if c["beta"] == float(beta)]
        sw1s = np.array([c["sw1"] for c in sub])
        vars_ = np.array([c["var_tail_mean"] for c in sub])
        if len(sub) > 1:
            sw1_sem = float(sw1s.std(ddof=1) / np.sqrt(len(sub)))
            var_sem = float(vars_.std(ddof=1) / np.sqrt(len(sub)))
        else:
            sw1_sem = sub[0]["sw1_sem_eval"]
            var_sem = sub[0]["var_tail_sem"]
        summary.append({
            "beta": float(beta),
            "sw1_mean": float(sw1s.mean()), "sw1_sem": sw1_sem,
            "var_mean": float(vars_.mean()), "var_sem": var_sem,
        })
    return {"cells": cells, "summary": summary}
