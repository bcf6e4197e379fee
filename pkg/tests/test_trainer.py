"""Training loop: determinism, resume, divergence handling, sweeps."""

import numpy as np
import pytest

from meanflow_cv import datasets, losses, net, swdist, trainer


def tiny_config(**kw):
    base = dict(
        dataset=datasets.DatasetSpec(kind="checkerboard"),
        policy=losses.TangentPolicy(),
        steps=40, batch_size=16, hidden=(8,),
        probe_every=20, probe_replicas=2, seed=11,
    )
    base.update(kw)
    return trainer.TrainConfig(**base)


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError, match="optimizer"):
        tiny_config(optimizer="lbfgs")
    with pytest.raises(ValueError, match="lr"):
        tiny_config(lr=0.0)
    with pytest.raises(ValueError, match="ema_decay"):
        tiny_config(ema_decay=1.0)
    with pytest.raises(ValueError, match="replicas"):
        tiny_config(probe_replicas=1)
    with pytest.raises(ValueError, match="positive"):
        tiny_config(steps=0)
    with pytest.raises(ValueError, match="cadence"):
        tiny_config(probe_every=-1)


def test_analytic_oracle_requires_dgmm():
    pol = losses.TangentPolicy(beta=0.5, proxy="analytic_oracle")
    cfg = tiny_config(policy=pol, steps=1)
    with pytest.raises(ValueError, match="dgmm"):
        trainer.train(cfg)


# ---------------------------------------------------------------------------
# determinism and resume
# ---------------------------------------------------------------------------

def test_train_deterministic():
    cfg = tiny_config()
    a = trainer.train(cfg)
    b = trainer.train(cfg)
    assert np.array_equal(a.model.params, b.model.params)
    assert np.array_equal(a.ema.params, b.ema.params)
    assert a.rows == b.rows


def test_seed_changes_run():
    a = trainer.train(tiny_config(seed=1))
    b = trainer.train(tiny_config(seed=2))
    assert not np.array_equal(a.model.params, b.model.params)


def test_probe_row_cadence_and_final_row():
    rec = trainer.train(tiny_config(steps=50, probe_every=20))
    assert [r["step"] for r in rec.rows] == [20, 40, 50]
    for r in rec.rows:
        assert r["var_trace"] > 0
        assert r["mf_loss"] > 0
        assert r["sw1"] is None
    assert rec.final == rec.rows[-1]


def test_resume_matches_uninterrupted(tmp_path):
    cfg = tiny_config(steps=60, checkpoint_every=30, probe_every=20)
    full = trainer.train(cfg, out_dir=tmp_path / "full")

    mid = tmp_path / "full" / "ckpt_00000030.mfck"
    assert mid.exists()
    resumed = trainer.train(cfg, out_dir=tmp_path / "resumed", resume_from=mid)

    assert np.array_equal(full.model.params, resumed.model.params)
    assert np.array_equal(full.ema.params, resumed.ema.params)
    assert full.rows == resumed.rows
    a = (tmp_path / "full" / "metrics.csv").read_bytes()
    b = (tmp_path / "resumed" / "metrics.csv").read_bytes()
    assert a == b


def test_resume_rejects_mismatched_config(tmp_path):
    cfg = tiny_config(steps=20, checkpoint_every=10)
    trainer.train(cfg, out_dir=tmp_path)
    ckpt = tmp_path / "ckpt_00000010.mfck"
    with pytest.raises(ValueError, match="architecture"):
        trainer.train(tiny_config(steps=20, hidden=(4,)), resume_from=ckpt)
    with pytest.raises(ValueError, match="seed"):
        trainer.train(tiny_config(steps=20, seed=99), resume_from=ckpt)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def test_metrics_csv_roundtrip(tmp_path):
    rows = [
        {"step": 10, "mf_loss": 0.5, "fm_loss": None, "var_trace": 1.25, "sw1": None},
        {"step": 20, "mf_loss": 0.25, "fm_loss": 0.1, "var_trace": 0.75, "sw1": 2.5},
    ]
    path = tmp_path / "metrics.csv"
    trainer.write_metrics_csv(path, rows)
    text = path.read_text()
    assert text.splitlines()[0] == "step,mf_loss,fm_loss,var_trace,sw1"
    assert trainer.read_metrics_csv(path) == rows


def test_metrics_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("step,loss\n1,0.5\n")
    with pytest.raises(ValueError, match="header"):
        trainer.read_metrics_csv(path)


def test_run_writes_manifest_and_checkpoint(tmp_path):
    cfg = tiny_config(steps=20)
    rec = trainer.train(cfg, out_dir=tmp_path)
    assert (tmp_path / "ckpt_final.mfck").exists()
    assert (tmp_path / "metrics.csv").exists()
    import json

    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["package"] == "meanflow-cv"
    assert doc["config"]["steps"] == 20
    assert set(doc["paths"]) >= {"checkpoint", "metrics", "manifest"}
    model, ema, step, seed = net.load_checkpoint(rec.paths["checkpoint"])
    assert step == 20 and seed == cfg.seed
    assert np.array_equal(model.params, rec.model.params)


# ---------------------------------------------------------------------------
# divergence
# ---------------------------------------------------------------------------

def test_nan_abort_keeps_last_good(tmp_path):
    cfg = tiny_config(optimizer="sgd", lr=1e20, steps=30, hidden=(8, 8))
    with np.errstate(all="ignore"), pytest.raises(trainer.TrainingDiverged):
        trainer.train(cfg, out_dir=tmp_path)
    ckpt = tmp_path / "diverged_last_good.mfck"
    assert ckpt.exists()
    model, ema, step, _ = net.load_checkpoint(ckpt)
    assert np.all(np.isfinite(model.params))
    assert np.all(np.isfinite(ema.params))
    assert step < cfg.steps


# ---------------------------------------------------------------------------
# sampling, evaluation, aggregation
# ---------------------------------------------------------------------------

def test_one_step_sample_shape_and_determinism():
    model = net.Mlp.init(2, (8,), np.random.default_rng(0))
    a = trainer.one_step_sample(model, np.random.default_rng(5), 64)
    b = trainer.one_step_sample(model, np.random.default_rng(5), 64)
    assert a.shape == (64, 2)
    assert np.array_equal(a, b)
    x1 = np.random.default_rng(5).standard_normal((64, 2))
    assert np.allclose(a, x1 - net.forward(model, x1, 0.0, 1.0))


def test_short_training_improves_sw1():
    spec = datasets.DatasetSpec(kind="eight_gaussians")
    cfg = trainer.TrainConfig(
        dataset=spec, steps=1500, batch_size=128, hidden=(32, 32),
        probe_every=0, probe_replicas=2, seed=3, ema_decay=0.99,
    )
    rec = trainer.train(cfg)
    sw_cfg = swdist.SwConfig(n_samples=1024, n_projections=64)
    init = net.Mlp.init(2, (32, 32), trainer.stream(cfg.seed, trainer.TAG_INIT))
    before = swdist.evaluate_checkpoint(init, spec, sw_cfg, [7])
    after = swdist.evaluate_checkpoint(rec.model, spec, sw_cfg, [7],
                                       ema_params=rec.ema.params)
    assert after["sw1_mean"] < 0.5 * before["sw1_mean"]


def test_in_training_sw_eval_row():
    cfg = tiny_config(steps=20, probe_every=20, eval_sw_every=20)
    rec = trainer.train(cfg)
    assert rec.rows[-1]["sw1"] is not None and rec.rows[-1]["sw1"] > 0


def test_tail_stats():
    rows = [
        {"step": 10, "var_trace": 1.0},
        {"step": 20, "var_trace": 3.0},
        {"step": 30, "var_trace": 5.0},
    ]
    mean, sem = trainer.tail_stats(rows, steps=30)
    assert mean == pytest.approx(4.0)
    assert sem == pytest.approx(1.0)
    mean, sem = trainer.tail_stats([], steps=30)
    assert np.isnan(mean) and np.isnan(sem)


def test_sweep_summary_shape(tmp_path):
    base = trainer.TrainConfig(
        dataset=datasets.DatasetSpec(kind="checkerboard"),
        policy=losses.TangentPolicy(proxy="ema_boundary", anchor_lambda=0.5),
        steps=30, batch_size=16, hidden=(8,),
        probe_every=15, probe_replicas=2, seed=5,
    )
    sw_cfg = swdist.SwConfig(n_samples=128, n_projections=8)
    out = trainer.sweep(base, betas=(0.0, 1.0), seeds=(5,),
                        out_dir=tmp_path, sw_cfg=sw_cfg, eval_seeds=(7,))
    assert len(out["cells"]) == 2
    assert [s["beta"] for s in out["summary"]] == [0.0, 1.0]
    for s in out["summary"]:
        for key in ("sw1_mean", "sw1_sem", "var_mean", "var_sem"):
            assert np.isfinite(s[key])
    for cell in out["cells"]:
        assert (tmp_path / f"beta{cell['beta']:g}_seed5" / "metrics.csv").exists()
        assert cell["var_tail_mean"] > 0
