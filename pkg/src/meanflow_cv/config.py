"""YAML round-trip for run configurations and the named presets.

A config file mirrors TrainConfig one to one, with nested ``dataset`` and
``policy`` blocks. parse(emit(cfg)) == cfg holds exactly, so resolved configs
written next to run artifacts can be fed back to ``train`` unchanged.

Presets separate two kinds of values in their header comments: "recipe"
values reproduce the published one-step training setup (optimizer, schedule,
network width, tangent policy, anchor), while "artifact" values are desk-
scale choices of this implementation (dataset, step budget, seed) that are
expected to be overridden.
"""

from __future__ import annotations

from dataclasses import asdict

import yaml

from .datasets import DatasetSpec
from .losses import TangentPolicy
from .trainer import TrainConfig

__all__ = ["PRESETS", "preset", "emit", "parse", "save", "load"]


def _baseline() -> TrainConfig:
    return TrainConfig(
        dataset=DatasetSpec(kind="eight_gaussians"),
        policy=TangentPolicy(beta=0.0, proxy="none", anchor_lambda=0.0),
        steps=20_000, batch_size=256, hidden=(128, 128, 128),
        optimizer="adam", lr=1e-3, ema_decay=0.999, seed=42,
        probe_every=2000, probe_replicas=8,
    )


def _recipe() -> TrainConfig:
    base = _baseline()
    return TrainConfig(
        dataset=base.dataset,
        policy=TangentPolicy(beta=1.0, proxy="ema_boundary",
                             anchor_lambda=0.5, anchor_delta=(1e-4, 1e-2)),
        steps=base.steps, batch_size=base.batch_size, hidden=base.hidden,
        optimizer=base.optimizer, lr=base.lr, ema_decay=base.ema_decay,
        seed=base.seed, probe_every=base.probe_every,
        probe_replicas=base.probe_replicas,
    )


PRESETS = {
    "baseline": (_baseline,
                 "plain conditional-velocity target (beta 0, no anchor)"),
    "recipe": (_recipe,
               "full tangent-proxy recipe: beta 1 shadow tangent with a "
               "0.5-weighted boundary anchor"),
}

_HEADER = (
    "# recipe values: optimizer, lr, batch_size, hidden, ema_decay,\n"
    "#   policy (beta, proxy, anchor_lambda, anchor_delta), probe cadence\n"
    "# artifact values: dataset, steps, seed (desk-scale defaults,\n"
    "#   override freely)\n"
)


def preset(name: str) -> TrainConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name][0]()


def emit(cfg: TrainConfig, preset_name=None) -> str:
    """Serialize a TrainConfig to YAML; parse() inverts this exactly."""
    doc = asdict(cfg)
    doc["hidden"] = list(cfg.hidden)
    doc["policy"]["anchor_delta"] = list(cfg.policy.anchor_delta)
    header = ""
    if preset_name is not None:
        header = f"# preset: {preset_name} - {PRESETS[preset_name][1]}\n" + _HEADER
    return header + yaml.safe_dump(doc, sort_keys=True)


def parse(text: str) -> TrainConfig:
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ValueError("config must be a YAML mapping")
    try:
        dataset = DatasetSpec(**doc.pop("dataset"))
        pol = doc.pop("policy")
        pol["anchor_delta"] = tuple(pol.get("anchor_delta", (1e-4, 1e-2)))
        policy = TangentPolicy(**pol)
        doc["hidden"] = tuple(doc.get("hidden", (128, 128, 128)))
        return TrainConfig(dataset=dataset, policy=policy, **doc)
    except TypeError as exc:
        raise ValueError(f"bad config field: {exc}") from exc


def save(path, cfg: TrainConfig, preset_name=None):
    with open(path, "w") as fh:
        fh.write(emit(cfg, preset_name=preset_name))


def load(path) -> TrainConfig:
    with open(path) as fh:
        return parse(fh.read())
