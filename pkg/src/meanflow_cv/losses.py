"""The tangent-mixed average-velocity loss family and its semigradient.

The regression target is always the conditional velocity v_cond = x1 - x0.
What varies across the family is the tangent fed to the directional
derivative: the compound prediction at an interpolant draw (x_t, r, t) is

    V = u_theta(x_t, r, t) + (t - r) * sg[ d/dt u_theta along (v_tang, 0, 1) ]

where sg marks the stop-gradient: the directional derivative contributes to
the value of the loss but is treated as a constant by the training gradient.
The per-sample loss is |V - v_cond|^2, reduced by a batch mean.

``TangentPolicy`` selects v_tang as the mixture

    v_tang = (1 - beta) * v_cond + beta * v_proxy

with proxy "none" (beta = 0, the plain loss), "ema_boundary"
(u_{theta_bar}(x_t, t, t) from the EMA shadow), or "analytic_oracle" (the
exact marginal velocity of a known Gaussian mixture). An optional
flow-matching anchor |u_theta(x_t, t - delta, t) - v_cond|^2 with per-sample
delta ~ U[delta_min, delta_max] is added with weight anchor_lambda; its
delta draws are supplied by the caller so that loss, gradient, and
finite-difference evaluations see identical randomness.

``semigrad`` is the stop-gradient training gradient 2 g^T residual (plus the
anchor part); ``full_grad_fd`` differentiates the same scalar loss without
the stop-gradient by central finite differences, for gap probes on small
networks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gmm, net

__all__ = [
    "PROXIES",
    "TangentPolicy",
    "LossBreakdown",
    "mixed_tangent",
    "meanflow_loss",
    "semigrad",
    "full_grad_fd",
]

PROXIES = ("none", "ema_boundary", "analytic_oracle")

_FD_MAX_PARAMS = 2000
_FD_H_RANGE = (1e-6, 1e-3)


@dataclass(frozen=True)
class TangentPolicy:
    """How the JVP tangent is built and whether the anchor term is on."""

    beta: float = 0.0
    proxy: str = "none"
    anchor_lambda: float = 0.0
    anchor_delta: tuple = (1e-4, 1e-2)

    def __post_init__(self):
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.proxy not in PROXIES:
            raise ValueError(f"unknown proxy {self.proxy!r}; choose from {PROXIES}")
        if self.proxy == "none" and self.beta != 0.0:
            raise ValueError("proxy 'none' requires beta = 0")
        if self.anchor_lambda < 0.0:
            raise ValueError(f"anchor_lambda must be >= 0, got {self.anchor_lambda}")
        lo, hi = self.anchor_delta
        if not (0.0 < lo <= hi):
            raise ValueError("anchor_delta must satisfy 0 < delta_min <= delta_max")
        object.__setattr__(self, "anchor_delta", (float(lo), float(hi)))


@dataclass
class LossBreakdown:
    """Scalar pieces plus the per-sample arrays probes want to inspect."""

    mf_loss: float
    fm_loss: float
    total: float
    compound: np.ndarray      # (n, d)
    residual: np.ndarray      # (n, d)
    tangent_used: np.ndarray  # (n, d)


def mixed_tangent(policy: TangentPolicy, batch, model=None, ema=None, mix=None):
    """(1 - beta) v_cond + beta v_proxy for every sample in the batch."""
    if policy.beta == 0.0:
        return batch.v_cond
    if policy.proxy == "ema_boundary":
        if model is None or ema is None:
            raise ValueError("ema_boundary proxy requires model and ema state")
        shadow = model.with_params(ema.params)
        vhat = net.forward(shadow, batch.x_t, batch.t, batch.t)
    else:  # analytic_oracle
        if mix is None:
            raise ValueError("analytic_oracle proxy requires a mixture spec")
        vhat = gmm.marginal_velocity(mix, batch.x_t, batch.t)
    if policy.beta == 1.0:
        return vhat
    return (1.0 - policy.beta) * batch.v_cond + policy.beta * vhat


def _evaluate(model, batch, policy, anchor_deltas, ema, mix,
              tangent_override, target_override, need_cache):
    """Shared forward work for loss value and semigradient."""
    n = len(batch)
    if tangent_override is not None:
        tangent = np.asarray(tangent_override, dtype=np.float64)
    else:
        tangent = mixed_tangent(policy, batch, model=model, ema=ema, mix=mix)
    target = batch.v_cond if target_override is None else \
        np.asarray(target_override, dtype=np.float64)

    tan3 = np.empty((n, model.data_dim + 2))
    tan3[:, :-2] = tangent
    tan3[:, -2] = 0.0
    tan3[:, -1] = 1.0
    if need_cache:
        res, cache = net.jvp_cache(model, batch.x_t, batch.r, batch.t, tan3)
    else:
        res = net.jvp(model, batch.x_t, batch.r, batch.t, tan3)
        cache = None
    compound = res.value + (batch.t - batch.r)[:, None] * res.directional
    residual = compound - target
    mf = float(np.mean(np.sum(residual * residual, axis=1)))

    fm = 0.0
    anchor_resid = anchor_cache = None
    if policy.anchor_lambda > 0.0:
        if anchor_deltas is None:
            raise ValueError("anchor_deltas required when anchor_lambda > 0")
        deltas = np.asarray(anchor_deltas, dtype=np.float64)
        if need_cache:
            ua, anchor_cache = net.forward_cache(
                model, batch.x_t, batch.t - deltas, batch.t
            )
        else:
            ua = net.forward(model, batch.x_t, batch.t - deltas, batch.t)
        anchor_resid = ua - target
        fm = float(np.mean(np.sum(anchor_resid * anchor_resid, axis=1)))

    bd = LossBreakdown(
        mf_loss=mf,
        fm_loss=fm,
        total=mf + policy.anchor_lambda * fm,
        compound=compound,
        residual=residual,
        tangent_used=tangent,
    )
    return bd, cache, anchor_cache, anchor_resid


def meanflow_loss(model, batch, policy: TangentPolicy, anchor_deltas=None,
                  ema=None, mix=None, tangent_override=None,
                  target_override=None) -> LossBreakdown:
    """Evaluate the loss family at one batch (values only, no gradients)."""
    bd, _, _, _ = _evaluate(model, batch, policy, anchor_deltas, ema, mix,
                            tangent_override, target_override, need_cache=False)
    return bd


def semigrad(model, batch, policy: TangentPolicy, anchor_deltas=None,
             ema=None, mix=None, tangent_override=None, target_override=None):
    """Stop-gradient training gradient and the matching LossBreakdown.

    Returns (flat gradient over model.params, LossBreakdown). The gradient is
    the batch mean of 2 g^T residual plus anchor_lambda * 2 g_a^T
    anchor_residual, with the directional-derivative term held constant.
    """
    bd, cache, anchor_cache, anchor_resid = _evaluate(
        model, batch, policy, anchor_deltas, ema, mix,
        tangent_override, target_override, need_cache=True,
    )
    n = len(batch)
    grad = net.param_grad(model, batch.x_t, batch.r, batch.t,
                          seed=(2.0 / n) * bd.residual, cache=cache)
    if anchor_resid is not None:
        deltas = np.asarray(anchor_deltas, dtype=np.float64)
        grad += net.param_grad(
            model, batch.x_t, batch.t - deltas, batch.t,
            seed=(2.0 * policy.anchor_lambda / n) * anchor_resid,
            cache=anchor_cache,
        )
    return grad, bd


def full_grad_fd(model, batch, policy: TangentPolicy, anchor_deltas=None,
                 ema=None, mix=None, tangent_override=None,
                 target_override=None, h=1e-5) -> np.ndarray:
    """Central-difference gradient of the loss without the stop-gradient.

    Every occurrence of theta is perturbed, including inside the directional
    derivative, so this is the gradient of the "proper" objective. Guarded to
    small networks (n_params <= 2000) and h in [1e-6, 1e-3].
    """
    if model.n_params > _FD_MAX_PARAMS:
        raise ValueError(f"full_grad_fd is guarded to n_params <= {_FD_MAX_PARAMS}")
    if not (_FD_H_RANGE[0] <= h <= _FD_H_RANGE[1]):
        raise ValueError(f"h must lie in [{_FD_H_RANGE[0]}, {_FD_H_RANGE[1]}]")
    if tangent_override is None and policy.beta > 0.0 and policy.proxy == "ema_boundary":
        # freeze the shadow's tangent once; it does not follow theta
        tangent_override = mixed_tangent(policy, batch, model=model, ema=ema)

    def total(p):
        m = model.with_params(p)
        return meanflow_loss(
            m, batch, policy, anchor_deltas=anchor_deltas, ema=ema, mix=mix,
            tangent_override=tangent_override, target_override=target_override,
        ).total

    p0 = model.params.copy()
    g = np.empty_like(p0)
    for i in range(p0.size):
        orig = p0[i]
        p0[i] = orig + h
        fp = total(p0)
        p0[i] = orig - h
        fm = total(p0)
        p0[i] = orig
        g[i] = (fp - fm) / (2.0 * h)
    return g
