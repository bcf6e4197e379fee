"""Tests for the tangent-mixed loss family and its semigradient."""

from __future__ import annotations

import numpy as np
import pytest

from meanflow_cv import datasets, gmm, losses, net

from oracles import fd_gradient


def make_batch(rng, d=2, n=6, model=None):
    spec = datasets.DatasetSpec(kind="two_moons") if d == 2 else \
        datasets.DatasetSpec(kind="dgmm", dim=d)
    return datasets.sample_interpolant(
        rng, np.random.default_rng(rng.integers(1 << 30)),
        np.random.default_rng(rng.integers(1 << 30)),
        datasets.x0_source(spec), n,
    )


def tiny_model(rng, d=2, hidden=(6, 5)):
    return net.Mlp.init(d, hidden, rng)


# ---------------------------------------------------------------------------
# policy validation
# ---------------------------------------------------------------------------

def test_policy_validation():
    losses.TangentPolicy()  # defaults fine
    with pytest.raises(ValueError, match="beta"):
        losses.TangentPolicy(beta=1.2)
    with pytest.raises(ValueError, match="beta"):
        losses.TangentPolicy(beta=-0.1)
    with pytest.raises(ValueError, match="proxy"):
        losses.TangentPolicy(beta=0.5, proxy="none")
    with pytest.raises(ValueError, match="proxy"):
        losses.TangentPolicy(beta=0.5, proxy="wavelet")
    with pytest.raises(ValueError, match="anchor_lambda"):
        losses.TangentPolicy(anchor_lambda=-1.0)
    with pytest.raises(ValueError, match="anchor_delta"):
        losses.TangentPolicy(anchor_delta=(1e-2, 1e-4))
    with pytest.raises(ValueError, match="anchor_delta"):
        losses.TangentPolicy(anchor_delta=(0.0, 1e-2))


# ---------------------------------------------------------------------------
# mixed tangent
# ---------------------------------------------------------------------------

def test_mixed_tangent_endpoints_and_affine():
    rng = np.random.default_rng(0)
    model = tiny_model(rng)
    ema = net.EmaState.from_model(model, decay=0.9)
    batch = make_batch(rng)
    mix = gmm.triangle_mixture()

    v0 = losses.mixed_tangent(losses.TangentPolicy(), batch, model=model)
    np.testing.assert_array_equal(v0, batch.v_cond)

    pol_ema = losses.TangentPolicy(beta=1.0, proxy="ema_boundary")
    v1 = losses.mixed_tangent(pol_ema, batch, model=model, ema=ema)
    ema_model = model.with_params(ema.params)
    np.testing.assert_allclose(
        v1, net.forward(ema_model, batch.x_t, batch.t, batch.t), atol=1e-14
    )

    pol_mid = losses.TangentPolicy(beta=0.3, proxy="ema_boundary")
    vm = losses.mixed_tangent(pol_mid, batch, model=model, ema=ema)
    np.testing.assert_allclose(vm, 0.7 * batch.v_cond + 0.3 * v1, atol=1e-14)

    pol_an = losses.TangentPolicy(beta=1.0, proxy="analytic_oracle")
    va = losses.mixed_tangent(pol_an, batch, mix=mix)
    expect = gmm.marginal_velocity(mix, batch.x_t, batch.t)
    np.testing.assert_allclose(va, expect, atol=1e-14)


def test_mixed_tangent_missing_ingredients():
    rng = np.random.default_rng(1)
    batch = make_batch(rng)
    with pytest.raises(ValueError, match="ema"):
        losses.mixed_tangent(
            losses.TangentPolicy(beta=1.0, proxy="ema_boundary"), batch,
            model=tiny_model(rng),
        )
    with pytest.raises(ValueError, match="mixture"):
        losses.mixed_tangent(
            losses.TangentPolicy(beta=1.0, proxy="analytic_oracle"), batch
        )


def test_marginal_velocity_batched_t_matches_loop():
    mix = gmm.triangle_mixture()
    rng = np.random.default_rng(2)
    x = rng.uniform(-2, 2, size=(9, 2))
    t = rng.uniform(0.05, 0.95, size=9)
    v = gmm.marginal_velocity(mix, x, t)
    for i in range(9):
        np.testing.assert_allclose(
            v[i], gmm.conditional_stats(mix, x[i], t[i]).marginal_velocity,
            atol=1e-12,
        )
    # general path agrees on a non-diagonal mixture
    w = np.array([0.4, 0.6])
    means = np.array([[0.0, 0.0], [1.0, -1.0]])
    covs = np.stack([np.array([[0.3, 0.1], [0.1, 0.2]])] * 2)
    full = gmm.MixtureSpec(weights=w, means=means, covs=covs)
    vf = gmm.marginal_velocity(full, x, t)
    for i in range(9):
        np.testing.assert_allclose(
            vf[i], gmm.conditional_stats(full, x[i], t[i]).marginal_velocity,
            atol=1e-12,
        )


# ---------------------------------------------------------------------------
# loss values
# ---------------------------------------------------------------------------

def test_compound_prediction_definition():
    rng = np.random.default_rng(3)
    model = tiny_model(rng)
    batch = make_batch(rng, n=5)
    bd = losses.meanflow_loss(model, batch, losses.TangentPolicy())
    for i in range(5):
        tangent = np.concatenate([batch.v_cond[i], [0.0, 1.0]])
        res = net.jvp(model, batch.x_t[i], batch.r[i], batch.t[i], tangent)
        expect = res.value + (batch.t[i] - batch.r[i]) * res.directional
        np.testing.assert_allclose(bd.compound[i], expect, atol=1e-13)
    np.testing.assert_allclose(bd.residual, bd.compound - batch.v_cond, atol=1e-15)
    assert bd.mf_loss == pytest.approx(
        float(np.mean(np.sum(bd.residual**2, axis=1))), rel=1e-13
    )
    assert bd.fm_loss == 0.0
    assert bd.total == pytest.approx(bd.mf_loss)
    np.testing.assert_array_equal(bd.tangent_used, batch.v_cond)


def test_anchor_term_value():
    rng = np.random.default_rng(4)
    model = tiny_model(rng)
    batch = make_batch(rng, n=4)
    pol = losses.TangentPolicy(anchor_lambda=0.5, anchor_delta=(1e-3, 1e-2))
    deltas = np.full(4, 5e-3)
    bd = losses.meanflow_loss(model, batch, pol, anchor_deltas=deltas)
    u = net.forward(model, batch.x_t, batch.t - deltas, batch.t)
    fm = float(np.mean(np.sum((u - batch.v_cond) ** 2, axis=1)))
    assert bd.fm_loss == pytest.approx(fm, rel=1e-13)
    assert bd.total == pytest.approx(bd.mf_loss + 0.5 * fm, rel=1e-13)
    with pytest.raises(ValueError, match="anchor_deltas"):
        losses.meanflow_loss(model, batch, pol)


def test_batch_reduction_is_mean():
    rng = np.random.default_rng(5)
    model = tiny_model(rng)
    batch = make_batch(rng, n=7)
    bd = losses.meanflow_loss(model, batch, losses.TangentPolicy())
    singles = []
    for i in range(7):
        sub = datasets.InterpolantBatch(
            *(np.asarray(f)[i:i + 1] for f in
              (batch.x0, batch.x1, batch.t, batch.r, batch.x_t, batch.v_cond))
        )
        singles.append(losses.meanflow_loss(model, sub, losses.TangentPolicy()).mf_loss)
    assert bd.mf_loss == pytest.approx(np.mean(singles), rel=1e-12)


def test_target_and_tangent_overrides():
    rng = np.random.default_rng(6)
    model = tiny_model(rng)
    batch = make_batch(rng, n=4)
    target = rng.standard_normal((4, 2))
    tangent = rng.standard_normal((4, 2))
    bd = losses.meanflow_loss(
        model, batch, losses.TangentPolicy(), tangent_override=tangent,
        target_override=target,
    )
    np.testing.assert_array_equal(bd.tangent_used, tangent)
    np.testing.assert_allclose(bd.residual, bd.compound - target, atol=1e-15)


# ---------------------------------------------------------------------------
# semigradient vs finite differences
# ---------------------------------------------------------------------------

def _semigrad_fd(model, batch, pol, deltas=None, ema=None, mix=None, h=1e-6):
    """FD of the stop-gradient loss: the JVP contribution is frozen at theta0."""
    bd0 = losses.meanflow_loss(model, batch, pol, anchor_deltas=deltas,
                               ema=ema, mix=mix)
    frozen = bd0.compound - net.forward(model, batch.x_t, batch.r, batch.t)

    def f(p):
        m = model.with_params(p)
        u = net.forward(m, batch.x_t, batch.r, batch.t)
        res = u + frozen - (bd0.compound - bd0.residual)
        val = float(np.mean(np.sum(res**2, axis=1)))
        if pol.anchor_lambda > 0:
            ua = net.forward(m, batch.x_t, batch.t - deltas, batch.t)
            val += pol.anchor_lambda * float(
                np.mean(np.sum((ua - batch.v_cond) ** 2, axis=1))
            )
        return val

    return fd_gradient(f, model.params, h=h)


@pytest.mark.parametrize("case", ["plain", "anchor", "ema", "analytic"])
def test_semigrad_matches_fd(case):
    rng = np.random.default_rng(hash(case) % (1 << 16))
    model = tiny_model(rng)
    batch = make_batch(rng, n=5)
    ema = mix = None
    deltas = None
    if case == "plain":
        pol = losses.TangentPolicy()
    elif case == "anchor":
        pol = losses.TangentPolicy(anchor_lambda=0.5)
        deltas = rng.uniform(*losses.TangentPolicy().anchor_delta, size=5)
    elif case == "ema":
        pol = losses.TangentPolicy(beta=0.7, proxy="ema_boundary")
        ema = net.EmaState.from_model(model, decay=0.9)
        net.ema_update(ema, rng.standard_normal(model.n_params))
    else:
        pol = losses.TangentPolicy(beta=1.0, proxy="analytic_oracle")
        mix = gmm.triangle_mixture()

    g, bd = losses.semigrad(model, batch, pol, anchor_deltas=deltas,
                            ema=ema, mix=mix)
    assert np.isfinite(bd.total)
    fd = _semigrad_fd(model, batch, pol, deltas=deltas, ema=ema, mix=mix)
    denom = np.linalg.norm(fd)
    assert np.linalg.norm(g - fd) / denom < 1e-5


def test_semigrad_equals_full_grad_at_zero_gap():
    # with r = t the compound prediction has no JVP term, so the stop-gradient
    # and full gradients coincide
    rng = np.random.default_rng(8)
    model = tiny_model(rng)
    b = make_batch(rng, n=5)
    batch = datasets.InterpolantBatch(
        x0=b.x0, x1=b.x1, t=b.t, r=b.t.copy(),
        x_t=b.x_t, v_cond=b.v_cond,
    )
    pol = losses.TangentPolicy()
    g, _ = losses.semigrad(model, batch, pol)
    full = losses.full_grad_fd(model, batch, pol, h=1e-6)
    assert np.linalg.norm(g - full) / np.linalg.norm(full) < 1e-6


def test_full_grad_fd_differs_from_semigrad_at_finite_gap():
    rng = np.random.default_rng(9)
    model = tiny_model(rng)
    batch = make_batch(rng, n=8)
    pol = losses.TangentPolicy()
    g, _ = losses.semigrad(model, batch, pol)
    full = losses.full_grad_fd(model, batch, pol, h=1e-6)
    # the gap term 2 (t-r) (grad of jvp)^T residual is generically nonzero
    assert np.linalg.norm(g - full) / np.linalg.norm(full) > 1e-4


def test_full_grad_fd_guards():
    big = net.Mlp.init(2, (64, 64), np.random.default_rng(0))
    batch = make_batch(np.random.default_rng(1), n=2)
    assert big.n_params > 2000
    with pytest.raises(ValueError, match="2000"):
        losses.full_grad_fd(big, batch, losses.TangentPolicy())
    small = tiny_model(np.random.default_rng(2))
    with pytest.raises(ValueError, match="h"):
        losses.full_grad_fd(small, batch, losses.TangentPolicy(), h=1e-9)
