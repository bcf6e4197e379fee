"""Measurement probes: gradient variance, optimal beta, gap pieces, bias asymmetry.

Everything here observes a model without changing it. Probes draw their own
randomness from explicit seeds, so the same probe at the same state always
reports the same numbers, and running a probe never advances training streams.

Conventions shared by the estimators: for aggregated velocity-field models
u(x, r, t), the per-sample spatial factor is J = (t - r) d_x u - I and its
tangent-side companion is A = J + I = (t - r) d_x u. With conditional target
covariance S = Cov[v_cond | x_t] and tangent-proxy bias b, the gradient
second moment as a function of the mixing coefficient beta is the quadratic

    M(beta) = alpha0 - 2 alpha1 beta + alpha2 beta^2,
    alpha0 = tr(G J S J^T), alpha1 = tr(G J S A^T),
    alpha2 = tr(G A (S + b b^T) A^T),

evaluated here with G = I. Its unconstrained minimizer alpha1 / alpha2 is
reported clipped to [0, 1]; a scalar shortcut kappa/(kappa+1) *
sigma2d/(sigma2d + |b|^2) with kappa = tr((t - r) d_x u)/d - 1 is reported
alongside for the isotropic picture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import datasets, gmm, losses, net, trainer

__all__ = [
    "GradVarianceReport", "BetaEstimateReport", "GapReport", "AsymmetryReport",
    "grad_variance", "loss_variance_vs_t", "estimate_kappa",
    "estimate_beta_star", "semigradient_gap", "bias_asymmetry_probe",
    "fit_quadratic_coefficient",
]

_GAP_MAX_PARAMS = 2000

# probe-local stream tags, disjoint from the trainer's
_TAG_ASYM_EVAL = 71
_TAG_LOSS_VS_T = 72


@dataclass(frozen=True)
class GradVarianceReport:
    """Spread of the per-batch semigradient across replica batches."""

    trace_cov: float        # sum over parameters of the unbiased variance
    grad_norms: tuple       # |g_k| for each replica
    mean_grad_norm: float   # |mean_k g_k|
    n_replicas: int
    batch_size: int


@dataclass(frozen=True)
class BetaEstimateReport:
    """Closed-form mixing-coefficient estimates pooled over probe points.

    alpha0/1/2 define M(beta) with the probed bias; alpha2_no_bias drops the
    b b^T term. beta_star_matrix minimizes the biased quadratic on [0, 1],
    beta_star_no_bias the unbiased one. ``pathological`` flags alpha2 ~ 0
    (the tangent has no pathway into the gradient), in which case the
    quadratic degenerates and the better endpoint is reported.
    """

    kappa_hat: float
    sigma2d_hat: float
    bias_sq_hat: float
    beta_star_scalar: float
    alpha0: float
    alpha1: float
    alpha2: float
    alpha2_no_bias: float
    beta_star_matrix: float
    beta_star_no_bias: float
    pathological: bool
    probe_points: tuple     # one dict per probed t


@dataclass(frozen=True)
class GapReport:
    """Exact split of the non-stop-gradient gradient at one batch.

    full = semi + mean_field + variance up to finite-difference error;
    closure_residual_norm is that error and is always reported, never folded
    into the pieces.
    """

    full: np.ndarray
    semi: np.ndarray
    mean_field: np.ndarray
    variance: np.ndarray
    closure_residual_norm: float

    @property
    def norms(self):
        return {
            "full": float(np.linalg.norm(self.full)),
            "semi": float(np.linalg.norm(self.semi)),
            "mean_field": float(np.linalg.norm(self.mean_field)),
            "variance": float(np.linalg.norm(self.variance)),
            "closure_residual": self.closure_residual_norm,
        }


@dataclass(frozen=True)
class AsymmetryReport:
    """Boundary-field error after training with a deliberately biased signal.

    The same bias vector is injected either into the JVP tangent or into the
    regression target; a third run without bias calibrates the plain fitting
    error. Errors are mean Euclidean distances between u(x, t, t) and the
    exact marginal velocity over fresh probe points.
    """

    bias: np.ndarray
    bias_norm: float
    boundary_error_tangent: float
    boundary_error_target: float
    boundary_error_baseline: float
    per_t: tuple            # ({"t", "tangent", "target", "baseline"}, ...)
    model_tangent: net.Mlp
    model_target: net.Mlp
    model_baseline: net.Mlp


# ---------------------------------------------------------------------------
# gradient variance across replica batches
# ---------------------------------------------------------------------------

def grad_variance(model, policy, source, batch_size, n_replicas, seed_seq,
                  ema=None, mix=None, overlap_prob=0.0) -> GradVarianceReport:
    """Trace of the semigradient covariance from n_replicas fresh batches.

    Each replica draws an independent (data, noise, time) stream triple from
    seed_seq, mirrors the training step's anchor-delta draw, and computes one
    semigradient. The trace is the sum over parameters of the across-replica
    variance with the K - 1 divisor.
    """
    if n_replicas < 2:
        raise ValueError("need at least 2 replicas for a variance")
    lam = policy.anchor_lambda
    dmin, dmax = policy.anchor_delta
    grads = np.empty((n_replicas, model.n_params))
    for k, child in enumerate(seed_seq.spawn(n_replicas)):
        d_rng, n_rng, t_rng = (np.random.default_rng(s) for s in child.spawn(3))
        batch = datasets.sample_interpolant(d_rng, n_rng, t_rng, source,
                                            batch_size, overlap_prob=overlap_prob)
        deltas = t_rng.uniform(dmin, dmax, batch_size) if lam > 0 else None
        grads[k], _ = losses.semigrad(model, batch, policy,
                                      anchor_deltas=deltas, ema=ema, mix=mix)
    return GradVarianceReport(
        trace_cov=float(grads.var(axis=0, ddof=1).sum()),
        grad_norms=tuple(float(x) for x in np.linalg.norm(grads, axis=1)),
        mean_grad_norm=float(np.linalg.norm(grads.mean(axis=0))),
        n_replicas=int(n_replicas),
        batch_size=int(batch_size),
    )


def loss_variance_vs_t(model, policy, source, ts, gap=0.25, n=4096, seed=0,
                       ema=None, mix=None):
    """Mean and variance of the per-sample loss along t at a fixed time gap.

    One shared set of (x0, x1) pairs is reused for every t so the curve
    reflects the t dependence, not resampling noise. r is max(0, t - gap).
    Times outside (0, 1] are skipped. Returns a list of row dicts with keys
    t, r, loss_mean, loss_var, loss_sem.
    """
    rng = np.random.default_rng(
        np.random.SeedSequence(int(seed), spawn_key=(_TAG_LOSS_VS_T,)))
    x0 = np.asarray(source(rng, n), dtype=np.float64)
    x1 = rng.standard_normal(x0.shape)
    v_cond = x1 - x0
    lam = policy.anchor_lambda
    dmin, dmax = policy.anchor_delta
    deltas = rng.uniform(dmin, dmax, n) if lam > 0 else None

    rows = []
    for t in ts:
        t = float(t)
        if not (0.0 < t <= 1.0):
            continue
        r = max(0.0, t - gap)
        tv = np.full(n, t)
        rv = np.full(n, r)
        x_t = (1.0 - t) * x0 + t * x1
        batch = datasets.InterpolantBatch(x0=x0, x1=x1, t=tv, r=rv,
                                          x_t=x_t, v_cond=v_cond)
        bd = losses.meanflow_loss(model, batch, policy, anchor_deltas=deltas,
                                  ema=ema, mix=mix)
        per_sample = np.sum(bd.residual**2, axis=1)
        rows.append({
            "t": t, "r": r,
            "loss_mean": float(per_sample.mean()),
            "loss_var": float(per_sample.var(ddof=1)),
            "loss_sem": float(per_sample.std(ddof=1) / np.sqrt(n)),
        })
    return rows


# ---------------------------------------------------------------------------
# contraction factor and optimal mixing coefficient
# ---------------------------------------------------------------------------

def estimate_kappa(model, x, r, t, mode="hutchinson", n_probes=16, rng=None):
    """Per-point estimate of tr((t - r) d_x u) / d - 1.

    "hutchinson" uses n_probes shared Rademacher directions through the JVP;
    "dense" assembles the spatial Jacobian exactly and is meant as the slow
    cross-check. Returns an array of shape (n,).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n, d = x.shape
    rv = np.broadcast_to(np.asarray(r, dtype=np.float64), (n,))
    tv = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    if mode == "dense":
        trace = np.array([
            np.trace(net.spatial_jacobian(model, x[i], rv[i], tv[i]))
            for i in range(n)
        ])
    elif mode == "hutchinson":
        if rng is None:
            rng = np.random.default_rng(0)
        if n_probes < 1:
            raise ValueError("n_probes must be positive")
        acc = np.zeros(n)
        tan3 = np.zeros((n, d + 2))
        for _ in range(n_probes):
            z = rng.integers(0, 2, size=d) * 2.0 - 1.0
            tan3[:, :-2] = z
            res = net.jvp(model, x, rv, tv, tan3)
            acc += res.directional @ z
        trace = acc / n_probes
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return (tv - rv) * trace / d - 1.0


def _clip01(v):
    return float(min(max(v, 0.0), 1.0))


def estimate_beta_star(model, mix, ts=(0.1, 0.3, 0.5, 0.7, 0.9), gap=0.25,
                       n_per_t=512, seed=0, bias_fn=None) -> BetaEstimateReport:
    """Closed-form optimal mixing coefficient against analytic conditionals.

    For each probe time t (with r = max(0, t - gap)), draws n_per_t points
    x_t from the mixture's interpolant marginal, assembles J and A from the
    dense spatial Jacobian, takes S = Cov[v_cond | x_t] from the mixture's
    conditionals, and pools the alpha quadratic-form sums over all points
    (ratio of sums, not mean of ratios). ``bias_fn(x, r, t) -> (n, d)``
    injects a tangent-proxy bias; None means an unbiased proxy.
    """
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    d = mix.d
    tot = {"a0": 0.0, "a1": 0.0, "a2": 0.0, "a2nb": 0.0,
           "kappa": 0.0, "sig": 0.0, "bias": 0.0, "n": 0}
    points = []
    for t in ts:
        t = float(t)
        if not (0.0 < t <= 1.0):
            continue
        r = max(0.0, t - gap)
        x0 = datasets.sample_mixture(mix, rng, n_per_t)
        x1 = rng.standard_normal((n_per_t, d))
        x_t = (1.0 - t) * x0 + t * x1
        stats = gmm.conditional_stats(mix, x_t, t)
        bias = np.zeros((n_per_t, d)) if bias_fn is None else \
            np.asarray(bias_fn(x_t, r, t), dtype=np.float64)
        sub = {"a0": 0.0, "a1": 0.0, "a2": 0.0, "a2nb": 0.0,
               "kappa": 0.0, "sig": 0.0, "bias": 0.0}
        for i in range(n_per_t):
            A = (t - r) * net.spatial_jacobian(model, x_t[i], r, t)
            J = A - np.eye(d)
            S = stats.velocity_cov[i]
            b = bias[i]
            JS = J @ S
            sub["a0"] += float(np.sum(JS * J))       # tr(J S J^T)
            sub["a1"] += float(np.sum(JS * A))       # tr(J S A^T)
            a2nb = float(np.sum((A @ S) * A))        # tr(A S A^T)
            Ab = A @ b
            sub["a2nb"] += a2nb
            sub["a2"] += a2nb + float(Ab @ Ab)
            sub["kappa"] += float(np.trace(J)) / d
            sub["sig"] += float(np.trace(S))
            sub["bias"] += float(b @ b)
        beta_nb = _point_beta(sub["a1"], sub["a2nb"])
        beta_m = _point_beta(sub["a1"], sub["a2"])
        points.append({
            "t": t, "r": r, "n": n_per_t,
            "alpha0": sub["a0"] / n_per_t, "alpha1": sub["a1"] / n_per_t,
            "alpha2": sub["a2"] / n_per_t,
            "alpha2_no_bias": sub["a2nb"] / n_per_t,
            "beta_star_no_bias": beta_nb[0], "beta_star_matrix": beta_m[0],
            "kappa": sub["kappa"] / n_per_t,
            "sigma2d": sub["sig"] / n_per_t,
            "bias_sq": sub["bias"] / n_per_t,
        })
        for k in ("a0", "a1", "a2", "a2nb", "kappa", "sig", "bias"):
            tot[k] += sub[k]
        tot["n"] += n_per_t
    if tot["n"] == 0:
        raise ValueError("no feasible probe times in (0, 1]")

    m = tot["n"]
    beta_matrix, pathological = _point_beta(tot["a1"], tot["a2"])
    beta_no_bias, _ = _point_beta(tot["a1"], tot["a2nb"])
    kappa = tot["kappa"] / m
    sig2d = tot["sig"] / m
    bias_sq = tot["bias"] / m
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = (np.float64(kappa) / np.float64(kappa + 1.0)) \
            * (np.float64(sig2d) / np.float64(sig2d + bias_sq))
    scalar = _clip01(float(raw)) if np.isfinite(raw) else 0.0
    return BetaEstimateReport(
        kappa_hat=kappa, sigma2d_hat=sig2d, bias_sq_hat=bias_sq,
        beta_star_scalar=min(scalar, np.nextafter(1.0, 0.0)),
        alpha0=tot["a0"] / m, alpha1=tot["a1"] / m, alpha2=tot["a2"] / m,
        alpha2_no_bias=tot["a2nb"] / m,
        beta_star_matrix=beta_matrix, beta_star_no_bias=beta_no_bias,
        pathological=pathological, probe_points=tuple(points),
    )


def _point_beta(a1, a2):
    """Constrained minimizer of a0 - 2 a1 b + a2 b^2 on [0, 1]."""
    scale = max(abs(a1), abs(a2), 1.0)
    if a2 <= 1e-12 * scale:
        # no quadratic term: linear in beta, pick the better endpoint
        return (1.0 if a1 > 0.0 else 0.0), True
    return _clip01(a1 / a2), False


# ---------------------------------------------------------------------------
# semigradient gap decomposition
# ---------------------------------------------------------------------------

def semigradient_gap(model, batch, mix, h=1e-5) -> GapReport:
    """Split full gradient - semigradient into mean-field and variance parts.

    Works on the analytic conditional objective: the batch mean of
    |rbar|^2 + tr(J S J^T), where rbar = u + (t - r)(d_x u . vbar + d_t u)
    - vbar is the deterministic residual at the mixture's exact marginal
    velocity vbar, J = (t - r) d_x u - I, and S = Cov[v_cond | x_t]. Only
    x_t, r, t of the batch are read; the conditional fluctuation enters
    through S rather than through sampled targets.

    semi is the stop-gradient update direction 2 g^T rbar (residual held
    fixed), mean_field is the central-difference gradient of |rbar|^2 minus
    semi (the part flowing through the differentiated velocity inside the
    residual), and variance is the central-difference gradient of the trace
    term alone. full is the central difference of the whole objective, so
    full = semi + mean_field + variance up to finite-difference rounding,
    reported as closure_residual_norm. The mean_field piece shrinks with the
    residual as training converges while the variance piece persists.
    """
    if model.n_params > _GAP_MAX_PARAMS:
        raise ValueError(f"semigradient_gap is guarded to n_params <= {_GAP_MAX_PARAMS}")
    if not (0.0 < h < 1e-2):
        raise ValueError(f"finite-difference step h must lie in (0, 1e-2), got {h}")
    n = len(batch)
    d = model.data_dim
    x, r, t = batch.x_t, batch.r, batch.t
    vbar = gmm.marginal_velocity(mix, x, t)
    sig = np.empty((n, d, d))
    for i in range(n):
        sig[i] = gmm.conditional_stats(mix, x[i], float(t[i])).velocity_cov
    gapw = np.asarray(t - r, dtype=np.float64)
    tan = np.empty((n, d + 2))
    tan[:, :d] = vbar
    tan[:, d] = 0.0
    tan[:, d + 1] = 1.0
    eye = np.eye(d)

    def objective_parts(params):
        m = model.with_params(params)
        res = net.jvp(m, x, r, t, tan)
        rbar = res.value + gapw[:, None] * res.directional - vbar
        msq = float(np.mean(np.sum(rbar * rbar, axis=1)))
        jac = net.spatial_jacobian(m, x, r, t)
        J = gapw[:, None, None] * jac - eye
        tr = float(np.mean(np.sum((J @ sig) * J, axis=(1, 2))))
        return msq, tr

    # stop-gradient direction: residual frozen, value path only
    res0 = net.jvp(model, x, r, t, tan)
    rbar0 = res0.value + gapw[:, None] * res0.directional - vbar
    _, cache = net.forward_cache(model, x, r, t)
    semi = net.param_grad(model, x, r, t, seed=(2.0 / n) * rbar0, cache=cache)

    p0 = model.params.copy()
    grad_msq = np.empty_like(p0)
    grad_tr = np.empty_like(p0)
    full = np.empty_like(p0)
    for i in range(p0.size):
        orig = p0[i]
        p0[i] = orig + h
        msq_p, tr_p = objective_parts(p0)
        p0[i] = orig - h
        msq_m, tr_m = objective_parts(p0)
        p0[i] = orig
        grad_msq[i] = (msq_p - msq_m) / (2.0 * h)
        grad_tr[i] = (tr_p - tr_m) / (2.0 * h)
        full[i] = ((msq_p + tr_p) - (msq_m + tr_m)) / (2.0 * h)

    mean_field = grad_msq - semi
    variance = grad_tr
    closure = full - (semi + mean_field + variance)
    return GapReport(full=full, semi=semi, mean_field=mean_field,
                     variance=variance,
                     closure_residual_norm=float(np.linalg.norm(closure)))


# ---------------------------------------------------------------------------
# tangent-vs-target bias asymmetry
# ---------------------------------------------------------------------------

def bias_asymmetry_probe(mix, bias, steps=6000, batch_size=256,
                         hidden=(64, 64), lr=1e-3, seed=0, n_eval=2048,
                         eval_ts=(0.25, 0.5, 0.75)) -> AsymmetryReport:
    """Train with a fixed bias injected into tangent vs target and compare.

    Three runs share the init and every batch: bias added to the JVP tangent,
    bias added to the regression target, and no bias as the fitting-error
    baseline. The learning rate decays linearly to zero over the second half
    of each run to push the optimization noise floor well below the injected
    bias. The reported numbers are boundary-field errors
    mean |u(x, t, t) - vbar(x, t)| over fresh mixture-marginal draws; the
    trained models are returned for deeper field comparisons.
    """
    bias = np.asarray(bias, dtype=np.float64)
    if bias.shape != (mix.d,):
        raise ValueError(f"bias must have shape ({mix.d},)")
    policy = losses.TangentPolicy()

    def source(rng, n):
        return datasets.sample_mixture(mix, rng, n)

    init = net.Mlp.init(mix.d, hidden, trainer.stream(seed, trainer.TAG_INIT))

    def run(kind):
        model = init
        opt = trainer.AdamState(lr=lr, beta1=0.9, beta2=0.999, eps=1e-8,
                                m=np.zeros(model.n_params),
                                v=np.zeros(model.n_params))
        d_rng = trainer.stream(seed, trainer.TAG_DATA)
        n_rng = trainer.stream(seed, trainer.TAG_NOISE)
        t_rng = trainer.stream(seed, trainer.TAG_TIME)
        for step in range(steps):
            opt.lr = lr * min(1.0, 2.0 * (1.0 - step / steps))
            batch = datasets.sample_interpolant(d_rng, n_rng, t_rng, source,
                                                batch_size)
            tan_ov = batch.v_cond + bias if kind == "tangent" else None
            tar_ov = batch.v_cond + bias if kind == "target" else None
            grad, bd = losses.semigrad(model, batch, policy,
                                       tangent_override=tan_ov,
                                       target_override=tar_ov)
            if not np.isfinite(bd.total):
                raise RuntimeError(f"{kind} run diverged at step {step}")
            model = model.with_params(opt.update(model.params, grad))
        return model

    models = {k: run(k) for k in ("tangent", "target", "baseline")}

    eval_rng = np.random.default_rng(
        np.random.SeedSequence(int(seed), spawn_key=(_TAG_ASYM_EVAL,)))
    per_t = []
    errs = {k: [] for k in models}
    for t in eval_ts:
        t = float(t)
        x0 = datasets.sample_mixture(mix, eval_rng, n_eval)
        x1 = eval_rng.standard_normal((n_eval, mix.d))
        x_t = (1.0 - t) * x0 + t * x1
        vbar = gmm.marginal_velocity(mix, x_t, t)
        row = {"t": t}
        for k, m in models.items():
            e = float(np.mean(np.linalg.norm(
                net.forward(m, x_t, t, t) - vbar, axis=1)))
            row[k] = e
            errs[k].append(e)
        per_t.append(row)

    return AsymmetryReport(
        bias=bias, bias_norm=float(np.linalg.norm(bias)),
        boundary_error_tangent=float(np.mean(errs["tangent"])),
        boundary_error_target=float(np.mean(errs["target"])),
        boundary_error_baseline=float(np.mean(errs["baseline"])),
        per_t=tuple(per_t),
        model_tangent=models["tangent"], model_target=models["target"],
        model_baseline=models["baseline"],
    )


def fit_quadratic_coefficient(betas, deltas):
    """Least-squares c for deltas ~ c * betas^2 through the origin."""
    betas = np.asarray(betas, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    if betas.shape != deltas.shape:
        raise ValueError("betas and deltas must have matching shapes")
    denom = float(np.sum(betas**4))
    if denom == 0.0:
        raise ValueError("need at least one nonzero beta")
    return float(np.sum(betas**2 * deltas) / denom)
