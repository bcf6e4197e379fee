"""Closed-form conditionals of Gaussian mixtures under the linear interpolant.

With data x0 drawn from a Gaussian mixture, noise x1 ~ N(0, I), and the
interpolant x_t = (1 - t) x0 + t x1, everything the training-variance analysis
needs is available in closed form:

* per-component marginals      x_t | k ~ N((1-t) mu_k, (1-t)^2 C_k + t^2 I)
* posterior responsibilities   w_k(x, t) over components given x_t = x
* Gaussian conditioning        x0 | x_t = x, k  (mean and covariance)
* law of total covariance      Cov[x0 | x_t = x] across components
* marginal velocity            v(x, t) = (x - E[x0 | x_t = x]) / t
* conditional-velocity noise   Sigma_v'(x, t) = Cov[x0 | x_t = x] / t^2

The last two follow from v_cond = x1 - x0 = (x - x0) / t given x_t = x.

At t = 0 the interpolant pins x0 = x exactly, so the conditional collapses:
v(x, 0) = E[x1] - x = -x and Sigma_v' = Cov[x1] = I. Below ``T_EPS`` that
exact limit is returned rather than the (singular) general formulas.

All public entry points accept a single point ``x`` of shape (d,) or a batch
of shape (n, d); outputs gain a leading batch axis accordingly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "T_EPS",
    "MixtureSpec",
    "ConditionalStats",
    "conditional_stats",
    "marginal_velocity",
    "sample_posterior_x0",
    "variance_field_grid",
    "write_variance_field",
    "triangle_mixture",
]

T_EPS = 1e-6

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class MixtureSpec:
    """Weights (K,), means (K, d) and full covariances (K, d, d) of a mixture."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.means, dtype=float)
        c = np.asarray(self.covs, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-D array")
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-9):
            raise ValueError("weights must be nonnegative and sum to 1")
        if m.ndim != 2 or m.shape[0] != w.size:
            raise ValueError(f"means shape {m.shape} incompatible with {w.size} weights")
        if c.shape != (w.size, m.shape[1], m.shape[1]):
            raise ValueError(f"covs shape {c.shape} incompatible with means {m.shape}")
        if not np.allclose(c, np.swapaxes(c, -1, -2), atol=1e-10):
            raise ValueError("covariances must be symmetric")
        try:
            np.linalg.cholesky(c)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariances must be positive definite") from exc
        for name, arr in (("weights", w), ("means", m), ("covs", c)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def is_diagonal(self) -> bool:
        mask = ~np.eye(self.d, dtype=bool)
        return bool(np.all(self.covs[:, mask] == 0.0))


@dataclass(frozen=True)
class ConditionalStats:
    """Analytic conditionals at (x, t); batch inputs add a leading axis."""

    marginal_velocity: np.ndarray   # (..., d)
    posterior_weights: np.ndarray   # (..., K)
    cond_mean_x0: np.ndarray        # (..., d)
    cond_cov_x0: np.ndarray         # (..., d, d)
    velocity_cov: np.ndarray        # (..., d, d)
    total_std: np.ndarray           # (...)


def _check_xt(mix: MixtureSpec, x, t):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != mix.d:
        raise ValueError(f"x has dimension {x.shape[-1]}, mixture has d={mix.d}")
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return x, single


def _log_normalize(logp):
    m = logp.max(axis=-1, keepdims=True)
    p = np.exp(logp - m)
    return p / p.sum(axis=-1, keepdims=True)


def _component_conditionals(mix: MixtureSpec, x, t, method):
    """Responsibilities plus per-component conditional means/covs of x0 | x_t.

    Returns (resp (n, K), cmeans (K, n, d), ccovs (K, d, d)). The conditional
    covariances do not depend on x, only on t.
    """
    n, d = x.shape
    K = mix.n_components
    one_t = 1.0 - t
    if method == "auto":
        method = "diag" if mix.is_diagonal else "general"
    if method == "diag" and not mix.is_diagonal:
        raise ValueError("diag method requires diagonal component covariances")

    logp = np.empty((n, K))
    cmeans = np.empty((K, n, d))
    ccovs = np.empty((K, d, d))
    if method == "diag":
        cd = np.diagonal(mix.covs, axis1=1, axis2=2)            # (K, d)
        s = one_t**2 * cd + t**2                                 # (K, d)
        delta = x[None, :, :] - one_t * mix.means[:, None, :]    # (K, n, d)
        z = delta / s[:, None, :]
        maha = np.sum(delta * z, axis=-1)                        # (K, n)
        logdet = np.sum(np.log(s), axis=-1)                      # (K,)
        logp = (np.log(mix.weights)[:, None]
                - 0.5 * (maha + logdet[:, None] + d * _LOG_2PI)).T
        cmeans = mix.means[:, None, :] + one_t * cd[:, None, :] * z
        cvar = cd - one_t**2 * cd**2 / s                         # (K, d)
        for k in range(K):
            ccovs[k] = np.diag(cvar[k])
    elif method == "general":
        eye = np.eye(d)
        for k in range(K):
            C = mix.covs[k]
            S = one_t**2 * C + t**2 * eye
            L = np.linalg.cholesky(S)
            delta = x - one_t * mix.means[k]                     # (n, d)
            # z = S^-1 delta via two triangular solves
            y = np.linalg.solve(L, delta.T)                      # (d, n)
            z = np.linalg.solve(L.T, y).T                        # (n, d)
            maha = np.sum(delta * z, axis=-1)
            logdet = 2.0 * np.sum(np.log(np.diagonal(L)))
            logp[:, k] = np.log(mix.weights[k]) - 0.5 * (maha + logdet + d * _LOG_2PI)
            cmeans[k] = mix.means[k] + one_t * z @ C              # C symmetric
            B = np.linalg.solve(L.T, np.linalg.solve(L, C))       # S^-1 C
            cc = C - one_t**2 * C @ B
            ccovs[k] = 0.5 * (cc + cc.T)
    else:
        raise ValueError(f"unknown method {method!r}")
    return _log_normalize(logp), cmeans, ccovs


def _limit_stats(mix: MixtureSpec, x):
    """Exact t -> 0 conditionals: x0 = x, all randomness from x1 ~ N(0, I)."""
    n, d = x.shape
    logp = np.empty((n, mix.n_components))
    for k in range(mix.n_components):
        L = np.linalg.cholesky(mix.covs[k])
        delta = x - mix.means[k]
        y = np.linalg.solve(L, delta.T)
        maha = np.sum(y * y, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diagonal(L)))
        logp[:, k] = np.log(mix.weights[k]) - 0.5 * (maha + logdet + d * _LOG_2PI)
    eye = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    return ConditionalStats(
        marginal_velocity=-x.copy(),
        posterior_weights=_log_normalize(logp),
        cond_mean_x0=x.copy(),
        cond_cov_x0=np.zeros((n, d, d)),
        velocity_cov=eye,
        total_std=np.full(n, np.sqrt(d)),
    )


def _squeeze(st: ConditionalStats) -> ConditionalStats:
    return ConditionalStats(*(np.asarray(f)[0] for f in (
        st.marginal_velocity, st.posterior_weights, st.cond_mean_x0,
        st.cond_cov_x0, st.velocity_cov, st.total_std)))


def conditional_stats(mix: MixtureSpec, x, t, method="auto") -> ConditionalStats:
    """All analytic conditionals of the mixture at interpolant point(s) x, time t.

    method selects the component algebra: "diag" (element-wise, requires
    diagonal covariances), "general" (Cholesky), or "auto".
    """
    x, single = _check_xt(mix, x, t)
    if t <= T_EPS:
        st = _limit_stats(mix, x)
        return _squeeze(st) if single else st

    resp, cmeans, ccovs = _component_conditionals(mix, x, t, method)
    mbar = np.einsum("nk,knd->nd", resp, cmeans)
    dev = cmeans - mbar[None, :, :]
    cov = (np.einsum("nk,kij->nij", resp, ccovs)
           + np.einsum("nk,kni,knj->nij", resp, dev, dev))
    vcov = cov / t**2
    st = ConditionalStats(
        marginal_velocity=(x - mbar) / t,
        posterior_weights=resp,
        cond_mean_x0=mbar,
        cond_cov_x0=cov,
        velocity_cov=vcov,
        total_std=np.sqrt(np.trace(vcov, axis1=-2, axis2=-1)),
    )
    return _squeeze(st) if single else st


def marginal_velocity(mix: MixtureSpec, x, t) -> np.ndarray:
    """v(x, t) = (x - E[x0 | x_t = x]) / t with per-sample times allowed.

    Unlike conditional_stats this accepts t as an (n,) array aligned with a
    batch of x rows, which is what tangent proxies evaluated on interpolant
    batches need. Diagonal mixtures take a fully vectorized path; general
    covariances fall back to grouping by unique t.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != mix.d:
        raise ValueError(f"x has dimension {X.shape[-1]}, mixture has d={mix.d}")
    n, d = X.shape
    T = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    if np.any(T < 0.0) or np.any(T > 1.0):
        raise ValueError("t must lie in [0, 1]")
    v = np.empty_like(X)
    limit = T <= T_EPS
    v[limit] = -X[limit]
    live = ~limit
    if np.any(live):
        Xl, Tl = X[live], T[live]
        if mix.is_diagonal:
            cd = np.diagonal(mix.covs, axis1=1, axis2=2)          # (K, d)
            one_t = (1.0 - Tl)[:, None, None]
            tt = Tl[:, None, None]
            S = one_t**2 * cd[None] + tt**2                        # (m, K, d)
            delta = Xl[:, None, :] - one_t * mix.means[None]       # (m, K, d)
            z = delta / S
            maha = np.sum(delta * z, axis=-1)
            logdet = np.sum(np.log(S), axis=-1)
            logp = np.log(mix.weights)[None] - 0.5 * (maha + logdet + d * _LOG_2PI)
            resp = _log_normalize(logp)
            cmean = mix.means[None] + one_t * cd[None] * z         # (m, K, d)
            mbar = np.einsum("mk,mkd->md", resp, cmean)
            v[live] = (Xl - mbar) / Tl[:, None]
        else:
            vl = np.empty_like(Xl)
            for tv in np.unique(Tl):
                idx = Tl == tv
                resp, cmeans, _ = _component_conditionals(mix, Xl[idx], float(tv),
                                                          "general")
                mbar = np.einsum("nk,knd->nd", resp, cmeans)
                vl[idx] = (Xl[idx] - mbar) / tv
            v[live] = vl
    return v[0] if single else v


def sample_posterior_x0(mix: MixtureSpec, x, t, n, rng) -> np.ndarray:
    """Draw n exact samples of x0 | x_t = x (single point x of shape (d,))."""
    x, single = _check_xt(mix, x, t)
    if not single:
        raise ValueError("sample_posterior_x0 expects a single point x of shape (d,)")
    if t <= T_EPS:
        return np.repeat(x, n, axis=0)
    resp, cmeans, ccovs = _component_conditionals(mix, x, t, "auto")
    k = rng.choice(mix.n_components, size=n, p=resp[0])
    chols = np.linalg.cholesky(ccovs + 1e-15 * np.eye(mix.d))
    z = rng.standard_normal((n, mix.d))
    return cmeans[k, 0, :] + np.einsum("nij,nj->ni", chols[k], z)


def variance_field_grid(mix: MixtureSpec, ts, xlim, ylim, resolution) -> np.ndarray:
    """Rows (x, y, t, total_std) over a resolution^2 grid for each t (d=2 only)."""
    if mix.d != 2:
        raise ValueError("variance_field_grid requires a 2-D mixture")
    xs = np.linspace(xlim[0], xlim[1], resolution)
    ys = np.linspace(ylim[0], ylim[1], resolution)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    rows = []
    for t in ts:
        st = conditional_stats(mix, pts, float(t))
        rows.append(np.column_stack([pts, np.full(len(pts), t), st.total_std]))
    return np.concatenate(rows, axis=0)


def write_variance_field(csv_path, rows, svg_path=None):
    """Write the variance-field rows as CSV (header x0,x1,t,total_std) + SVG."""
    rows = np.asarray(rows, dtype=float)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x0", "x1", "t", "total_std"])
        for r in rows:
            writer.writerow([repr(float(v)) for v in r])
    if svg_path is not None:
        from . import svgplots

        panels = []
        for t in np.unique(rows[:, 2]):
            sub = rows[rows[:, 2] == t]
            res = int(round(np.sqrt(len(sub))))
            panels.append((f"t={t:g}", sub[:, 3].reshape(res, res)))
        svg = svgplots.heatmap_panels(panels, title="conditional velocity spread")
        with open(svg_path, "w") as fh:
            fh.write(svg)


def triangle_mixture() -> MixtureSpec:
    """Three equal modes at the vertices of an equilateral triangle.

    Circumradius 2, isotropic covariance 0.09 I. The standard 2-D fixture for
    variance-field maps and oracle probes.
    """
    angles = np.pi / 2 + 2.0 * np.pi * np.arange(3) / 3
    means = 2.0 * np.column_stack([np.cos(angles), np.sin(angles)])
    covs = np.broadcast_to(0.09 * np.eye(2), (3, 2, 2)).copy()
    return MixtureSpec(weights=np.full(3, 1.0 / 3.0), means=means, covs=covs)
