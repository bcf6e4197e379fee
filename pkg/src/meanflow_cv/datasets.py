"""Toy data generators and the stochastic interpolant sampler.

Seven dataset kinds drive the experiments: six classic 2-D toys
(checkerboard, eight_gaussians, two_moons, swiss_roll, two_spirals, pinwheel)
plus "dgmm", a dense Gaussian mixture in arbitrary dimension whose analytic
law is available to the oracle probes.

Every kind is standardized to approximately zero mean and unit per-axis
scale. For the 2-D toys the affine constants were calibrated once from 2^21
draws (calibration seed 20240901) and are pinned in ``_TOY_AFFINE`` below;
they are part of the dataset definition, not recomputed at runtime. The dgmm
kind is standardized analytically (exact mixture mean and per-axis std), so
``dgmm_mixture_spec`` remains the exact generative law of ``sample_data``.

The interpolant sampler draws (r, t) as two sorted U(0, 1) variates (so
r <= t always; E[t] = 2/3), x1 ~ N(0, I), and forms x_t = (1 - t) x0 + t x1
with conditional velocity v_cond = x1 - x0. ``overlap_prob`` optionally
forces r = t for a fraction of samples; the default 0 consumes no extra
random numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gmm import MixtureSpec

__all__ = [
    "KINDS",
    "DatasetSpec",
    "InterpolantBatch",
    "sample_data",
    "x0_source",
    "sample_interpolant",
    "dgmm_mixture_spec",
    "sample_mixture",
    "eight_gaussians_modes",
]

KINDS = (
    "checkerboard",
    "eight_gaussians",
    "two_moons",
    "swiss_roll",
    "two_spirals",
    "pinwheel",
    "dgmm",
    "custom",
)

_DGMM_MEANS_TAG = 101  # spawn key separating mode layout from sampling noise


@dataclass(frozen=True)
class DatasetSpec:
    """Which distribution to draw from. dim and seed only matter for dgmm."""

    kind: str
    dim: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}; choose from {KINDS}")
        if self.kind not in ("dgmm", "custom") and self.dim != 2:
            raise ValueError(f"{self.kind} is 2-D only")
        if self.dim < 1 or self.dim > 256:
            raise ValueError("dim must lie in [1, 256]")


@dataclass(frozen=True)
class InterpolantBatch:
    """One batch of interpolant draws; all fields are aligned arrays."""

    x0: np.ndarray      # (n, d)
    x1: np.ndarray      # (n, d)
    t: np.ndarray       # (n,)
    r: np.ndarray       # (n,)
    x_t: np.ndarray     # (n, d)
    v_cond: np.ndarray  # (n, d)

    def __len__(self):
        return self.x0.shape[0]


# ---------------------------------------------------------------------------
# raw 2-D toy generators (pre-standardization)
# ---------------------------------------------------------------------------

def _raw_checkerboard(rng, n):
    x1 = rng.uniform(-2.0, 2.0, size=n)
    x2 = rng.uniform(0.0, 1.0, size=n) - rng.integers(0, 2, size=n) * 2.0
    x2 = x2 + np.floor(x1) % 2
    return np.column_stack([x1, x2]) * 2.0


_EIGHT_SD = 0.2


def _eight_centers():
    ang = 2.0 * np.pi * np.arange(8) / 8
    return 2.0 * np.column_stack([np.cos(ang), np.sin(ang)])


def _raw_eight_gaussians(rng, n):
    centers = _eight_centers()
    k = rng.integers(0, 8, size=n)
    return centers[k] + _EIGHT_SD * rng.standard_normal((n, 2))


def _raw_two_moons(rng, n):
    theta = rng.uniform(0.0, np.pi, size=n)
    lower = rng.integers(0, 2, size=n).astype(bool)
    pts = np.column_stack([np.cos(theta), np.sin(theta)])
    pts[lower, 0] = 1.0 - pts[lower, 0]
    pts[lower, 1] = 0.5 - pts[lower, 1]
    return pts + 0.08 * rng.standard_normal((n, 2))


def _raw_swiss_roll(rng, n):
    phi = 1.5 * np.pi * (1.0 + 2.0 * rng.uniform(0.0, 1.0, size=n))
    pts = np.column_stack([phi * np.cos(phi), phi * np.sin(phi)])
    return pts / 3.0 + 0.15 * rng.standard_normal((n, 2))


def _raw_two_spirals(rng, n):
    theta = np.sqrt(rng.uniform(0.0, 1.0, size=n)) * 3.0 * np.pi
    sign = rng.integers(0, 2, size=n) * 2.0 - 1.0
    base = np.column_stack([-theta * np.cos(theta), theta * np.sin(theta)])
    return sign[:, None] * base / 3.0 + 0.1 * rng.standard_normal((n, 2))


def _raw_pinwheel(rng, n):
    radial_std, tang_std, rate = 0.3, 0.1, 0.25
    k = rng.integers(0, 5, size=n)
    feat = rng.standard_normal((n, 2)) * np.array([radial_std, tang_std])
    feat[:, 0] += 1.0
    ang = 2.0 * np.pi * k / 5 + rate * np.exp(feat[:, 0])
    ca, sa = np.cos(ang), np.sin(ang)
    return np.column_stack([feat[:, 0] * ca - feat[:, 1] * sa,
                            feat[:, 0] * sa + feat[:, 1] * ca])


_RAW = {
    "checkerboard": _raw_checkerboard,
    "eight_gaussians": _raw_eight_gaussians,
    "two_moons": _raw_two_moons,
    "swiss_roll": _raw_swiss_roll,
    "two_spirals": _raw_two_spirals,
    "pinwheel": _raw_pinwheel,
}

# pinned affine standardization constants: kind -> (mean (2,), scale (2,))
_TOY_AFFINE = {
    "checkerboard": ((0.000207, 0.002141), (2.307395, 2.309090)),
    "eight_gaussians": ((-0.001515, -0.000430), (1.428484, 1.428256)),
    "two_moons": ((0.500902, 0.249745), (0.869347, 0.500953)),
    "swiss_roll": ((0.663382, 0.070403), (2.214362, 2.321029)),
    "two_spirals": ((0.001293, 0.000377), (1.600187, 1.547310)),
    "pinwheel": ((-0.000406, -0.000504), (0.741751, 0.741280)),
}


# ---------------------------------------------------------------------------
# dgmm: dense Gaussian mixture with analytic law
# ---------------------------------------------------------------------------

_DGMM_COV = 0.04
_DGMM_MEAN_RANGE = 2.0


def dgmm_mixture_spec(spec: DatasetSpec) -> MixtureSpec:
    """Exact (standardized) mixture law for a dgmm DatasetSpec.

    2d equal-weight modes with means drawn once from U([-2, 2]^d) using the
    dataset seed (separate stream from sampling), shared covariance 0.04 I,
    then an exact analytic standardization to zero mean / unit per-axis std.
    """
    if spec.kind != "dgmm":
        raise ValueError("dgmm_mixture_spec requires kind='dgmm'")
    d = spec.dim
    m = 2 * d
    means_rng = np.random.default_rng(
        np.random.SeedSequence(spec.seed, spawn_key=(_DGMM_MEANS_TAG,))
    )
    means = means_rng.uniform(-_DGMM_MEAN_RANGE, _DGMM_MEAN_RANGE, size=(m, d))
    mean = means.mean(axis=0)
    var = _DGMM_COV + (means**2).mean(axis=0) - mean**2
    scale = np.sqrt(var)
    std_means = (means - mean) / scale
    cov = np.diag(_DGMM_COV / var)
    covs = np.broadcast_to(cov, (m, d, d)).copy()
    return MixtureSpec(weights=np.full(m, 1.0 / m), means=std_means, covs=covs)


def sample_mixture(mix: MixtureSpec, rng, n) -> np.ndarray:
    """n prior draws from a MixtureSpec."""
    k = rng.choice(mix.n_components, size=n, p=mix.weights)
    chols = np.linalg.cholesky(mix.covs)
    z = rng.standard_normal((n, mix.d))
    return mix.means[k] + np.einsum("nij,nj->ni", chols[k], z)


# ---------------------------------------------------------------------------
# public sampling API
# ---------------------------------------------------------------------------

def sample_data(spec: DatasetSpec, rng, n) -> np.ndarray:
    """n i.i.d. standardized draws of x0 for the given dataset kind."""
    if spec.kind == "custom":
        raise ValueError("custom datasets have no built-in sampler; "
                         "pass an explicit source")
    if spec.kind == "dgmm":
        return sample_mixture(dgmm_mixture_spec(spec), rng, n)
    raw = _RAW[spec.kind](rng, int(n))
    mean, scale = _TOY_AFFINE[spec.kind]
    return (raw - np.asarray(mean)) / np.asarray(scale)


def x0_source(spec: DatasetSpec):
    """Callable (rng, n) -> (n, d) view of sample_data, for the interpolant."""
    return lambda rng, n: sample_data(spec, rng, n)


def eight_gaussians_modes():
    """Standardized mode centers and per-axis noise sd of eight_gaussians."""
    mean, scale = _TOY_AFFINE["eight_gaussians"]
    centers = (_eight_centers() - np.asarray(mean)) / np.asarray(scale)
    return centers, _EIGHT_SD / np.asarray(scale)


def sample_interpolant(data_rng, noise_rng, time_rng, source, n,
                       overlap_prob=0.0) -> InterpolantBatch:
    """Draw a batch of interpolant tuples (x0, x1, t, r, x_t, v_cond).

    source is a callable (rng, n) -> (n, d). Times are two sorted U(0, 1)
    draws per sample (r <= t); with probability overlap_prob the pair is
    collapsed to r = t. Each random ingredient comes from its own stream.
    """
    if not (0.0 <= overlap_prob <= 1.0):
        raise ValueError("overlap_prob must lie in [0, 1]")
    x0 = np.asarray(source(data_rng, n), dtype=np.float64)
    if x0.ndim != 2 or x0.shape[0] != n:
        raise ValueError("source must return an (n, d) array")
    x1 = noise_rng.standard_normal(x0.shape)
    u = time_rng.uniform(0.0, 1.0, size=(n, 2))
    r = u.min(axis=1)
    t = u.max(axis=1)
    if overlap_prob > 0.0:
        collapse = time_rng.uniform(0.0, 1.0, size=n) < overlap_prob
        r = np.where(collapse, t, r)
    x_t = (1.0 - t)[:, None] * x0 + t[:, None] * x1
    return InterpolantBatch(x0=x0, x1=x1, t=t, r=r, x_t=x_t, v_cond=x1 - x0)
