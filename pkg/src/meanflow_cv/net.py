"""Flat-parameter MLP with hand-rolled forward, JVP, and parameter VJP.

The average-velocity model u_theta(x, r, t) is a plain MLP over the
concatenated input (x, r, t), so the input width is d + 2 and the output
width is d. Parameters live in one flat float64 vector with a fixed layout
(per layer: weight block row-major, then bias block), which keeps optimizer
state, EMA shadows, and checkpoints trivial.

Differentiation is implemented directly:

* ``jvp``     forward-mode directional derivative via dual-number propagation
              (value and tangent move through the network in one pass),
* ``param_grad``  reverse-mode VJP: the flat gradient of seed . u(theta),
* ``spatial_jacobian``  the d x d input Jacobian assembled from d basis JVPs.

All entry points accept single inputs (x of shape (d,), scalar r, t) or
batches (x of shape (n, d), r and t of shape (n,) or scalar); batched
``param_grad`` sums the per-sample VJPs, which is what batch-mean losses need
after scaling the seed rows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mlp",
    "JvpResult",
    "EmaState",
    "forward",
    "jvp",
    "param_grad",
    "param_jacobian",
    "spatial_jacobian",
    "ema_update",
    "save_checkpoint",
    "load_checkpoint",
]

_MAGIC = b"MFNC"
_VERSION = 1
_MAX_JACOBIAN_DIM = 256
_ACTIVATIONS = ("silu",)


def _layout(layer_sizes):
    """[(w_slice, b_slice, out, in)] over the flat parameter vector."""
    out = []
    pos = 0
    for i in range(len(layer_sizes) - 1):
        fan_in, fan_out = layer_sizes[i], layer_sizes[i + 1]
        w = slice(pos, pos + fan_out * fan_in)
        pos = w.stop
        b = slice(pos, pos + fan_out)
        pos = b.stop
        out.append((w, b, fan_out, fan_in))
    return tuple(out), pos


@dataclass(frozen=True)
class Mlp:
    """MLP u_theta(x, r, t) with a flat float64 parameter vector."""

    data_dim: int
    hidden: tuple
    params: np.ndarray
    activation: str = "silu"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        layout, n = _layout(self.layer_sizes)
        p = np.ascontiguousarray(np.asarray(self.params, dtype=np.float64))
        if p.shape != (n,):
            raise ValueError(f"params must have shape ({n},), got {p.shape}")
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "_slices", layout)

    @property
    def layer_sizes(self) -> tuple:
        return (self.data_dim + 2, *self.hidden, self.data_dim)

    @property
    def n_params(self) -> int:
        return self.params.size

    def with_params(self, params) -> "Mlp":
        return Mlp(self.data_dim, self.hidden, params, self.activation)

    def weights(self, params=None):
        """[(W (out, in), b (out,))] views into the flat vector."""
        p = self.params if params is None else params
        return [(p[w].reshape(o, i), p[b]) for w, b, o, i in self._slices]

    @classmethod
    def init(cls, data_dim, hidden, rng, activation="silu") -> "Mlp":
        """Uniform(+-sqrt(6/fan_in)) weights, zero biases."""
        sizes = (data_dim + 2, *hidden, data_dim)
        layout, n = _layout(sizes)
        params = np.zeros(n)
        for w, b, out, fan_in in layout:
            bound = np.sqrt(6.0 / fan_in)
            params[w] = rng.uniform(-bound, bound, size=out * fan_in)
        return cls(data_dim, tuple(hidden), params, activation)


@dataclass
class JvpResult:
    value: np.ndarray
    directional: np.ndarray


def _promote(model, x, r, t):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.data_dim:
        raise ValueError(f"x must have trailing dimension {model.data_dim}")
    n = X.shape[0]
    R = np.broadcast_to(np.asarray(r, dtype=np.float64), (n,))
    T = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    inp = np.empty((n, model.data_dim + 2))
    inp[:, :-2] = X
    inp[:, -2] = R
    inp[:, -1] = T
    return inp, single


def _pass(model, inp, tangent=None, need_cache=False):
    """Shared forward: returns (value, directional or None, cache or None).

    cache holds, per hidden layer, (a_prev, z, sig) for the reverse pass,
    plus the final hidden activation.
    """
    a = inp
    da = tangent
    cache = [] if need_cache else None
    layers = model.weights()
    for li, (W, b) in enumerate(layers):
        z = a @ W.T
        if da is not None:
            dz = da @ W.T
        z += b
        if li < len(layers) - 1:
            sig = 1.0 / (1.0 + np.exp(-z))
            if need_cache:
                cache.append((a, z, sig))
            a = z * sig
            if da is not None:
                da = (sig * (1.0 + z * (1.0 - sig))) * dz
        else:
            if need_cache:
                cache.append((a, None, None))
            a = z
            if da is not None:
                da = dz
    return a, da, cache


def forward(model: Mlp, x, r, t) -> np.ndarray:
    """Evaluate u_theta at (x, r, t)."""
    inp, single = _promote(model, x, r, t)
    out, _, _ = _pass(model, inp)
    return out[0] if single else out


def jvp(model: Mlp, x, r, t, tangent) -> JvpResult:
    """Value and directional derivative along tangent (dx, dr, dt) in one pass."""
    inp, single = _promote(model, x, r, t)
    tangent = np.asarray(tangent, dtype=np.float64)
    if tangent.shape[-1] != model.data_dim + 2:
        raise ValueError(f"tangent must have trailing dimension {model.data_dim + 2}")
    tan = np.broadcast_to(tangent, inp.shape)
    out, dout, _ = _pass(model, inp, tangent=tan)
    if single:
        return JvpResult(out[0], dout[0])
    return JvpResult(out, dout)


def jvp_cache(model: Mlp, x, r, t, tangent):
    """jvp plus the reverse-pass cache, sharing one forward sweep.

    Loss code uses this to backpropagate through the value path without
    re-running the network.
    """
    inp, single = _promote(model, x, r, t)
    tangent = np.asarray(tangent, dtype=np.float64)
    tan = np.broadcast_to(tangent, inp.shape)
    out, dout, cache = _pass(model, inp, tangent=tan, need_cache=True)
    if single:
        return JvpResult(out[0], dout[0]), cache
    return JvpResult(out, dout), cache


def _backward(model, cache, seed):
    """Flat sum over the batch of per-sample VJPs d(seed_i . u_i)/dtheta."""
    grads = np.zeros(model.n_params)
    layers = model.weights()
    delta = seed
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        w_sl, b_sl, _, _ = model._slices[li]
        a_prev = cache[li][0]
        grads[w_sl] = (delta.T @ a_prev).ravel()
        grads[b_sl] = delta.sum(axis=0)
        if li > 0:
            _, z, sig = cache[li - 1]
            delta = (delta @ W) * (sig * (1.0 + z * (1.0 - sig)))
    return grads


def forward_cache(model: Mlp, x, r, t):
    """Forward pass retaining activations; feed to param_grad to avoid recompute."""
    inp, single = _promote(model, x, r, t)
    out, _, cache = _pass(model, inp, need_cache=True)
    return (out[0] if single else out), cache


def param_grad(model: Mlp, x, r, t, seed, cache=None) -> np.ndarray:
    """Flat parameter gradient of seed . u_theta(x, r, t).

    For batch inputs, seed has shape (n, d) and the per-sample gradients are
    summed. cache may come from forward_cache on the same (x, r, t).
    """
    seed = np.asarray(seed, dtype=np.float64)
    single = seed.ndim == 1
    if cache is None:
        _, cache = forward_cache(model, x, r, t)
    return _backward(model, cache, seed[None, :] if single else seed)


def param_jacobian(model: Mlp, x, r, t) -> np.ndarray:
    """Dense (d, n_params) parameter Jacobian at a single point, d basis VJPs."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("param_jacobian expects a single point x of shape (d,)")
    d = model.data_dim
    if d > _MAX_JACOBIAN_DIM:
        raise ValueError(f"param_jacobian is guarded to d <= {_MAX_JACOBIAN_DIM}")
    _, cache = forward_cache(model, x, r, t)
    rows = [_backward(model, cache, np.eye(d)[i][None, :]) for i in range(d)]
    return np.stack(rows)


def spatial_jacobian(model: Mlp, x, r, t) -> np.ndarray:
    """d x d Jacobian of u w.r.t. x from d basis JVPs ((n, d, d) for batches)."""
    d = model.data_dim
    if d > _MAX_JACOBIAN_DIM:
        raise ValueError(f"spatial_jacobian is guarded to d <= {_MAX_JACOBIAN_DIM}")
    inp, single = _promote(model, x, r, t)
    cols = []
    for i in range(d):
        tan = np.zeros(d + 2)
        tan[i] = 1.0
        _, dout, _ = _pass(model, inp, tangent=np.broadcast_to(tan, inp.shape))
        cols.append(dout)
    J = np.stack(cols, axis=-1)
    return J[0] if single else J


# ---------------------------------------------------------------------------
# EMA shadow
# ---------------------------------------------------------------------------

@dataclass
class EmaState:
    """Exponential-moving-average shadow of the flat parameter vector."""

    params: np.ndarray
    decay: float

    @classmethod
    def from_model(cls, model: Mlp, decay: float) -> "EmaState":
        if not (0.0 <= decay < 1.0):
            raise ValueError(f"decay must lie in [0, 1), got {decay}")
        return cls(params=model.params.copy(), decay=float(decay))


def ema_update(state: EmaState, params: np.ndarray) -> EmaState:
    """state <- decay * state + (1 - decay) * params, in place."""
    state.params *= state.decay
    state.params += (1.0 - state.decay) * params
    return state


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
# Layout (all little-endian):
#   4s    magic "MFNC"
#   u32   format version (1)
#   u32   data_dim
#   u32   number of layer sizes L
#   u32*L layer sizes, input width first (d+2, hidden..., d)
#   16s   activation tag, NUL padded
#   u64   training step
#   u64   master seed
#   f64   EMA decay
#   u64   parameter count p
#   f64*p parameters
#   f64*p EMA shadow parameters

def save_checkpoint(path, model: Mlp, ema: EmaState, step: int, seed: int):
    sizes = model.layer_sizes
    act = model.activation.encode("ascii").ljust(16, b"\x00")
    head = struct.pack("<4sIII", _MAGIC, _VERSION, model.data_dim, len(sizes))
    head += struct.pack(f"<{len(sizes)}I", *sizes)
    head += act
    head += struct.pack("<QQdQ", step, seed, ema.decay, model.n_params)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(model.params.astype("<f8").tobytes())
        fh.write(ema.params.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (model, ema_state, step, seed); bit-exact round trip."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:4] != _MAGIC:
        raise ValueError("bad checkpoint magic")
    version, d, nl = struct.unpack("<III", data[4:16])
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 16
    sizes = struct.unpack(f"<{nl}I", data[off:off + 4 * nl])
    off += 4 * nl
    act = data[off:off + 16].rstrip(b"\x00").decode("ascii")
    off += 16
    step, seed, decay, p = struct.unpack("<QQdQ", data[off:off + 32])
    off += 32
    if len(data) != off + 2 * p * 8:
        raise ValueError("checkpoint truncated or wrong size")
    params = np.frombuffer(data, dtype="<f8", count=p, offset=off).copy()
    ema_params = np.frombuffer(data, dtype="<f8", count=p, offset=off + p * 8).copy()
    if sizes[0] != d + 2 or sizes[-1] != d:
        raise ValueError("checkpoint layer sizes inconsistent with data_dim")
    model = Mlp(d, tuple(sizes[1:-1]), params, act)
    return model, EmaState(params=ema_params, decay=decay), step, seed
