"""Batch-free streaming normalization.

Forward pass, per feature:

    y_t      = (x_t - mu_{t-1}) / max(sigma_{t-1}, floor)
    mu_t     = a_f * mu_{t-1} + (1 - a_f) * mean(x_t)
    var_t    = a_f * var_{t-1} + (1 - a_f) * var(x_t)
               + a_f * (1 - a_f) * (mean(x_t) - mu_{t-1})^2

where mean/var run over the sample's spatial extent and a_f is the forward
decay factor. The output is computed with the pre-update statistics.

Layer scaling then divides the whole sample by the RMS over every feature
and spatial position, which pins the sample's mean square at one and blocks
exponential growth or decay of activations through depth.

The backward pass is a two-stage control process. Each stage subtracts a
multiple of an accumulated error so the stream of produced gradients stays,
on average, orthogonal to the normalized output (first stage) and mean-free
(second stage):

    xt_t     = y'_t - (1 - a_b) * eps_y_{t-1} * y_t
    eps_y_t  = eps_y_{t-1} + mean(xt_t * y_t)
    x'_t     = xt_t / sigma_{t-1} - (1 - a_b) * eps_1_{t-1}
    eps_1_t  = eps_1_{t-1} + mean(x'_t)

Both accumulators stay bounded for bounded gradient streams. Strict
one-backward-per-forward ordering is enforced through the cache handshake.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor import SIGMA_FLOOR, FeatureMap, ShapeError, feature_var


class InterleaveError(RuntimeError):
    """Backward called without a matching, most-recent forward."""


@dataclass
class ForwardCache:
    """Values one forward pass must hand to its matching backward pass."""

    y: FeatureMap | None = None
    sigma_used: np.ndarray | None = None
    z: FeatureMap | None = None
    zeta: float | None = None
    token: int | None = None


class OnlineNormState:
    """Per-feature running statistics and backward error accumulators.

    After reset: mu = 0, var = 1 (the fixed point of normalized inputs),
    eps_y = eps_1 = 0. Decay factors must lie strictly inside (0, 1).
    """

    def __init__(
        self,
        features: int,
        alpha_f: float = 0.999,
        alpha_b: float = 0.99,
        sigma_floor: float = SIGMA_FLOOR,
        scale_by_output_rms: bool = False,
    ):
        if features < 1:
            raise ValueError(f"features must be >= 1, got {features}")
        if not (0.0 < alpha_f < 1.0) or not (0.0 < alpha_b < 1.0):
            raise ValueError(f"decay factors must be in (0,1): {alpha_f}, {alpha_b}")
        if sigma_floor <= 0.0:
            raise ValueError("sigma_floor must be positive")
        self.features = int(features)
        self.alpha_f = float(alpha_f)
        self.alpha_b = float(alpha_b)
        self.sigma_floor = float(sigma_floor)
        self.scale_by_output_rms = bool(scale_by_output_rms)
        self.mu = np.zeros(features)
        self.var = np.ones(features)
        self.eps_y = np.zeros(features)
        self.eps_1 = np.zeros(features)
        # Running mean square of the produced gradient, used only when
        # scale_by_output_rms replaces the 1/sigma scaling.
        self.out_ms = np.ones(features)
        self._tick = 0
        self._consumed = 0

    def reset(self) -> None:
        """Restore the initial state; idempotent."""
        self.mu.fill(0.0)
        self.var.fill(1.0)
        self.eps_y.fill(0.0)
        self.eps_1.fill(0.0)
        self.out_ms.fill(1.0)
        self._tick = 0
        self._consumed = 0


def forward_sample(state: OnlineNormState, x: FeatureMap) -> tuple[FeatureMap, ForwardCache]:
    """Normalize one sample with the running statistics, then advance them."""
    if x.features != state.features:
        raise ShapeError(f"sample has {x.features} features, state has {state.features}")
    sigma = np.sqrt(state.var)
    np.maximum(sigma, state.sigma_floor, out=sigma)
    y = FeatureMap((x.data - state.mu[:, None]) / sigma[:, None])

    mx = x.data.mean(axis=1)
    vx = feature_var(x)
    delta = mx - state.mu
    state.mu = state.alpha_f * state.mu + (1.0 - state.alpha_f) * mx
    state.var = (
        state.alpha_f * state.var
        + (1.0 - state.alpha_f) * vx
        + state.alpha_f * (1.0 - state.alpha_f) * delta * delta
    )
    state._tick += 1
    return y, ForwardCache(y=y, sigma_used=sigma, token=state._tick)


def forward_inference(state: OnlineNormState, x: FeatureMap) -> FeatureMap:
    """Normalize with the current statistics without advancing the state."""
    if x.features != state.features:
        raise ShapeError(f"sample has {x.features} features, state has {state.features}")
    sigma = np.maximum(np.sqrt(state.var), state.sigma_floor)
    return FeatureMap((x.data - state.mu[:, None]) / sigma[:, None])


def layer_scale_forward(
    y: FeatureMap, cache: ForwardCache | None = None, sigma_floor: float = SIGMA_FLOOR
) -> tuple[FeatureMap, float]:
    """Divide the sample by its RMS over all features and spatial positions."""
    zeta = float(np.sqrt(np.mean(y.data * y.data)))
    z = FeatureMap(y.data / max(zeta, sigma_floor))
    if cache is not None:
        cache.z = z
        cache.zeta = zeta
    return z, zeta


def layer_scale_backward(z_grad: FeatureMap, cache: ForwardCache) -> FeatureMap:
    """Exact gradient of the RMS scaling: (z' - z * mean(z z')) / zeta."""
    if cache.z is None or cache.zeta is None:
        raise InterleaveError("cache holds no layer-scaling record")
    z = cache.z
    if z_grad.data.shape != z.data.shape:
        raise ShapeError(f"gradient shape {z_grad.data.shape} vs output {z.data.shape}")
    coupling = float(np.mean(z.data * z_grad.data))
    return FeatureMap((z_grad.data - z.data * coupling) / cache.zeta)


def backward_sample(
    state: OnlineNormState, y_grad: FeatureMap, cache: ForwardCache
) -> FeatureMap:
    """Run the two-stage control process on one sample's gradient.

    Must be called exactly once per forward_sample, in order; the cache from
    the matching forward carries y_t and the sigma used for its division.
    """
    if cache.token is None or cache.token != state._tick:
        raise InterleaveError("cache does not belong to the most recent forward pass")
    if cache.token == state._consumed:
        raise InterleaveError("backward already ran for this forward pass")
    y = cache.y
    if y_grad.data.shape != y.data.shape:
        raise ShapeError(f"gradient shape {y_grad.data.shape} vs output {y.data.shape}")

    cb = 1.0 - state.alpha_b
    xt = y_grad.data - cb * state.eps_y[:, None] * y.data
    state.eps_y = state.eps_y + (xt * y.data).mean(axis=1)

    if state.scale_by_output_rms:
        divisor = np.maximum(np.sqrt(state.out_ms), state.sigma_floor)
    else:
        divisor = cache.sigma_used
    xg = xt / divisor[:, None] - cb * state.eps_1[:, None]
    state.eps_1 = state.eps_1 + xg.mean(axis=1)
    if state.scale_by_output_rms:
        state.out_ms = state.alpha_b * state.out_ms + cb * (xg * xg).mean(axis=1)

    state._consumed = cache.token
    return FeatureMap(xg)


class AffineParams:
    """Per-feature gain and bias restoring the two absorbed degrees of freedom."""

    def __init__(self, features: int):
        self.gain = np.ones(features)
        self.bias = np.zeros(features)
        self.d_gain = np.zeros(features)
        self.d_bias = np.zeros(features)
        self.v_gain = np.zeros(features)
        self.v_bias = np.zeros(features)


def affine_forward(p: AffineParams, z: FeatureMap) -> FeatureMap:
    if z.features != p.gain.size:
        raise ShapeError(f"sample has {z.features} features, params have {p.gain.size}")
    return FeatureMap(p.gain[:, None] * z.data + p.bias[:, None])


def affine_backward(p: AffineParams, z: FeatureMap, out_grad: FeatureMap) -> FeatureMap:
    """Accumulate gain/bias gradients (summed over spatial) and pass the rest back."""
    if out_grad.data.shape != z.data.shape:
        raise ShapeError(f"gradient shape {out_grad.data.shape} vs input {z.data.shape}")
    p.d_gain += (out_grad.data * z.data).sum(axis=1)
    p.d_bias += out_grad.data.sum(axis=1)
    return FeatureMap(p.gain[:, None] * out_grad.data)


_HEADER = struct.Struct("<Qdd")


def save_state(state: OnlineNormState) -> bytes:
    """Serialize to a flat binary record.

    Layout, all little-endian: uint64 feature count, float64 forward decay,
    float64 backward decay, then four float64 blocks of `features` values
    each: mu, var, eps_y, eps_1.
    """
    head = _HEADER.pack(state.features, state.alpha_f, state.alpha_b)
    body = np.concatenate([state.mu, state.var, state.eps_y, state.eps_1])
    return head + body.astype("<f8").tobytes()


def load_state(blob: bytes) -> OnlineNormState:
    """Inverse of save_state."""
    if len(blob) < _HEADER.size:
        raise ValueError("state record truncated: missing header")
    features, alpha_f, alpha_b = _HEADER.unpack_from(blob)
    expected = _HEADER.size + 4 * features * 8
    if len(blob) != expected:
        raise ValueError(f"state record has {len(blob)} bytes, expected {expected}")
    flat = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    state = OnlineNormState(int(features), alpha_f=alpha_f, alpha_b=alpha_b)
    state.mu = flat[0:features].copy()
    state.var = flat[features : 2 * features].copy()
    state.eps_y = flat[2 * features : 3 * features].copy()
    state.eps_1 = flat[3 * features : 4 * features].copy()
    return state


class OnlineNorm:
    """Composed streaming normalizer: normalization, optional affine, layer scaling.

    A single instance is a stateful stream processor and must see a strict
    forward/backward interleaving during training; distinct instances are
    independent.
    """

    def __init__(
        self,
        features: int,
        alpha_f: float = 0.999,
        alpha_b: float = 0.99,
        affine: bool = True,
        layer_scaling: bool = True,
        scale_by_output_rms: bool = False,
        sigma_floor: float = SIGMA_FLOOR,
    ):
        self.state = OnlineNormState(
            features,
            alpha_f=alpha_f,
            alpha_b=alpha_b,
            sigma_floor=sigma_floor,
            scale_by_output_rms=scale_by_output_rms,
        )
        self.affine = AffineParams(features) if affine else None
        self.layer_scaling = bool(layer_scaling)
        self._cache: ForwardCache | None = None
        self._affine_in: FeatureMap | None = None

    def forward(self, x: FeatureMap) -> FeatureMap:
        out, cache = forward_sample(self.state, x)
        if self.affine is not None:
            self._affine_in = out
            out = affine_forward(self.affine, out)
        if self.layer_scaling:
            out, _ = layer_scale_forward(out, cache, self.state.sigma_floor)
        self._cache = cache
        return out

    def backward(self, grad: FeatureMap) -> FeatureMap:
        if self._cache is None:
            raise InterleaveError("backward before any forward")
        if self.layer_scaling:
            grad = layer_scale_backward(grad, self._cache)
        if self.affine is not None:
            grad = affine_backward(self.affine, self._affine_in, grad)
        return backward_sample(self.state, grad, self._cache)

    def forward_eval(self, x: FeatureMap) -> FeatureMap:
        """Inference path: frozen statistics, no state change, no cache."""
        out = forward_inference(self.state, x)
        if self.affine is not None:
            out = affine_forward(self.affine, out)
        if self.layer_scaling:
            out, _ = layer_scale_forward(out, None, self.state.sigma_floor)
        return out

    def param_triples(self):
        if self.affine is None:
            return []
        a = self.affine
        return [(a.gain, a.d_gain, a.v_gain), (a.bias, a.d_bias, a.v_bias)]
