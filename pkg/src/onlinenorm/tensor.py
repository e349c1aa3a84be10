"""Dense-array substrate shared by every other module.

Everything is float64: the verification tolerances sit near 1e-10, which
float32 cannot hold. Per-sample activations travel as a FeatureMap, a
feature-major (features, spatial) block; fully connected layers use
spatial = 1.
"""

from __future__ import annotations

import numpy as np

# Floor applied to every divisor derived from a standard deviation or an
# RMS, so degenerate constant inputs stay well-defined.
SIGMA_FLOOR = 1e-5


class ShapeError(ValueError):
    """Operand shapes do not satisfy the operation's contract."""


class FeatureMap:
    """One sample: `features` channels, each holding `spatial` scalar values.

    Values are stored feature-major and must be finite on construction.
    """

    __slots__ = ("features", "spatial", "data")

    def __init__(self, data, spatial: int | None = None):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim == 1:
            if spatial is None:
                arr = arr.reshape(-1, 1)
            else:
                if spatial < 1 or arr.size % spatial != 0:
                    raise ShapeError(
                        f"flat length {arr.size} not divisible by spatial {spatial}"
                    )
                arr = arr.reshape(-1, spatial)
        elif arr.ndim == 2:
            if spatial is not None and arr.shape[1] != spatial:
                raise ShapeError(f"spatial {spatial} != data width {arr.shape[1]}")
        else:
            raise ShapeError(f"FeatureMap takes 1-D or 2-D data, got {arr.ndim}-D")
        if not np.isfinite(arr).all():
            raise ValueError("FeatureMap values must be finite")
        self.features = arr.shape[0]
        self.spatial = arr.shape[1]
        self.data = arr

    def ravel(self) -> np.ndarray:
        """Flat feature-major view of the values."""
        return self.data.reshape(-1)

    def __repr__(self) -> str:
        return f"FeatureMap(features={self.features}, spatial={self.spatial})"


def feature_mean(m: FeatureMap) -> np.ndarray:
    """Arithmetic mean over each feature's spatial values."""
    return m.data.mean(axis=1)


def feature_var(m: FeatureMap) -> np.ndarray:
    """Population variance over each feature's spatial values (zero for spatial=1)."""
    d = m.data - m.data.mean(axis=1, keepdims=True)
    return (d * d).mean(axis=1)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} x {b.shape}")
    return a @ b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"add shapes {np.shape(a)} vs {np.shape(b)}")
    return a + b


def scale(a: np.ndarray, c: float) -> np.ndarray:
    return a * float(c)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad: np.ndarray, pre: np.ndarray) -> np.ndarray:
    """Mask the gradient where the pre-activation was <= 0."""
    if np.shape(grad) != np.shape(pre):
        raise ShapeError(f"relu_backward shapes {np.shape(grad)} vs {np.shape(pre)}")
    return np.where(pre > 0.0, grad, 0.0)


def dot(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.size != v.size:
        raise ShapeError(f"dot lengths {u.size} vs {v.size}")
    return float(np.dot(u, v))


def l2_norm(v: np.ndarray) -> float:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    return float(np.sqrt(np.dot(v, v)))


def make_rng(seed: int) -> np.random.Generator:
    """Seedable PCG64 generator; identical seeds give identical streams."""
    return np.random.default_rng(int(seed))
