"""Desk-scale diagnostic experiments.

Three phenomena around normalized networks, each reduced to a synthetic
setup small enough to verify in seconds:

* gradient bias: batch-estimated gradients of a normalized network tilt
  away from the full-population gradient as the batch shrinks;
* activation growth: systematic errors in per-layer normalization
  statistics compound exponentially with depth unless a per-sample RMS
  rescaling is inserted;
* weight equilibrium: with a normalizer absorbing weight scale, L2 decay
  balances gradient growth at |w| = sqrt(eta / (2 * lambda)) * E|w'|.

Plus a decay-factor grid sweep. Every experiment is a pure function of its
configuration and seed and emits one CSV.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .datasets import Dataset, DatasetSpec, make_synthetic_images
from .net import (
    Conv2D,
    DenseLayer,
    DivergenceError,
    TrainConfig,
    softmax_xent_backward,
    softmax_xent_forward,
    train,
)
from .online import OnlineNormState, backward_sample, forward_sample
from .reference import BatchNorm
from .tensor import FeatureMap, make_rng, relu, relu_backward


@dataclass
class BiasReport:
    """Per batch size: mean and standard deviation of the gradient angle."""

    batch_sizes: list[int]
    mean_angle_deg: list[float]
    std_angle_deg: list[float]

    def as_rows(self):
        return list(zip(self.batch_sizes, self.mean_angle_deg, self.std_angle_deg))


@dataclass
class GrowthProfile:
    """Per-layer RMS activation magnitude for one perturbation setting."""

    rms: np.ndarray
    depth: int
    noise: float
    sigma_down: float
    layer_scaling: bool

    def log_rms_slope(self) -> float:
        """Least-squares slope of log(rms) against layer index."""
        x = np.arange(self.rms.size, dtype=np.float64)
        y = np.log(self.rms)
        x = x - x.mean()
        return float(np.dot(x, y - y.mean()) / np.dot(x, x))


def _angle_deg(g: np.ndarray, ref: np.ndarray) -> float:
    cos = float(np.dot(g, ref) / (np.linalg.norm(g) * np.linalg.norm(ref)))
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


class _BiasNet:
    """Fixed-weight conv -> batch-normalize -> ReLU -> dense -> softmax."""

    def __init__(self, side: int, channels: int, classes: int, rng):
        self.side = side
        self.conv = Conv2D(1, channels, 3, rng)
        out_side = side - 2
        self.flat = channels * out_side * out_side
        self.dense = DenseLayer(self.flat, classes, rng, weight_scale=np.sqrt(1.0 / self.flat))
        self.channels = channels

    def gradient(self, x: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Parameter gradient of the mean loss over the given batch."""
        b = x.shape[0]
        images = x.reshape(b, 1, self.side, self.side)
        a = self.conv.forward(images)
        norm = BatchNorm(self.channels)
        spatial = a.shape[2] * a.shape[3]
        an = norm.forward(a.reshape(b, self.channels, spatial), training=True)
        h = relu(an)
        logits = self.dense.forward(h.reshape(b, self.flat))
        _, probs = softmax_xent_forward(logits, labels)
        g = softmax_xent_backward(probs, labels)
        gh = self.dense.backward(g).reshape(b, self.channels, spatial)
        gn = norm.backward(relu_backward(gh, an))
        self.conv.backward(gn.reshape(a.shape))
        flat = np.concatenate(
            [self.conv.d_k.ravel(), self.conv.d_b.ravel(), self.dense.d_w.ravel(), self.dense.d_b.ravel()]
        )
        for _, grad, _ in self.conv.param_triples() + self.dense.param_triples():
            grad[...] = 0.0
        return flat


def gradient_bias_experiment(
    seed: int,
    dataset_size: int = 2048,
    batch_sizes=(2, 4, 8, 16, 32, 64),
    repetitions: int = 10,
    channels: int = 8,
    classes: int = 10,
    side: int = 8,
) -> BiasReport:
    """Angle between batch-averaged and full-population gradients.

    Weights stay fixed so the angle isolates the estimation bias of
    normalizing per batch. The full-dataset batch is always appended and
    must come out at zero angle.
    """
    for b in batch_sizes:
        if b < 2:
            raise ValueError(f"batch size {b} below the batch-normalization minimum of 2")
        if dataset_size % b != 0:
            raise ValueError(f"dataset size {dataset_size} not divisible by batch {b}")
    rng = make_rng(seed)
    spec = DatasetSpec(
        kind="synthetic-images",
        classes=classes,
        samples=dataset_size,
        image_side=side,
        class_scale=1.0,
        noise=0.5,
        brightness=3.0,
    )
    data = make_synthetic_images(spec, seed)
    net = _BiasNet(side, channels, classes, rng)
    truth = net.gradient(data.x, data.labels)

    sizes = list(batch_sizes) + [dataset_size]
    means, stds = [], []
    for b in sizes:
        angles = []
        for _ in range(repetitions):
            order = rng.permutation(dataset_size)
            total = None
            for start in range(0, dataset_size, b):
                sel = order[start : start + b]
                g = net.gradient(data.x[sel], data.labels[sel])
                total = g if total is None else total + g
            avg = total / (dataset_size // b)
            angles.append(_angle_deg(avg, truth))
        means.append(float(np.mean(angles)))
        stds.append(float(np.std(angles)))
    return BiasReport(sizes, means, stds)


def activation_growth_experiment(
    depth: int,
    width: int = 32,
    noise: float = 0.0,
    sigma_down: float = 0.0,
    layer_scaling: bool = False,
    seed: int = 0,
    samples: int = 256,
) -> GrowthProfile:
    """RMS of per-layer activations under perturbed normalization statistics.

    A clean pass through the dense/normalize/ReLU chain computes exact
    population statistics per layer. Those coefficients are then perturbed
    (multiplicative lognormal on sigma, additive Gaussian on mu, and a
    systematic (1 - sigma_down) shrink of sigma) and inference is rerun.
    Because downstream coefficients were fit to the clean network, errors
    compound through depth; RMS is recorded after normalization (and after
    the optional per-sample RMS rescaling), before ReLU.
    """
    if depth < 1 or noise < 0.0:
        raise ValueError("depth must be >= 1 and noise >= 0")
    rng = make_rng(seed)
    x0 = rng.normal(size=(samples, width))
    weights = [rng.normal(0.0, np.sqrt(2.0 / width), size=(width, width)) for _ in range(depth)]

    def scale_rows(h: np.ndarray) -> np.ndarray:
        rms = np.sqrt((h * h).mean(axis=1, keepdims=True))
        return h / np.maximum(rms, 1e-5)

    # Clean pass: per-layer exact population coefficients.
    mus, sigmas = [], []
    h = x0
    for w in weights:
        a = h @ w.T
        mu = a.mean(axis=0)
        sigma = a.std(axis=0)
        mus.append(mu)
        sigmas.append(np.maximum(sigma, 1e-5))
        y = (a - mu) / np.maximum(sigma, 1e-5)
        if layer_scaling:
            y = scale_rows(y)
        h = relu(y)

    # Perturbed inference with the stored coefficients.
    rms_per_layer = np.empty(depth)
    h = x0
    for i, w in enumerate(weights):
        a = h @ w.T
        sigma_hat = sigmas[i] * (1.0 - sigma_down)
        mu_hat = mus[i].copy()
        if noise > 0.0:
            sigma_hat = sigma_hat * np.exp(noise * rng.normal(size=width))
            mu_hat = mu_hat + noise * sigmas[i] * rng.normal(size=width)
        y = (a - mu_hat) / np.maximum(sigma_hat, 1e-5)
        if layer_scaling:
            y = scale_rows(y)
        rms_per_layer[i] = np.sqrt((y * y).mean())
        h = relu(y)
    return GrowthProfile(rms_per_layer, depth, noise, sigma_down, layer_scaling)


@dataclass
class EquilibriumResult:
    steps: np.ndarray
    weight_norm: np.ndarray
    grad_norm: np.ndarray
    eta: float
    l2: float

    def final_quartile_ratio(self) -> float:
        """|w| / (sqrt(eta / 2 lambda) * E|w'|) over the last quarter of steps."""
        q = self.steps.size * 3 // 4
        expected = np.sqrt(self.eta / (2.0 * self.l2)) * self.grad_norm[q:].mean()
        return float(self.weight_norm[q:].mean() / expected)


def equilibrium_experiment(
    eta: float, l2: float, steps: int, seed: int, dim: int = 16, record_every: int = 10
) -> EquilibriumResult:
    """Weight-norm equilibrium of a single normalized linear unit.

    A bias-free linear unit feeds the streaming normalizer under random
    unit-magnitude supervision (loss -s * y with s = +-1), so the loss
    gradient never vanishes and |y'| = 1. The normalizer runs with the
    output-RMS gradient rescaling, which makes E|w'| invariant to weight
    scale and so reproduces the first-moment equilibrium law directly.
    Plain SGD with L2 decay; |w'| records the loss gradient only.
    """
    if eta <= 0.0 or l2 <= 0.0:
        raise ValueError("eta and lambda must be positive")
    rng = make_rng(seed)
    w = rng.normal(0.0, 1.0 / np.sqrt(dim), size=dim)
    state = OnlineNormState(1, alpha_f=0.99, alpha_b=0.99, scale_by_output_rms=True)
    rec_steps, rec_wnorm, rec_gnorm = [], [], []
    for t in range(steps):
        u = rng.normal(size=dim)
        a = float(np.dot(w, u))
        _, cache = forward_sample(state, FeatureMap([a]))
        y_grad = -float(rng.choice([-1.0, 1.0]))
        x_grad = backward_sample(state, FeatureMap([y_grad]), cache)
        g = float(x_grad.data[0, 0]) * u
        gnorm = float(np.linalg.norm(g))
        if not np.isfinite(gnorm):
            raise DivergenceError(f"gradient diverged at step {t}")
        w = w - eta * (g + l2 * w)
        if t % record_every == 0:
            rec_steps.append(t)
            rec_wnorm.append(float(np.linalg.norm(w)))
            rec_gnorm.append(gnorm)
    return EquilibriumResult(
        np.array(rec_steps), np.array(rec_wnorm), np.array(rec_gnorm), eta, l2
    )


@dataclass
class SweepResult:
    alpha_f_grid: list[float]
    alpha_b_grid: list[float]
    final_loss: np.ndarray
    diverged: np.ndarray

    def as_rows(self):
        rows = []
        for i, af in enumerate(self.alpha_f_grid):
            for j, ab in enumerate(self.alpha_b_grid):
                rows.append((af, ab, self.final_loss[i, j], int(self.diverged[i, j])))
        return rows


def decay_sweep(
    alpha_f_grid, alpha_b_grid, base_cfg: TrainConfig, train_set: Dataset
) -> SweepResult:
    """Final training loss of the streaming-normalizer MLP per decay pair.

    Divergent cells are recorded (loss = inf, diverged = 1), not fatal.
    """
    af = list(alpha_f_grid)
    ab = list(alpha_b_grid)
    if not af or not ab:
        raise ValueError("decay grids must be nonempty")
    for v in af + ab:
        if not (0.0 < v < 1.0):
            raise ValueError(f"decay {v} outside (0,1)")
    losses = np.empty((len(af), len(ab)))
    diverged = np.zeros((len(af), len(ab)), dtype=bool)
    for i, a_f in enumerate(af):
        for j, a_b in enumerate(ab):
            cfg = replace(base_cfg, normalizer="online", alpha_f=a_f, alpha_b=a_b)
            try:
                records, _ = train(cfg, train_set)
                losses[i, j] = records[-1].loss
            except DivergenceError:
                losses[i, j] = np.inf
                diverged[i, j] = True
    return SweepResult(af, ab, losses, diverged)


def write_bias_csv(path, report: BiasReport) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("batch_size,mean_angle_deg,std_angle_deg\n")
        for b, m, s in report.as_rows():
            fh.write(f"{b},{m!r},{s!r}\n")


def write_growth_csv(path, profile: GrowthProfile) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("layer,rms\n")
        for i, r in enumerate(profile.rms):
            fh.write(f"{i},{float(r)!r}\n")


def write_equilibrium_csv(path, result: EquilibriumResult) -> None:
    scale = np.sqrt(result.eta / (2.0 * result.l2))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,weight_norm,grad_norm,ratio\n")
        for t, wn, gn in zip(result.steps, result.weight_norm, result.grad_norm):
            ratio = float(wn / (scale * gn)) if gn > 0 else float("nan")
            fh.write(f"{t},{float(wn)!r},{float(gn)!r},{ratio!r}\n")


def write_sweep_csv(path, result: SweepResult) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("alpha_f,alpha_b,final_loss,diverged\n")
        for af, ab, loss, div in result.as_rows():
            fh.write(f"{float(af)!r},{float(ab)!r},{float(loss)!r},{div}\n")
