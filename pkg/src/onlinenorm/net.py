"""Minimal feed-forward network with hand-written backprop.

Dense layers, one small valid-padding conv layer, ReLU, softmax
cross-entropy, SGD with momentum and L2 decay, and the batch-size scaling
rules for learning rate and momentum. The training loop drives any of the
normalizer kinds; the streaming normalizer is fed one sample at a time
with a strict forward/backward interleaving.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .online import OnlineNorm
from .reference import BatchNorm, LayerNorm, _center
from .tensor import FeatureMap, ShapeError, make_rng, relu, relu_backward

NORMALIZER_KINDS = ("online", "batch", "layer", "exact-population", "none")


class DivergenceError(RuntimeError):
    """Training loss left the finite, bounded regime."""


@dataclass
class TrainConfig:
    """Hyperparameters for one training run.

    eval_interval counts optimizer steps between metric rows; 0 means one
    row per epoch. Divergence halts the run when |loss| exceeds
    divergence_limit or stops being finite.
    """

    eta: float = 0.1
    momentum: float = 0.9
    l2: float = 1e-4
    batch_size: int = 32
    epochs: int = 5
    seed: int = 0
    normalizer: str = "online"
    alpha_f: float = 0.999
    alpha_b: float = 0.99
    hidden: int = 32
    depth: int = 1
    eval_interval: int = 0
    divergence_limit: float = 1e6

    def validate(self) -> None:
        # eta = 0 is legal and freezes the parameters; useful as a control.
        if self.eta < 0.0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must be in [0,1), got {self.momentum}")
        if self.l2 < 0.0:
            raise ValueError(f"l2 must be >= 0, got {self.l2}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.normalizer not in NORMALIZER_KINDS:
            raise ValueError(f"unknown normalizer {self.normalizer!r}")
        if not (0.0 < self.alpha_f < 1.0) or not (0.0 < self.alpha_b < 1.0):
            raise ValueError("decay factors must be in (0,1)")
        if self.hidden < 1 or self.depth < 1:
            raise ValueError("hidden and depth must be >= 1")


@dataclass
class MetricsRecord:
    step: int
    epoch: int
    loss: float
    accuracy: float
    weight_norm_l2: float
    eps_y_max: float
    eps_1_max: float


METRICS_HEADER = "step,epoch,loss,accuracy,weight_norm_l2,eps_y_max,eps_1_max"


def write_metrics_csv(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(METRICS_HEADER + "\n")
        for r in records:
            fh.write(
                f"{r.step},{r.epoch},{r.loss!r},{r.accuracy!r},"
                f"{r.weight_norm_l2!r},{r.eps_y_max!r},{r.eps_1_max!r}\n"
            )


class DenseLayer:
    """Affine map with gradient and momentum buffers."""

    def __init__(self, n_in: int, n_out: int, rng=None, weight_scale: float | None = None, bias: bool = True):
        if weight_scale is None:
            weight_scale = np.sqrt(2.0 / n_in)
        if rng is None:
            self.w = np.zeros((n_out, n_in))
        else:
            self.w = rng.normal(0.0, weight_scale, size=(n_out, n_in))
        self.b = np.zeros(n_out) if bias else None
        self.d_w = np.zeros_like(self.w)
        self.d_b = np.zeros(n_out) if bias else None
        self.v_w = np.zeros_like(self.w)
        self.v_b = np.zeros(n_out) if bias else None
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.w.shape[1]:
            raise ShapeError(f"dense input {x.shape} vs weights {self.w.shape}")
        self._x = x
        out = x @ self.w.T
        if self.b is not None:
            out = out + self.b
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward before forward")
        if grad.shape != (self._x.shape[0], self.w.shape[0]):
            raise ShapeError(f"dense gradient {grad.shape}")
        self.d_w += grad.T @ self._x
        if self.b is not None:
            self.d_b += grad.sum(axis=0)
        return grad @ self.w

    def param_triples(self):
        triples = [(self.w, self.d_w, self.v_w)]
        if self.b is not None:
            triples.append((self.b, self.d_b, self.v_b))
        return triples


class Conv2D:
    """Single valid-padding 2-D convolution layer with a small fixed kernel."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng, weight_scale: float | None = None):
        if weight_scale is None:
            weight_scale = np.sqrt(2.0 / (in_ch * kernel * kernel))
        self.k = rng.normal(0.0, weight_scale, size=(out_ch, in_ch, kernel, kernel))
        self.b = np.zeros(out_ch)
        self.d_k = np.zeros_like(self.k)
        self.d_b = np.zeros_like(self.b)
        self.v_k = np.zeros_like(self.k)
        self.v_b = np.zeros_like(self.b)
        self._windows = None
        self._in_shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        oc, ic, kh, kw = self.k.shape
        if x.ndim != 4 or x.shape[1] != ic or x.shape[2] < kh or x.shape[3] < kw:
            raise ShapeError(f"conv input {x.shape} vs kernel {self.k.shape}")
        win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
        self._windows = win
        self._in_shape = x.shape
        return np.einsum("bihwkl,oikl->bohw", win, self.k) + self.b[None, :, None, None]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._windows is None:
            raise RuntimeError("backward before forward")
        oc, ic, kh, kw = self.k.shape
        self.d_k += np.einsum("bihwkl,bohw->oikl", self._windows, grad)
        self.d_b += grad.sum(axis=(0, 2, 3))
        pad = np.pad(grad, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        gwin = np.lib.stride_tricks.sliding_window_view(pad, (kh, kw), axis=(2, 3))
        flipped = self.k[:, :, ::-1, ::-1]
        return np.einsum("bohwkl,oikl->bihw", gwin, flipped)

    def param_triples(self):
        return [(self.k, self.d_k, self.v_k), (self.b, self.d_b, self.v_b)]


def softmax_xent_forward(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch; returns (loss, softmax probabilities)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=1, keepdims=True)
    picked = probs[np.arange(labels.size), labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    return loss, probs


def softmax_xent_backward(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    grad = probs.copy()
    grad[np.arange(labels.size), labels] -= 1.0
    return grad / labels.size


def sgd_momentum_step(layer, eta: float, momentum: float, l2: float) -> None:
    """v = mu*v + (1-mu)*(g + l2*w); w -= eta*v; gradients cleared."""
    for p, g, v in layer.param_triples():
        v *= momentum
        v += (1.0 - momentum) * (g + l2 * p)
        p -= eta * v
        g[...] = 0.0


def scale_hyperparams(
    eta: float, momentum: float, l2: float, b_old: int, b_new: int
) -> tuple[float, float, float]:
    """Rescale (eta, momentum) for a batch-size change; l2 stays unchanged.

    Learning rate scales linearly with batch size; momentum is matched by
    equating its per-sample decay. The third value folds in the extra
    (1-mu_new)/(1-mu_old) learning-rate factor needed by optimizers that do
    not multiply the gradient by (1 - mu).
    """
    if b_old < 1 or b_new < 1:
        raise ValueError(f"batch sizes must be >= 1, got {b_old} -> {b_new}")
    ratio = b_new / b_old
    eta_new = ratio * eta
    mu_new = momentum ** ratio
    eta_star = (1.0 - mu_new) / (1.0 - momentum) * eta_new
    return eta_new, mu_new, eta_star


class _OnlineAdapter:
    def __init__(self, features: int, cfg: TrainConfig):
        self.layer = OnlineNorm(features, alpha_f=cfg.alpha_f, alpha_b=cfg.alpha_b)

    def forward_sample(self, a: np.ndarray) -> np.ndarray:
        return self.layer.forward(FeatureMap(a)).data[:, 0]

    def backward_sample(self, g: np.ndarray) -> np.ndarray:
        return self.layer.backward(FeatureMap(g)).data[:, 0]

    def eval_sample(self, a: np.ndarray) -> np.ndarray:
        return self.layer.forward_eval(FeatureMap(a)).data[:, 0]

    def param_triples(self):
        return self.layer.param_triples()

    def eps_maxima(self) -> tuple[float, float]:
        st = self.layer.state
        return float(np.abs(st.eps_y).max()), float(np.abs(st.eps_1).max())


class _BatchAdapter:
    def __init__(self, features: int):
        self.layer = BatchNorm(features)

    def forward(self, a: np.ndarray, training: bool) -> np.ndarray:
        return self.layer.forward(a, training=training)

    def backward(self, g: np.ndarray) -> np.ndarray:
        return self.layer.backward(g)

    def param_triples(self):
        return []


class _ExactAdapter(_BatchAdapter):
    """Population normalization: statistics of whichever full batch arrives."""

    def forward(self, a: np.ndarray, training: bool) -> np.ndarray:
        # Evaluation normalizes the presented population directly instead of
        # using decayed running statistics.
        d, _ = _center(a, axis=0)
        sigma = np.maximum(np.sqrt((d * d).mean(axis=0)), self.layer.sigma_floor)
        if training:
            return self.layer.forward(a, training=True)
        return d / sigma


class _LayerAdapter:
    def __init__(self, features: int):
        self.layer = LayerNorm(features)

    def forward(self, a: np.ndarray, training: bool) -> np.ndarray:
        return self.layer.forward(a, training=training)

    def backward(self, g: np.ndarray) -> np.ndarray:
        return self.layer.backward(g)

    def param_triples(self):
        return []


def _make_normalizer(kind: str, features: int, cfg: TrainConfig):
    if kind == "online":
        return _OnlineAdapter(features, cfg)
    if kind in ("batch", "exact-population"):
        return _ExactAdapter(features) if kind == "exact-population" else _BatchAdapter(features)
    if kind == "layer":
        return _LayerAdapter(features)
    if kind == "none":
        return None
    raise ValueError(f"unknown normalizer {kind!r}")


class Mlp:
    """Dense/normalize/ReLU stack with a linear classifier head."""

    def __init__(self, sizes, cfg: TrainConfig, rng):
        self.cfg = cfg
        self.kind = cfg.normalizer
        self.dense = []
        self.norms = []
        for i in range(len(sizes) - 2):
            self.dense.append(DenseLayer(sizes[i], sizes[i + 1], rng))
            self.norms.append(_make_normalizer(cfg.normalizer, sizes[i + 1], cfg))
        self.dense.append(DenseLayer(sizes[-2], sizes[-1], rng))
        self._pre = []

    def layers(self):
        out = list(self.dense)
        out += [n for n in self.norms if n is not None and n.param_triples()]
        return out

    def step_all(self) -> None:
        for layer in self.layers():
            sgd_momentum_step(layer, self.cfg.eta, self.cfg.momentum, self.cfg.l2)

    def weight_norm(self) -> float:
        total = 0.0
        for d in self.dense:
            total += float((d.w * d.w).sum())
            if d.b is not None:
                total += float((d.b * d.b).sum())
        return float(np.sqrt(total))

    def eps_maxima(self) -> tuple[float, float]:
        ey = e1 = 0.0
        for n in self.norms:
            if isinstance(n, _OnlineAdapter):
                a, b = n.eps_maxima()
                ey = max(ey, a)
                e1 = max(e1, b)
        return ey, e1

    # Batch path: every normalizer kind except the streaming one.
    def forward_batch(self, x: np.ndarray, training: bool = True) -> np.ndarray:
        if self.kind == "online":
            raise RuntimeError("streaming normalizer cannot take batched training passes")
        self._pre = []
        h = x
        for dense, norm in zip(self.dense[:-1], self.norms):
            a = dense.forward(h)
            if norm is not None:
                a = norm.forward(a, training)
            self._pre.append(a)
            h = relu(a)
        return self.dense[-1].forward(h)

    def backward_batch(self, grad: np.ndarray) -> None:
        g = self.dense[-1].backward(grad)
        for dense, norm, pre in zip(
            reversed(self.dense[:-1]), reversed(self.norms), reversed(self._pre)
        ):
            g = relu_backward(g, pre)
            if norm is not None:
                g = norm.backward(g)
            g = dense.backward(g)

    def eval_batch(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "online":
            return np.stack([self._eval_sample(row) for row in x])
        return self.forward_batch(x, training=False)

    # Streaming path: one sample at a time, strict interleaving.
    def forward_sample(self, x: np.ndarray) -> np.ndarray:
        self._pre = []
        h = x[None, :]
        for dense, norm in zip(self.dense[:-1], self.norms):
            a = dense.forward(h)[0]
            a = norm.forward_sample(a)
            self._pre.append(a)
            h = relu(a)[None, :]
        return self.dense[-1].forward(h)[0]

    def backward_sample(self, grad: np.ndarray) -> None:
        g = self.dense[-1].backward(grad[None, :])[0]
        for dense, norm, pre in zip(
            reversed(self.dense[:-1]), reversed(self.norms), reversed(self._pre)
        ):
            g = relu_backward(g, pre)
            g = norm.backward_sample(g)
            g = dense.backward(g[None, :])[0]

    def _eval_sample(self, x: np.ndarray) -> np.ndarray:
        h = x[None, :]
        for dense, norm in zip(self.dense[:-1], self.norms):
            a = dense.forward(h)[0]
            a = norm.eval_sample(a)
            h = relu(a)[None, :]
        return self.dense[-1].forward(h)[0]


def _check_loss(loss: float, limit: float) -> None:
    if not np.isfinite(loss) or abs(loss) > limit:
        raise DivergenceError(f"loss diverged: {loss}")


def train(cfg: TrainConfig, train_set, val_set=None) -> tuple[list[MetricsRecord], Mlp]:
    """Run the training loop and return (metrics records, trained network).

    On divergence the offending record is appended before DivergenceError is
    raised; the partial records stay available on the exception as
    exc.records.
    """
    cfg.validate()
    if cfg.normalizer not in ("online", "exact-population") and cfg.batch_size > train_set.n:
        raise ValueError(
            f"batch_size {cfg.batch_size} exceeds training set size {train_set.n}"
        )
    rng = make_rng(cfg.seed)
    sizes = [train_set.dim] + [cfg.hidden] * cfg.depth + [train_set.n_classes]
    net = Mlp(sizes, cfg, rng)
    records: list[MetricsRecord] = []
    step = 0
    interval_losses: list[float] = []
    interval_hits = 0
    interval_count = 0

    def flush(epoch: int) -> None:
        nonlocal interval_losses, interval_hits, interval_count
        if not interval_losses:
            return
        loss = float(np.mean(interval_losses))
        if val_set is not None:
            acc = evaluate_accuracy(net, val_set)
        else:
            acc = interval_hits / max(interval_count, 1)
        ey, e1 = net.eps_maxima()
        records.append(
            MetricsRecord(step, epoch, loss, acc, net.weight_norm(), ey, e1)
        )
        interval_losses = []
        interval_hits = 0
        interval_count = 0

    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(train_set.n)
            if cfg.normalizer == "online":
                pending = 0
                for idx in order:
                    x, label = train_set.x[idx], int(train_set.labels[idx])
                    logits = net.forward_sample(x)
                    loss, probs = softmax_xent_forward(logits[None, :], np.array([label]))
                    net.backward_sample(softmax_xent_backward(probs, np.array([label]))[0])
                    pending += 1
                    interval_losses.append(loss)
                    interval_hits += int(np.argmax(logits) == label)
                    interval_count += 1
                    if pending == cfg.batch_size:
                        net.step_all()
                        pending = 0
                        step += 1
                        _check_loss(loss, cfg.divergence_limit)
                        if cfg.eval_interval and step % cfg.eval_interval == 0:
                            flush(epoch)
                if pending:
                    net.step_all()
                    step += 1
            elif cfg.normalizer == "exact-population":
                logits = net.forward_batch(train_set.x[order], training=True)
                loss, probs = softmax_xent_forward(logits, train_set.labels[order])
                net.backward_batch(softmax_xent_backward(probs, train_set.labels[order]))
                net.step_all()
                step += 1
                interval_losses.append(loss)
                interval_hits += int((np.argmax(logits, axis=1) == train_set.labels[order]).sum())
                interval_count += train_set.n
                _check_loss(loss, cfg.divergence_limit)
            else:
                for start in range(0, train_set.n - cfg.batch_size + 1, cfg.batch_size):
                    sel = order[start : start + cfg.batch_size]
                    logits = net.forward_batch(train_set.x[sel], training=True)
                    loss, probs = softmax_xent_forward(logits, train_set.labels[sel])
                    net.backward_batch(softmax_xent_backward(probs, train_set.labels[sel]))
                    net.step_all()
                    step += 1
                    interval_losses.append(loss)
                    interval_hits += int((np.argmax(logits, axis=1) == train_set.labels[sel]).sum())
                    interval_count += sel.size
                    _check_loss(loss, cfg.divergence_limit)
                    if cfg.eval_interval and step % cfg.eval_interval == 0:
                        flush(epoch)
            if not cfg.eval_interval:
                flush(epoch)
        flush(cfg.epochs - 1)
    except DivergenceError as exc:
        ey, e1 = net.eps_maxima()
        bad = interval_losses[-1] if interval_losses else float("nan")
        records.append(
            MetricsRecord(step, min(epoch, cfg.epochs - 1), bad, 0.0, net.weight_norm(), ey, e1)
        )
        exc.records = records
        raise
    return records, net


def evaluate_accuracy(net: Mlp, dataset) -> float:
    logits = net.eval_batch(dataset.x)
    return float((np.argmax(logits, axis=1) == dataset.labels).mean())
