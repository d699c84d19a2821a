"""Tiny-MLP contrastive trainer for the 2-D toy benchmarks.

Trains a fixed (2, 8, 4, 2) tanh MLP on the moons / XOR datasets by
minimizing the in-batch contrastive objective

    mean_x [ -log( density(x; same-class batch members)
                   / density(x; all batch members) ) ]

with the sample itself left out of both densities.  Two output heads are
compared: ``"sphere"`` L2-normalizes the output (cosine-exponential
kernel), ``"euclid"`` keeps the raw output with a Gaussian kernel
``exp(-||z - z'||^2 / tau)``.  The Gaussian head exists only for this
ablation: with an unbounded metric the within-class density has no floor
to converge to, and the separability trace shows it.

Backpropagation is written out by hand for the fixed architecture;
:func:`grad_check` keeps it honest against central finite differences.
Training is single-threaded per run.  Temperatures below 0.05 are
rejected here (not in the shared config) because the loss is computed in
the plain domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .eds import EDSReport, eds_from_kernel_matrix
from .kernel import KernelConfig

__all__ = [
    "ToyDataset",
    "ToyNet",
    "EpochRecord",
    "TrainTrace",
    "generate_toy",
    "batch_loss",
    "loss_and_param_grads",
    "grad_check",
    "train",
    "DEFAULT_LR",
    "DEFAULT_BATCH",
    "DEFAULT_TRAIN_TAU",
    "EVAL_TAU",
]

WIDTHS = (2, 8, 4, 2)
MIN_TRAIN_TAU = 0.05
EVAL_TAU = 0.07
# Defaults picked by the seeded sweep recorded in
# tests/fixtures/toytrain_sweep.json.
DEFAULT_LR = 0.1
DEFAULT_BATCH = 48
DEFAULT_TRAIN_TAU = 0.8
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class ToyDataset:
    """2-D points with binary labels from a named generator."""

    points: np.ndarray
    labels: np.ndarray  # int 0/1 per point
    kind: str

    def __len__(self) -> int:
        return self.points.shape[0]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=2)


def generate_toy(kind: str, n: int, noise: float, seed: int) -> ToyDataset:
    """Deterministic moons or XOR dataset with (near-)balanced classes.

    ``moons`` places ``n // 2`` points on each of two interleaving
    half-circle arcs; ``xor`` cycles the four unit-square corners,
    labeled by quadrant parity.  ``noise`` adds isotropic Gaussian
    jitter.
    """
    if n < 4:
        raise ValueError("need at least 4 points")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = np.random.default_rng(seed)
    if kind == "moons":
        n0 = n // 2
        n1 = n - n0
        t0 = np.linspace(0.0, math.pi, n0)
        t1 = np.linspace(0.0, math.pi, n1)
        outer = np.column_stack([np.cos(t0), np.sin(t0)])
        inner = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
        points = np.vstack([outer, inner])
        labels = np.concatenate([np.zeros(n0, int), np.ones(n1, int)])
    elif kind == "xor":
        corners = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        corner_labels = np.array([0, 1, 1, 0])
        counts = [n // 4] * 4
        for i in range(n % 4):
            counts[i] += 1
        points = np.vstack([np.tile(corners[i], (counts[i], 1)) for i in range(4)])
        labels = np.concatenate(
            [np.full(counts[i], corner_labels[i], int) for i in range(4)]
        )
    else:
        raise ValueError(f"unknown toy dataset kind {kind!r}")
    if noise > 0:
        points = points + noise * rng.standard_normal(points.shape)
    return ToyDataset(points=points, labels=labels, kind=kind)


class ToyNet:
    """Fixed-architecture MLP with tanh hidden layers and a chosen head."""

    def __init__(self, weights, biases, head: str):
        if head not in ("sphere", "euclid"):
            raise ValueError(f"unknown head {head!r}")
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        self.head = head

    @classmethod
    def init(cls, head: str, seed: int, widths=WIDTHS) -> "ToyNet":
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            weights.append(rng.standard_normal((fan_out, fan_in)) / math.sqrt(fan_in))
            # small random biases: with zero biases the tanh net is exactly
            # odd, and sign-symmetric datasets then pin same-class clusters
            # antipodal forever
            biases.append(0.1 * rng.standard_normal(fan_out))
        return cls(weights, biases, head)

    @property
    def widths(self) -> tuple:
        return tuple([self.weights[0].shape[1]] + [w.shape[0] for w in self.weights])

    def _forward(self, X: np.ndarray):
        h = np.asarray(X, dtype=float)
        hidden = [h]
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ W.T + b
            h = a if l == last else np.tanh(a)
            hidden.append(h)
        u = hidden[-1]
        if self.head == "sphere":
            norms = np.linalg.norm(u, axis=1, keepdims=True)
            if np.any(norms == 0):
                raise FloatingPointError("zero-norm output cannot be normalized")
            z = u / norms
        else:
            norms = None
            z = u
        return z, hidden, norms

    def forward(self, X: np.ndarray) -> np.ndarray:
        """Embed a batch of 2-D points; unit rows under the sphere head."""
        return self._forward(X)[0]

    def get_params(self) -> np.ndarray:
        return np.concatenate(
            [w.ravel() for w in self.weights] + [b.ravel() for b in self.biases]
        )

    def set_params(self, flat: np.ndarray):
        at = 0
        for w in self.weights:
            w[...] = flat[at : at + w.size].reshape(w.shape)
            at += w.size
        for b in self.biases:
            b[...] = flat[at : at + b.size]
            at += b.size
        if at != flat.size:
            raise ValueError("parameter vector has the wrong length")


def _pairwise_kernel(Z: np.ndarray, head: str, tau: float) -> np.ndarray:
    # No clamping here: clamps would put kinks into the loss surface that
    # the analytic gradient does not model.  Rounding can push a cosine a
    # few ulp past 1, which is harmless for training.
    if head == "sphere":
        return np.exp((Z @ Z.T - 1.0) / tau)
    sq = np.sum(Z * Z, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (Z @ Z.T)
    return np.exp(-d2 / tau)


def _check_batch(y: np.ndarray):
    for c in np.unique(y):
        if int(np.sum(y == c)) < 2:
            raise ValueError(
                f"batch too small for class {c}: need >= 2 members per class"
            )


def _contrastive_loss(K: np.ndarray, y: np.ndarray):
    """Loss value and dLoss/dK for a pairwise kernel matrix.

    Per sample: log(mean off-diagonal kernel) - log(mean same-class
    off-diagonal kernel).
    """
    n = K.shape[0]
    same = (y[:, None] == y[None, :]).astype(float)
    off = 1.0 - np.eye(n)
    pos_mask = same * off
    n_pos = pos_mask.sum(axis=1)
    sum_all = (K * off).sum(axis=1)
    sum_pos = (K * pos_mask).sum(axis=1)
    loss = float(
        np.mean(np.log(sum_all / (n - 1)) - np.log(sum_pos / n_pos))
    )
    dK = (off / sum_all[:, None] - pos_mask / sum_pos[:, None]) / n
    return loss, dK


def batch_loss(net: ToyNet, X: np.ndarray, y: np.ndarray, cfg: KernelConfig) -> float:
    """Contrastive loss of one batch under the net's head."""
    if cfg.temperature < MIN_TRAIN_TAU:
        raise ValueError(f"training temperature must be >= {MIN_TRAIN_TAU}")
    _check_batch(y)
    Z = net.forward(X)
    K = _pairwise_kernel(Z, net.head, cfg.temperature)
    return _contrastive_loss(K, y)[0]


def loss_and_param_grads(net: ToyNet, X, y, cfg: KernelConfig):
    """Loss plus its gradient for every weight and bias, by hand.

    Returns ``(loss, weight_grads, bias_grads)`` with lists aligned to
    the net's layers.
    """
    if cfg.temperature < MIN_TRAIN_TAU:
        raise ValueError(f"training temperature must be >= {MIN_TRAIN_TAU}")
    y = np.asarray(y)
    _check_batch(y)
    tau = cfg.temperature
    Z, hidden, norms = net._forward(X)
    K = _pairwise_kernel(Z, net.head, tau)
    loss, dK = _contrastive_loss(K, y)

    M = dK * K
    np.fill_diagonal(M, 0.0)
    if net.head == "sphere":
        dZ = (M + M.T) @ Z / tau
        # through the row normalization: project out the radial component
        dU = (dZ - np.sum(dZ * Z, axis=1, keepdims=True) * Z) / norms
    else:
        S = M + M.T
        dU = -(2.0 / tau) * (S.sum(axis=1)[:, None] * Z - S @ Z)

    weight_grads = [None] * len(net.weights)
    bias_grads = [None] * len(net.biases)
    dA = dU  # output layer is linear
    for l in range(len(net.weights) - 1, -1, -1):
        weight_grads[l] = dA.T @ hidden[l]
        bias_grads[l] = dA.sum(axis=0)
        if l > 0:
            dH = dA @ net.weights[l]
            dA = dH * (1.0 - hidden[l] ** 2)  # tanh'
    return loss, weight_grads, bias_grads


def grad_check(
    net: ToyNet, X, y, cfg: KernelConfig, step: float = 1e-5
) -> float:
    """Max relative disagreement between analytic and central-difference
    gradients over every parameter.

    The per-parameter denominator is floored at 0.1% of the largest
    gradient magnitude and at 1e-6 absolute: components far below the
    dominant scale (or below what central differences can resolve at
    all) would otherwise report finite-difference noise, not gradient
    bugs.  Check a net against batches from its own data distribution;
    far off it, the loss curvature can exceed what step 1e-5 resolves.
    """
    loss, wg, bg = loss_and_param_grads(net, X, y, cfg)
    analytic = np.concatenate([g.ravel() for g in wg] + [g.ravel() for g in bg])
    theta = net.get_params()
    numeric = np.empty_like(theta)
    probe = ToyNet(
        [w.copy() for w in net.weights], [b.copy() for b in net.biases], net.head
    )
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] = theta[i] + step
        probe.set_params(bumped)
        up = batch_loss(probe, X, y, cfg)
        bumped[i] = theta[i] - step
        probe.set_params(bumped)
        down = batch_loss(probe, X, y, cfg)
        numeric[i] = (up - down) / (2.0 * step)
    magnitudes = np.abs(analytic) + np.abs(numeric)
    floor = max(1e-3 * float(np.max(magnitudes)), 1e-6)
    denom = np.maximum(magnitudes, floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


class EpochRecord(NamedTuple):
    epoch: int
    loss: float
    epsilon: float
    delta: float
    k: float


@dataclass
class TrainTrace:
    """Per-epoch loss and separability, plus the final full report."""

    records: list = field(default_factory=list)
    final_report: EDSReport | None = None

    def csv_lines(self) -> list:
        lines = ["epoch,loss,epsilon,delta,k"]
        for r in self.records:
            lines.append(
                f"{r.epoch},{r.loss!r},{r.epsilon!r},{r.delta!r},{r.k!r}"
            )
        return lines


def _entropy_floor(y: np.ndarray) -> float:
    """Exact lower bound on loss + batch label entropy.

    The loss decomposition makes loss >= -H(batch fractions) for the
    plain empirical densities; leaving the self-pair out shifts the floor
    down by exactly the leave-one-out correction below.
    """
    n = y.size
    counts = np.unique(y, return_counts=True)[1].astype(float)
    w = counts / n
    return float(np.sum(w * np.log1p(-1.0 / counts)) - math.log1p(-1.0 / n))


def _epoch_eds(net, dataset, eval_tau, trim_fraction) -> EDSReport:
    Z = net.forward(dataset.points)
    K = _pairwise_kernel(Z, net.head, eval_tau)
    return eds_from_kernel_matrix(
        K, [str(l) for l in dataset.labels], trim_fraction, tau=eval_tau
    )


def train(
    dataset: ToyDataset,
    head: str,
    cfg: KernelConfig | None = None,
    epochs: int = 30,
    lr: float = DEFAULT_LR,
    batch: int = DEFAULT_BATCH,
    seed: int = 0,
    eval_tau: float = EVAL_TAU,
    trim_fraction: float = 0.05,
):
    """Adam on the contrastive objective; returns ``(net, trace)``.

    Batches are stratified (equal members per class per batch, leftovers
    dropped) so the same-class density is always defined.  The optimizer
    is Adam with fixed hyperparameters: once classes separate, the
    remaining within-class attraction shrinks with the cross-class kernel
    mass, and plain fixed-step SGD stalls before the clusters tighten
    (see the sweep in tests/fixtures/toytrain_sweep.json).

    After every epoch the separability of the full dataset is measured at
    ``eval_tau``, which is independent of the training temperature.
    Identical arguments produce identical traces.
    """
    if cfg is None:
        cfg = KernelConfig(temperature=DEFAULT_TRAIN_TAU)
    classes = np.unique(dataset.labels)
    if classes.size < 2:
        raise ValueError("training needs at least 2 classes")
    per_class = batch // classes.size
    if per_class < 2:
        raise ValueError(
            f"batch size {batch} leaves < 2 members per class ({classes.size} classes)"
        )
    rng = np.random.default_rng(seed)
    net = ToyNet.init(head, seed=int(rng.integers(2**31 - 1)))
    by_class = [np.flatnonzero(dataset.labels == c) for c in classes]

    params = net.weights + net.biases
    first_moment = [np.zeros_like(p) for p in params]
    second_moment = [np.zeros_like(p) for p in params]
    step = 0

    trace = TrainTrace()
    for epoch in range(epochs):
        order = [rng.permutation(idx) for idx in by_class]
        num_batches = min(idx.size for idx in order) // per_class
        epoch_losses = []
        for b in range(num_batches):
            take = np.concatenate(
                [idx[b * per_class : (b + 1) * per_class] for idx in order]
            )
            X = dataset.points[take]
            y = dataset.labels[take]
            loss, wg, bg = loss_and_param_grads(net, X, y, cfg)
            floor = _entropy_floor(y)
            w = np.unique(y, return_counts=True)[1] / y.size
            if loss + float(-np.sum(w * np.log(w))) < floor - 1e-6:
                raise RuntimeError(
                    "contrastive loss fell below its entropy floor; "
                    "gradient or kernel computation is inconsistent"
                )
            step += 1
            for p, g, m, v in zip(params, wg + bg, first_moment, second_moment):
                m *= ADAM_BETA1
                m += (1.0 - ADAM_BETA1) * g
                v *= ADAM_BETA2
                v += (1.0 - ADAM_BETA2) * g * g
                m_hat = m / (1.0 - ADAM_BETA1**step)
                v_hat = v / (1.0 - ADAM_BETA2**step)
                p -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            epoch_losses.append(loss)
        report = _epoch_eds(net, dataset, eval_tau, trim_fraction)
        trace.records.append(
            EpochRecord(
                epoch=epoch,
                loss=float(np.mean(epoch_losses)),
                epsilon=report.epsilon,
                delta=report.delta,
                k=report.k,
            )
        )
    trace.final_report = _epoch_eds(net, dataset, eval_tau, trim_fraction)
    return net, trace
