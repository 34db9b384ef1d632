"""From-scratch MLP regressor for the conditional mean E[X_0 | X_t, t].

Plain numpy: softplus hidden layers, linear output, mean squared error,
minibatch gradient descent with adaptive moments and decoupled weight decay.
Inputs (X_t, t) and targets X_0 are normalized with statistics computed on
the training split; a checkpoint is a little-endian binary blob of the
parameters plus a JSON sidecar with the normalization statistics.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import NumericFailure
from .rng import aux_generator
from .sde import PathEnsemble

CHECKPOINT_MAGIC = b"MSCKPT01"


def softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x) without overflow for large |x|
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass
class MlpModel:
    """Fully connected net with softplus hidden activations.

    ``in_mean/in_std`` normalize the (X_t, t) inputs, ``out_mean/out_std``
    denormalize predictions; degenerate coordinates get std 1.
    """

    weights: list
    biases: list
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def layer_dims(self) -> list:
        return [self.n_in] + [w.shape[1] for w in self.weights]


def init_model(n_in: int, n_out: int, hidden=(256,) * 6, seed: int = 0,
               stats: Optional[dict] = None) -> MlpModel:
    rng = aux_generator(seed)
    dims = [n_in, *hidden, n_out]
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((a, b)) * np.sqrt(2.0 / a))
        biases.append(np.zeros(b))
    # zero output head: the initial predictor is the (normalized) target mean
    weights[-1][:] = 0.0
    stats = stats or {}
    return MlpModel(
        weights=weights, biases=biases,
        in_mean=np.asarray(stats.get("in_mean", np.zeros(n_in)), dtype=float),
        in_std=np.asarray(stats.get("in_std", np.ones(n_in)), dtype=float),
        out_mean=np.asarray(stats.get("out_mean", np.zeros(n_out)), dtype=float),
        out_std=np.asarray(stats.get("out_std", np.ones(n_out)), dtype=float),
    )


def forward(model: MlpModel, z: np.ndarray, keep: bool = False):
    """Forward pass on normalized inputs; with keep=True returns layer caches."""
    acts = [z]
    pre = []
    h = z
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = h @ w + b
        if i < last:
            pre.append(a)
            h = softplus(a)
            acts.append(h)
        else:
            h = a
    return (h, pre, acts) if keep else h


def backward(model: MlpModel, pre, acts, dout):
    """Gradients of a scalar loss wrt parameters, given d loss / d output."""
    gw = [None] * len(model.weights)
    gb = [None] * len(model.biases)
    delta = dout
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * sigmoid(pre[i - 1])
    return gw, gb


def predict(model: MlpModel, x: np.ndarray, t, warn_extrapolation: bool = True
            ) -> np.ndarray:
    """Denormalized prediction at state x and time t (t scalar or per row)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t_col = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1, 1), (x.shape[0], 1))
    inp = np.concatenate([x, t_col], axis=1)
    z = (inp - model.in_mean) / model.in_std
    if warn_extrapolation and np.any(np.abs(z) > 6.0):
        warnings.warn("inputs beyond 6 normalized std from the training range",
                      RuntimeWarning)
    out = forward(model, z)
    return out * model.out_std + model.out_mean


# ---------------------------------------------------------------------------
# training data
# ---------------------------------------------------------------------------

@dataclass
class TrainingSet:
    """(X_t, t) -> X_0 pairs with normalization statistics of the train split."""

    inputs: np.ndarray       # (N, m+1) raw
    targets: np.ndarray      # (N, m) raw
    stats: dict
    val_inputs: np.ndarray
    val_targets: np.ndarray

    def __len__(self) -> int:
        return len(self.inputs)


def build_training_set(ensemble: PathEnsemble, val_fraction: float = 0.1,
                       max_examples: Optional[int] = None,
                       seed: int = 0) -> TrainingSet:
    """One example per (path, node k >= 1); 90/10 split by path.

    ``max_examples`` subsamples the training split (uniformly, seeded) after
    the split so validation paths never leak into training.
    """
    if ensemble.X is None:
        raise ValueError("training set needs stored trajectories")
    if ensemble.n_paths < 1:
        raise ValueError("empty ensemble")
    X = ensemble.X
    npaths, nn, m = X.shape
    ts = ensemble.grid.nodes()
    n_val_paths = int(round(val_fraction * npaths))
    n_tr = npaths - n_val_paths

    def flatten(lo, hi):
        xs = X[lo:hi, 1:, :].reshape(-1, m)
        tcol = np.tile(ts[1:], hi - lo).reshape(-1, 1)
        x0 = np.repeat(ensemble.x0[lo:hi], nn - 1, axis=0)
        return np.concatenate([xs, tcol], axis=1), x0

    tr_in, tr_out = flatten(0, n_tr)
    val_in, val_out = (flatten(n_tr, npaths) if n_val_paths
                       else (np.empty((0, m + 1)), np.empty((0, m))))
    if max_examples is not None and max_examples < len(tr_in):
        idx = aux_generator(seed).choice(len(tr_in), size=max_examples,
                                         replace=False)
        tr_in, tr_out = tr_in[idx], tr_out[idx]

    in_std = tr_in.std(axis=0)
    out_std = tr_out.std(axis=0)
    stats = {
        "in_mean": tr_in.mean(axis=0),
        "in_std": np.where(in_std > 0, in_std, 1.0),
        "out_mean": tr_out.mean(axis=0),
        "out_std": np.where(out_std > 0, out_std, 1.0),
    }
    return TrainingSet(inputs=tr_in, targets=tr_out, stats=stats,
                       val_inputs=val_in, val_targets=val_out)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 512
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass
class OptState:
    m_w: list = field(default_factory=list)
    v_w: list = field(default_factory=list)
    m_b: list = field(default_factory=list)
    v_b: list = field(default_factory=list)
    step: int = 0


def mse_loss_and_grad(model: MlpModel, z: np.ndarray, target_z: np.ndarray):
    out, pre, acts = forward(model, z, keep=True)
    resid = out - target_z
    loss = float(np.mean(resid**2))
    dout = 2.0 * resid / resid.size
    gw, gb = backward(model, pre, acts, dout)
    return loss, gw, gb


def train(model: MlpModel, data: TrainingSet, config: TrainConfig):
    """Minibatch training with decoupled weight decay; returns the loss curve.

    The model's normalization statistics are taken from ``data``; a NaN loss
    aborts with a diagnostic.
    """
    if len(data) == 0:
        raise ValueError("training set is empty")
    model.in_mean = np.asarray(data.stats["in_mean"], dtype=float)
    model.in_std = np.asarray(data.stats["in_std"], dtype=float)
    model.out_mean = np.asarray(data.stats["out_mean"], dtype=float)
    model.out_std = np.asarray(data.stats["out_std"], dtype=float)
    z = (data.inputs - model.in_mean) / model.in_std
    tz = (data.targets - model.out_mean) / model.out_std

    rng = aux_generator(config.seed)
    opt = OptState(
        m_w=[np.zeros_like(w) for w in model.weights],
        v_w=[np.zeros_like(w) for w in model.weights],
        m_b=[np.zeros_like(b) for b in model.biases],
        v_b=[np.zeros_like(b) for b in model.biases],
    )
    n = len(z)
    bs = min(config.batch_size, n)
    curve = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n - bs + 1, bs):
            idx = order[lo:lo + bs]
            loss, gw, gb = mse_loss_and_grad(model, z[idx], tz[idx])
            if not np.isfinite(loss):
                raise NumericFailure(
                    f"NaN/inf loss at epoch {epoch}; lower the learning rate "
                    "or check the data for non-finite values")
            total += loss * len(idx)
            _adamw_update(model, opt, gw, gb, config)
        curve.append(total / (n - n % bs if n % bs else n))
    return model, np.asarray(curve)


def _adamw_update(model, opt, gw, gb, cfg: TrainConfig):
    opt.step += 1
    b1c = 1.0 - cfg.beta1**opt.step
    b2c = 1.0 - cfg.beta2**opt.step
    for i in range(len(model.weights)):
        opt.m_w[i] = cfg.beta1 * opt.m_w[i] + (1 - cfg.beta1) * gw[i]
        opt.v_w[i] = cfg.beta2 * opt.v_w[i] + (1 - cfg.beta2) * gw[i] ** 2
        opt.m_b[i] = cfg.beta1 * opt.m_b[i] + (1 - cfg.beta1) * gb[i]
        opt.v_b[i] = cfg.beta2 * opt.v_b[i] + (1 - cfg.beta2) * gb[i] ** 2
        # decoupled decay applies to weights only
        model.weights[i] *= 1.0 - cfg.lr * cfg.weight_decay
        model.weights[i] -= cfg.lr * (opt.m_w[i] / b1c) / (
            np.sqrt(opt.v_w[i] / b2c) + cfg.adam_eps)
        model.biases[i] -= cfg.lr * (opt.m_b[i] / b1c) / (
            np.sqrt(opt.v_b[i] / b2c) + cfg.adam_eps)


def validation_loss(model: MlpModel, data: TrainingSet) -> float:
    if len(data.val_inputs) == 0:
        return float("nan")
    z = (data.val_inputs - model.in_mean) / model.in_std
    tz = (data.val_targets - model.out_mean) / model.out_std
    out = forward(model, z)
    return float(np.mean((out - tz) ** 2))


# ---------------------------------------------------------------------------
# checkpoint IO
# ---------------------------------------------------------------------------

def save_checkpoint(model: MlpModel, path, config: Optional[dict] = None) -> None:
    """Binary checkpoint (magic, layer dims, little-endian f64 params) plus a
    JSON sidecar carrying normalization statistics and the training config."""
    path = Path(path)
    dims = model.layer_dims
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    sidecar = {
        "layer_dims": dims,
        "in_mean": model.in_mean.tolist(),
        "in_std": model.in_std.tolist(),
        "out_mean": model.out_mean.tolist(),
        "out_std": model.out_std.tolist(),
        "config": config or {},
    }
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)


def load_checkpoint(path) -> MlpModel:
    path = Path(path)
    with open(path.with_suffix(path.suffix + ".json")) as fh:
        sidecar = json.load(fh)
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint (bad magic {magic!r})")
        (nd,) = struct.unpack("<I", fh.read(4))
        dims = struct.unpack(f"<{nd}I", fh.read(4 * nd))
        if list(dims) != sidecar["layer_dims"]:
            raise ValueError("checkpoint dims disagree with sidecar")
        weights, biases = [], []
        for a, b in zip(dims[:-1], dims[1:]):
            weights.append(np.frombuffer(fh.read(8 * a * b), dtype="<f8")
                           .reshape(a, b).copy())
            biases.append(np.frombuffer(fh.read(8 * b), dtype="<f8").copy())
    return MlpModel(
        weights=weights, biases=biases,
        in_mean=np.asarray(sidecar["in_mean"], dtype=float),
        in_std=np.asarray(sidecar["in_std"], dtype=float),
        out_mean=np.asarray(sidecar["out_mean"], dtype=float),
        out_std=np.asarray(sidecar["out_std"], dtype=float),
    )
