"""Patch-to-microstructure regression with a small feed-forward network.

Rectifier hidden layers, identity output, mean-squared-error loss with
exact reverse-mode gradients, and plain SGD with momentum. Training is
single-threaded over gradient accumulation so that runs are bitwise
reproducible for a fixed seed.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import patches
from .patches import PatchGeometry

_MAGIC = b"QXMLP001"


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.9
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class MlpModel:
    """Fully-connected network parameters.

    weights[i] has shape (fan_in, fan_out); biases[i] has shape (fan_out,).
    """

    def __init__(self, layer_sizes, weights, biases, seed=0):
        self.layer_sizes = [int(s) for s in layer_sizes]
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        self.weights = weights
        self.biases = biases
        self.seed = int(seed)
        for i, (w, b) in enumerate(zip(weights, biases)):
            expect = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != expect or b.shape != (expect[1],):
                raise ValueError(f"layer {i} parameter shapes do not match "
                                 f"{expect}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite parameters")

    @property
    def n_layers(self):
        return len(self.weights)

    def copy(self):
        return MlpModel(self.layer_sizes, [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.seed)


def init_model(layer_sizes, seed=0):
    """He-style initialization: N(0, 2/fan_in) weights, zero biases."""
    layer_sizes = [int(s) for s in layer_sizes]
    if len(layer_sizes) < 2:
        raise ValueError("need at least an input and an output layer")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        scale = np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(layer_sizes, weights, biases, seed)


def forward(model, x):
    """Network output for one input vector or a (B, D_in) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = np.atleast_2d(x)
    if a.shape[1] != model.layer_sizes[0]:
        raise ValueError(f"input length {a.shape[1]} does not match model "
                         f"input size {model.layer_sizes[0]}")
    last = model.n_layers - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ w + b
        if i < last:
            np.maximum(a, 0.0, out=a)
    return a[0] if single else a


def loss_and_gradients(model, inputs, targets):
    """Mean-squared error over a batch and its exact parameter gradients.

    The loss is the mean over both batch entries and output units of the
    squared prediction error; gradients follow by reverse-mode
    accumulation. Returns (mse, weight gradients, bias gradients).
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.atleast_2d(np.asarray(targets, dtype=float))
    if x.shape[1] != model.layer_sizes[0]:
        raise ValueError("batch input size does not match model")
    if y.shape[1] != model.layer_sizes[-1]:
        raise ValueError("batch target size does not match model")
    if x.shape[0] != y.shape[0]:
        raise ValueError("inputs and targets differ in batch size")

    last = model.n_layers - 1
    activations = [x]
    a = x
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ w + b
        if i < last:
            a = np.maximum(a, 0.0)
        activations.append(a)

    err = activations[-1] - y
    mse = float(np.mean(err * err))

    delta = 2.0 * err / err.size
    grads_w = [None] * model.n_layers
    grads_b = [None] * model.n_layers
    for i in range(last, -1, -1):
        grads_w[i] = activations[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ model.weights[i].T
            delta = delta * (activations[i] > 0.0)
    return mse, grads_w, grads_b


def train(model, sample_set, cfg):
    """Mini-batch SGD with momentum over a sample set.

    Each epoch reshuffles with the seeded generator; a held-out fraction
    of samples tracks validation loss and the parameters from the best
    validation epoch are returned together with the per-epoch
    (train_mse, val_mse) history. Deterministic for a fixed seed.
    """
    m = len(sample_set)
    if m == 0:
        raise ValueError("empty sample set")
    geo = sample_set.geometry
    if (geo.input_len != model.layer_sizes[0]
            or geo.target_len != model.layer_sizes[-1]):
        raise ValueError(
            f"sample geometry ({geo.input_len} -> {geo.target_len}) does "
            f"not match model ({model.layer_sizes[0]} -> "
            f"{model.layer_sizes[-1]})")

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(m)
    n_val = max(1, int(round(m * cfg.validation_fraction))) if m > 1 else 0
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size == 0:
        train_idx, val_idx = perm, perm[:0]
    x_train = sample_set.inputs[train_idx]
    y_train = sample_set.targets[train_idx]
    x_val = sample_set.inputs[val_idx]
    y_val = sample_set.targets[val_idx]

    work = model.copy()
    vel_w = [np.zeros_like(w) for w in work.weights]
    vel_b = [np.zeros_like(b) for b in work.biases]

    def val_loss():
        if x_val.shape[0] == 0:
            return float("nan")
        err = forward(work, x_val) - y_val
        return float(np.mean(err * err))

    best = work.copy()
    best_val = np.inf
    history = []
    n_train = x_train.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n_train)
        seen = 0
        loss_acc = 0.0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            mse, gw, gb = loss_and_gradients(work, x_train[idx],
                                             y_train[idx])
            loss_acc += mse * idx.size
            seen += idx.size
            for i in range(work.n_layers):
                vel_w[i] = cfg.momentum * vel_w[i] - cfg.learning_rate * gw[i]
                vel_b[i] = cfg.momentum * vel_b[i] - cfg.learning_rate * gb[i]
                work.weights[i] += vel_w[i]
                work.biases[i] += vel_b[i]
        v = val_loss()
        history.append((loss_acc / seen, v))
        score = v if not np.isnan(v) else history[-1][0]
        if score < best_val:
            best_val = score
            best = work.copy()
    return best, history


def predict_volume(model, dwi, mask, geometry, voxel_size=None):
    """Estimate measure maps for a series with a trained model.

    Sliding-window inputs are extracted at every eligible masked center,
    passed through the network in one batch, and reassembled; for sr
    geometry the maps come out gamma times larger than the input grid.
    """
    if dwi.data.shape[3] != geometry.n_signals:
        raise ValueError(
            f"series has {dwi.data.shape[3]} volumes, trained geometry "
            f"expects {geometry.n_signals}")
    if geometry.input_len != model.layer_sizes[0]:
        raise ValueError("geometry does not match model input size")
    centers, inputs = patches.extract_inputs(dwi, mask, geometry)
    scale = geometry.gamma if geometry.mode == "sr" else 1
    out_dims = tuple(d * scale for d in dwi.spatial_dims)
    if voxel_size is None:
        voxel_size = tuple(v / scale for v in dwi.header.voxel_size)
    if centers.shape[0] == 0:
        return patches.assemble([], geometry, out_dims, voxel_size)
    preds = forward(model, inputs)
    return patches.assemble(zip(centers, preds), geometry, out_dims,
                            voxel_size)


def save_model(path, model, cfg=None, geometry=None):
    """Serialize a model checkpoint (versioned little-endian binary)."""
    cfg = cfg or TrainConfig()
    geo = geometry or PatchGeometry("qdl", 1, 1, 1, model.layer_sizes[0],
                                    model.layer_sizes[-1])
    parts = [_MAGIC, struct.pack("<I", len(model.layer_sizes))]
    parts.append(struct.pack(f"<{len(model.layer_sizes)}I",
                             *model.layer_sizes))
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    parts.append(struct.pack("<qIIdddq", model.seed, cfg.epochs,
                             cfg.batch_size, cfg.learning_rate, cfg.momentum,
                             cfg.validation_fraction, cfg.seed))
    parts.append(struct.pack("<BIIIII", 0 if geo.mode == "qdl" else 1,
                             geo.in_size, geo.out_size, geo.gamma,
                             geo.n_signals, geo.n_measures))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_model(path):
    """Read a checkpoint; returns (model, TrainConfig, PatchGeometry)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise ValueError("not a model checkpoint (bad magic)")
    offset = 8
    (n_sizes,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    layer_sizes = struct.unpack_from(f"<{n_sizes}I", blob, offset)
    offset += 4 * n_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        w = np.frombuffer(blob, "<f8", fan_in * fan_out, offset).reshape(
            fan_in, fan_out).copy()
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(blob, "<f8", fan_out, offset).copy()
        offset += 8 * fan_out
        weights.append(w)
        biases.append(b)
    model_seed, epochs, batch, lr, momentum, val_frac, cfg_seed = \
        struct.unpack_from("<qIIdddq", blob, offset)
    offset += struct.calcsize("<qIIdddq")
    mode_i, in_size, out_size, gamma, n_sig, n_meas = struct.unpack_from(
        "<BIIIII", blob, offset)
    cfg = TrainConfig(epochs, batch, lr, momentum, val_frac, cfg_seed)
    geometry = PatchGeometry("qdl" if mode_i == 0 else "sr", in_size,
                             out_size, gamma, n_sig, n_meas)
    model = MlpModel(list(layer_sizes), weights, biases, model_seed)
    return model, cfg, geometry
