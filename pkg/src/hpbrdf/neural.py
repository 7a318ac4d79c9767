"""Implicit neural hpBRDF: a small MLP with hand-written backpropagation.

Maps ``(wavelength, phi_d, theta_d, theta_h)`` to the 16 Mueller entries.
Inputs are mapped to ``[-1, 1]``; angular inputs optionally get sinusoidal
features ``sin(2**k * pi * x)``, ``cos(2**k * pi * x)``.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BadMagic, DivergedLoss, EmptyTable, FormatError, TruncatedFile
from .table import bin_centers

_MAGIC = b"HPNN"
_VERSION = 1
_ACTIVATIONS = ("silu", "tanh")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _act(name, x):
    if name == "silu":
        return x * _sigmoid(x)
    return np.tanh(x)


def _act_grad(name, x):
    if name == "silu":
        s = _sigmoid(x)
        return s * (1.0 + x * (1.0 - s))
    t = np.tanh(x)
    return 1.0 - t * t


@dataclass
class MlpModel:
    """Fully connected network; ``weights[k]`` has shape ``(fan_in, fan_out)``."""

    weights: list
    biases: list
    input_low: np.ndarray
    input_high: np.ndarray
    n_frequencies: int = 4
    activation: str = "silu"
    output_scale: np.ndarray = field(default_factory=lambda: np.ones(16))

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def hidden_layers(self):
        return self.layer_sizes[1:-1]

    @property
    def n_params(self):
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    def astype(self, dtype):
        return MlpModel(
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
            self.input_low,
            self.input_high,
            self.n_frequencies,
            self.activation,
            np.asarray(self.output_scale, dtype=dtype),
        )


def encoded_width(n_frequencies, n_inputs=4, n_angular=3):
    return n_inputs + 2 * n_frequencies * n_angular


def default_input_box(grid):
    """``(low, high)`` covering the wavelength grid and the angular table ranges."""
    low = np.array([grid.start_nm, 0.0, 0.0, 0.0])
    high = np.array([grid.stop_nm, 2 * np.pi, np.pi / 2, np.pi / 2])
    return low, high


def init_mlp(hidden=(256, 256, 256, 256), input_low=None, input_high=None, n_frequencies=4,
             activation="silu", seed=0, n_outputs=16, dtype=np.float32):
    """Glorot-uniform hidden weights, zero output layer and zero biases.

    The zero output layer makes the initial prediction the output bias, which
    :func:`fit_output_scale` sets to the target mean.
    """
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    sizes = [encoded_width(n_frequencies)] + list(hidden) + [n_outputs]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-lim, lim, (fan_in, fan_out)).astype(dtype)
        weights.append(w if len(weights) < len(hidden) else np.zeros_like(w))
        biases.append(np.zeros(fan_out, dtype=dtype))
    low = np.zeros(4) if input_low is None else np.asarray(input_low, float)
    high = np.ones(4) if input_high is None else np.asarray(input_high, float)
    return MlpModel(weights, biases, low, high, n_frequencies, activation, np.ones(n_outputs, dtype=dtype))


def encode(model, x):
    """Normalized inputs plus sinusoidal features of the three angles."""
    x = np.asarray(x, dtype=float)
    dtype = model.weights[0].dtype
    z = 2.0 * (x - model.input_low) / (model.input_high - model.input_low) - 1.0
    feats = [z]
    for k in range(model.n_frequencies):
        arg = (2.0**k) * np.pi * z[:, 1:]
        feats += [np.sin(arg), np.cos(arg)]
    return np.concatenate(feats, axis=1).astype(dtype)


def forward(model, x, return_cache=False):
    """Outputs ``(N, 16)`` for raw inputs ``(N, 4)``."""
    h = encode(model, x)
    cache = [h]
    pre = []
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = h @ w + b
        if k < last:
            pre.append(a)
            h = _act(model.activation, a)
            cache.append(h)
        else:
            h = a
    out = h * model.output_scale
    return (out, (cache, pre)) if return_cache else out


def backward(model, cache, output_grad):
    """Reverse-mode gradients ``(dW list, db list)`` of ``sum(output * output_grad)``."""
    acts, pre = cache
    g = np.asarray(output_grad, dtype=model.weights[0].dtype) * model.output_scale
    dws = [None] * len(model.weights)
    dbs = [None] * len(model.weights)
    for k in range(len(model.weights) - 1, -1, -1):
        dws[k] = acts[k].T @ g
        dbs[k] = g.sum(axis=0)
        if k > 0:
            g = (g @ model.weights[k].T) * _act_grad(model.activation, pre[k - 1])
    return dws, dbs


def mse_loss(model, x, target):
    out, cache = forward(model, x, return_cache=True)
    diff = out - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    grads = backward(model, cache, 2.0 * diff / diff.size)
    return loss, grads


def gradient_check(model, x, output_grad, eps=1e-6, n_probe=None, seed=0):
    """Max relative error between :func:`backward` and central differences (float64)."""
    m64 = model.astype(np.float64)
    _, cache = forward(m64, x, return_cache=True)
    dws, dbs = backward(m64, cache, output_grad)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for params, grads in ((m64.weights, dws), (m64.biases, dbs)):
        for p, g in zip(params, grads):
            flat = p.reshape(-1)
            picks = range(flat.size) if n_probe is None else rng.choice(flat.size, min(n_probe, flat.size), replace=False)
            for i in picks:
                orig = flat[i]
                flat[i] = orig + eps
                up = np.sum(forward(m64, x) * output_grad)
                flat[i] = orig - eps
                dn = np.sum(forward(m64, x) * output_grad)
                flat[i] = orig
                num = (up - dn) / (2 * eps)
                ana = g.reshape(-1)[i]
                worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-8))
    return worst


# -- training ----------------------------------------------------------------


@dataclass
class TrainConfig:
    steps: int = 200_000
    batch_size: int = 4096
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    decay_start: float = 0.8  # fraction of steps after which the step size falls linearly to zero


def table_samples(table):
    """Inputs ``(N, 4)`` and float32 targets ``(N, 16)`` of every filled bin."""
    idx = np.nonzero(table.mask)
    if len(idx[0]) == 0:
        raise EmptyTable("table has no filled bins")
    phi, td, th = bin_centers(table.dims)
    x = np.stack([table.grid.wavelengths[idx[0]], phi[idx[1]], td[idx[2]], th[idx[3]]], axis=1)
    y = table.data[idx].reshape(-1, 16).astype(np.float32)
    return x, y


def _decay_factor(step, config):
    start = config.decay_start * config.steps
    if step < start:
        return 1.0
    return (config.steps - step) / (config.steps - start)


def train(model, table, config=TrainConfig(), progress=None):
    """Adam on the MSE over uniformly drawn filled bins.

    The step size is constant, then falls linearly to zero over the steps
    after ``decay_start``, which settles the final iterate.

    Returns
    -------
    model : MlpModel
        Trained copy; the input model is left untouched.
    history : ndarray
        Per-step batch loss.

    Raises
    ------
    DivergedLoss
        On a non-finite loss.
    """
    from threadpoolctl import threadpool_limits

    x_all, y_all = table_samples(table)
    model = model.astype(model.weights[0].dtype)
    params = model.weights + model.biases
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(config.seed)
    history = np.empty(config.steps)
    n_w = len(model.weights)
    with threadpool_limits(1):
        for step in range(config.steps):
            pick = rng.integers(0, len(x_all), config.batch_size)
            loss, (dws, dbs) = mse_loss(model, x_all[pick], y_all[pick])
            if not np.isfinite(loss):
                raise DivergedLoss(f"loss became {loss} at step {step}")
            history[step] = loss
            t = step + 1
            lr = config.learning_rate * np.sqrt(1 - config.beta2**t) / (1 - config.beta1**t)
            lr *= _decay_factor(step, config)
            for k, (p, g) in enumerate(zip(params, dws + dbs)):
                m1[k] *= config.beta1
                m1[k] += (1 - config.beta1) * g
                m2[k] *= config.beta2
                m2[k] += (1 - config.beta2) * g * g
                p -= (lr * m1[k] / (np.sqrt(m2[k]) + config.eps)).astype(p.dtype)
            if progress is not None:
                progress(step, loss)
    model.weights, model.biases = params[:n_w], params[n_w:]
    return model, history


def fit_output_scale(model, table):
    """Normalize outputs to the targets: scale by their spread, bias at their mean.

    The network then regresses unit-range residuals; constant outputs keep a
    unit scale.
    """
    _, y = table_samples(table)
    y = y.astype(np.float64)
    mean = y.mean(axis=0)
    std = y.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    dtype = model.weights[0].dtype
    model.output_scale = scale.astype(dtype)
    model.biases[-1] = (mean / scale).astype(dtype)
    return model


def evaluate_mse(model, table, max_samples=None, seed=0):
    x, y = table_samples(table)
    if max_samples is not None and len(x) > max_samples:
        pick = np.random.default_rng(seed).choice(len(x), max_samples, replace=False)
        x, y = x[pick], y[pick]
    out = np.concatenate([forward(model, x[i : i + 65536]) for i in range(0, len(x), 65536)])
    return float(np.mean((out.astype(np.float64) - y) ** 2))


# -- serialization -----------------------------------------------------------

_FIXED = struct.Struct("<4sIIII")


def header_bytes(model):
    n_layers = len(model.weights)
    return _FIXED.size + 4 * (n_layers + 1) + 8 * 8 + 4 * model.weights[-1].shape[1]


def serialized_size(model):
    return header_bytes(model) + 4 * model.n_params


def write_model(path, model):
    """Magic, architecture header, float32 weights then biases per layer."""
    sizes = model.layer_sizes
    with open(path, "wb") as fh:
        fh.write(_FIXED.pack(_MAGIC, _VERSION, len(model.weights), model.n_frequencies, _ACTIVATIONS.index(model.activation)))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        fh.write(np.asarray(model.input_low, "<f8").tobytes())
        fh.write(np.asarray(model.input_high, "<f8").tobytes())
        fh.write(np.asarray(model.output_scale, "<f4").tobytes())
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, "<f4").tobytes())
            fh.write(np.ascontiguousarray(b, "<f4").tobytes())


def read_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise BadMagic(f"{path}: not an MLP file")
    if len(raw) < _FIXED.size:
        raise TruncatedFile(f"{path}: header truncated")
    _, version, n_layers, n_freq, act = _FIXED.unpack_from(raw, 0)
    if version != _VERSION or act >= len(_ACTIVATIONS):
        raise FormatError(f"{path}: unsupported version or activation")
    off = _FIXED.size
    sizes = struct.unpack_from(f"<{n_layers + 1}I", raw, off)
    off += 4 * (n_layers + 1)
    need = off + 64 + 4 * sizes[-1] + 4 * sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if len(raw) < need:
        raise TruncatedFile(f"{path}: payload truncated")
    low = np.frombuffer(raw, "<f8", 4, off).copy()
    high = np.frombuffer(raw, "<f8", 4, off + 32).copy()
    off += 64
    scale = np.frombuffer(raw, "<f4", sizes[-1], off).astype(np.float32)
    off += 4 * sizes[-1]
    weights, biases = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        weights.append(np.frombuffer(raw, "<f4", a * b, off).reshape(a, b).astype(np.float32))
        off += 4 * a * b
        biases.append(np.frombuffer(raw, "<f4", b, off).astype(np.float32))
        off += 4 * b
    return MlpModel(weights, biases, low, high, n_freq, _ACTIVATIONS[act], scale)
