"""Feed-forward ReLU regressor trained by full-batch gradient descent.

Everything is plain float64 numpy: deterministic for a fixed seed, exact
input gradients by backpropagation (ReLU subgradient at 0 is 0), no dropout,
no minibatching. The optimizer follows a fixed recipe: step size divided by
10 every 50 epochs, halting once the relative epoch-to-epoch change of the
training objective stays below a tolerance for a run of consecutive epochs.

The training objective supports a convex two-set weighting,
alpha * MSE(primary) + (1 - alpha) * MSE(secondary), used by the defense for
retraining on the base set plus oracle-labeled maximizers.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class MlpModel:
    """Fully connected network; weights[i] has shape (n_in, n_out)."""

    weights: list
    biases: list

    def __post_init__(self):
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError("bias shape does not match weight shape")
        for w0, w1 in zip(self.weights, self.weights[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise ValueError("consecutive layer shapes are incompatible")
        if any(not np.all(np.isfinite(w)) for w in self.weights):
            raise ValueError("non-finite weights")

    @property
    def widths(self) -> tuple:
        return tuple([self.weights[0].shape[0]]
                     + [w.shape[1] for w in self.weights])

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights],
                        [b.copy() for b in self.biases])

    def params_equal(self, other: "MlpModel") -> bool:
        return (len(self.weights) == len(other.weights)
                and all(np.array_equal(a, b) for a, b in
                        zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in
                        zip(self.biases, other.biases)))


@dataclass(frozen=True)
class TrainConfig:
    initial_step: float = 0.01
    decay_factor: float = 0.1
    decay_every: int = 50
    halt_tol: float = 1e-3
    halt_epochs: int = 10
    max_epochs: int = 500
    alpha: float = 1.0
    momentum: float = 0.0  # heavy-ball coefficient; 0 is plain descent
    rng_seed: int = 0

    def __post_init__(self):
        if self.initial_step <= 0:
            raise ValueError("initial_step must be positive")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")


@dataclass(frozen=True)
class Metrics:
    """Accuracy summary of a model against ground-truth labels z."""

    mse: float
    mae: float
    frac_under: float      # fraction with y/z < 1
    frac_over: float       # fraction with y/z > 1
    success_band: float    # fraction with (m - 0.1) < y/z < (m + 0.1)
    n: int = 0
    n_zero_label: int = 0  # excluded from the ratio fractions

    def as_dict(self) -> dict:
        return asdict(self)


def init_model(widths, rng_seed: int) -> MlpModel:
    """Fan-in scaled uniform weights (bound sqrt(6/fan_in)), zero biases.

    The sqrt(6/fan_in) bound keeps the output variance of a fresh network
    near unity through the ReLU stack; a plain 1/sqrt(fan_in) bound shrinks
    it by orders of magnitude per layer.
    """
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    if widths[-1] != 1:
        raise ValueError("output width must be 1")
    rng = np.random.default_rng(rng_seed)
    weights, biases = [], []
    for n_in, n_out in zip(widths, widths[1:]):
        bound = np.sqrt(6.0 / n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return MlpModel(weights, biases)


def _forward_cached(model: MlpModel, x: np.ndarray):
    """Returns (activations per layer, preactivations per hidden layer)."""
    acts = [x]
    pres = []
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        if i < last:
            pres.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
        acts.append(h)
    return acts, pres


def forward(model: MlpModel, points) -> float | np.ndarray:
    """Model prediction; scalar for a (5,) point, array for (n, 5)."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    acts, _ = _forward_cached(model, np.atleast_2d(pts))
    out = acts[-1][:, 0]
    return float(out[0]) if single else out


def input_gradient(model: MlpModel, points) -> np.ndarray:
    """Exact gradient of the prediction with respect to the inputs."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    x = np.atleast_2d(pts)
    _, pres = _forward_cached(model, x)
    grad = np.repeat(model.weights[-1].T, x.shape[0], axis=0)  # (n, width)
    for w, z in zip(reversed(model.weights[:-1]), reversed(pres)):
        grad = (grad * (z > 0.0)) @ w.T
    return grad[0] if single else grad


def _objective_and_gradients(model, x, y):
    """MSE and its parameter gradients over one sample set."""
    acts, pres = _forward_cached(model, x)
    pred = acts[-1][:, 0]
    resid = pred - y
    n = x.shape[0]
    mse = float(resid @ resid) / n
    delta = (2.0 / n) * resid[:, None]
    grads_w = []
    grads_b = []
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w.append(acts[i].T @ delta)
        grads_b.append(delta.sum(axis=0))
        if i > 0:
            delta = (delta @ model.weights[i].T) * (pres[i - 1] > 0.0)
    return mse, grads_w[::-1], grads_b[::-1]


def weighted_objective(model, primary, secondary, alpha: float) -> float:
    """alpha * MSE(primary) + (1 - alpha) * MSE(secondary)."""
    px, py = primary
    obj = alpha * _objective_and_gradients(model, px, py)[0]
    if secondary is not None and alpha < 1.0:
        sx, sy = secondary
        obj += (1.0 - alpha) * _objective_and_gradients(model, sx, sy)[0]
    return obj


def train(model: MlpModel, primary, secondary, cfg: TrainConfig):
    """Full-batch gradient descent; returns (trained model, history).

    primary and secondary are Datasets (secondary may be None or empty);
    history is the per-epoch value of the training objective at epoch entry.
    Halts when the relative objective change stays below cfg.halt_tol for
    cfg.halt_epochs consecutive epochs, or at cfg.max_epochs.
    """
    if len(primary) == 0:
        raise ValueError("primary training set is empty")
    px, py = primary.points, primary.labels
    use_secondary = (secondary is not None and len(secondary) > 0
                     and cfg.alpha < 1.0)
    if use_secondary:
        sx, sy = secondary.points, secondary.labels
        w1, w2 = cfg.alpha, 1.0 - cfg.alpha
    else:
        w1, w2 = 1.0, 0.0

    model = model.copy()
    history = []
    prev_obj = None
    quiet_epochs = 0
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    for epoch in range(cfg.max_epochs):
        obj, gw, gb = _objective_and_gradients(model, px, py)
        obj *= w1
        for g in gw:
            g *= w1
        for g in gb:
            g *= w1
        if use_secondary:
            obj2, gw2, gb2 = _objective_and_gradients(model, sx, sy)
            obj += w2 * obj2
            for g, g2 in zip(gw, gw2):
                g += w2 * g2
            for g, g2 in zip(gb, gb2):
                g += w2 * g2
        if not np.isfinite(obj):
            raise FloatingPointError(f"non-finite objective at epoch {epoch}")
        history.append(obj)

        if prev_obj is not None:
            rel = abs(obj - prev_obj) / max(prev_obj, 1e-300)
            quiet_epochs = quiet_epochs + 1 if rel < cfg.halt_tol else 0
            if quiet_epochs >= cfg.halt_epochs:
                break
        prev_obj = obj

        step = cfg.initial_step * cfg.decay_factor ** (epoch // cfg.decay_every)
        for w, v, g in zip(model.weights, vel_w, gw):
            v *= cfg.momentum
            v -= step * g
            w += v
        for b, v, g in zip(model.biases, vel_b, gb):
            v *= cfg.momentum
            v -= step * g
            b += v
    return model, history


def evaluate(model: MlpModel, dataset, m: float) -> Metrics:
    """Metrics of model predictions against the dataset's labels."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    y = forward(model, dataset.points)
    z = dataset.labels
    err = y - z
    nz = z != 0.0
    ratio = y[nz] / z[nz]
    n_ratio = max(int(nz.sum()), 1)
    return Metrics(
        mse=float(err @ err) / len(z),
        mae=float(np.abs(err).mean()),
        frac_under=float((ratio < 1.0).sum()) / n_ratio,
        frac_over=float((ratio > 1.0).sum()) / n_ratio,
        success_band=float(((ratio > m - 0.1) & (ratio < m + 0.1)).sum()) / n_ratio,
        n=len(z),
        n_zero_label=int((~nz).sum()),
    )


def save_model(model: MlpModel, cfg: TrainConfig | None, path) -> None:
    """Checkpoint with exact float64 parameters; round-trips bit-exactly."""
    arrays = {"version": np.array(CHECKPOINT_VERSION),
              "widths": np.array(model.widths)}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    cfg_json = json.dumps(asdict(cfg) if cfg is not None else None)
    arrays["config"] = np.frombuffer(cfg_json.encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path):
    """Returns (model, TrainConfig or None)."""
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        n_layers = len(data["widths"]) - 1
        weights = [data[f"w{i}"] for i in range(n_layers)]
        biases = [data[f"b{i}"] for i in range(n_layers)]
        cfg_raw = json.loads(bytes(data["config"]).decode("utf-8"))
    cfg = TrainConfig(**cfg_raw) if cfg_raw is not None else None
    return MlpModel(weights, biases), cfg
