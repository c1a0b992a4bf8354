"""Learned gain predictor: a small MLP mapping mission context
(initial state, weights, target state) to [E, e, k1, k2, T].

The network is plain numpy with rectified hidden layers and an
adaptive-moment (Adam) trainer.  Targets are z-scored with statistics bound
to the model; gain and duration outputs pass a nonnegative activation in
physical units and are clamped into the tuning box at deployment, so emitted
plans always satisfy the hard constraints.  Analytic gradients are exposed
for verification against finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .controllers import LyapunovGains
from .tuner import (
    Dataset,
    FEATURE_NAMES,
    TARGET_NAMES,
    GAIN_LO,
    GAIN_HI,
    T_LO,
    T_HI,
    featurize,
)

# Output channels: [E, e, k1, k2, T].  The last three are nonnegative by
# construction and clamped into the tuning box at deployment.
NONNEG_CHANNELS = (2, 3, 4)
CHANNEL_BOX = {2: (GAIN_LO, GAIN_HI), 3: (GAIN_LO, GAIN_HI), 4: (T_LO, T_HI)}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1.0e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1.0e-8
    batch_size: int = 32
    epochs: int = 800
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate < 0.0:
            raise ValueError("learning rate must be >= 0")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("moment decay rates must lie in (0, 1)")


class MlpModel:
    """Fully connected rectifier network with bound normalization stats."""

    def __init__(
        self,
        layer_sizes: Sequence[int] = (17, 64, 64, 5),
        seed: int = 0,
    ) -> None:
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output layers")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.seed = seed
        rng = np.random.Generator(np.random.Philox(seed))
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(
                rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
            )
            self.biases.append(np.zeros(fan_out))
        n_in, n_out = self.layer_sizes[0], self.layer_sizes[-1]
        self.feat_mean = np.zeros(n_in)
        self.feat_std = np.ones(n_in)
        self.targ_mean = np.zeros(n_out)
        self.targ_std = np.ones(n_out)
        self.trained = False

    # -- normalization ------------------------------------------------------

    def bind_normalization(self, ds: Dataset) -> None:
        self.feat_mean = ds.feat_mean.copy()
        self.feat_std = ds.feat_std.copy()
        self.targ_mean = ds.targ_mean.copy()
        self.targ_std = ds.targ_std.copy()

    def normalize_features(self, X: np.ndarray) -> np.ndarray:
        return (X - self.feat_mean) / self.feat_std

    def normalize_targets(self, Y: np.ndarray) -> np.ndarray:
        return (Y - self.targ_mean) / self.targ_std

    def denormalize_targets(self, Yn: np.ndarray) -> np.ndarray:
        return Yn * self.targ_std + self.targ_mean

    # -- forward ------------------------------------------------------------

    def _net(self, Xn: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        """Raw network pass on normalized features; returns output and the
        post-activation cache for backprop."""
        acts = [Xn]
        a = Xn
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            a = z if i == len(self.weights) - 1 else np.maximum(z, 0.0)
            acts.append(a)
        return a, acts

    def predict_physical(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Physical-unit predictions plus a boolean clamp-active matrix.

        Nonnegative channels pass max(., 0) and are then clamped into their
        boxes; finite inputs are required.
        """
        X = np.atleast_2d(np.asarray(X, float))
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        Yn, _ = self._net(self.normalize_features(X))
        Y = self.denormalize_targets(Yn)
        clamps = np.zeros_like(Y, dtype=bool)
        for c in NONNEG_CHANNELS:
            Y[:, c] = np.maximum(Y[:, c], 0.0)
            lo, hi = CHANNEL_BOX[c]
            clamps[:, c] = (Y[:, c] < lo) | (Y[:, c] > hi)
            Y[:, c] = np.clip(Y[:, c], lo, hi)
        return Y, clamps


def forward(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Deterministic prediction [E, e, k1, k2, T] for one feature vector."""
    Y, _ = model.predict_physical(np.asarray(features, float)[None, :])
    return Y[0]


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------

def loss_and_grads(
    model: MlpModel, X: np.ndarray, Y: np.ndarray
) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """MSE on normalized targets and its analytic parameter gradients.

    The nonnegative output activation acts in physical units; its gradient
    mask is folded into the output-layer error.
    """
    Xn = model.normalize_features(np.atleast_2d(X))
    Yn_tgt = model.normalize_targets(np.atleast_2d(Y))
    out, acts = model._net(Xn)

    phys = model.denormalize_targets(out)
    mask = np.ones_like(out)
    eff = out.copy()
    for c in NONNEG_CHANNELS:
        neg = phys[:, c] < 0.0
        mask[neg, c] = 0.0
        eff[neg, c] = (0.0 - model.targ_mean[c]) / model.targ_std[c]

    diff = eff - Yn_tgt
    n_total = diff.size
    loss = float(np.mean(diff**2))

    delta = (2.0 / n_total) * diff * mask
    gW: List[np.ndarray] = [np.empty(0)] * len(model.weights)
    gb: List[np.ndarray] = [np.empty(0)] * len(model.biases)
    for i in reversed(range(len(model.weights))):
        a_prev = acts[i]
        gW[i] = a_prev.T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0.0)
    return loss, gW, gb


def train(
    model: MlpModel, dataset: Dataset, cfg: TrainConfig
) -> Tuple[MlpModel, np.ndarray]:
    """Adam training on the dataset's train split; returns the loss history.

    Normalization statistics are bound from the dataset before the first
    update.  The per-epoch history records full-train-split loss.  A
    non-finite loss aborts with a diagnostic.
    """
    model.bind_normalization(dataset)
    X, Y = dataset.X_train, dataset.Y_train
    n = len(X)
    rng = np.random.Generator(np.random.Philox(cfg.seed))

    m_W = [np.zeros_like(W) for W in model.weights]
    v_W = [np.zeros_like(W) for W in model.weights]
    m_b = [np.zeros_like(b) for b in model.biases]
    v_b = [np.zeros_like(b) for b in model.biases]
    t = 0
    history = np.empty(cfg.epochs)

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, gW, gb = loss_and_grads(model, X[idx], Y[idx])
            if not math.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite training loss at epoch {epoch}, "
                    f"batch offset {start} (lr={cfg.learning_rate})"
                )
            t += 1
            bc1 = 1.0 - cfg.beta1**t
            bc2 = 1.0 - cfg.beta2**t
            for i in range(len(model.weights)):
                m_W[i] = cfg.beta1 * m_W[i] + (1 - cfg.beta1) * gW[i]
                v_W[i] = cfg.beta2 * v_W[i] + (1 - cfg.beta2) * gW[i] ** 2
                m_b[i] = cfg.beta1 * m_b[i] + (1 - cfg.beta1) * gb[i]
                v_b[i] = cfg.beta2 * v_b[i] + (1 - cfg.beta2) * gb[i] ** 2
                model.weights[i] -= (
                    cfg.learning_rate
                    * (m_W[i] / bc1)
                    / (np.sqrt(v_W[i] / bc2) + cfg.eps)
                )
                model.biases[i] -= (
                    cfg.learning_rate
                    * (m_b[i] / bc1)
                    / (np.sqrt(v_b[i] / bc2) + cfg.eps)
                )
        history[epoch], _, _ = loss_and_grads(model, X, Y)
    model.trained = True
    return model, history


def evaluate_mse(model: MlpModel, X: np.ndarray, Y: np.ndarray) -> float:
    """MSE over normalized targets for a split."""
    X = np.atleast_2d(X)
    if len(X) == 0:
        raise ValueError("empty split")
    loss, _, _ = loss_and_grads(model, X, Y)
    return loss


# ---------------------------------------------------------------------------
# Deployment
# ---------------------------------------------------------------------------

@dataclass
class PlanPrediction:
    """Supervisor-consumable plan plus its explanation record."""

    gains: LyapunovGains
    T: float
    predicted_E: float
    predicted_e: float
    clamped: List[str] = field(default_factory=list)
    feature_z: dict = field(default_factory=dict)
    out_of_distribution: List[str] = field(default_factory=list)

    def explanation(self) -> dict:
        return {
            "predicted_E": self.predicted_E,
            "predicted_e": self.predicted_e,
            "clamped": list(self.clamped),
            "out_of_distribution": list(self.out_of_distribution),
            "feature_z": dict(self.feature_z),
        }


def predict_plan(
    model: MlpModel,
    q0: np.ndarray,
    omega0: np.ndarray,
    w: np.ndarray,
    qf: np.ndarray,
    omegaf: Optional[np.ndarray] = None,
) -> PlanPrediction:
    """Predict gains, transient duration, and expected performance.

    The explanation lists active clamps and per-feature z-scores relative to
    the training distribution (|z| > 3 marked out-of-distribution).  Predicted
    (E, e) always accompany the gains.  Raises on an untrained model.
    """
    if not model.trained:
        raise RuntimeError("predict_plan requires a trained model")
    if omegaf is None:
        omegaf = np.zeros(3)
    x = featurize(q0, omega0, w, qf, omegaf)
    Y, clamps = model.predict_physical(x[None, :])
    y = Y[0]
    clamp_names = []
    for c in NONNEG_CHANNELS:
        if clamps[0, c]:
            lo, hi = CHANNEL_BOX[c]
            val = y[c]
            side = lo if math.isclose(val, lo) else hi
            clamp_names.append(f"{TARGET_NAMES[c]}: clamped at {side}")
    z = (x - model.feat_mean) / model.feat_std
    feature_z = {name: float(zi) for name, zi in zip(FEATURE_NAMES, z)}
    ood = [name for name, zi in feature_z.items() if abs(zi) > 3.0]
    return PlanPrediction(
        gains=LyapunovGains(float(y[2]), float(y[3])),
        T=float(y[4]),
        predicted_E=float(y[0]),
        predicted_e=float(y[1]),
        clamped=clamp_names,
        feature_z=feature_z,
        out_of_distribution=ood,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_model(model: MlpModel, path: str) -> None:
    """Self-describing binary file: layer sizes, weights, stats, seed."""
    header = {
        "layer_sizes": list(model.layer_sizes),
        "seed": model.seed,
        "trained": model.trained,
    }
    arrays = {
        "header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
        "feat_mean": model.feat_mean,
        "feat_std": model.feat_std,
        "targ_mean": model.targ_mean,
        "targ_std": model.targ_std,
    }
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W{i}"] = W
        arrays[f"b{i}"] = b
    np.savez(path, **arrays)


def load_model(path: str) -> MlpModel:
    data = np.load(path)
    header = json.loads(bytes(data["header"]).decode())
    model = MlpModel(layer_sizes=header["layer_sizes"], seed=header["seed"])
    for i in range(len(model.weights)):
        model.weights[i] = data[f"W{i}"]
        model.biases[i] = data[f"b{i}"]
    model.feat_mean = data["feat_mean"]
    model.feat_std = data["feat_std"]
    model.targ_mean = data["targ_mean"]
    model.targ_std = data["targ_std"]
    model.trained = bool(header["trained"])
    return model


def loss_history_csv(history: np.ndarray) -> str:
    lines = ["epoch,loss"]
    lines += [f"{i},{v:.17g}" for i, v in enumerate(history)]
    return "\n".join(lines) + "\n"
