"""Gated two-expert classifier: gradient-boosted trees and an MLP fused by a
learned softmax gate, p(x) = g_tree(x) * f_tree(x) + g_mlp(x) * f_mlp(x)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import blob
from .errors import DegenerateLabelsError, FeatureSchemaError, SchemaError, ShapeError
from .features import FEATURE_NAMES, FeatureVector

BUNDLE_VERSION = 1
_EPS = 1e-12


@dataclass(frozen=True)
class DetectorConfig:
    tree_iterations: int = 300
    tree_depth: int = 6
    tree_lr: float = 0.5
    neural_hidden: Optional[int] = None  # None: twice the input width
    neural_epochs: int = 80
    neural_lr: float = 1e-2
    gate_hidden: int = 16
    gate_epochs: int = 80
    gate_lr: float = 1e-2
    batch_size: int = 32
    pos_weight: float = 1.0
    threshold: float = 0.5
    seed: int = 0


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ShapeError(f"X {X.shape} and y {y.shape} do not align")
    if len(y) < 2 or len(np.unique(y)) < 2:
        raise DegenerateLabelsError("training labels must contain both classes")
    if not np.isfinite(X).all():
        raise ValueError("features contain NaN or infinity")
    return X, y


def _sample_weights(y, pos_weight):
    return np.where(y > 0.5, pos_weight, 1.0)


# --- tree expert -----------------------------------------------------------

@dataclass
class TreeExpert:
    """Flattened regression trees; leaves have feature == -1."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    shrinkage: float
    base_score: float

    @property
    def iterations(self) -> int:
        return len(self.roots)

    def raw_scores(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.full(len(X), self.base_score)
        rows = np.arange(len(X))
        for root in self.roots:
            node = np.full(len(X), root)
            while True:
                f = self.feature[node]
                inner = f >= 0
                if not inner.any():
                    break
                go_left = X[rows[inner], f[inner]] <= self.threshold[node[inner]]
                node[inner] = np.where(go_left, self.left[node[inner]], self.right[node[inner]])
            out += self.shrinkage * self.value[node]
        return out

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.raw_scores(X))

    def depth(self, tree: int) -> int:
        def walk(n):
            return 0 if self.feature[n] < 0 else 1 + max(walk(self.left[n]), walk(self.right[n]))
        return walk(self.roots[tree])

    def arrays(self):
        return {"feature": self.feature, "threshold": self.threshold, "left": self.left,
                "right": self.right, "value": self.value, "roots": self.roots,
                "scalars": np.array([self.shrinkage, self.base_score])}

    @classmethod
    def from_arrays(cls, a):
        return cls(a["feature"], a["threshold"], a["left"], a["right"], a["value"], a["roots"],
                   float(a["scalars"][0]), float(a["scalars"][1]))


def best_split(X: np.ndarray, r: np.ndarray):
    """Exhaustive least-squares split of residuals ``r``.

    Returns (gain, feature, threshold); feature is None when no split
    separates distinct values. Samples with x <= threshold go left.
    """
    n, d = X.shape
    if n < 2:
        return 0.0, None, None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    cs = np.cumsum(r[order], axis=0)[:-1]
    total = r.sum()
    n_left = np.arange(1, n)[:, None]
    gain = cs**2 / n_left + (total - cs) ** 2 / (n - n_left) - total**2 / n
    gain[xs[:-1] == xs[1:]] = -np.inf
    pos = int(np.argmax(gain))
    i, f = divmod(pos, d)
    if not np.isfinite(gain[i, f]):
        return 0.0, None, None
    lo, hi = xs[i, f], xs[i + 1, f]
    thr = lo + (hi - lo) / 2
    if thr >= hi:
        thr = lo
    return float(gain[i, f]), f, float(thr)


def _grow(X, r, depth, nodes):
    nid = len(nodes)
    nodes.append([-1, 0.0, -1, -1, float(r.mean())])
    if depth == 0:
        return nid
    gain, f, thr = best_split(X, r)
    if f is None or gain <= 1e-12:
        return nid
    mask = X[:, f] <= thr
    left = _grow(X[mask], r[mask], depth - 1, nodes)
    right = _grow(X[~mask], r[~mask], depth - 1, nodes)
    nodes[nid][:4] = [f, thr, left, right]
    return nid


def train_tree_expert(X, y, config: DetectorConfig = DetectorConfig()) -> TreeExpert:
    """Logistic gradient boosting: every round fits a depth-limited
    least-squares tree to the negative log-loss gradient y - p."""
    X, y = _check_xy(X, y)
    w = _sample_weights(y, config.pos_weight)
    prior = np.clip(np.average(y, weights=w), 1e-6, 1 - 1e-6)
    base = float(np.log(prior / (1 - prior)))
    F = np.full(len(y), base)
    nodes, roots = [], []
    for _ in range(config.tree_iterations):
        resid = w * (y - sigmoid(F))
        roots.append(_grow(X, resid, config.tree_depth, nodes))
        tree = TreeExpert(*_pack(nodes), np.array([roots[-1]]), 1.0, 0.0)
        F += config.tree_lr * tree.raw_scores(X)
    return TreeExpert(*_pack(nodes), np.array(roots, dtype=np.int64), config.tree_lr, base)


def _pack(nodes):
    arr = np.array(nodes, dtype=float).reshape(-1, 5)
    return (arr[:, 0].astype(np.int64), arr[:, 1], arr[:, 2].astype(np.int64),
            arr[:, 3].astype(np.int64), arr[:, 4])


# --- dense networks ----------------------------------------------------------

class Mlp:
    """Fully connected ReLU network with a linear output layer."""

    def __init__(self, weights: list, biases: list):
        self.weights = weights
        self.biases = biases

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator) -> "Mlp":
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            ws.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(ws, bs)

    @property
    def params(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def forward(self, X):
        acts = [X]
        h = X
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < len(self.weights) - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_out) -> list:
        grads = []
        g = grad_out
        for i in reversed(range(len(self.weights))):
            grads.append(g.sum(axis=0))            # bias
            grads.append(acts[i].T @ g)            # weight
            if i > 0:
                g = (g @ self.weights[i].T) * (acts[i] > 0)
        grads.reverse()
        # reversed list is [W0, b0, W1, b1, ...]
        return grads

    def arrays(self, prefix=""):
        out = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}W{i}"] = W
            out[f"{prefix}b{i}"] = b
        return out

    @classmethod
    def from_arrays(cls, a, prefix=""):
        n = sum(1 for k in a if k.startswith(prefix + "W"))
        return cls([a[f"{prefix}W{i}"] for i in range(n)], [a[f"{prefix}b{i}"] for i in range(n)])


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1**self.t)
            vhat = v / (1 - self.b2**self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


@dataclass
class NeuralExpert:
    net: Mlp

    @property
    def hidden_dim(self) -> int:
        return self.net.weights[0].shape[1]

    def predict_proba(self, Z) -> np.ndarray:
        return sigmoid(self.net.forward(np.asarray(Z, dtype=float))[0][:, 0])


def neural_loss_and_grads(net: Mlp, X, y, w):
    """Weighted mean log-loss of sigmoid(net(X)) and its parameter gradients."""
    z, acts = net.forward(X)
    z = z[:, 0]
    p = sigmoid(z)
    n = len(y)
    # log-loss written on logits for numerical stability
    loss = np.sum(w * (np.logaddexp(0.0, z) - y * z)) / n
    grad_z = (w * (p - y) / n)[:, None]
    return loss, net.backward(acts, grad_z)


def train_neural_expert(Z, y, config: DetectorConfig = DetectorConfig()) -> NeuralExpert:
    """Mini-batch Adam on the log-loss; ``Z`` is expected standardized."""
    Z, y = _check_xy(Z, y)
    w = _sample_weights(y, config.pos_weight)
    rng = np.random.default_rng([config.seed, 1])
    hidden = config.neural_hidden or 2 * Z.shape[1]
    net = Mlp.init([Z.shape[1], hidden, 1], rng)
    opt = Adam(net.params, config.neural_lr)
    for _ in range(config.neural_epochs):
        for idx in _minibatches(len(y), config.batch_size, rng):
            _, grads = neural_loss_and_grads(net, Z[idx], y[idx], w[idx])
            opt.step(grads)
    return NeuralExpert(net)


@dataclass
class GateNetwork:
    net: Mlp

    def weights(self, Z) -> np.ndarray:
        """(n, 2) softmax weights: column 0 for the tree, column 1 for the MLP."""
        return softmax(self.net.forward(np.asarray(Z, dtype=float))[0])


def fuse(g: np.ndarray, f_tree, f_mlp) -> np.ndarray:
    return g[:, 0] * f_tree + g[:, 1] * f_mlp


def gate_loss_and_grads(net: Mlp, Z, f, y, w):
    """Log-loss of the fused probability; ``f`` is the (n, 2) frozen expert output."""
    z, acts = net.forward(Z)
    g = softmax(z)
    p = np.clip((g * f).sum(axis=1), _EPS, 1 - _EPS)
    n = len(y)
    loss = -np.sum(w * (y * np.log(p) + (1 - y) * np.log(1 - p))) / n
    dp = w * (p - y) / (p * (1 - p)) / n
    grad_z = dp[:, None] * g * (f - p[:, None])
    return loss, net.backward(acts, grad_z)


def train_gate(Z, y, f_tree, f_mlp, config: DetectorConfig = DetectorConfig()) -> GateNetwork:
    """Fit the gate with both experts frozen."""
    Z, y = _check_xy(Z, y)
    w = _sample_weights(y, config.pos_weight)
    f = np.column_stack([f_tree, f_mlp])
    rng = np.random.default_rng([config.seed, 2])
    net = Mlp.init([Z.shape[1], config.gate_hidden, 2], rng)
    opt = Adam(net.params, config.gate_lr)
    for _ in range(config.gate_epochs):
        for idx in _minibatches(len(y), config.batch_size, rng):
            _, grads = gate_loss_and_grads(net, Z[idx], f[idx], y[idx], w[idx])
            opt.step(grads)
    return GateNetwork(net)


# --- ensemble ----------------------------------------------------------------

@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=float)
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 0, std, 1.0))

    def __call__(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.std


@dataclass
class GatedEnsembleModel:
    tree: TreeExpert
    neural: NeuralExpert
    gate: GateNetwork
    scaler: Standardizer
    feature_schema: tuple = FEATURE_NAMES
    threshold: float = 0.5
    config: DetectorConfig = field(default_factory=DetectorConfig)

    def _matrix(self, x) -> np.ndarray:
        if isinstance(x, FeatureVector):
            x = x.values()
        elif isinstance(x, (list, tuple)) and x and isinstance(x[0], FeatureVector):
            x = np.stack([v.values() for v in x])
        X = np.atleast_2d(np.asarray(x, dtype=float))
        if X.shape[1] != len(self.feature_schema):
            raise FeatureSchemaError("features", f"expected {len(self.feature_schema)} features, got {X.shape[1]}")
        return X

    def components(self, x):
        """Return (f_tree, f_mlp, gate weights) for a batch."""
        X = self._matrix(x)
        Z = self.scaler(X)
        return self.tree.predict_proba(X), self.neural.predict_proba(Z), self.gate.weights(Z)

    def predict_proba(self, x) -> np.ndarray:
        f_tree, f_mlp, g = self.components(x)
        return np.clip(fuse(g, f_tree, f_mlp), 0.0, 1.0)


def train_detector(X, y, config: DetectorConfig = DetectorConfig(),
                   feature_schema: Sequence[str] = FEATURE_NAMES) -> GatedEnsembleModel:
    X, y = _check_xy(X, y)
    if X.shape[1] != len(feature_schema):
        raise FeatureSchemaError("features", "feature matrix width does not match the schema")
    scaler = Standardizer.fit(X)
    Z = scaler(X)
    tree = train_tree_expert(X, y, config)
    neural = train_neural_expert(Z, y, config)
    gate = train_gate(Z, y, tree.predict_proba(X), neural.predict_proba(Z), config)
    return GatedEnsembleModel(tree, neural, gate, scaler, tuple(feature_schema), config.threshold, config)


def predict(model: GatedEnsembleModel, x) -> float | np.ndarray:
    p = model.predict_proba(x)
    return float(p[0]) if isinstance(x, FeatureVector) or np.ndim(x) == 1 else p


def classify(model: GatedEnsembleModel, x, threshold: Optional[float] = None):
    """True (violation) iff p(x) >= threshold."""
    thr = model.threshold if threshold is None else threshold
    p = predict(model, x)
    return bool(p >= thr) if np.ndim(p) == 0 else p >= thr


# --- persistence ---------------------------------------------------------------

def save_model(model: GatedEnsembleModel, directory, extra: Optional[dict] = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    schema = {
        "bundle_version": BUNDLE_VERSION,
        "feature_schema": list(model.feature_schema),
        "threshold": model.threshold,
        "standardization": {"mean": model.scaler.mean.tolist(), "std": model.scaler.std.tolist()},
        "detector_config": asdict(model.config),
    }
    schema.update(extra or {})
    (directory / "schema.json").write_text(json.dumps(schema, indent=2, sort_keys=True) + "\n")
    blob.save(directory / "tree.bin", model.tree.arrays())
    blob.save(directory / "neural.bin", model.neural.net.arrays())
    blob.save(directory / "gate.bin", model.gate.net.arrays())


def load_model(directory) -> tuple[GatedEnsembleModel, dict]:
    directory = Path(directory)
    schema = json.loads((directory / "schema.json").read_text())
    if schema.get("bundle_version") != BUNDLE_VERSION:
        raise SchemaError("bundle_version", "unsupported model bundle version")
    if tuple(schema["feature_schema"]) != FEATURE_NAMES:
        raise FeatureSchemaError("feature_schema", "bundle feature order differs from this featurizer")
    std = schema["standardization"]
    model = GatedEnsembleModel(
        tree=TreeExpert.from_arrays(blob.load(directory / "tree.bin")[0]),
        neural=NeuralExpert(Mlp.from_arrays(blob.load(directory / "neural.bin")[0])),
        gate=GateNetwork(Mlp.from_arrays(blob.load(directory / "gate.bin")[0])),
        scaler=Standardizer(np.array(std["mean"]), np.array(std["std"])),
        feature_schema=tuple(schema["feature_schema"]),
        threshold=float(schema["threshold"]),
        config=DetectorConfig(**schema["detector_config"]),
    )
    return model, schema
