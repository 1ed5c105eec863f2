"""Small full-batch GNNs with hand-written backpropagation.

Architectures (``H`` is the running representation, ``W``/``b`` per layer):

``gcn``            ``H <- relu(A_s H W + b)``, ``A_s`` symmetric-normalized ``A + I``
``sage_separate``  ``H <- relu([Abar H, H] W + b)``, ``Abar`` row-stochastic, no self-loop
``alpha_mix``      ``H <- relu(((1 - a) Abar + a I) H W + b)``
``h2gcn_style``    ``R0 = relu(X We + be)``, ``R <- [A2hat R, Ahat R, R]`` per round,
                   logits from ``[R0, R1, ..., RK] Wo + bo``
``mlp``            ``H <- relu(H W + b)``

The last layer has no ReLU; predictions are its softmax.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, EmptyNodeSet, MissingClassInTrain
from .graph import LabeledGraph, normalize, normalize_allow_isolated, two_hop_adjacency

ARCHS = ("gcn", "sage_separate", "h2gcn_style", "alpha_mix", "mlp")


@dataclass(frozen=True)
class ModelConfig:
    arch: str
    hidden_dim: int = 64
    num_layers: int = 2
    alpha: Optional[float] = None
    dropout: float = 0.0
    defense: Optional[object] = None  # SvdConfig, set via defenses.build_defended_model

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if (self.alpha is not None) != (self.arch == "alpha_mix"):
            raise ValueError("alpha is required for alpha_mix and only for it")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.num_layers < 1 or self.hidden_dim < 1:
            raise ValueError("num_layers and hidden_dim must be positive")


@dataclass(frozen=True)
class TrainConfig:
    max_iters: int = 200
    patience: int = 100
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 <= self.patience <= self.max_iters:
            raise ValueError("patience must lie in [0, max_iters]")


@dataclass(eq=False)
class TrainedModel:
    config: ModelConfig
    params: dict
    num_features: int
    num_classes: int
    train_config: TrainConfig = field(default_factory=TrainConfig)
    trace: list = field(default_factory=list)
    best_iter: int = 0

    def predict_proba(self, g: LabeledGraph, allow_isolated: bool = False) -> np.ndarray:
        return model_forward(self, g, allow_isolated=allow_isolated)

    def predict(self, g: LabeledGraph, allow_isolated: bool = False) -> np.ndarray:
        return np.argmax(self.predict_proba(g, allow_isolated), axis=1)


# --- operators ---------------------------------------------------------


@dataclass
class Operators:
    """Propagation matrices of one graph for one config (sparse or dense)."""
    main: object = None
    two_hop: object = None


def build_operators(cfg: ModelConfig, g: LabeledGraph, allow_isolated: bool = False) -> Operators:
    if cfg.arch == "mlp":
        return Operators()
    if cfg.defense is not None:
        from .defenses import defended_operators
        return defended_operators(cfg, g.adjacency)
    norm = normalize_allow_isolated if allow_isolated else normalize
    A = g.adjacency
    if cfg.arch == "gcn":
        return Operators(norm(A, "symmetric_self_loop"))
    if cfg.arch in ("sage_separate", "alpha_mix"):
        return Operators(norm(A, "row_stochastic"))
    # h2gcn_style: the 2-hop graph can have isolated nodes even when A has none
    return Operators(norm(A, "symmetric"), normalize_allow_isolated(two_hop_adjacency(A), "symmetric"))


# --- parameters ---------------------------------------------------------


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def h2gcn_width(hidden_dim, rounds):
    return hidden_dim * sum(3 ** k for k in range(rounds + 1))


def init_params(cfg: ModelConfig, num_features: int, num_classes: int, seed) -> dict:
    rng = np.random.default_rng(seed)
    if cfg.arch == "h2gcn_style":
        width = h2gcn_width(cfg.hidden_dim, cfg.num_layers)
        return {"We": _glorot(rng, num_features, cfg.hidden_dim), "be": np.zeros(cfg.hidden_dim),
                "Wo": _glorot(rng, width, num_classes), "bo": np.zeros(num_classes)}
    dims = [num_features] + [cfg.hidden_dim] * (cfg.num_layers - 1) + [num_classes]
    params = {}
    for l in range(cfg.num_layers):
        fan_in = 2 * dims[l] if cfg.arch == "sage_separate" else dims[l]
        params[f"W{l}"] = _glorot(rng, fan_in, dims[l + 1])
        params[f"b{l}"] = np.zeros(dims[l + 1])
    return params


# --- forward / backward ---------------------------------------------------


def _aggregate(cfg, ops, H):
    if cfg.arch == "gcn":
        return ops.main @ H
    if cfg.arch == "sage_separate":
        return np.hstack([ops.main @ H, H])
    if cfg.arch == "alpha_mix":
        return (1 - cfg.alpha) * (ops.main @ H) + cfg.alpha * H
    return H


def _aggregate_back(cfg, ops, dS, f):
    if cfg.arch == "gcn":
        return ops.main.T @ dS
    if cfg.arch == "sage_separate":
        return ops.main.T @ dS[:, :f] + dS[:, f:]
    if cfg.arch == "alpha_mix":
        return (1 - cfg.alpha) * (ops.main.T @ dS) + cfg.alpha * dS
    return dS


def _dropout_mask(rng, shape, rate):
    if rng is None or rate == 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward(params, cfg: ModelConfig, ops: Operators, X, rng=None):
    """Logits and a cache for :func:`backward`. ``rng`` enables dropout."""
    X = np.asarray(X, dtype=np.float64)
    cache = {"masks": []}
    if cfg.arch == "h2gcn_style":
        m = _dropout_mask(rng, X.shape, cfg.dropout)
        Xin = X if m is None else X * m
        pre = Xin @ params["We"] + params["be"]
        R = np.maximum(pre, 0.0)
        rounds = [R]
        for _ in range(cfg.num_layers):
            R = np.hstack([ops.two_hop @ R, ops.main @ R, R])
            rounds.append(R)
        final = np.hstack(rounds)
        m2 = _dropout_mask(rng, final.shape, cfg.dropout)
        fin = final if m2 is None else final * m2
        cache.update(Xin=Xin, pre=pre, rounds=rounds, fin=fin, masks=[m, m2])
        return fin @ params["Wo"] + params["bo"], cache
    H = X
    layers = []
    for l in range(cfg.num_layers):
        m = _dropout_mask(rng, H.shape, cfg.dropout)
        Hin = H if m is None else H * m
        S = _aggregate(cfg, ops, Hin)
        Z = S @ params[f"W{l}"] + params[f"b{l}"]
        layers.append((Hin.shape[1], S, Z, m))
        H = np.maximum(Z, 0.0) if l < cfg.num_layers - 1 else Z
    cache["layers"] = layers
    return H, cache


def backward(params, cfg: ModelConfig, ops: Operators, cache, dlogits) -> dict:
    grads = {}
    if cfg.arch == "h2gcn_style":
        grads["Wo"] = cache["fin"].T @ dlogits
        grads["bo"] = dlogits.sum(axis=0)
        dfin = dlogits @ params["Wo"].T
        m2 = cache["masks"][1]
        if m2 is not None:
            dfin = dfin * m2
        widths = [r.shape[1] for r in cache["rounds"]]
        offs = np.concatenate([[0], np.cumsum(widths)])
        dR = [dfin[:, offs[k]:offs[k + 1]].copy() for k in range(len(widths))]
        for k in range(len(widths) - 1, 0, -1):
            w = widths[k - 1]
            d = dR[k]
            dR[k - 1] += ops.two_hop.T @ d[:, :w] + ops.main.T @ d[:, w:2 * w] + d[:, 2 * w:]
        dpre = dR[0] * (cache["pre"] > 0)
        grads["We"] = cache["Xin"].T @ dpre
        grads["be"] = dpre.sum(axis=0)
        return grads
    dZ = dlogits
    for l in range(cfg.num_layers - 1, -1, -1):
        f, S, Z, m = cache["layers"][l]
        grads[f"W{l}"] = S.T @ dZ
        grads[f"b{l}"] = dZ.sum(axis=0)
        if l == 0:
            break
        dH = _aggregate_back(cfg, ops, dZ @ params[f"W{l}"].T, f)
        if m is not None:
            dH = dH * m
        _, _, Zprev, _ = cache["layers"][l - 1]
        dZ = dH * (Zprev > 0)
    return grads


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _weight_decay_applies(cfg):
    return cfg.arch == "gcn"


def loss_and_grads(params, cfg, ops, X, labels, train_nodes, weight_decay=0.0, rng=None):
    """Mean cross-entropy over ``train_nodes`` (+ L2 on gcn weights) and its gradient."""
    logits, cache = forward(params, cfg, ops, X, rng)
    probs = softmax(logits[train_nodes])
    y = labels[train_nodes]
    t = train_nodes.size
    loss = -np.mean(np.log(np.maximum(probs[np.arange(t), y], 1e-300)))
    d = probs
    d[np.arange(t), y] -= 1.0
    dlogits = np.zeros_like(logits)
    dlogits[train_nodes] = d / t
    grads = backward(params, cfg, ops, cache, dlogits)
    if weight_decay and _weight_decay_applies(cfg):
        for name, w in params.items():
            if name.startswith("W"):
                loss += 0.5 * weight_decay * float(np.sum(w * w))
                grads[name] = grads[name] + weight_decay * w
    return float(loss), grads


def _check_dims(model_or_cfg, params, g):
    first = params["We"] if "We" in params else params["W0"]
    f = first.shape[0] // (2 if model_or_cfg.arch == "sage_separate" else 1)
    if g.features.shape[1] != f:
        raise DimensionMismatch(f"model expects {f} features, graph has {g.features.shape[1]}")


def model_forward(model: TrainedModel, g: LabeledGraph, allow_isolated: bool = False) -> np.ndarray:
    """Softmax predictions for every node (inference mode, no dropout)."""
    _check_dims(model.config, model.params, g)
    ops = build_operators(model.config, g, allow_isolated)
    logits, _ = forward(model.params, model.config, ops, g.features)
    return softmax(logits)


def _val_score(params, cfg, ops, X, labels, val):
    logits, _ = forward(params, cfg, ops, X)
    probs = softmax(logits[val])
    acc = float(np.mean(np.argmax(probs, axis=1) == labels[val]))
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(val.size), labels[val]], 1e-300))))
    return acc, loss


def train(config: ModelConfig, tcfg: TrainConfig, g: LabeledGraph, splits) -> TrainedModel:
    """Full-batch gradient descent with early stopping on validation accuracy.

    ``theta_k`` (after ``k`` steps) is scored for ``k = 0..max_iters``; a
    snapshot is better when its validation accuracy is higher, or equal with
    lower validation loss. Training stops once ``patience`` iterates pass
    without improvement, and the best snapshot is returned.
    """
    train_nodes = np.asarray(splits.train, dtype=np.int64)
    val = np.asarray(splits.val, dtype=np.int64)
    if np.intersect1d(train_nodes, val).size:
        raise ValueError("train and validation nodes overlap")
    missing = set(range(g.num_classes)) - set(g.labels[train_nodes].tolist())
    if missing:
        raise MissingClassInTrain(f"classes {sorted(missing)} have no training node")
    ops = build_operators(config, g)
    X, labels = g.features, g.labels
    params = init_params(config, X.shape[1], g.num_classes, tcfg.seed)
    drop_rng = np.random.default_rng([tcfg.seed, 1]) if config.dropout else None
    best = {k: v.copy() for k, v in params.items()}
    best_key, best_k = None, 0
    trace = []
    for k in range(tcfg.max_iters + 1):
        if val.size:
            acc, vloss = _val_score(params, config, ops, X, labels, val)
            key = (acc, -vloss)
            if best_key is None or key > best_key:
                best_key, best_k = key, k
                best = {n: v.copy() for n, v in params.items()}
        else:
            acc, vloss = float("nan"), float("nan")
            best_k, best = k, {n: v.copy() for n, v in params.items()}
        if k - best_k >= tcfg.patience and val.size or k == tcfg.max_iters:
            loss, _ = loss_and_grads(params, config, ops, X, labels, train_nodes, tcfg.weight_decay)
            trace.append({"iter": k, "train_loss": loss, "val_acc": acc, "val_loss": vloss})
            break
        loss, grads = loss_and_grads(params, config, ops, X, labels, train_nodes, tcfg.weight_decay, drop_rng)
        trace.append({"iter": k, "train_loss": loss, "val_acc": acc, "val_loss": vloss})
        for n in params:
            params[n] = params[n] - tcfg.learning_rate * grads[n]
    return TrainedModel(config, best, X.shape[1], g.num_classes, tcfg, trace, best_k)


def evaluate(model: TrainedModel, g: LabeledGraph, nodes) -> float:
    """Accuracy; ties in the prediction go to the lowest class id."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise EmptyNodeSet("no nodes to evaluate")
    pred = np.argmax(model_forward(model, g)[nodes], axis=1)
    return float(np.mean(pred == g.labels[nodes]))


# --- checkpoints -----------------------------------------------------------
#
# One JSON header line, then each parameter as little-endian float64 in
# row-major order, in the order listed under "params" in the header.


def save_checkpoint(model: TrainedModel, path) -> None:
    cfg = dataclasses.asdict(model.config)
    if model.config.defense is not None:
        cfg["defense"] = dataclasses.asdict(model.config.defense)
    names = sorted(model.params)
    header = {
        "format": "heterorobust-checkpoint-1",
        "config": cfg,
        "train_config": dataclasses.asdict(model.train_config),
        "num_features": model.num_features,
        "num_classes": model.num_classes,
        "best_iter": model.best_iter,
        "params": [[n, list(model.params[n].shape)] for n in names],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> TrainedModel:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    cfg = dict(header["config"])
    if cfg.get("defense") is not None:
        from .defenses import SvdConfig
        cfg["defense"] = SvdConfig(**cfg["defense"])
    params, off = {}, nl + 1
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
    return TrainedModel(ModelConfig(**cfg), params, header["num_features"], header["num_classes"],
                        TrainConfig(**header["train_config"]), [], header["best_iter"])
