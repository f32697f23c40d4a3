"""Graph convolutional classifier with residual blocks.

Architecture, for a batch of graphs with normalized adjacency ``A`` and node
features ``X``::

    H1 = relu(A X W0)
    H2 = relu(A H1 W1)
    per residual block:
        Y   = relu(BN(A H Wa))
        Z   = BN(A Y Wb)
        H   = dropout(relu(Z + P(H)))      P = H Wp for block 0, identity after
    r = mean over nodes of H
    p = softmax(r Wfc + bfc)

Gradients are derived by hand; ``forward`` keeps everything ``backward`` needs.
"""

from __future__ import annotations

import copy
import hashlib
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .connectivity import ConnectivityMatrix
from .errors import DimensionMismatch, NonFiniteActivation, TooFewSamplesPerClass, ZeroDegree
from .stats import ConfusionMatrix, metrics_report
from .utils import SCHEMA_VERSION, derive_seed

N_CLASSES = 6
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PROB_FLOOR = 1e-15


def normalize_adjacency(a: ConnectivityMatrix | np.ndarray) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with unit self-loops."""
    w = a.weights if isinstance(a, ConnectivityMatrix) else np.asarray(a, dtype=float)
    if np.any(w < 0):
        raise ValueError("adjacency weights must be non-negative")
    at = w + np.eye(w.shape[0])
    deg = at.sum(axis=1)
    if np.any(deg <= 0):
        raise ZeroDegree("node with zero degree after self-loop addition")
    inv = 1.0 / np.sqrt(deg)
    return at * np.outer(inv, inv)


@dataclass(frozen=True, eq=False)
class GraphSample:
    adjacency: ConnectivityMatrix
    features: np.ndarray | None = None
    label: int = 0

    def __post_init__(self):
        x = self.adjacency.weights.copy() if self.features is None else np.asarray(self.features, dtype=float)
        if x.ndim != 2 or x.shape[0] != self.adjacency.n:
            raise DimensionMismatch(f"features {x.shape} do not match {self.adjacency.n} nodes")
        if not np.all(np.isfinite(x)):
            raise ValueError("node features must be finite")
        if not 0 <= int(self.label) < N_CLASSES:
            raise ValueError(f"label must lie in [0, {N_CLASSES})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "_a_hat", normalize_adjacency(self.adjacency))

    @property
    def a_hat(self) -> np.ndarray:
        return self._a_hat

    @property
    def n_nodes(self) -> int:
        return self.adjacency.n

    def to_json(self) -> dict:
        return {
            "channels": list(self.adjacency.channel_names),
            "weights": self.adjacency.weights.tolist(),
            "features": self.features.tolist(),
            "label": self.label,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GraphSample":
        cm = ConnectivityMatrix(tuple(obj["channels"]), np.asarray(obj["weights"], dtype=float))
        feats = obj.get("features")
        return cls(cm, None if feats is None else np.asarray(feats, dtype=float), int(obj["label"]))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 16
    folds: int = 10
    seed: int = 0
    hidden_dim: int = 32
    n_blocks: int = 1
    dropout_rate: float = 0.5
    batch_norm: bool = True
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.hidden_dim < 1 or self.n_blocks < 0:
            raise ValueError("batch_size, hidden_dim must be positive; epochs, n_blocks non-negative")


@dataclass
class GcnParams:
    tensors: dict[str, np.ndarray]
    running: dict[str, np.ndarray] = field(default_factory=dict)
    n_blocks: int = 1
    dropout_rate: float = 0.5
    batch_norm: bool = True

    @property
    def in_dim(self) -> int:
        return self.tensors["w0"].shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.tensors["w0"].shape[1]

    def copy(self) -> "GcnParams":
        return copy.deepcopy(self)

    def to_json(self) -> dict:
        return {
            "tensors": {k: v.tolist() for k, v in sorted(self.tensors.items())},
            "running": {k: v.tolist() for k, v in sorted(self.running.items())},
            "n_blocks": self.n_blocks,
            "dropout_rate": self.dropout_rate,
            "batch_norm": self.batch_norm,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GcnParams":
        return cls(
            {k: np.asarray(v, dtype=float) for k, v in obj["tensors"].items()},
            {k: np.asarray(v, dtype=float) for k, v in obj["running"].items()},
            int(obj["n_blocks"]),
            float(obj["dropout_rate"]),
            bool(obj["batch_norm"]),
        )


def init_params(
    in_dim: int, hidden_dim: int = 32, n_blocks: int = 1, seed: int = 0,
    dropout_rate: float = 0.5, batch_norm: bool = True,
) -> GcnParams:
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out))

    h = hidden_dim
    t = {"w0": glorot(in_dim, h), "w1": glorot(h, h)}
    running = {}
    for b in range(n_blocks):
        t[f"b{b}_wa"] = glorot(h, h)
        t[f"b{b}_wb"] = glorot(h, h)
        if b == 0:
            t[f"b{b}_wp"] = glorot(h, h)
        for s in ("a", "b"):
            t[f"b{b}_gamma_{s}"] = np.ones(h)
            t[f"b{b}_beta_{s}"] = np.zeros(h)
            running[f"b{b}_mean_{s}"] = np.zeros(h)
            running[f"b{b}_var_{s}"] = np.ones(h)
    t["fc_w"] = glorot(h, N_CLASSES)
    t["fc_b"] = np.zeros(N_CLASSES)
    return GcnParams(t, running, n_blocks, dropout_rate, batch_norm)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss(probs: np.ndarray, label: int) -> float:
    return float(-math.log(max(float(probs[label]), PROB_FLOOR)))


def _conv(a, h, w):
    ah = a @ h
    return ah, ah @ w


def _conv_back(a, ah, w, dp):
    dw = np.einsum("bif,big->fg", ah, dp)
    dh = np.swapaxes(a, 1, 2) @ (dp @ w.T)
    return dw, dh


def _bn_forward(x, gamma, beta, mean, var, train):
    flat = x.reshape(-1, x.shape[-1])
    if train:
        mean = flat.mean(axis=0)
        var = flat.var(axis=0)
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv
    return gamma * xhat + beta, (xhat, inv, mean, var)


def _bn_backward(dy, gamma, cache, train):
    xhat, inv, _, _ = cache
    dgamma = (dy * xhat).reshape(-1, dy.shape[-1]).sum(axis=0)
    dbeta = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    dxhat = dy * gamma
    if not train:
        return dxhat * inv, dgamma, dbeta
    f = dy.shape[-1]
    m = dy.size // f
    dflat = dxhat.reshape(-1, f)
    xflat = xhat.reshape(-1, f)
    dx = inv / m * (m * dflat - dflat.sum(axis=0) - xflat * (dflat * xflat).sum(axis=0))
    return dx.reshape(dy.shape), dgamma, dbeta


def _stack(samples: Sequence[GraphSample]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.a_hat for s in samples]), np.stack([s.features for s in samples])


def _content_key(s: GraphSample) -> bytes:
    h = hashlib.sha256(s.adjacency.weights.tobytes())
    h.update(s.features.tobytes())
    h.update(str(s.label).encode())
    return h.digest()


def canonical_order(samples: Sequence[GraphSample]) -> list[int]:
    """Indices sorting samples by content, so training never depends on the order they arrive in."""
    keys = [_content_key(s) for s in samples]
    return sorted(range(len(samples)), key=keys.__getitem__)


def forward_batch(a: np.ndarray, x: np.ndarray, params: GcnParams, train: bool = False, seed: int = 0):
    """Class probabilities (B, 6) for a batch plus the cache used by ``backward_batch``."""
    t = params.tensors
    if x.shape[-1] != params.in_dim:
        raise DimensionMismatch(f"features have {x.shape[-1]} columns, model expects {params.in_dim}")
    if a.shape[1] != x.shape[1]:
        raise DimensionMismatch("adjacency and features disagree on node count")
    rng = np.random.default_rng(seed)
    use_dropout = train and params.dropout_rate > 0
    cache: dict = {"a": a, "x": x, "train": train, "blocks": []}
    ax, p1 = _conv(a, x, t["w0"])
    h1 = np.maximum(p1, 0.0)
    ah1, p2 = _conv(a, h1, t["w1"])
    h = np.maximum(p2, 0.0)
    cache.update(ax=ax, p1=p1, ah1=ah1, p2=p2)
    for b in range(params.n_blocks):
        bc: dict = {"h_in": h}
        ah, u = _conv(a, h, t[f"b{b}_wa"])
        if params.batch_norm:
            ub, bc["bn_a"] = _bn_forward(u, t[f"b{b}_gamma_a"], t[f"b{b}_beta_a"],
                                         params.running[f"b{b}_mean_a"], params.running[f"b{b}_var_a"], train)
        else:
            ub = u
        y = np.maximum(ub, 0.0)
        ay, v = _conv(a, y, t[f"b{b}_wb"])
        if params.batch_norm:
            vb, bc["bn_b"] = _bn_forward(v, t[f"b{b}_gamma_b"], t[f"b{b}_beta_b"],
                                         params.running[f"b{b}_mean_b"], params.running[f"b{b}_var_b"], train)
        else:
            vb = v
        shortcut = h @ t[f"b{b}_wp"] if f"b{b}_wp" in t else h
        s = vb + shortcut
        out = np.maximum(s, 0.0)
        if use_dropout:
            mask = (rng.random(out.shape) >= params.dropout_rate) / (1.0 - params.dropout_rate)
            out = out * mask
            bc["mask"] = mask
        bc.update(ah=ah, ub=ub, ay=ay, s=s)
        cache["blocks"].append(bc)
        h = out
    readout = h.mean(axis=1)
    logits = readout @ t["fc_w"] + t["fc_b"]
    if not np.all(np.isfinite(logits)):
        raise NonFiniteActivation("non-finite logits")
    probs = softmax(logits)
    cache.update(h_last=h, readout=readout, probs=probs)
    return probs, cache


def batch_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    p = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(p, PROB_FLOOR)).mean())


def backward_batch(cache: dict, params: GcnParams, labels: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the mean cross-entropy over the batch."""
    t = params.tensors
    a, train = cache["a"], cache["train"]
    labels = np.asarray(labels)
    probs = cache["probs"]
    bsz = len(labels)
    dlogits = probs.copy()
    dlogits[np.arange(bsz), labels] -= 1.0
    clamped = probs[np.arange(bsz), labels] < PROB_FLOOR
    dlogits[clamped] = 0.0
    dlogits /= bsz
    g: dict[str, np.ndarray] = {}
    g["fc_w"] = cache["readout"].T @ dlogits
    g["fc_b"] = dlogits.sum(axis=0)
    n_nodes = cache["h_last"].shape[1]
    dh = np.repeat((dlogits @ t["fc_w"].T)[:, None, :], n_nodes, axis=1) / n_nodes
    for b in reversed(range(params.n_blocks)):
        bc = cache["blocks"][b]
        if "mask" in bc:
            dh = dh * bc["mask"]
        ds = dh * (bc["s"] > 0)
        if f"b{b}_wp" in t:
            g[f"b{b}_wp"] = np.einsum("bif,big->fg", bc["h_in"], ds)
            dh_in = ds @ t[f"b{b}_wp"].T
        else:
            dh_in = ds.copy()
        dvb = ds
        if params.batch_norm:
            dv, g[f"b{b}_gamma_b"], g[f"b{b}_beta_b"] = _bn_backward(dvb, t[f"b{b}_gamma_b"], bc["bn_b"], train)
        else:
            dv = dvb
            g[f"b{b}_gamma_b"] = np.zeros_like(t[f"b{b}_gamma_b"])
            g[f"b{b}_beta_b"] = np.zeros_like(t[f"b{b}_beta_b"])
        g[f"b{b}_wb"], dy = _conv_back(a, bc["ay"], t[f"b{b}_wb"], dv)
        dub = dy * (bc["ub"] > 0)
        if params.batch_norm:
            du, g[f"b{b}_gamma_a"], g[f"b{b}_beta_a"] = _bn_backward(dub, t[f"b{b}_gamma_a"], bc["bn_a"], train)
        else:
            du = dub
            g[f"b{b}_gamma_a"] = np.zeros_like(t[f"b{b}_gamma_a"])
            g[f"b{b}_beta_a"] = np.zeros_like(t[f"b{b}_beta_a"])
        g[f"b{b}_wa"], dh_a = _conv_back(a, bc["ah"], t[f"b{b}_wa"], du)
        dh = dh_in + dh_a
    dp2 = dh * (cache["p2"] > 0)
    g["w1"], dh1 = _conv_back(a, cache["ah1"], t["w1"], dp2)
    dp1 = dh1 * (cache["p1"] > 0)
    g["w0"], _ = _conv_back(a, cache["ax"], t["w0"], dp1)
    return g


def forward(sample: GraphSample, params: GcnParams, mode: str = "eval", seed: int = 0):
    """Single-graph forward pass; ``mode`` is ``"train"`` or ``"eval"``."""
    probs, cache = forward_batch(sample.a_hat[None], sample.features[None], params, mode == "train", seed)
    return probs[0], cache


def backward(sample: GraphSample, params: GcnParams, label: int | None = None,
             mode: str = "eval", seed: int = 0) -> dict[str, np.ndarray]:
    label = sample.label if label is None else label
    _, cache = forward(sample, params, mode, seed)
    return backward_batch(cache, params, np.array([label]))


def update_running_stats(params: GcnParams, cache: dict) -> None:
    for b, bc in enumerate(cache["blocks"]):
        for s in ("a", "b"):
            if f"bn_{s}" not in bc:
                continue
            _, _, mean, var = bc[f"bn_{s}"]
            rm, rv = f"b{b}_mean_{s}", f"b{b}_var_{s}"
            params.running[rm] = (1 - BN_MOMENTUM) * params.running[rm] + BN_MOMENTUM * mean
            params.running[rv] = (1 - BN_MOMENTUM) * params.running[rv] + BN_MOMENTUM * var


class Adam:
    def __init__(self, params: GcnParams, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.t = 0

    def step(self, params: GcnParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k, gk in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * gk
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * gk * gk
            params.tensors[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def evaluate_loss(samples: Sequence[GraphSample], params: GcnParams) -> float:
    a, x = _stack(samples)
    probs, _ = forward_batch(a, x, params, train=False)
    return batch_loss(probs, np.array([s.label for s in samples]))


def predict(samples: Sequence[GraphSample], params: GcnParams) -> np.ndarray:
    a, x = _stack(samples)
    probs, _ = forward_batch(a, x, params, train=False)
    return probs.argmax(axis=1)


@dataclass
class TrainResult:
    params: GcnParams
    loss_trace: list[float]
    val_trace: list[float]
    best_epoch: int


def train(dataset: Sequence[GraphSample], cfg: TrainConfig) -> TrainResult:
    """Mini-batch Adam; returns the parameters with the best validation loss."""
    if len({s.label for s in dataset}) < 2:
        raise ValueError("training needs at least two classes")
    in_dims = {s.features.shape for s in dataset}
    if len(in_dims) != 1:
        raise DimensionMismatch(f"inconsistent feature shapes in dataset: {sorted(in_dims)}")
    dataset = [dataset[i] for i in canonical_order(dataset)]
    n = len(dataset)
    rng = np.random.default_rng(derive_seed(cfg.seed, "train"))
    order = rng.permutation(n)
    n_val = int(round(cfg.val_fraction * n)) if n >= 10 else 0
    val_idx, tr_idx = order[:n_val], np.sort(order[n_val:])
    a_all, x_all = _stack(dataset)
    y_all = np.array([s.label for s in dataset])
    params = init_params(x_all.shape[-1], cfg.hidden_dim, cfg.n_blocks, derive_seed(cfg.seed, "init"),
                         cfg.dropout_rate, cfg.batch_norm)
    opt = Adam(params, cfg.learning_rate)
    best, best_loss, best_epoch = params.copy(), math.inf, -1
    trace, val_trace = [], []
    step = 0
    for epoch in range(cfg.epochs):
        perm = tr_idx[rng.permutation(len(tr_idx))]
        total = 0.0
        for lo in range(0, len(perm), cfg.batch_size):
            bi = perm[lo : lo + cfg.batch_size]
            probs, cache = forward_batch(a_all[bi], x_all[bi], params, True, derive_seed(cfg.seed, "dropout", step))
            total += batch_loss(probs, y_all[bi]) * len(bi)
            grads = backward_batch(cache, params, y_all[bi])
            opt.step(params, grads)
            update_running_stats(params, cache)
            step += 1
        trace.append(total / len(perm))
        sel_idx = val_idx if n_val else tr_idx
        probs, _ = forward_batch(a_all[sel_idx], x_all[sel_idx], params, False)
        vl = batch_loss(probs, y_all[sel_idx])
        val_trace.append(vl)
        if vl < best_loss:
            best, best_loss, best_epoch = params.copy(), vl, epoch
    return TrainResult(best, trace, val_trace, best_epoch)


def stratified_folds(labels: Sequence[int], k: int, seed: int) -> tuple[list[np.ndarray], bool]:
    """Test-index arrays for ``k`` folds; falls back to an unstratified split when a class has < k members."""
    labels = np.asarray(labels)
    if len(labels) < k:
        raise ValueError(f"{len(labels)} samples cannot fill {k} folds")
    rng = np.random.default_rng(derive_seed(seed, "folds"))
    counts = np.bincount(labels)
    stratified = bool(np.all(counts[counts > 0] >= k))
    assign = np.empty(len(labels), dtype=int)
    if stratified:
        offset = 0
        for c in np.unique(labels):
            idx = rng.permutation(np.flatnonzero(labels == c))
            assign[idx] = (np.arange(len(idx)) + offset) % k
            offset += len(idx)
    else:
        assign[rng.permutation(len(labels))] = np.arange(len(labels)) % k
    return [np.flatnonzero(assign == f) for f in range(k)], stratified


@dataclass
class KFoldResult:
    fold_confusions: list[ConfusionMatrix]
    confusion: ConfusionMatrix
    stratified: bool
    report: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "v": SCHEMA_VERSION,
            "folds": len(self.fold_confusions),
            "stratified": self.stratified,
            "fold_confusions": [c.counts.tolist() for c in self.fold_confusions],
            **self.report,
        }


def kfold_evaluate(dataset: Sequence[GraphSample], cfg: TrainConfig) -> KFoldResult:
    labels = [s.label for s in dataset]
    folds, stratified = stratified_folds(labels, cfg.folds, cfg.seed)
    if not stratified:
        warnings.warn(str(TooFewSamplesPerClass(f"a class has fewer than {cfg.folds} samples; unstratified folds")))
    confs = []
    for f, test_idx in enumerate(folds):
        test_set = set(test_idx.tolist())
        train_set = [s for i, s in enumerate(dataset) if i not in test_set]
        fold_cfg = TrainConfig(**{**asdict(cfg), "seed": derive_seed(cfg.seed, "fold", f)})
        res = train(train_set, fold_cfg)
        tests = [dataset[i] for i in test_idx]
        pred = predict(tests, res.params)
        confs.append(ConfusionMatrix.from_predictions([s.label for s in tests], pred, N_CLASSES))
    total = confs[0]
    for c in confs[1:]:
        total = total + c
    return KFoldResult(confs, total, stratified, metrics_report(total))


def synth_motif_dataset(
    n_per_class: int = 40, n_nodes: int = 10, seed: int = 0, motif_weight: float = 3.0,
    background_density: float = 0.2, noise_sd: float = 0.5,
) -> list[GraphSample]:
    """Six-class graph dataset; each class plants its own three-edge motif.

    Every graph has sparse random background edges; class ``c`` adds strong
    edges on a class-specific node triple. Motifs are pairwise distinct edge sets.
    """
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n_nodes, 1)
    n_pairs = len(iu[0])
    motifs = class_motifs(n_nodes)
    names = tuple(f"ch{i}" for i in range(n_nodes))
    out = []
    for c in range(N_CLASSES):
        for _ in range(n_per_class):
            w = np.zeros((n_nodes, n_nodes))
            vals = np.abs(rng.normal(0.0, 1.0, n_pairs)) * (rng.random(n_pairs) < background_density)
            w[iu] = vals
            for u, v in motifs[c]:
                w[min(u, v), max(u, v)] = motif_weight + abs(rng.normal(0.0, noise_sd))
            w = w + w.T
            out.append(GraphSample(ConnectivityMatrix(names, w, method="synthetic"), None, c))
    return out


def class_motifs(n_nodes: int) -> list[list[tuple[int, int]]]:
    if n_nodes < 6:
        raise ValueError("motif dataset needs at least 6 nodes")
    motifs = []
    for c in range(N_CLASSES):
        a, b, d = c % n_nodes, (c + 1) % n_nodes, (c + 3) % n_nodes
        motifs.append([(a, b), (b, d), (a, d)])
    return motifs
