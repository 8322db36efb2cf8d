"""Base classifiers and their training machinery.

Three classifier kinds: ``label`` (repeats stored label rows, no parameters),
``lr`` (multinomial logistic regression) and ``mlp`` (two dense layers with a
64-unit ReLU hidden layer and dropout). Gradients are hand-derived; training
uses full-batch Adam with validation-loss early stopping, or decentralized
pairwise gossip averaging.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .graph import NodeData, Splits

KINDS = ("label", "lr", "mlp")
HIDDEN_UNITS = 64

_KIND_CODES = {"label": 0, "lr": 1, "mlp": 2}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


@dataclass
class TrainConfig:
    max_epochs: int = 3000
    patience: int = 100
    dropout: float = 0.5
    l2: float = 0.0005
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.patience < self.max_epochs:
            raise ValueError("patience must lie in (0, max_epochs)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class ClassifierParams:
    """Weights of one classifier instance; ``label`` carries none."""

    kind: str
    n_features: int
    n_classes: int
    weights: list  # lr: [W (C,F), b (C,)]; mlp: [W1 (H,F), b1 (H,), W2 (C,H), b2 (C,)]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown classifier kind {self.kind!r}")
        for w in self.weights:
            if not np.all(np.isfinite(w)):
                raise ValueError("classifier weights must be finite")
        expected = _layer_shapes(self.kind, self.n_features, self.n_classes)
        got = [w.shape for w in self.weights]
        if got != expected:
            raise ValueError(f"{self.kind} weights have shapes {got}, expected {expected}")

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(
            self.kind, self.n_features, self.n_classes, [w.copy() for w in self.weights]
        )


def _layer_shapes(kind, n_features, n_classes):
    if kind == "label":
        return []
    if kind == "lr":
        return [(n_classes, n_features), (n_classes,)]
    return [
        (HIDDEN_UNITS, n_features),
        (HIDDEN_UNITS,),
        (n_classes, HIDDEN_UNITS),
        (n_classes,),
    ]


def init_params(kind, n_features, n_classes, rng) -> ClassifierParams:
    """Glorot-uniform weight matrices, zero biases."""
    rng = np.random.default_rng(rng)
    weights = []
    for shape in _layer_shapes(kind, n_features, n_classes):
        if len(shape) == 1:
            weights.append(np.zeros(shape))
        else:
            fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=shape))
    return ClassifierParams(kind, n_features, n_classes, weights)


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _forward_batch(params, x, training=False, rng=None, dropout=0.5):
    """Probabilities plus the intermediates backprop needs."""
    if params.kind == "lr":
        w, b = params.weights
        logits = x @ w.T + b
        cache = {"x": x}
    elif params.kind == "mlp":
        w1, b1, w2, b2 = params.weights
        pre = x @ w1.T + b1
        hidden = np.maximum(0.0, pre)
        if training and dropout > 0.0:
            if rng is None:
                raise ValueError("dropout needs an rng in training mode")
            mask = (rng.random(hidden.shape) >= dropout) / (1.0 - dropout)
            hidden = hidden * mask
        else:
            mask = None
        logits = hidden @ w2.T + b2
        cache = {"x": x, "pre": pre, "hidden": hidden, "mask": mask}
    else:
        raise ValueError("the label classifier has no forward pass; the caller owns label rows")
    logp = _log_softmax(logits)
    cache["probs"] = np.exp(logp)
    cache["logp"] = logp
    return cache


def forward(params: ClassifierParams, x, training_mode=False, rng=None, dropout=0.5) -> np.ndarray:
    """Class probability vector for one feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != params.n_features:
        raise ValueError(f"expected a feature vector of length {params.n_features}")
    return _forward_batch(params, x[None, :], training_mode, rng, dropout)["probs"][0]


def forward_all(params: ClassifierParams, features) -> np.ndarray:
    """Evaluation-mode probabilities for every feature row."""
    features = np.asarray(features, dtype=np.float64)
    return _forward_batch(params, features, training=False)["probs"]


def loss_and_grad(params: ClassifierParams, batch_x, batch_y, cfg: TrainConfig, rng=None):
    """Mean cross-entropy plus L2 weight penalty, with hand-derived gradients.

    Dropout (MLP hidden layer only) is applied with a mask drawn once from
    ``rng``; pass a config with ``dropout=0`` to disable it.
    """
    x = np.atleast_2d(np.asarray(batch_x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(batch_y, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    if x.shape[0] != y.shape[0]:
        raise ValueError("batch features and labels must align")
    n = x.shape[0]
    cache = _forward_batch(params, x, training=True, rng=rng, dropout=cfg.dropout)
    probs, logp = cache["probs"], cache["logp"]
    data_loss = -float(np.sum(y * logp)) / n
    weight_mats = [w for w in params.weights if w.ndim == 2]
    loss = data_loss + cfg.l2 * sum(float(np.sum(w * w)) for w in weight_mats)

    dlogits = (probs - y) / n
    if params.kind == "lr":
        w, _ = params.weights
        grads = [dlogits.T @ x + 2.0 * cfg.l2 * w, dlogits.sum(axis=0)]
    else:
        w1, _, w2, _ = params.weights
        g_w2 = dlogits.T @ cache["hidden"] + 2.0 * cfg.l2 * w2
        g_b2 = dlogits.sum(axis=0)
        dhidden = dlogits @ w2
        if cache["mask"] is not None:
            dhidden = dhidden * cache["mask"]
        dpre = dhidden * (cache["pre"] > 0.0)
        g_w1 = dpre.T @ x + 2.0 * cfg.l2 * w1
        g_b1 = dpre.sum(axis=0)
        grads = [g_w1, g_b1, g_w2, g_b2]
    return loss, grads


def evaluation_loss(params: ClassifierParams, x, y) -> float:
    """Plain mean cross-entropy, no dropout and no L2 term (early-stopping signal)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    logp = _forward_batch(params, x, training=False)["logp"]
    return -float(np.sum(y * logp)) / x.shape[0]


@dataclass
class AdamState:
    """First/second moment accumulators mirroring the parameter shapes."""

    step: int
    m: list
    v: list
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: ClassifierParams, lr: float = 0.01) -> AdamState:
    return AdamState(
        step=0,
        m=[np.zeros_like(w) for w in params.weights],
        v=[np.zeros_like(w) for w in params.weights],
        lr=lr,
    )


def adam_step(params: ClassifierParams, grads, state: AdamState):
    """One bias-corrected Adam update; returns (new params, new state)."""
    if len(grads) != len(params.weights):
        raise ValueError("gradient list does not match parameter list")
    t = state.step + 1
    new_w, new_m, new_v = [], [], []
    for w, g, m, v in zip(params.weights, grads, state.m, state.v):
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} does not match weight shape {w.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        new_w.append(w - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return (
        ClassifierParams(params.kind, params.n_features, params.n_classes, new_w),
        AdamState(t, new_m, new_v, state.lr, state.beta1, state.beta2, state.eps),
    )


def pretrain(
    data: NodeData,
    splits: Splits,
    kind: str,
    cfg: TrainConfig = TrainConfig(),
    lr: float = 0.01,
    on_epoch=None,
) -> ClassifierParams:
    """Full-batch training on the train split with validation early stopping.

    Keeps the parameter snapshot with the lowest validation cross-entropy
    (evaluated after every epoch, dropout off, no L2 term) and stops once it
    has not improved for ``cfg.patience`` epochs. Deterministic per seed.
    ``on_epoch(epoch, train_loss, valid_loss)`` is invoked per epoch when given.
    """
    if kind == "label":
        raise ValueError("the label classifier has no trainable parameters")
    if not splits.train:
        raise ValueError("pretraining needs a nonempty train split")
    train_idx = np.fromiter(sorted(splits.train), dtype=np.int64)
    valid_idx = np.fromiter(sorted(splits.valid), dtype=np.int64)
    x_train, y_train = data.features[train_idx], data.labels[train_idx]
    # Without validation nodes, fall back to the training loss as the signal.
    x_valid = data.features[valid_idx] if len(valid_idx) else x_train
    y_valid = data.labels[valid_idx] if len(valid_idx) else y_train

    rng = np.random.default_rng(cfg.rng_seed)
    params = init_params(kind, data.n_features, data.n_classes, rng)
    state = init_adam(params, lr=lr)

    best_loss = evaluation_loss(params, x_valid, y_valid)
    best_params = params.copy()
    since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        train_loss, grads = loss_and_grad(params, x_train, y_train, cfg, rng)
        params, state = adam_step(params, grads, state)
        valid_loss = evaluation_loss(params, x_valid, y_valid)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, valid_loss)
        if valid_loss < best_loss:
            best_loss = valid_loss
            best_params = params.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    return best_params


@dataclass
class LocalModel:
    """One device's trainable state for gossip averaging."""

    params: ClassifierParams
    opt: AdamState
    x: np.ndarray
    y: np.ndarray = None  # None when the device holds no label
    cfg: TrainConfig = field(default_factory=TrainConfig)
    rng: np.random.Generator = None

    @property
    def labeled(self) -> bool:
        return self.y is not None


def gossip_pair_update(dev_u: LocalModel, dev_v: LocalModel):
    """Local gradient steps (labeled sides only) followed by parameter averaging.

    Each labeled device takes one Adam step on its single local sample, then
    both parameter sets are replaced by their elementwise mean. Optimizer
    moments stay per-device.
    """
    if dev_u.params.kind != dev_v.params.kind:
        raise ValueError("gossip peers must run the same classifier kind")
    if [w.shape for w in dev_u.params.weights] != [w.shape for w in dev_v.params.weights]:
        raise ValueError("gossip peers must have identical parameter shapes")
    if dev_u.params.kind == "label":
        raise ValueError("the label classifier has nothing to train or average")

    updated = []
    for dev in (dev_u, dev_v):
        params, opt = dev.params, dev.opt
        if dev.labeled:
            _, grads = loss_and_grad(params, dev.x[None, :], dev.y[None, :], dev.cfg, dev.rng)
            params, opt = adam_step(params, grads, opt)
        updated.append((params, opt))

    mean_weights = [
        (wu + wv) / 2.0 for wu, wv in zip(updated[0][0].weights, updated[1][0].weights)
    ]
    out = []
    for dev, (_, opt) in zip((dev_u, dev_v), updated):
        shared = ClassifierParams(
            dev.params.kind, dev.params.n_features, dev.params.n_classes,
            [w.copy() for w in mean_weights],
        )
        out.append(LocalModel(shared, opt, dev.x, dev.y, dev.cfg, dev.rng))
    return out[0], out[1]


def serialize_params(params: ClassifierParams) -> bytes:
    """Flat binary form: little-endian u32 header (kind, F, C, array count,
    then per-array ndim and dims) followed by row-major f64 weights."""
    head = [
        _KIND_CODES[params.kind],
        params.n_features,
        params.n_classes,
        len(params.weights),
    ]
    for w in params.weights:
        head.append(w.ndim)
        head.extend(w.shape)
    blob = struct.pack(f"<{len(head)}I", *head)
    for w in params.weights:
        blob += np.ascontiguousarray(w, dtype="<f8").tobytes()
    return blob


def deserialize_params(blob: bytes) -> ClassifierParams:
    def take(n, fmt="I"):
        nonlocal off
        size = struct.calcsize(f"<{n}{fmt}")
        if off + size > len(blob):
            raise ValueError("truncated parameter blob")
        vals = struct.unpack_from(f"<{n}{fmt}", blob, off)
        off += size
        return vals

    off = 0
    kind_code, n_features, n_classes, n_arrays = take(4)
    if kind_code not in _CODE_KINDS:
        raise ValueError(f"unknown classifier kind code {kind_code}")
    shapes = []
    for _ in range(n_arrays):
        (ndim,) = take(1)
        shapes.append(take(ndim))
    weights = []
    for shape in shapes:
        count = int(np.prod(shape)) if shape else 1
        vals = take(count, "d")
        weights.append(np.array(vals, dtype=np.float64).reshape(shape))
    if off != len(blob):
        raise ValueError("trailing bytes after parameter blob")
    return ClassifierParams(_CODE_KINDS[kind_code], n_features, n_classes, weights)


def save_params(params: ClassifierParams, path):
    with open(path, "wb") as fh:
        fh.write(serialize_params(params))


def load_params(path) -> ClassifierParams:
    with open(path, "rb") as fh:
        return deserialize_params(fh.read())


def params_nbytes(params: ClassifierParams) -> int:
    """Serialized size in bytes (the per-exchange gossip payload)."""
    return len(serialize_params(params))
