"""Desk-scale classifiers: linear and one-hidden-layer softmax models with
exact cross-entropy gradients, low-rank adapters, and an AdamW trainer.

Every model exposes the same flat-parameter protocol (trainable_arrays /
to_theta / load_theta) so the zeroth-order machinery in zo.py and the
first-order trainer here see identical parameter layouts.  LoRA variants
freeze the base model and train only the adapter factors; their forward pass
uses the additive form  base_logits + scale * (x A^T) B^T  so that a
zero-initialized up-projection reproduces the base logits bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .trace import TraceRecord, TrainingTrace

__all__ = [
    "LinearClassifier",
    "MLPClassifier",
    "LoRAAdapter",
    "LoRALinear",
    "LoRAMLP",
    "FOConfig",
    "attach_lora",
    "forward_loss",
    "analytic_gradient",
    "theta_evaluator",
    "predict",
    "predict_accuracy",
    "train_fo",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1


def _as_param(x, shape=None) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if shape is not None and a.shape != shape:
        raise ValueError(f"expected shape {shape}, got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("parameters must be finite")
    return a


class _FlatParams:
    """Flat view over the trainable arrays, in declaration order."""

    def trainable_arrays(self) -> list[np.ndarray]:
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.trainable_arrays())

    def to_theta(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.trainable_arrays()])

    def load_theta(self, theta) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(
                f"theta has shape {theta.shape}, model takes ({self.n_params},)"
            )
        offset = 0
        for a in self.trainable_arrays():
            np.copyto(a, theta[offset : offset + a.size].reshape(a.shape))
            offset += a.size


@dataclass
class LinearClassifier(_FlatParams):
    weights: np.ndarray  # C x d
    bias: np.ndarray  # C

    def __post_init__(self):
        self.weights = _as_param(self.weights)
        if self.weights.ndim != 2 or self.weights.shape[0] < 2:
            raise ValueError("weights must be C x d with C >= 2")
        self.bias = _as_param(self.bias, (self.weights.shape[0],))

    @classmethod
    def init(cls, n_classes: int, n_features: int, seed: int = 0) -> "LinearClassifier":
        rng = np.random.default_rng(seed)
        w = rng.normal(0.0, 1.0 / np.sqrt(n_features), size=(n_classes, n_features))
        return cls(weights=w, bias=np.zeros(n_classes))

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def logits(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights.T + self.bias

    def trainable_arrays(self):
        return [self.weights, self.bias]


@dataclass
class MLPClassifier(_FlatParams):
    hidden_weights: np.ndarray  # h x d
    hidden_bias: np.ndarray  # h
    output_weights: np.ndarray  # C x h
    output_bias: np.ndarray  # C

    def __post_init__(self):
        self.hidden_weights = _as_param(self.hidden_weights)
        if self.hidden_weights.ndim != 2 or self.hidden_weights.shape[0] < 1:
            raise ValueError("hidden_weights must be h x d with h >= 1")
        h, _ = self.hidden_weights.shape
        self.hidden_bias = _as_param(self.hidden_bias, (h,))
        self.output_weights = _as_param(self.output_weights)
        if self.output_weights.ndim != 2 or self.output_weights.shape != (
            self.output_weights.shape[0],
            h,
        ) or self.output_weights.shape[0] < 2:
            raise ValueError("output_weights must be C x h with C >= 2")
        self.output_bias = _as_param(self.output_bias, (self.output_weights.shape[0],))

    @classmethod
    def init(
        cls, n_classes: int, n_features: int, hidden: int, seed: int = 0
    ) -> "MLPClassifier":
        rng = np.random.default_rng(seed)
        w1 = rng.normal(0.0, 1.0 / np.sqrt(n_features), size=(hidden, n_features))
        w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(n_classes, hidden))
        return cls(
            hidden_weights=w1,
            hidden_bias=np.zeros(hidden),
            output_weights=w2,
            output_bias=np.zeros(n_classes),
        )

    @property
    def n_classes(self) -> int:
        return self.output_weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.hidden_weights.shape[1]

    def pre_activations(self, X: np.ndarray) -> np.ndarray:
        return X @ self.hidden_weights.T + self.hidden_bias

    def logits(self, X: np.ndarray) -> np.ndarray:
        h = np.maximum(self.pre_activations(X), 0.0)
        return h @ self.output_weights.T + self.output_bias

    def trainable_arrays(self):
        return [
            self.hidden_weights,
            self.hidden_bias,
            self.output_weights,
            self.output_bias,
        ]


@dataclass
class LoRAAdapter:
    """Low-rank delta over a frozen weight matrix: effective = base + scale * up @ down."""

    base: np.ndarray  # frozen, out_dim x in_dim
    down: np.ndarray  # A, rank x in_dim
    up: np.ndarray  # B, out_dim x rank
    rank: int
    scale: float  # alpha / rank

    def __post_init__(self):
        self.base = _as_param(self.base)
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        out_dim, in_dim = self.base.shape
        self.down = _as_param(self.down, (self.rank, in_dim))
        self.up = _as_param(self.up, (out_dim, self.rank))

    @classmethod
    def init(cls, base: np.ndarray, rank: int, alpha: float, rng) -> "LoRAAdapter":
        out_dim, in_dim = base.shape
        down = rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(rank, in_dim))
        # up starts at zero so the adapter is exactly the identity delta
        return cls(
            base=base,
            down=down,
            up=np.zeros((out_dim, rank)),
            rank=rank,
            scale=alpha / rank,
        )

    def effective_weight(self) -> np.ndarray:
        return self.base + self.scale * (self.up @ self.down)

    def delta(self, X: np.ndarray) -> np.ndarray:
        return self.scale * ((X @ self.down.T) @ self.up.T)


@dataclass
class LoRALinear(_FlatParams):
    base: LinearClassifier
    adapter: LoRAAdapter  # wraps base.weights

    @property
    def n_classes(self) -> int:
        return self.base.n_classes

    @property
    def n_features(self) -> int:
        return self.base.n_features

    def logits(self, X: np.ndarray) -> np.ndarray:
        return self.base.logits(X) + self.adapter.delta(X)

    def trainable_arrays(self):
        return [self.adapter.down, self.adapter.up]


@dataclass
class LoRAMLP(_FlatParams):
    base: MLPClassifier
    hidden_adapter: LoRAAdapter  # wraps base.hidden_weights
    output_adapter: LoRAAdapter  # wraps base.output_weights

    @property
    def n_classes(self) -> int:
        return self.base.n_classes

    @property
    def n_features(self) -> int:
        return self.base.n_features

    def pre_activations(self, X: np.ndarray) -> np.ndarray:
        return self.base.pre_activations(X) + self.hidden_adapter.delta(X)

    def logits(self, X: np.ndarray) -> np.ndarray:
        h = np.maximum(self.pre_activations(X), 0.0)
        return (
            h @ self.base.output_weights.T
            + self.base.output_bias
            + self.output_adapter.delta(h)
        )

    def trainable_arrays(self):
        return [
            self.hidden_adapter.down,
            self.hidden_adapter.up,
            self.output_adapter.down,
            self.output_adapter.up,
        ]


def attach_lora(model, rank: int, alpha: float | None = None, seed: int = 0):
    """Wrap a trained-or-initial model with rank-r adapters; base is frozen.

    Default alpha = rank, i.e. scale 1. The linear model gets one adapter on
    its output projection; the MLP gets one per weight matrix.
    """
    if alpha is None:
        alpha = float(rank)
    rng = np.random.default_rng(seed)
    if isinstance(model, LinearClassifier):
        return LoRALinear(base=model, adapter=LoRAAdapter.init(model.weights, rank, alpha, rng))
    if isinstance(model, MLPClassifier):
        return LoRAMLP(
            base=model,
            hidden_adapter=LoRAAdapter.init(model.hidden_weights, rank, alpha, rng),
            output_adapter=LoRAAdapter.init(model.output_weights, rank, alpha, rng),
        )
    raise TypeError(f"cannot attach adapters to {type(model).__name__}")


@dataclass(frozen=True)
class FOConfig:
    learning_rate: float
    steps: int
    batch_size: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    master_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size <= 0:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


def _check_batch(model, batch) -> tuple[np.ndarray, np.ndarray]:
    X, y = batch
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("batch features must be a nonempty 2-D array")
    if X.shape[1] != model.n_features:
        raise ValueError(
            f"feature dimension {X.shape[1]} does not match model ({model.n_features})"
        )
    if y.shape != (X.shape[0],):
        raise ValueError("labels must be one per row")
    y = y.astype(np.intp)
    if y.min() < 0 or y.max() >= model.n_classes:
        raise ValueError("label outside the model's class range")
    return X, y


def _log_softmax(Z: np.ndarray) -> np.ndarray:
    shifted = Z - Z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward_loss(model, batch) -> float:
    """Mean cross-entropy of the model's logits over the batch."""
    X, y = _check_batch(model, batch)
    logp = _log_softmax(model.logits(X))
    return float(-logp[np.arange(y.shape[0]), y].mean())


def _loss_grad_common(model, X, y):
    """Residual matrix G = (softmax(Z) - onehot(y)) / batch, plus the loss."""
    Z = model.logits(X)
    logp = _log_softmax(Z)
    n = y.shape[0]
    loss = float(-logp[np.arange(n), y].mean())
    G = np.exp(logp)
    G[np.arange(n), y] -= 1.0
    G /= n
    return loss, G


def _gradient_arrays(model, X, y) -> tuple[float, list[np.ndarray]]:
    loss, G = _loss_grad_common(model, X, y)
    if isinstance(model, LinearClassifier):
        return loss, [G.T @ X, G.sum(axis=0)]
    if isinstance(model, MLPClassifier):
        pre = model.pre_activations(X)
        h = np.maximum(pre, 0.0)
        d_h = G @ model.output_weights
        d_pre = d_h * (pre > 0.0)
        return loss, [d_pre.T @ X, d_pre.sum(axis=0), G.T @ h, G.sum(axis=0)]
    if isinstance(model, LoRALinear):
        a = model.adapter
        GtX = G.T @ X  # C x d
        return loss, [a.scale * (a.up.T @ GtX), a.scale * (GtX @ a.down.T)]
    if isinstance(model, LoRAMLP):
        ha, oa = model.hidden_adapter, model.output_adapter
        pre = model.pre_activations(X)
        h = np.maximum(pre, 0.0)
        Gth = G.T @ h  # C x h
        d_h = G @ oa.effective_weight()
        d_pre = d_h * (pre > 0.0)  # n x h
        DtX = d_pre.T @ X  # h x d
        return loss, [
            ha.scale * (ha.up.T @ DtX),
            ha.scale * (DtX @ ha.down.T),
            oa.scale * (oa.up.T @ Gth),
            oa.scale * (Gth @ oa.down.T),
        ]
    raise TypeError(f"no gradient rule for {type(model).__name__}")


def analytic_gradient(model, batch) -> np.ndarray:
    """Exact gradient of forward_loss w.r.t. the trainable parameters, flat.

    For LoRA models the vector covers only the adapter factors; the frozen
    base contributes no entries.
    """
    X, y = _check_batch(model, batch)
    _, grads = _gradient_arrays(model, X, y)
    return np.concatenate([g.ravel() for g in grads])


def theta_evaluator(model) -> Callable:
    """LossEvaluator over the model's flat trainable parameters.

    Loading theta overwrites the model's arrays in place (no n-sized
    allocation), so one model instance services an entire ZO run.
    """

    def evaluate(theta, batch):
        model.load_theta(theta)
        return forward_loss(model, batch)

    return evaluate


def predict(model, X: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    X = np.asarray(X, dtype=np.float64)
    return np.argmax(model.logits(X), axis=1)


def predict_accuracy(model, split) -> float:
    X, y = split
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise ValueError("split is empty")
    return float(np.mean(predict(model, X) == y))


def _check_mode(model, mode: str) -> None:
    is_lora = isinstance(model, (LoRALinear, LoRAMLP))
    if mode == "lora" and not is_lora:
        raise ValueError("mode='lora' requires a LoRA model (see attach_lora)")
    if mode == "full" and is_lora:
        raise ValueError("mode='full' would train adapters only; pass mode='lora'")
    if mode not in ("full", "lora"):
        raise ValueError(f"mode must be 'full' or 'lora', got {mode!r}")


def train_fo(
    model,
    data,
    config: FOConfig,
    mode: str = "full",
    eval_hook: Callable | None = None,
    eval_every: int = 100,
) -> TrainingTrace:
    """AdamW (decoupled weight decay) over the model's trainable arrays.

    Minibatch order is drawn from master_seed exactly as in train_zo, so an
    FO and a ZO run with the same seed and train-split size consume the same
    batch sequence. Deterministic: same config and data give identical traces.
    """
    _check_mode(model, mode)
    train_x = np.asarray(data.train_x, dtype=np.float64)
    train_y = np.asarray(data.train_y)
    n_train = train_x.shape[0]
    if n_train == 0:
        raise ValueError("train split is empty")
    if eval_every <= 0:
        raise ValueError(f"eval_every must be positive, got {eval_every}")

    params = model.trainable_arrays()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    batch_rng = np.random.default_rng(config.master_seed)
    batch_size = min(config.batch_size, n_train)
    lr, b1, b2 = config.learning_rate, config.beta1, config.beta2

    records = []
    for step in range(config.steps):
        idx = batch_rng.choice(n_train, size=batch_size, replace=False)
        X, y = _check_batch(model, (train_x[idx], train_y[idx]))
        loss, grads = _gradient_arrays(model, X, y)
        t = step + 1
        for p, g, mi, vi in zip(params, grads, m, v):
            mi *= b1
            mi += (1.0 - b1) * g
            vi *= b2
            vi += (1.0 - b2) * g * g
            m_hat = mi / (1.0 - b1**t)
            v_hat = vi / (1.0 - b2**t)
            if config.weight_decay:
                p *= 1.0 - lr * config.weight_decay
            p -= lr * (m_hat / (np.sqrt(v_hat) + config.eps))
        dev_acc = None
        if eval_hook is not None and (step + 1) % eval_every == 0:
            dev_acc = float(eval_hook(model))
        records.append(TraceRecord(step=step, loss=loss, dev_accuracy=dev_acc))
    return TrainingTrace(records=tuple(records))


_KIND_FIELDS = {
    "linear": ("weights", "bias"),
    "mlp": ("hidden_weights", "hidden_bias", "output_weights", "output_bias"),
}


def _model_kind(model) -> str:
    if isinstance(model, LinearClassifier):
        return "linear"
    if isinstance(model, MLPClassifier):
        return "mlp"
    if isinstance(model, LoRALinear):
        return "lora_linear"
    if isinstance(model, LoRAMLP):
        return "lora_mlp"
    raise TypeError(f"unknown model type {type(model).__name__}")


def save_checkpoint(model, path) -> None:
    """Flat npz checkpoint: named parameter arrays plus a JSON meta record
    (format version, model kind, adapter ranks and scales)."""
    kind = _model_kind(model)
    meta = {"format_version": CHECKPOINT_VERSION, "kind": kind}
    arrays = {}
    if kind in _KIND_FIELDS:
        for name in _KIND_FIELDS[kind]:
            arrays[name] = getattr(model, name)
    elif kind == "lora_linear":
        for name in _KIND_FIELDS["linear"]:
            arrays["base." + name] = getattr(model.base, name)
        arrays["adapter.down"] = model.adapter.down
        arrays["adapter.up"] = model.adapter.up
        meta["rank"] = model.adapter.rank
        meta["scale"] = model.adapter.scale
    else:
        for name in _KIND_FIELDS["mlp"]:
            arrays["base." + name] = getattr(model.base, name)
        for prefix, ad in (("hidden", model.hidden_adapter), ("output", model.output_adapter)):
            arrays[f"{prefix}.down"] = ad.down
            arrays[f"{prefix}.up"] = ad.up
            meta[f"{prefix}_rank"] = ad.rank
            meta[f"{prefix}_scale"] = ad.scale
    np.savez(path, __meta__=json.dumps(meta, sort_keys=True), **arrays)


def load_checkpoint(path):
    with np.load(path) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {meta.get('format_version')}")
        kind = meta["kind"]
        if kind == "linear":
            return LinearClassifier(weights=data["weights"], bias=data["bias"])
        if kind == "mlp":
            return MLPClassifier(**{n: data[n] for n in _KIND_FIELDS["mlp"]})
        if kind == "lora_linear":
            base = LinearClassifier(weights=data["base.weights"], bias=data["base.bias"])
            adapter = LoRAAdapter(
                base=base.weights,
                down=data["adapter.down"],
                up=data["adapter.up"],
                rank=int(meta["rank"]),
                scale=float(meta["scale"]),
            )
            return LoRALinear(base=base, adapter=adapter)
        if kind == "lora_mlp":
            base = MLPClassifier(**{n: data["base." + n] for n in _KIND_FIELDS["mlp"]})
            hidden = LoRAAdapter(
                base=base.hidden_weights,
                down=data["hidden.down"],
                up=data["hidden.up"],
                rank=int(meta["hidden_rank"]),
                scale=float(meta["hidden_scale"]),
            )
            output = LoRAAdapter(
                base=base.output_weights,
                down=data["output.down"],
                up=data["output.up"],
                rank=int(meta["output_rank"]),
                scale=float(meta["output_scale"]),
            )
            return LoRAMLP(base=base, hidden_adapter=hidden, output_adapter=output)
        raise ValueError(f"unknown checkpoint kind: {kind!r}")
