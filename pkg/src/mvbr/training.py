"""Training loop: BCE loss, SGD/Adam, epoch cap 300, early stopping.

``fit`` shuffles the train split each epoch with a dedicated RNG stream
(independent of parameter init), runs mini-batch updates, evaluates the
monitored metric on the validation split after every epoch, and stops once
``patience`` epochs pass without an improvement of at least 1e-6. The
parameters returned (and restored into the model) are those of the best
epoch, not the last.

Run configuration files are flat ``key=value`` text (one pair per line,
``#`` comments) with exactly the keys: optimizer, learning_rate, max_epochs,
patience, batch_size, seed, monitor, dataset_path, modalities, output_dir.
Epoch reports stream to ``history.jsonl`` as one JSON object per line.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import metrics
from .dataset import split_arrays
from .errors import NumericError, ValidationError

__all__ = [
    "TrainConfig",
    "AdamState",
    "EarlyStopping",
    "EpochReport",
    "sgd_step",
    "adam_step",
    "make_optimizer",
    "fit",
    "evaluate",
    "parse_kv_file",
    "parse_run_config",
    "RUN_CONFIG_KEYS",
]

DEFAULT_LEARNING_RATE = {"sgd": 0.01, "adam": 0.001}
IMPROVEMENT_DELTA = 1e-6
_SHUFFLE_STREAM = 0x53485546  # distinct entropy word for the shuffle RNG


@dataclass
class TrainConfig:
    optimizer: str = "sgd"
    learning_rate: float = None
    max_epochs: int = 300
    patience: int = 10
    batch_size: int = 32
    seed: int = 0
    monitor: str = "val_map"

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.monitor not in ("val_map", "val_loss"):
            raise ValidationError(
                f"monitor must be val_map or val_loss, got {self.monitor!r}"
            )
        if self.learning_rate is None:
            self.learning_rate = DEFAULT_LEARNING_RATE[self.optimizer]
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")


def sgd_step(params, grads, lr):
    """Plain gradient descent, no momentum: theta <- theta - lr * g."""
    for p, g in zip(params, grads):
        p.value -= lr * g


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kwargs):
        state = cls(**kwargs)
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
        return state


def adam_step(params, grads, state, lr):
    """Standard Adam update with bias correction."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / (1.0 - b1**state.t)
        v_hat = state.v[i] / (1.0 - b2**state.t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params):
        sgd_step(params, [p.grad for p in params], self.lr)


class _Adam:
    def __init__(self, lr):
        self.lr = lr
        self.state = None

    def step(self, params):
        if self.state is None:
            self.state = AdamState.for_params(params)
        adam_step(params, [p.grad for p in params], self.state, self.lr)


def make_optimizer(config):
    return _Sgd(config.learning_rate) if config.optimizer == "sgd" else _Adam(config.learning_rate)


class EarlyStopping:
    """Stop after `patience` epochs without improvement >= IMPROVEMENT_DELTA."""

    def __init__(self, patience, mode="max"):
        if mode not in ("max", "min"):
            raise ValidationError(f"mode must be max or min, got {mode!r}")
        self.patience = patience
        self.mode = mode
        self.best_metric = None
        self.best_epoch = None
        self.epochs_since_improvement = 0
        self.best_snapshot = None

    def _improved(self, metric):
        if self.best_metric is None:
            return True
        if self.mode == "max":
            return metric >= self.best_metric + IMPROVEMENT_DELTA
        return metric <= self.best_metric - IMPROVEMENT_DELTA

    def update(self, metric, epoch, snapshot_fn):
        """Record one epoch; returns True when training should stop."""
        if self._improved(metric):
            self.best_metric = metric
            self.best_epoch = epoch
            self.epochs_since_improvement = 0
            self.best_snapshot = snapshot_fn()
        else:
            self.epochs_since_improvement += 1
        return self.epochs_since_improvement >= self.patience


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    val_loss: float
    val_map: float
    per_class_ap: list  # float or None per class
    attention: dict  # modality -> [alpha_0, alpha_1, alpha_2]

    def to_json(self):
        payload = {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_map": self.val_map,
            "per_class_ap": self.per_class_ap,
            "attention": {m: list(a) for m, a in sorted(self.attention.items())},
        }
        return json.dumps(payload, sort_keys=True)


def _evaluate_arrays(model, features, labels):
    probs, _ = model.evaluate_batch(features)
    loss = ad.bce_value(probs, labels)
    result = metrics.mean_average_precision(probs, labels)
    return loss, result


def evaluate(model, records):
    """Loss, per-class AP, and mean AP over a record list; no mutation."""
    if not records:
        raise ValidationError("evaluate requires at least one record")
    features = {
        m: np.stack([np.asarray(r.features[m], dtype=np.float64) for r in records])
        for m in model.modalities
    }
    labels = np.stack([np.asarray(r.labels, dtype=np.float64) for r in records])
    loss, result = _evaluate_arrays(model, features, labels)
    return loss, result.per_class, result.mean_ap


def fit(model, records, config, history_path=None, monitor_fn=None):
    """Train on the records' train split, early-stop on the val split.

    Returns ``(best_params, reports)`` where best_params maps parameter name
    to the best epoch's value (also restored into the model). ``monitor_fn``
    is a test seam: when given, it is called with each EpochReport and its
    return value replaces the configured monitor metric (maximized).
    """
    train_feats, train_labels = split_arrays(records, "train", model.modalities)
    val_feats, val_labels = split_arrays(records, "val", model.modalities)
    named = model.named_parameters()
    trainable = [p for _, p in named if p.requires_grad]
    if not trainable:
        raise ValidationError("model has no trainable parameters")
    optimizer = make_optimizer(config)
    shuffle_rng = np.random.default_rng([config.seed, _SHUFFLE_STREAM])
    mode = "min" if (monitor_fn is None and config.monitor == "val_loss") else "max"
    stopper = EarlyStopping(config.patience, mode=mode)
    n_train = train_labels.shape[0]
    reports = []

    def snapshot():
        return {name: p.value.copy() for name, p in named}

    history = open(history_path, "w") if history_path is not None else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            order = shuffle_rng.permutation(n_train)
            loss_sum = 0.0
            for batch_index, start in enumerate(range(0, n_train, config.batch_size)):
                idx = order[start : start + config.batch_size]
                batch = {m: a[idx] for m, a in train_feats.items()}
                probs, _ = model.forward_batch(batch)
                loss = ad.bce_loss(probs, train_labels[idx])
                value = float(loss.value)
                if not math.isfinite(value):
                    raise NumericError(
                        f"non-finite training loss at epoch {epoch}, "
                        f"batch {batch_index}"
                    )
                model.tape.backward(loss)
                optimizer.step(trainable)
                for p in trainable:
                    p.zero_grad()
                model.tape.clear()
                loss_sum += value * idx.size
            val_loss, result = _evaluate_arrays(model, val_feats, val_labels)
            attention = model.attention_means(val_feats)
            report = EpochReport(
                epoch=epoch,
                train_loss=loss_sum / n_train,
                val_loss=val_loss,
                val_map=result.mean_ap,
                per_class_ap=result.per_class,
                attention={m: [float(x) for x in a] for m, a in attention.items()},
            )
            reports.append(report)
            if history is not None:
                history.write(report.to_json() + "\n")
                history.flush()
            if monitor_fn is not None:
                metric = float(monitor_fn(report))
            else:
                metric = report.val_map if config.monitor == "val_map" else report.val_loss
            if stopper.update(metric, epoch, snapshot):
                break
    finally:
        if history is not None:
            history.close()
    best = stopper.best_snapshot
    for name, p in named:
        p.value[...] = best[name]
    return best, reports


RUN_CONFIG_KEYS = (
    "optimizer",
    "learning_rate",
    "max_epochs",
    "patience",
    "batch_size",
    "seed",
    "monitor",
    "dataset_path",
    "modalities",
    "output_dir",
)


def parse_kv_file(path):
    """Flat key=value lines; ``#`` starts a comment; duplicates rejected."""
    pairs = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key or not value:
                raise ValidationError(f"{path}:{lineno}: empty key or value")
            if key in pairs:
                raise ValidationError(f"{path}:{lineno}: duplicate key {key!r}")
            pairs[key] = value
    return pairs


def parse_run_config(path):
    """Parse a training run file into (TrainConfig, dataset_path, modalities, output_dir)."""
    pairs = parse_kv_file(path)
    missing = [k for k in RUN_CONFIG_KEYS if k not in pairs]
    unknown = [k for k in pairs if k not in RUN_CONFIG_KEYS]
    if missing:
        raise ValidationError(f"run config missing keys: {', '.join(missing)}")
    if unknown:
        raise ValidationError(f"run config has unknown keys: {', '.join(sorted(unknown))}")
    try:
        config = TrainConfig(
            optimizer=pairs["optimizer"],
            learning_rate=float(pairs["learning_rate"]),
            max_epochs=int(pairs["max_epochs"]),
            patience=int(pairs["patience"]),
            batch_size=int(pairs["batch_size"]),
            seed=int(pairs["seed"]),
            monitor=pairs["monitor"],
        )
    except ValueError as exc:
        raise ValidationError(f"run config: {exc}") from exc
    modalities = tuple(m.strip() for m in pairs["modalities"].split(",") if m.strip())
    if not modalities:
        raise ValidationError("run config: modalities must name at least one modality")
    return config, pairs["dataset_path"], modalities, pairs["output_dir"]
