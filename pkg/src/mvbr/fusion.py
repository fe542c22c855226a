"""Three-view attention fusion networks and their additive combinations.

One modality network projects each of the three camera views to a 64-d
descriptor, scores the views with a softmax head over the concatenated
descriptors, layer-normalizes the descriptors, and classifies the
attention-weighted sum through a sigmoid head:

    h_v   = x_v @ W_v + b_v                      (per view, feat_dim -> hidden)
    alpha = softmax([h_0 | h_1 | h_2] @ W_att + b_att)      (one weight per view)
    z_v   = layer_norm(h_v)                       (shared affine across views)
    fused = sum_v alpha_v * z_v
    probs = sigmoid(fused @ W_cls + b_cls)

Layer normalization is applied to the projected descriptors after the
attention scores are computed from the raw (pre-norm) concatenation, and the
attention weight is a single scalar per view. The projections carry no
nonlinearity.

Bimodal fusion adds the rgb and dct fused descriptors and classifies the sum
through a fresh sigmoid head (the per-modality heads are bypassed on that
path); trimodal fusion additionally adds a dense projection of the 768-d
clip-embedding vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .checkpoint import read_checkpoint, write_checkpoint
from .errors import ShapeError, ValidationError

__all__ = [
    "FusionConfig",
    "MultiviewAttentionParams",
    "init_params",
    "glorot_uniform",
    "multiview_forward",
    "bimodal_forward",
    "trimodal_forward",
    "MultiviewModel",
    "BimodalModel",
    "TrimodalModel",
    "build_model",
    "attention_report",
    "save_model",
    "load_model",
]


@dataclass
class FusionConfig:
    feat_dim: int = 1024
    hidden: int = 64
    n_views: int = 3
    n_classes: int = 14
    lavila_dim: int = 768
    layer_norm_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        for name in ("feat_dim", "hidden", "n_views", "n_classes", "lavila_dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"FusionConfig.{name} must be positive")
        if self.layer_norm_eps <= 0:
            raise ValidationError("FusionConfig.layer_norm_eps must be positive")


def glorot_uniform(rng, shape):
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)) for 2-D weights."""
    fan_in, fan_out = shape
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class MultiviewAttentionParams:
    """Trainable weights of one modality's three-view fusion network."""

    def __init__(self, config, tape, rng):
        c = config
        self.config = c
        self.view_w = [
            tape.parameter(glorot_uniform(rng, (c.feat_dim, c.hidden)))
            for _ in range(c.n_views)
        ]
        self.view_b = [tape.parameter(np.zeros(c.hidden)) for _ in range(c.n_views)]
        self.att_w = tape.parameter(
            glorot_uniform(rng, (c.n_views * c.hidden, c.n_views))
        )
        self.att_b = tape.parameter(np.zeros(c.n_views))
        self.ln_gamma = tape.parameter(np.ones(c.hidden))
        self.ln_beta = tape.parameter(np.zeros(c.hidden))
        self.cls_w = tape.parameter(glorot_uniform(rng, (c.hidden, c.n_classes)))
        self.cls_b = tape.parameter(np.zeros(c.n_classes))

    def named(self, prefix=""):
        out = []
        for v in range(self.config.n_views):
            out.append((f"{prefix}view{v}.w", self.view_w[v]))
            out.append((f"{prefix}view{v}.b", self.view_b[v]))
        out.extend(
            [
                (f"{prefix}att.w", self.att_w),
                (f"{prefix}att.b", self.att_b),
                (f"{prefix}ln.gamma", self.ln_gamma),
                (f"{prefix}ln.beta", self.ln_beta),
                (f"{prefix}cls.w", self.cls_w),
                (f"{prefix}cls.b", self.cls_b),
            ]
        )
        return out


def init_params(config, tape, rng):
    """Glorot-uniform weights, zero biases, unit layer-norm scale."""
    return MultiviewAttentionParams(config, tape, rng)


def _check_views(params, views):
    c = params.config
    if len(views) != c.n_views:
        raise ShapeError(f"expected {c.n_views} views, got {len(views)}")
    for v in views:
        if v.value.ndim != 2 or v.value.shape[1] != c.feat_dim:
            raise ShapeError(
                f"each view must be (batch, {c.feat_dim}), got {v.value.shape}"
            )


def multiview_forward(params, views):
    """Forward one modality network over three view batches.

    ``views`` are Variables shaped (batch, feat_dim) on the params' tape.
    Returns ``(probs, alpha, fused)``: (batch, n_classes) probabilities,
    (batch, n_views) attention rows on the simplex, and the (batch, hidden)
    pre-classifier fused descriptor.
    """
    c = params.config
    _check_views(params, views)
    projected = [
        ad.dense(x, params.view_w[v], params.view_b[v]) for v, x in enumerate(views)
    ]
    alpha = ad.softmax(ad.dense(ad.concat(projected), params.att_w, params.att_b))
    normalized = [
        ad.layer_norm(h, params.ln_gamma, params.ln_beta, c.layer_norm_eps)
        for h in projected
    ]
    fused = None
    for v, z in enumerate(normalized):
        term = ad.scale_rows(z, ad.slice_cols(alpha, v, v + 1))
        fused = term if fused is None else ad.add(fused, term)
    probs = ad.sigmoid(ad.dense(fused, params.cls_w, params.cls_b))
    return probs, alpha, fused


def bimodal_forward(rgb_params, dct_params, head_w, head_b, rgb_views, dct_views):
    """Sum of the two modality descriptors through the shared sigmoid head.

    The per-modality classifier heads are not used on this path. Returns
    ``(probs, alphas)`` with alphas keyed by modality.
    """
    _, alpha_rgb, fused_rgb = multiview_forward(rgb_params, rgb_views)
    _, alpha_dct, fused_dct = multiview_forward(dct_params, dct_views)
    total = ad.add(fused_rgb, fused_dct)
    probs = ad.sigmoid(ad.dense(total, head_w, head_b))
    return probs, {"rgb": alpha_rgb, "dct": alpha_dct}


def trimodal_forward(
    rgb_params,
    dct_params,
    lavila_w,
    lavila_b,
    head_w,
    head_b,
    rgb_views,
    dct_views,
    lavila,
):
    """Bimodal sum plus a dense projection of the clip-embedding vector."""
    _, alpha_rgb, fused_rgb = multiview_forward(rgb_params, rgb_views)
    _, alpha_dct, fused_dct = multiview_forward(dct_params, dct_views)
    projected = ad.dense(lavila, lavila_w, lavila_b)
    total = ad.add(ad.add(fused_rgb, fused_dct), projected)
    probs = ad.sigmoid(ad.dense(total, head_w, head_b))
    return probs, {"rgb": alpha_rgb, "dct": alpha_dct}


_EVAL_CHUNK = 512


class _ModelBase:
    """Shared plumbing: batch evaluation against frozen parameters."""

    def named_parameters(self):
        raise NotImplementedError

    def forward_batch(self, features):
        raise NotImplementedError

    def _views(self, features, modality):
        x = features[modality]
        if x.ndim != 3 or x.shape[1] != self.config.n_views:
            raise ShapeError(
                f"{modality} features must be (batch, {self.config.n_views}, "
                f"feat_dim), got {x.shape}"
            )
        return [
            self.tape.variable(np.ascontiguousarray(x[:, v, :]))
            for v in range(self.config.n_views)
        ]

    def evaluate_batch(self, features):
        """Chunked forward with recording paused; returns numpy arrays."""
        n = next(iter(features.values())).shape[0]
        probs_parts = []
        alpha_parts = None
        with self.tape.paused():
            for start in range(0, n, _EVAL_CHUNK):
                chunk = {m: a[start : start + _EVAL_CHUNK] for m, a in features.items()}
                probs, alphas = self.forward_batch(chunk)
                probs_parts.append(probs.value)
                if alpha_parts is None:
                    alpha_parts = {m: [] for m in alphas}
                for m, a in alphas.items():
                    alpha_parts[m].append(a.value)
        return (
            np.concatenate(probs_parts),
            {m: np.concatenate(parts) for m, parts in alpha_parts.items()},
        )

    def attention_means(self, features):
        _, alphas = self.evaluate_batch(features)
        return {m: a.mean(axis=0) for m, a in alphas.items()}

    def load_named(self, values):
        for name, p in self.named_parameters():
            if name not in values:
                raise ValidationError(f"checkpoint missing parameter {name!r}")
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != p.value.shape:
                raise ValidationError(
                    f"parameter {name!r}: stored shape {arr.shape} != model "
                    f"shape {p.value.shape}"
                )
            p.value[...] = arr


class MultiviewModel(_ModelBase):
    """Standalone single-modality network (its own classifier head)."""

    kind = "multiview"

    def __init__(self, config, modality, tape=None, rng=None):
        if modality not in ("rgb", "dct"):
            raise ValidationError(f"multiview modality must be rgb or dct, got {modality!r}")
        self.config = config
        self.modality = modality
        self.tape = tape if tape is not None else Tape()
        rng = np.random.default_rng(config.seed) if rng is None else rng
        self.params = init_params(config, self.tape, rng)

    @property
    def modalities(self):
        return (self.modality,)

    def named_parameters(self):
        return self.params.named(f"{self.modality}.")

    def forward_batch(self, features):
        probs, alpha, _ = multiview_forward(self.params, self._views(features, self.modality))
        return probs, {self.modality: alpha}


class BimodalModel(_ModelBase):
    """Joint rgb + dct network with an additive fusion head."""

    kind = "bimodal"
    modalities = ("rgb", "dct")

    def __init__(self, config, tape=None, rng=None, freeze_backbones=False):
        self.config = config
        self.tape = tape if tape is not None else Tape()
        rng = np.random.default_rng(config.seed) if rng is None else rng
        self.rgb = init_params(config, self.tape, rng)
        self.dct = init_params(config, self.tape, rng)
        self.head_w = self.tape.parameter(
            glorot_uniform(rng, (config.hidden, config.n_classes))
        )
        self.head_b = self.tape.parameter(np.zeros(config.n_classes))
        if freeze_backbones:
            for _, p in self.rgb.named() + self.dct.named():
                p.requires_grad = False

    def named_parameters(self):
        return (
            self.rgb.named("rgb.")
            + self.dct.named("dct.")
            + [("fuse.w", self.head_w), ("fuse.b", self.head_b)]
        )

    def forward_batch(self, features):
        return bimodal_forward(
            self.rgb,
            self.dct,
            self.head_w,
            self.head_b,
            self._views(features, "rgb"),
            self._views(features, "dct"),
        )


class TrimodalModel(_ModelBase):
    """Bimodal network extended with a projected clip-embedding modality."""

    kind = "trimodal"
    modalities = ("rgb", "dct", "lavila")

    def __init__(self, config, tape=None, rng=None, freeze_backbones=False):
        self.config = config
        self.tape = tape if tape is not None else Tape()
        rng = np.random.default_rng(config.seed) if rng is None else rng
        self.rgb = init_params(config, self.tape, rng)
        self.dct = init_params(config, self.tape, rng)
        self.lavila_w = self.tape.parameter(
            glorot_uniform(rng, (config.lavila_dim, config.hidden))
        )
        self.lavila_b = self.tape.parameter(np.zeros(config.hidden))
        self.head_w = self.tape.parameter(
            glorot_uniform(rng, (config.hidden, config.n_classes))
        )
        self.head_b = self.tape.parameter(np.zeros(config.n_classes))
        if freeze_backbones:
            for _, p in self.rgb.named() + self.dct.named():
                p.requires_grad = False

    def named_parameters(self):
        return (
            self.rgb.named("rgb.")
            + self.dct.named("dct.")
            + [
                ("lavila.w", self.lavila_w),
                ("lavila.b", self.lavila_b),
                ("fuse.w", self.head_w),
                ("fuse.b", self.head_b),
            ]
        )

    def forward_batch(self, features):
        lavila = features["lavila"]
        if lavila.ndim != 2 or lavila.shape[1] != self.config.lavila_dim:
            raise ShapeError(
                f"lavila features must be (batch, {self.config.lavila_dim}), "
                f"got {lavila.shape}"
            )
        return trimodal_forward(
            self.rgb,
            self.dct,
            self.lavila_w,
            self.lavila_b,
            self.head_w,
            self.head_b,
            self._views(features, "rgb"),
            self._views(features, "dct"),
            self.tape.variable(lavila),
        )


def build_model(modalities, config, **kwargs):
    """Model for a modality tuple: one of (rgb), (dct), (rgb, dct), (rgb, dct, lavila)."""
    mods = tuple(modalities)
    if mods in (("rgb",), ("dct",)):
        return MultiviewModel(config, mods[0], **kwargs)
    if mods == ("rgb", "dct"):
        return BimodalModel(config, **kwargs)
    if mods == ("rgb", "dct", "lavila"):
        return TrimodalModel(config, **kwargs)
    raise ValidationError(f"unsupported modality combination {mods}")


def attention_report(model, records, split):
    """Mean attention per view over one split; rows of the result sum to 1."""
    from .dataset import split_arrays  # local import avoids a cycle at module load

    features, _ = split_arrays(records, split, model.modalities)
    return model.attention_means(features)


def save_model(model, path):
    """Write parameters plus enough config to rebuild the model."""
    c = model.config
    config = {
        "kind": model.kind,
        "feat_dim": c.feat_dim,
        "hidden": c.hidden,
        "n_views": c.n_views,
        "n_classes": c.n_classes,
        "lavila_dim": c.lavila_dim,
        "layer_norm_eps": c.layer_norm_eps,
        "seed": c.seed,
    }
    if model.kind == "multiview":
        config["modality"] = model.modality
    write_checkpoint(path, config, [(n, p.value) for n, p in model.named_parameters()])


def load_model(path):
    """Rebuild a fusion model saved by ``save_model``."""
    config, tensors = read_checkpoint(path)
    kind = config.get("kind")
    try:
        fusion_config = FusionConfig(
            feat_dim=config["feat_dim"],
            hidden=config["hidden"],
            n_views=config["n_views"],
            n_classes=config["n_classes"],
            lavila_dim=config["lavila_dim"],
            layer_norm_eps=config["layer_norm_eps"],
            seed=config["seed"],
        )
    except KeyError as exc:
        raise ValidationError(f"checkpoint config missing key {exc}") from exc
    if kind == "multiview":
        model = MultiviewModel(fusion_config, config["modality"])
    elif kind == "bimodal":
        model = BimodalModel(fusion_config)
    elif kind == "trimodal":
        model = TrimodalModel(fusion_config)
    else:
        raise ValidationError(f"checkpoint kind {kind!r} is not a fusion model")
    stored = dict(tensors)
    if len(stored) != len(model.named_parameters()):
        raise ValidationError(
            f"checkpoint holds {len(stored)} tensors, model has "
            f"{len(model.named_parameters())} parameters"
        )
    model.load_named(stored)
    return model
