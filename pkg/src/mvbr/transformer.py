"""Encoder-only transformer classifier over token-sequence features.

Pre-norm residual layout: each layer computes

    a = x + attn(layer_norm(x))        (multi-head scaled dot-product)
    y = a + ffn(layer_norm(a))         (dense -> relu -> dense)

then the token mean is classified through a sigmoid head. Positional
encodings are off by default (the tokens come from randomly sampled frames,
so order carries no signal); a sinusoidal table can be enabled per config.
Each head owns its q/k/v projection matrices, which is equivalent to
column-partitioning one combined projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .errors import ShapeError, ValidationError
from .fusion import glorot_uniform

__all__ = [
    "EncoderConfig",
    "AttentionHeadParams",
    "EncoderLayerParams",
    "TransformerEncoderNet",
    "sinusoidal_table",
    "mhsa_forward",
    "ffn_forward",
    "encoder_classify",
    "extract_transformer_feature",
    "save_transformer",
    "load_transformer",
]


@dataclass
class EncoderConfig:
    d_model: int = 768
    n_heads: int = 4
    d_ff: int = 2048
    n_layers: int = 1
    seq_len: int = 256
    n_classes: int = 14
    layer_norm_eps: float = 1e-5
    positional_encoding: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("d_model", "n_heads", "d_ff", "n_layers", "seq_len", "n_classes"):
            if getattr(self, name) < 1:
                raise ValidationError(f"EncoderConfig.{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValidationError(
                f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}"
            )
        if self.layer_norm_eps <= 0:
            raise ValidationError("EncoderConfig.layer_norm_eps must be positive")

    @property
    def d_head(self):
        return self.d_model // self.n_heads


class AttentionHeadParams:
    # The key projection carries no bias: a constant added to every key
    # shifts each attention row's logits uniformly, which softmax cancels,
    # so such a bias would be unidentifiable.
    def __init__(self, config, tape, rng):
        d, dh = config.d_model, config.d_head
        self.wq = tape.parameter(glorot_uniform(rng, (d, dh)))
        self.bq = tape.parameter(np.zeros(dh))
        self.wk = tape.parameter(glorot_uniform(rng, (d, dh)))
        self.wv = tape.parameter(glorot_uniform(rng, (d, dh)))
        self.bv = tape.parameter(np.zeros(dh))

    def named(self, prefix):
        return [
            (f"{prefix}.wq", self.wq),
            (f"{prefix}.bq", self.bq),
            (f"{prefix}.wk", self.wk),
            (f"{prefix}.wv", self.wv),
            (f"{prefix}.bv", self.bv),
        ]


class EncoderLayerParams:
    def __init__(self, config, tape, rng):
        d = config.d_model
        self.config = config
        self.ln1_gamma = tape.parameter(np.ones(d))
        self.ln1_beta = tape.parameter(np.zeros(d))
        self.heads = [
            AttentionHeadParams(config, tape, rng) for _ in range(config.n_heads)
        ]
        self.out_w = tape.parameter(glorot_uniform(rng, (d, d)))
        self.out_b = tape.parameter(np.zeros(d))
        self.ln2_gamma = tape.parameter(np.ones(d))
        self.ln2_beta = tape.parameter(np.zeros(d))
        self.ffn_w1 = tape.parameter(glorot_uniform(rng, (d, config.d_ff)))
        self.ffn_b1 = tape.parameter(np.zeros(config.d_ff))
        self.ffn_w2 = tape.parameter(glorot_uniform(rng, (config.d_ff, d)))
        self.ffn_b2 = tape.parameter(np.zeros(d))

    def named(self, prefix):
        out = [
            (f"{prefix}.ln1.gamma", self.ln1_gamma),
            (f"{prefix}.ln1.beta", self.ln1_beta),
        ]
        for h, head in enumerate(self.heads):
            out.extend(head.named(f"{prefix}.head{h}"))
        out.extend(
            [
                (f"{prefix}.out.w", self.out_w),
                (f"{prefix}.out.b", self.out_b),
                (f"{prefix}.ln2.gamma", self.ln2_gamma),
                (f"{prefix}.ln2.beta", self.ln2_beta),
                (f"{prefix}.ffn.w1", self.ffn_w1),
                (f"{prefix}.ffn.b1", self.ffn_b1),
                (f"{prefix}.ffn.w2", self.ffn_w2),
                (f"{prefix}.ffn.b2", self.ffn_b2),
            ]
        )
        return out


def sinusoidal_table(seq_len, d_model):
    pos = np.arange(seq_len)[:, None].astype(np.float64)
    idx = np.arange(d_model)[None, :]
    angles = pos / np.power(10000.0, (2 * (idx // 2)) / d_model)
    table = np.where(idx % 2 == 0, np.sin(angles), np.cos(angles))
    return table


def _check_tokens(config, x):
    if x.value.ndim != 2 or x.value.shape[1] != config.d_model:
        raise ShapeError(
            f"token sequence must be (seq_len, {config.d_model}), got {x.value.shape}"
        )


def mhsa_forward(layer, x, return_attention=False):
    """Pre-norm multi-head self-attention sublayer with residual connection."""
    config = layer.config
    _check_tokens(config, x)
    normed = ad.layer_norm(x, layer.ln1_gamma, layer.ln1_beta, config.layer_norm_eps)
    inv_scale = 1.0 / math.sqrt(config.d_head)
    head_outs = []
    weights = []
    for head in layer.heads:
        q = ad.dense(normed, head.wq, head.bq)
        k = ad.matmul(normed, head.wk)
        v = ad.dense(normed, head.wv, head.bv)
        attn = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(k)), inv_scale))
        weights.append(attn)
        head_outs.append(ad.matmul(attn, v))
    out = ad.add(x, ad.dense(ad.concat(head_outs), layer.out_w, layer.out_b))
    if return_attention:
        return out, weights
    return out


def ffn_forward(layer, x):
    """Pre-norm position-wise feed-forward sublayer with residual connection."""
    config = layer.config
    _check_tokens(config, x)
    normed = ad.layer_norm(x, layer.ln2_gamma, layer.ln2_beta, config.layer_norm_eps)
    inner = ad.relu(ad.dense(normed, layer.ffn_w1, layer.ffn_b1))
    return ad.add(x, ad.dense(inner, layer.ffn_w2, layer.ffn_b2))


class TransformerEncoderNet:
    kind = "transformer"

    def __init__(self, config, tape=None, rng=None):
        self.config = config
        self.tape = tape if tape is not None else Tape()
        rng = np.random.default_rng(config.seed) if rng is None else rng
        self.layers = [
            EncoderLayerParams(config, self.tape, rng) for _ in range(config.n_layers)
        ]
        self.cls_w = self.tape.parameter(
            glorot_uniform(rng, (config.d_model, config.n_classes))
        )
        self.cls_b = self.tape.parameter(np.zeros(config.n_classes))
        self._positional = (
            self.tape.variable(sinusoidal_table(config.seq_len, config.d_model))
            if config.positional_encoding
            else None
        )

    def named_parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named(f"layer{i}"))
        out.extend([("cls.w", self.cls_w), ("cls.b", self.cls_b)])
        return out

    def tokens_variable(self, tokens):
        arr = np.asarray(tokens, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != self.config.d_model:
            raise ShapeError(
                f"token sequence must be (seq_len, {self.config.d_model}), got {arr.shape}"
            )
        return self.tape.variable(arr)

    def _pooled(self, x):
        if self._positional is not None:
            if x.value.shape != self._positional.value.shape:
                raise ShapeError(
                    f"positional table is {self._positional.value.shape}, "
                    f"tokens are {x.value.shape}"
                )
            x = ad.add(x, self._positional)
        for layer in self.layers:
            x = ffn_forward(layer, mhsa_forward(layer, x))
        return ad.mean(x, axis=0)

    def classify(self, x):
        """Class probabilities (n_classes,) for one token sequence Variable."""
        pooled = self._pooled(x)
        d = self.config.d_model
        logits = ad.dense(ad.reshape(pooled, (1, d)), self.cls_w, self.cls_b)
        return ad.reshape(ad.sigmoid(logits), (self.config.n_classes,))

    def feature(self, x):
        """The mean-pooled pre-classifier representation (d_model,)."""
        return self._pooled(x)


def save_transformer(net, path):
    """Write encoder parameters in the shared checkpoint container."""
    from .checkpoint import write_checkpoint

    c = net.config
    config = {
        "kind": net.kind,
        "d_model": c.d_model,
        "n_heads": c.n_heads,
        "d_ff": c.d_ff,
        "n_layers": c.n_layers,
        "seq_len": c.seq_len,
        "n_classes": c.n_classes,
        "layer_norm_eps": c.layer_norm_eps,
        "positional_encoding": c.positional_encoding,
        "seed": c.seed,
    }
    write_checkpoint(path, config, [(n, p.value) for n, p in net.named_parameters()])


def load_transformer(path):
    from .checkpoint import read_checkpoint

    config, tensors = read_checkpoint(path)
    if config.get("kind") != "transformer":
        raise ValidationError(f"checkpoint kind {config.get('kind')!r} is not a transformer")
    encoder_config = EncoderConfig(
        d_model=config["d_model"],
        n_heads=config["n_heads"],
        d_ff=config["d_ff"],
        n_layers=config["n_layers"],
        seq_len=config["seq_len"],
        n_classes=config["n_classes"],
        layer_norm_eps=config["layer_norm_eps"],
        positional_encoding=config["positional_encoding"],
        seed=config["seed"],
    )
    net = TransformerEncoderNet(encoder_config)
    stored = dict(tensors)
    for name, p in net.named_parameters():
        if name not in stored:
            raise ValidationError(f"checkpoint missing parameter {name!r}")
        arr = np.asarray(stored[name], dtype=np.float64)
        if arr.shape != p.value.shape:
            raise ValidationError(
                f"parameter {name!r}: stored shape {arr.shape} != model shape {p.value.shape}"
            )
        p.value[...] = arr
    return net


def encoder_classify(net, tokens):
    """Probabilities for a raw (seq_len, d_model) array or Variable."""
    x = tokens if isinstance(tokens, ad.Variable) else net.tokens_variable(tokens)
    return net.classify(x)


def extract_transformer_feature(net, tokens):
    """Pooled feature for a raw (seq_len, d_model) array or Variable."""
    x = tokens if isinstance(tokens, ad.Variable) else net.tokens_variable(tokens)
    return net.feature(x)
