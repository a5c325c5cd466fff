"""Variant dispatch for the sequence (representation-learning) encoder."""

from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import (TransformerConfig, bidirectional_backward, bidirectional_backward_batch,
                     bidirectional_forward, bidirectional_forward_batch, dense_backward,
                     dense_forward, init_dense, init_gru, init_lstm, init_transformer,
                     transformer_backward, transformer_forward)
from .params import ParamSet

VARIANTS = ("average", "dnn", "gru", "lstm", "transformer")


@dataclass(frozen=True)
class SequenceEncoderConfig:
    """Encoder variant and dimensions.

    Output width ``H``: ``average`` passes the input through (``H = D``);
    ``dnn`` has ``dnn_units`` ReLU units; ``gru``/``lstm`` concatenate two
    directions of ``rnn_hidden``; ``transformer`` emits ``d_model``.
    """

    variant: str = "gru"
    input_dim: int = 64
    dnn_units: int = 128
    rnn_hidden: int = 64
    transformer: TransformerConfig = field(default_factory=TransformerConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown encoder variant {self.variant!r}; choose from {VARIANTS}")
        if min(self.input_dim, self.dnn_units, self.rnn_hidden) < 1:
            raise ValueError("encoder dimensions must be positive")

    @property
    def output_dim(self):
        return {
            "average": self.input_dim,
            "dnn": self.dnn_units,
            "gru": 2 * self.rnn_hidden,
            "lstm": 2 * self.rnn_hidden,
            "transformer": self.transformer.d_model,
        }[self.variant]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["transformer"] = TransformerConfig(**d.get("transformer", {}))
        return cls(**d)


def init_encoder(cfg, rng):
    """Glorot-uniform parameters for ``cfg``; ``average`` has none."""
    params = ParamSet()
    D = cfg.input_dim
    if cfg.variant == "dnn":
        params.update("dense", init_dense(rng, D, cfg.dnn_units))
    elif cfg.variant in ("gru", "lstm"):
        init = init_gru if cfg.variant == "gru" else init_lstm
        params.update("fwd", init(rng, D, cfg.rnn_hidden))
        params.update("bwd", init(rng, D, cfg.rnn_hidden))
    elif cfg.variant == "transformer":
        params.update("", init_transformer(rng, D, cfg.transformer))
    return params


def encoder_forward(x, params, cfg):
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ValueError(f"encoder expects (T, {cfg.input_dim}) input, got {x.shape}")
    v = cfg.variant
    if v == "average":
        return x, None
    if v == "dnn":
        return dense_forward(x, params.view("dense"))
    if v in ("gru", "lstm"):
        return bidirectional_forward(x, params.view("fwd"), params.view("bwd"), cell=v)
    return transformer_forward(x, params.view(), cfg.transformer)


def encoder_backward(dh, cache, params, cfg):
    """Return ``(dx, grads)`` with grads keyed by full parameter names."""
    v = cfg.variant
    if v == "average":
        return dh, {}
    if v == "dnn":
        dx, g = dense_backward(dh, cache, params.view("dense"))
        return dx, {f"dense.{k}": a for k, a in g.items()}
    if v in ("gru", "lstm"):
        dx, gf, gb = bidirectional_backward(dh, cache, params.view("fwd"), params.view("bwd"))
        grads = {f"fwd.{k}": a for k, a in gf.items()}
        grads.update({f"bwd.{k}": a for k, a in gb.items()})
        return dx, grads
    return transformer_backward(dh, cache, params.view())


def encoder_forward_many(xs, params, cfg):
    """Encode a list of sequences; recurrent variants share one padded pass."""
    xs = [np.asarray(x) for x in xs]
    for x in xs:
        if x.ndim != 2 or x.shape[1] != cfg.input_dim:
            raise ValueError(f"encoder expects (T, {cfg.input_dim}) input, got {x.shape}")
    v = cfg.variant
    if not xs:
        return [], (v, None)
    if v in ("gru", "lstm"):
        outs, cache = bidirectional_forward_batch(xs, params.view("fwd"), params.view("bwd"),
                                                  cell=v)
        return outs, (v, cache)
    if v in ("average", "dnn"):
        # row-wise variants: one call over the stacked windows
        stacked = np.concatenate(xs)
        h, cache = encoder_forward(stacked, params, cfg)
        cuts = np.cumsum([x.shape[0] for x in xs])[:-1]
        return np.split(h, cuts), (v, cache)
    pairs = [encoder_forward(x, params, cfg) for x in xs]
    return [h for h, _ in pairs], (v, [c for _, c in pairs])


def encoder_backward_many(dhs, cache, params, cfg):
    """Backward of :func:`encoder_forward_many`; grads are summed over sequences."""
    v, inner = cache
    if inner is None and v != "average":
        return [], {}
    if v in ("gru", "lstm"):
        dxs, gf, gb = bidirectional_backward_batch(dhs, inner, params.view("fwd"),
                                                   params.view("bwd"))
        grads = {f"fwd.{k}": a for k, a in gf.items()}
        grads.update({f"bwd.{k}": a for k, a in gb.items()})
        return dxs, grads
    if v in ("average", "dnn"):
        if not dhs:
            return [], {}
        dx, grads = encoder_backward(np.concatenate(dhs), inner, params, cfg)
        cuts = np.cumsum([d.shape[0] for d in dhs])[:-1]
        return np.split(dx, cuts), grads
    dxs, grads = [], {}
    for dh, c in zip(dhs, inner):
        dx, g = encoder_backward(dh, c, params, cfg)
        dxs.append(dx)
        for k, a in g.items():
            grads[k] = grads[k] + a if k in grads else a
    return dxs, grads
