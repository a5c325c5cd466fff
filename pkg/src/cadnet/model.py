"""Siamese attentional scorer: shared encoders, pooled teacher query, per-window BCE.

Both branches (teacher enrollment and classroom segments) pass through the
same raw encoder and the same sequence encoder. The teacher windows are
mean-pooled into a query ``q`` and each classroom window representation
``h_i`` is scored as ``s_i = q . h_i / sqrt(H) + b``, ``p_i = sigmoid(s_i)``.
"""

from dataclasses import dataclass

import numpy as np

from .audio import N_MELS
from .dataset import window_stats
from .exceptions import EmbeddingLookupError, EmptyEnrollmentError
from .nn import (ParamSet, SequenceEncoderConfig, encoder_backward, encoder_backward_many,
                 encoder_forward, encoder_forward_many, init_encoder)
from .nn.functional import sigmoid
from .nn.params import glorot_uniform

STATS_DIM = 2 * N_MELS
P_CLAMP = 1e-12
# score at which sigmoid reaches 1 - P_CLAMP; clamping s here clamps p
S_CLAMP = float(np.log((1.0 - P_CLAMP) / P_CLAMP))
RAW_MODES = ("stats_affine", "external")
# tanh rounds to +-1 in float64 once |x| > ~19; keep the bound strict
TANH_EDGE = np.nextafter(1.0, 0.0)


@dataclass
class RawEncoderParams:
    """Raw window encoder settings.

    ``stats_affine`` maps the 80 window statistics through a fixed
    standardization (``mean``/``scale``, estimated from training data) and
    a trainable affine map to ``dim`` values, then ``tanh``. ``external``
    passes precomputed ``dim``-wide embeddings through untouched.
    """

    mode: str = "stats_affine"
    dim: int = 64
    mean: np.ndarray = None
    scale: np.ndarray = None

    def __post_init__(self):
        if self.mode not in RAW_MODES:
            raise ValueError(f"raw encoder mode must be one of {RAW_MODES}, got {self.mode!r}")
        if self.dim < 1:
            raise ValueError("raw embedding dim must be >= 1")
        if self.mode == "stats_affine":
            self.mean = np.zeros(STATS_DIM) if self.mean is None else np.asarray(self.mean, float)
            self.scale = np.ones(STATS_DIM) if self.scale is None else np.asarray(self.scale, float)

    @property
    def input_dim(self):
        return STATS_DIM if self.mode == "stats_affine" else self.dim


@dataclass
class AttentionQuery:
    q: np.ndarray


@dataclass
class RefinedSequence:
    h: np.ndarray


@dataclass(frozen=True)
class WindowPrediction:
    s: float
    p: float


class CadModel:
    """Parameters and configuration of the Siamese detector.

    All trainable tensors live in one :class:`ParamSet`: ``raw.A``/``raw.c``
    (stats_affine only), ``seq.*`` (sequence encoder, shared by both
    branches) and ``head.b``.
    """

    def __init__(self, seq_cfg, raw=None, params=None, seed=None):
        self.raw = RawEncoderParams() if raw is None else raw
        if seq_cfg.input_dim != self.raw.dim:
            raise ValueError(
                f"sequence encoder input_dim {seq_cfg.input_dim} != raw dim {self.raw.dim}")
        self.seq_cfg = seq_cfg
        if params is None:
            rng = np.random.default_rng(seed)
            params = ParamSet(seed=seed)
            if self.raw.mode == "stats_affine":
                params.add("raw.A", glorot_uniform(rng, self.raw.dim, STATS_DIM))
                params.add("raw.c", np.zeros(self.raw.dim))
            for k, v in init_encoder(seq_cfg, rng).items():
                params.add(f"seq.{k}", v)
            params.add("head.b", np.zeros(()))
        self.params = params
        self._seq = ParamSet.wrap(params.view("seq"))

    @property
    def H(self):
        return self.seq_cfg.output_dim

    @property
    def bias(self):
        return float(self.params["head.b"])

    def seq_params(self):
        return self._seq

    def copy(self):
        raw = RawEncoderParams(self.raw.mode, self.raw.dim,
                               None if self.raw.mean is None else self.raw.mean.copy(),
                               None if self.raw.scale is None else self.raw.scale.copy())
        return CadModel(self.seq_cfg, raw, self.params.copy())

    def astype(self, dtype):
        return CadModel(self.seq_cfg, self.raw, self.params.astype(dtype))


# -- raw encoder -----------------------------------------------------------

def fit_standardization(model, stats_blocks):
    """Set the fixed stats standardization from training windows."""
    if model.raw.mode != "stats_affine":
        return model
    stack = np.concatenate([s for s in stats_blocks if s.shape[0]])
    model.raw.mean = stack.mean(axis=0)
    model.raw.scale = np.maximum(stack.std(axis=0), 1e-3)
    return model


def raw_forward(inputs, model):
    """Batched raw encoding of ``(T, 80)`` stats (or ``(T, D)`` external embeddings)."""
    if model.raw.mode == "external":
        return np.asarray(inputs), None
    z = (inputs - model.raw.mean) / model.raw.scale
    e = np.tanh(z @ model.params["raw.A"].T + model.params["raw.c"])
    e = np.clip(e, -TANH_EDGE, TANH_EDGE)
    return e, (z, e)


def raw_backward(de, cache, model):
    if cache is None:
        return {}
    z, e = cache
    dpre = de * (1.0 - e * e)
    return {"raw.A": dpre.T @ z, "raw.c": dpre.sum(axis=0)}


def raw_encode(window, model, embeddings=None, key=None):
    """Encode one window to a ``D`` vector.

    For ``external`` mode pass ``embeddings`` (as returned by
    :func:`load_embeddings`) and ``key=(recording_id, window_index)``.
    """
    if model.raw.mode == "external":
        rid, idx = key if key is not None else (None, None)
        try:
            return np.asarray(embeddings[rid][idx], dtype=np.float64)
        except (KeyError, IndexError, TypeError):
            raise EmbeddingLookupError(
                f"no external embedding for recording {rid!r} window {idx}") from None
    frames = np.asarray(window.frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != N_MELS:
        raise ValueError(f"window must be W x {N_MELS}, got {frames.shape}")
    e, _ = raw_forward(window_stats(frames[None]), model)
    return e[0]


# -- sequence encoder + head -----------------------------------------------

def refine(e, model):
    """Apply the shared sequence encoder to one segment's raw embeddings."""
    h, _ = encoder_forward(e, model.seq_params(), model.seq_cfg)
    return RefinedSequence(h)


def pool_query(teacher_refined):
    """Mean over every window of every enrollment segment."""
    blocks = [r.h for r in teacher_refined if r.h.shape[0]]
    if not blocks:
        raise EmptyEnrollmentError("empty enrollment: teacher samples produced zero windows")
    return AttentionQuery(np.concatenate(blocks).mean(axis=0))


def scores(q, h, bias):
    q = np.asarray(q)
    if h.shape[1] != q.shape[0]:
        raise ValueError(f"query dim {q.shape[0]} != representation dim {h.shape[1]}")
    return h @ q / np.sqrt(q.shape[0]) + bias


def score_windows(q, h, bias):
    """Per-window ``WindowPrediction`` list; ``bias`` is the head's scalar ``b``."""
    qv = q.q if isinstance(q, AttentionQuery) else q
    hv = h.h if isinstance(h, RefinedSequence) else h
    s = scores(qv, hv, bias)
    return [WindowPrediction(float(si), float(pi)) for si, pi in zip(s, sigmoid(s))]


def bce_terms(p, y):
    pc = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    return -(y * np.log(pc) + (1 - y) * np.log(1.0 - pc))


def bce_terms_from_scores(s, y):
    """Per-window BCE of ``p = sigmoid(s)`` as ``y softplus(-s) + (1-y) softplus(s)``.

    Same value as :func:`bce_terms` but without forming ``1 - p`` (or
    ``softplus(s) - s``), both of which cancel badly once ``|s|`` is large.
    """
    sc = np.clip(s, -S_CLAMP, S_CLAMP)
    return y * np.logaddexp(0.0, -sc) + (1 - y) * np.logaddexp(0.0, sc)


def bce_loss(preds, labels):
    """Mean binary cross-entropy with ``p`` clamped to ``[1e-12, 1 - 1e-12]``."""
    p = np.asarray([w.p for w in preds] if preds and isinstance(preds[0], WindowPrediction)
                   else preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {y.size} labels")
    if p.size == 0:
        raise ValueError("bce_loss needs at least one window")
    return float(np.mean(bce_terms(p, y)))


def _encode(inputs, model):
    e, rcache = raw_forward(inputs, model)
    h, scache = encoder_forward(e, model.seq_params(), model.seq_cfg)
    return h, (rcache, scache)


def _encode_backward(dh, cache, model, grads):
    rcache, scache = cache
    de, g = encoder_backward(dh, scache, model.seq_params(), model.seq_cfg)
    for k, v in g.items():
        grads[f"seq.{k}"] += v
    for k, v in raw_backward(de, rcache, model).items():
        grads[k] += v


def query_from_inputs(enrollment_inputs, model):
    teacher = [_encode(x, model) for x in enrollment_inputs if x.shape[0]]
    if not teacher:
        raise EmptyEnrollmentError("empty enrollment: teacher samples produced zero windows")
    q = pool_query([RefinedSequence(h) for h, _ in teacher]).q
    return q, teacher


def forward_pair(teacher_segments, classroom_segment, model, labels=None):
    """Score one classroom segment against a teacher enrollment.

    ``teacher_segments`` is a list of per-segment input arrays and
    ``classroom_segment`` one input array (rows = windows). Returns the
    ``WindowPrediction`` list and the mean BCE when ``labels`` are given.
    """
    q, _ = query_from_inputs(teacher_segments, model)
    h, _ = _encode(classroom_segment, model)
    preds = score_windows(q, h, model.bias)
    loss = None if labels is None else bce_loss(preds, labels)
    return preds, loss


def _encode_many(seqs, model):
    """Encode a list of non-empty input blocks in one raw pass and one sequence pass."""
    lengths = [x.shape[0] for x in seqs]
    e, rcache = raw_forward(np.concatenate(seqs), model)
    cuts = np.cumsum(lengths)[:-1]
    hs, scache = encoder_forward_many(np.split(e, cuts), model.seq_params(), model.seq_cfg)
    return hs, (rcache, scache, cuts)


def _encode_many_backward(dhs, cache, model, grads):
    rcache, scache, _ = cache
    des, g = encoder_backward_many(dhs, scache, model.seq_params(), model.seq_cfg)
    for k, v in g.items():
        grads[f"seq.{k}"] += v
    for k, v in raw_backward(np.concatenate(des), rcache, model).items():
        grads[k] += v


def batch_loss_and_grads(groups, model, grads, normalizer):
    """Accumulate BCE and gradients for a mini-batch of recording groups.

    ``groups`` is a list of ``(enrollment_inputs, segments)`` where
    ``segments`` is a list of ``(inputs, labels)`` sharing that enrollment.
    Per-window losses are summed and divided by ``normalizer`` (the batch
    window count); the gradient of that quantity is added into ``grads``.
    Every enrollment is encoded and back-propagated once, and all
    sequences of the batch go through the encoder together.
    """
    seqs, layout = [], []
    for enroll, segments in groups:
        e_idx = []
        for x in enroll:
            if x.shape[0]:
                e_idx.append(len(seqs))
                seqs.append(x)
        if not e_idx:
            raise EmptyEnrollmentError("empty enrollment: teacher samples produced zero windows")
        s_idx = []
        for x, y in segments:
            if x.shape[0]:
                s_idx.append((len(seqs), np.asarray(y, dtype=np.float64)))
                seqs.append(x)
        layout.append((e_idx, s_idx))
    hs, cache = _encode_many(seqs, model)
    dhs = [None] * len(seqs)
    b = model.bias
    total = 0.0
    db = 0.0
    for e_idx, s_idx in layout:
        teacher = np.concatenate([hs[i] for i in e_idx])
        q = teacher.mean(axis=0)
        root = np.sqrt(q.shape[0])
        dq = np.zeros_like(q)
        for i, y in s_idx:
            h = hs[i]
            s = h @ q / root + b
            p = sigmoid(s)
            total += float(np.sum(bce_terms_from_scores(s, y)))
            inside = np.abs(s) < S_CLAMP
            ds = np.where(inside, p - y, 0.0) / normalizer
            db += ds.sum()
            dq += h.T @ ds / root
            dhs[i] = np.outer(ds, q / root)
        dh_teacher = dq / teacher.shape[0]
        for i in e_idx:
            dhs[i] = np.broadcast_to(dh_teacher, hs[i].shape)
    grads["head.b"] += db
    _encode_many_backward(dhs, cache, model, grads)
    return total / normalizer


def group_loss_and_grads(enrollment_inputs, segments, model, grads, normalizer):
    """:func:`batch_loss_and_grads` for segments of a single recording."""
    return batch_loss_and_grads([(enrollment_inputs, segments)], model, grads, normalizer)


def mean_loss(enrollment_inputs, segments, model):
    """Mean BCE over all windows of ``segments``; keeps the parameter dtype.

    This is the plain forward computation that gradient checks difference.
    """
    q, _ = query_from_inputs(enrollment_inputs, model)
    b = model.params["head.b"]
    terms = []
    for inputs, y in segments:
        h, _ = _encode(inputs, model)
        s = h @ q / np.sqrt(q.shape[0]) + b
        terms.append(bce_terms_from_scores(s, np.asarray(y, dtype=np.float64)))
    return np.concatenate(terms).mean()


def loss_and_grad(enrollment_inputs, segments, model):
    """Mean BCE over all windows of ``segments`` and its gradient dict."""
    n = sum(x.shape[0] for x, _ in segments)
    grads = model.params.zeros_like()
    loss = group_loss_and_grads(enrollment_inputs, segments, model, grads, n)
    return loss, grads


def predict_segments(enrollment_inputs, segment_inputs, model):
    """Scores ``s`` and probabilities ``p`` for each segment (frozen model)."""
    enroll = [x for x in enrollment_inputs if x.shape[0]]
    if not enroll:
        raise EmptyEnrollmentError("empty enrollment: teacher samples produced zero windows")
    live = [x for x in segment_inputs if x.shape[0]]
    hs, _ = _encode_many(enroll + live, model)
    q = np.concatenate(hs[:len(enroll)]).mean(axis=0)
    it = iter(hs[len(enroll):])
    out = []
    for x in segment_inputs:
        if x.shape[0] == 0:
            out.append((np.zeros(0), np.zeros(0)))
            continue
        s = scores(q, next(it), model.bias)
        out.append((s, sigmoid(s)))
    return out


# -- external embeddings -----------------------------------------------------

ENROLLMENT_SUFFIX = "#enrollment"


def load_embeddings(path):
    """Read ``{recording_id: [[D reals] per window]}``.

    Enrollment windows are stored under ``"<recording_id>#enrollment"``.
    """
    import json
    with open(path) as fh:
        obj = json.load(fh)
    return {k: np.asarray(v, dtype=np.float64) for k, v in obj.items()}


def external_inputs(feats, embeddings):
    """Split a recording's external embeddings along its segment/enrollment windows."""
    def split(key, segs):
        if key not in embeddings:
            raise EmbeddingLookupError(f"no external embeddings for {key!r}")
        arr = embeddings[key]
        need = sum(s.n_windows for s in segs)
        if arr.shape[0] < need:
            raise EmbeddingLookupError(
                f"{key!r} has {arr.shape[0]} embeddings, recording needs {need}")
        out, pos = [], 0
        for s in segs:
            out.append(arr[pos:pos + s.n_windows])
            pos += s.n_windows
        return out

    return (split(feats.recording_id + ENROLLMENT_SUFFIX, feats.enrollment),
            split(feats.recording_id, feats.segments))


def recording_inputs(feats, model, embeddings=None):
    """``(enrollment_inputs, segment_inputs)`` for one featurized recording."""
    if model.raw.mode == "external":
        return external_inputs(feats, embeddings or {})
    return [s.stats for s in feats.enrollment], [s.stats for s in feats.segments]


def build_model(variant="gru", raw_dim=64, seed=0, positional=True, raw_mode="stats_affine",
                **dims):
    """Construct a freshly initialized :class:`CadModel` with the standard dimensions."""
    from .nn.layers import TransformerConfig
    tcfg = dims.pop("transformer", None) or TransformerConfig(positional=positional)
    cfg = SequenceEncoderConfig(variant, raw_dim, transformer=tcfg, **dims)
    return CadModel(cfg, RawEncoderParams(raw_mode, raw_dim), seed=seed)
