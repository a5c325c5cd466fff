"""Mini-batch SGD training loop and versioned JSON checkpoints."""

import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dataset import FeatureConfig, featurize_record, load_manifest
from .evaluation import evaluate
from .exceptions import CadError, CheckpointVersionError, ManifestError, NumericalError
from .model import (CadModel, RawEncoderParams, batch_loss_and_grads, build_model,
                    fit_standardization, load_embeddings, recording_inputs)
from .nn import ParamSet, SequenceEncoderConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 0.05
    batch_size: int = 8
    epochs: int = 30
    clip_norm: float = 5.0
    seed: int = 0
    variant: str = "gru"
    train_manifest: str = None
    val_manifest: str = None
    raw_dim: int = 64
    raw_mode: str = "stats_affine"
    embeddings: str = None
    window_frames: int = 40
    positional: bool = True
    enrollment_vad: bool = True

    def __post_init__(self):
        if not self.lr > 0 and self.lr != 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.clip_norm > 0:
            raise ValueError(f"clip_norm must be > 0, got {self.clip_norm}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Checkpoint:
    config: TrainConfig
    model: CadModel
    rng_state: dict
    epoch: int = 0
    best_epoch: int = 0
    best_val_auc: float = None
    train_teacher_ids: list = field(default_factory=list)
    format_version: int = FORMAT_VERSION

    def to_json(self):
        raw = self.model.raw
        return {
            "format_version": self.format_version,
            "config": self.config.to_dict(),
            "encoder": self.model.seq_cfg.to_dict(),
            "raw_encoder": {
                "mode": raw.mode,
                "dim": raw.dim,
                "mean": None if raw.mean is None else raw.mean.tolist(),
                "scale": None if raw.scale is None else raw.scale.tolist(),
            },
            "params": self.model.params.to_json(),
            "rng_state": self.rng_state,
            "epoch": self.epoch,
            "best_epoch": self.best_epoch,
            "best_val_auc": self.best_val_auc,
            "train_teacher_ids": sorted(self.train_teacher_ids),
        }

    @classmethod
    def from_json(cls, obj):
        version = obj.get("format_version")
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(
                f"checkpoint format_version {version!r} is not supported (expected {FORMAT_VERSION})")
        r = obj["raw_encoder"]
        raw = RawEncoderParams(r["mode"], r["dim"], r["mean"], r["scale"])
        config = TrainConfig.from_dict(obj["config"])
        model = CadModel(SequenceEncoderConfig.from_dict(obj["encoder"]), raw,
                         ParamSet.from_json(obj["params"], seed=config.seed))
        return cls(config, model, obj["rng_state"], obj["epoch"], obj["best_epoch"],
                   obj["best_val_auc"], list(obj["train_teacher_ids"]), version)


def dumps_checkpoint(ckpt):
    return json.dumps(ckpt.to_json(), indent=1, sort_keys=True) + "\n"


def save_checkpoint(ckpt, path):
    with open(path, "w") as fh:
        fh.write(dumps_checkpoint(ckpt))


def load_checkpoint(path):
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CadError(f"{path}: corrupt checkpoint ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise CadError(f"{path}: corrupt checkpoint")
    try:
        return Checkpoint.from_json(obj)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointVersionError):
            raise
        raise CadError(f"{path}: corrupt checkpoint ({exc})") from exc


# -- optimisation ---------------------------------------------------------

def clip_scale(grads, clip_norm):
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if not np.isfinite(norm):
        raise NumericalError("non-finite gradient")
    return min(1.0, clip_norm / norm) if norm > 0 else 1.0


def sgd_step(params, grads, lr, clip_norm):
    """In-place ``p -= lr * g * min(1, clip_norm / ||g||)`` over the global gradient."""
    for name, g in grads.items():
        if np.shape(g) != params[name].shape:
            raise ValueError(f"gradient shape {np.shape(g)} != parameter {name!r} "
                             f"{params[name].shape}")
    scale = clip_scale(grads, clip_norm)
    with np.errstate(over="ignore", invalid="ignore"):
        updated = {name: params[name] - (lr * scale) * g for name, g in grads.items()}
    for name, value in updated.items():
        if not np.all(np.isfinite(value)):
            raise NumericalError(f"update of {name!r} produced non-finite values")
    for name, value in updated.items():
        params[name] = value
    return params


def _batches(order, size):
    for i in range(0, len(order), size):
        yield order[i:i + size]


def fit(model, train, config, val=None, embeddings=None, on_epoch=None):
    """Train ``model`` in place on featurized recordings and return a :class:`Checkpoint`.

    Each item is one labeled classroom segment paired with its recording's
    enrollment. Items are shuffled every epoch and consumed in mini-batches
    of ``config.batch_size``; the batch loss is the mean BCE over all of the
    batch's windows. With validation data the parameters of the best
    validation-AUC epoch are kept; otherwise the final ones.
    """
    inputs = [recording_inputs(f, model, embeddings) for f in train]
    items = [(ri, si) for ri, f in enumerate(train) for si, s in enumerate(f.segments)
             if s.n_windows and s.labels is not None]
    if not items:
        raise CadError("empty training set: no labeled windows")
    rng = np.random.default_rng([config.seed, 1])
    best_params, best_auc, best_epoch = model.params.copy(), None, 0
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(items))
        loss_sum, n_windows = 0.0, 0
        for batch in _batches(order, config.batch_size):
            groups = {}
            for k in batch:
                ri, si = items[k]
                groups.setdefault(ri, []).append(si)
            norm = sum(train[ri].segments[si].n_windows for ri, si in (items[k] for k in batch))
            grads = model.params.zeros_like()
            work = [(inputs[ri][0], [(inputs[ri][1][si], train[ri].segments[si].labels)
                                     for si in seg_ids])
                    for ri, seg_ids in groups.items()]
            batch_loss = batch_loss_and_grads(work, model, grads, norm)
            if not np.isfinite(batch_loss):
                raise NumericalError(f"training diverged at epoch {epoch}: loss is not finite")
            try:
                sgd_step(model.params, grads, config.lr, config.clip_norm)
            except NumericalError as exc:
                raise NumericalError(f"training diverged at epoch {epoch}: {exc}") from exc
            loss_sum += batch_loss * norm
            n_windows += norm
        train_loss = loss_sum / n_windows
        val_auc = evaluate(model, val, embeddings=embeddings).auc if val else None
        record = {"epoch": epoch, "train_loss": train_loss, "val_auc": val_auc}
        history.append(record)
        logger.info("epoch %d train_loss %.5f val_auc %s", epoch, train_loss, val_auc)
        if on_epoch is not None:
            on_epoch(record)
        if val and (best_auc is None or val_auc > best_auc):
            best_auc, best_epoch, best_params = val_auc, epoch, model.params.copy()
    if val and best_auc is not None:
        model.params.set_flat(best_params.flat())
    else:
        best_epoch = config.epochs
    ckpt = Checkpoint(config, model, rng.bit_generator.state, config.epochs, best_epoch,
                      best_auc, sorted({f.teacher_id for f in train}))
    ckpt.history = history
    return ckpt


def init_model(config, train):
    model = build_model(config.variant, config.raw_dim, seed=config.seed,
                        positional=config.positional, raw_mode=config.raw_mode)
    blocks = [s.stats for f in train for s in f.segments + f.enrollment]
    return fit_standardization(model, blocks)


def featurize_manifest(path, config, require_labels=True):
    cfg = FeatureConfig(config.window_frames)
    return [featurize_record(r, cfg=cfg, enrollment_vad=config.enrollment_vad,
                             require_labels=require_labels)
            for r in load_manifest(path)]


def train(config, on_epoch=None):
    """Featurize the manifests named in ``config`` and run :func:`fit`."""
    if config.train_manifest is None:
        raise ManifestError("train_manifest is required")
    train_feats = featurize_manifest(config.train_manifest, config)
    if not train_feats:
        raise CadError("empty training set")
    val_feats = featurize_manifest(config.val_manifest, config) if config.val_manifest else None
    embeddings = load_embeddings(config.embeddings) if config.embeddings else None
    model = init_model(config, train_feats)
    return fit(model, train_feats, config, val_feats, embeddings, on_epoch)
