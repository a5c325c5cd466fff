"""Window-level ROC-AUC, run reports and train/test splits."""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from ._validation import check_binary_labels, check_same_length
from .exceptions import AucUndefinedError, CadError

REPORT_VERSION = 1


def _prepare(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = check_binary_labels(np.asarray(labels).ravel())
    check_same_length(s, y)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise AucUndefinedError("AUC undefined: labels contain a single class")
    return s, y, n_pos, n_neg


def roc_auc(scores, labels):
    """Mann-Whitney AUC with average ranks for ties."""
    s, y, n_pos, n_neg = _prepare(scores, labels)
    ranks = rankdata(s, method="average")
    r_pos = ranks[y == 1].sum()
    return float((r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_oracle(scores, labels):
    """O(n^2) pair counting; a tied pair counts one half."""
    s, y, n_pos, n_neg = _prepare(scores, labels)
    pos = s[y == 1][:, None]
    neg = s[y == 0][None, :]
    wins = np.count_nonzero(pos > neg) + 0.5 * np.count_nonzero(pos == neg)
    return float(wins / (n_pos * n_neg))


def safe_auc(scores, labels):
    try:
        return roc_auc(scores, labels)
    except AucUndefinedError:
        return None


@dataclass
class RocReport:
    auc: float
    n_pos: int
    n_neg: int
    per_recording: list = field(default_factory=list)
    split_mode: str = "main"
    checkpoint_path: str = None
    extra: dict = field(default_factory=dict)

    @property
    def pooled_auc(self):
        return self.auc

    @property
    def mean_recording_auc(self):
        vals = [r["auc"] for r in self.per_recording if r["auc"] is not None]
        return float(np.mean(vals)) if vals else None

    def to_json(self):
        out = {
            "format_version": REPORT_VERSION,
            "pooled_auc": self.auc,
            "mean_recording_auc": self.mean_recording_auc,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "per_recording": self.per_recording,
            "split_mode": self.split_mode,
            "checkpoint_path": self.checkpoint_path,
        }
        out.update(self.extra)
        return out


REPORT_SCHEMA = {
    "type": "object",
    "required": ["pooled_auc", "per_recording", "split_mode", "checkpoint_path"],
    "properties": {
        "pooled_auc": {"type": "number", "minimum": 0, "maximum": 1},
        "split_mode": {"enum": ["main", "generalization"]},
        "checkpoint_path": {"type": ["string", "null"]},
        "per_recording": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["recording_id", "auc", "n_pos", "n_neg"],
                "properties": {
                    "recording_id": {"type": "string"},
                    "auc": {"type": ["number", "null"]},
                    "n_pos": {"type": "integer", "minimum": 0},
                    "n_neg": {"type": "integer", "minimum": 0},
                },
            },
        },
    },
}


def build_report(per_recording_scores, split_mode="main", checkpoint_path=None, extra=None):
    """Pooled and per-recording AUCs from ``[(recording_id, scores, labels)]``."""
    rows, all_s, all_y = [], [], []
    for rid, s, y in per_recording_scores:
        y = np.asarray(y, dtype=np.int64)
        rows.append({"recording_id": rid, "auc": safe_auc(s, y),
                     "n_pos": int(y.sum()), "n_neg": int(y.size - y.sum())})
        all_s.append(np.asarray(s, dtype=np.float64))
        all_y.append(y)
    s = np.concatenate(all_s) if all_s else np.zeros(0)
    y = np.concatenate(all_y) if all_y else np.zeros(0, dtype=np.int64)
    return RocReport(roc_auc(s, y), int(y.sum()), int(y.size - y.sum()), rows,
                     split_mode, checkpoint_path, extra or {})


def evaluate(model, recordings, split_mode="main", checkpoint_path=None, embeddings=None):
    """Score every window of every recording with a frozen model."""
    from .model import predict_segments, recording_inputs

    per = []
    for feats in recordings:
        missing = [s for s in feats.segments if s.n_windows and s.labels is None]
        if missing:
            raise CadError(f"recording {feats.recording_id!r} lacks labels")
        enroll, segs = recording_inputs(feats, model, embeddings)
        preds = predict_segments(enroll, segs, model)
        # rank on p: equals ranking on s except where the sigmoid saturates to ties
        p = np.concatenate([pr[1] for pr in preds]) if preds else np.zeros(0)
        per.append((feats.recording_id, p, feats.labels()))
    return build_report(per, split_mode, checkpoint_path)


# -- splits -----------------------------------------------------------------

@dataclass
class SplitSpec:
    mode: str = "main"
    seed: int = 0
    test_fraction: float = 0.2
    train_ids: list = field(default_factory=list)
    test_ids: list = field(default_factory=list)
    train_teachers: set = field(default_factory=set)
    test_teachers: set = field(default_factory=set)

    def __post_init__(self):
        if self.mode not in ("main", "generalization"):
            raise ValueError(f"split mode must be 'main' or 'generalization', got {self.mode!r}")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must be in (0, 1)")


def make_split(records, spec):
    """Random recording split; ``generalization`` also drops test recordings of seen teachers.

    Fills ``spec``'s id and teacher-set fields and returns
    ``(train_records, test_records)``.
    """
    records = list(records)
    n_test = int(round(spec.test_fraction * len(records)))
    if not 0 < n_test < len(records):
        raise ValueError(f"cannot split {len(records)} recordings with test_fraction "
                         f"{spec.test_fraction}")
    order = np.random.default_rng(spec.seed).permutation(len(records))
    test_idx = set(order[:n_test].tolist())
    train = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    seen = {r.teacher_id for r in train}
    if spec.mode == "generalization":
        test = [r for r in test if r.teacher_id not in seen]
        if not test:
            raise ValueError("generalization split infeasible: every test teacher appears in train")
    spec.train_ids = [r.recording_id for r in train]
    spec.test_ids = [r.recording_id for r in test]
    spec.train_teachers = seen
    spec.test_teachers = {r.teacher_id for r in test}
    return train, test


def filter_unseen_teachers(records, train_teachers):
    """Keep only records whose teacher is absent from ``train_teachers``."""
    seen = set(train_teachers)
    return [r for r in records if r.teacher_id not in seen]
