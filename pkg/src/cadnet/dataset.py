"""Manifests, label tracks, fixed-length windows and the feature cache."""

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import N_MELS, FrameParams, LogMelMatrix, log_mel, read_wav
from .exceptions import ManifestError
from .vad import EnergyVAD, SpeechSegment, slice_segment

SPEAKERS = ("teacher", "student")
_SPAN_EPS = 1e-9


@dataclass(frozen=True)
class FeatureConfig:
    W: int = 40

    def __post_init__(self):
        if self.W < 1:
            raise ValueError(f"W must be >= 1, got {self.W}")


@dataclass(frozen=True)
class ManifestRecord:
    recording_id: str
    wav_path: Path
    teacher_sample_paths: tuple
    teacher_id: str
    label_path: Path = None


@dataclass
class LabelTrack:
    intervals: list
    duration: float

    def __post_init__(self):
        for start, end, speaker in self.intervals:
            if speaker not in SPEAKERS:
                raise ManifestError(f"unknown speaker {speaker!r}")
            if not (0 <= start < end <= self.duration + _SPAN_EPS):
                raise ManifestError(
                    f"interval [{start}, {end}) outside recording of {self.duration} s")

    def speaker_union(self, speaker):
        """Sorted, merged intervals of one speaker."""
        spans = sorted((s, e) for s, e, who in self.intervals if who == speaker)
        merged = []
        for s, e in spans:
            if merged and s <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], e)
            else:
                merged.append([s, e])
        return [tuple(m) for m in merged]


@dataclass
class Window:
    frames: np.ndarray
    span: tuple


# -- manifest ------------------------------------------------------------

_REQUIRED = ("recording_id", "wav", "teacher_wavs", "teacher_id")


def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() else base / p


def load_manifest(path):
    """Parse a JSON-lines manifest; relative paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    records, seen = [], set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ManifestError(f"{path}:{lineno}: record must be a JSON object")
            missing = [k for k in _REQUIRED if k not in obj]
            if missing:
                raise ManifestError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
            teacher_wavs = obj["teacher_wavs"]
            if not isinstance(teacher_wavs, list) or not teacher_wavs:
                raise ManifestError(f"{path}:{lineno}: teacher_wavs must be a non-empty array")
            rid = str(obj["recording_id"])
            if rid in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate recording_id {rid!r}")
            seen.add(rid)
            labels = obj.get("labels")
            records.append(ManifestRecord(
                recording_id=rid,
                wav_path=_resolve(base, obj["wav"]),
                teacher_sample_paths=tuple(_resolve(base, p) for p in teacher_wavs),
                teacher_id=str(obj["teacher_id"]),
                label_path=None if labels is None else _resolve(base, labels),
            ))
    return records


def record_to_json(rec, base=None):
    def rel(p):
        if base is None:
            return str(p)
        return os.path.relpath(Path(p).resolve(), base)

    obj = {"recording_id": rec.recording_id, "wav": rel(rec.wav_path),
           "teacher_wavs": [rel(p) for p in rec.teacher_sample_paths]}
    if rec.label_path is not None:
        obj["labels"] = rel(rec.label_path)
    obj["teacher_id"] = rec.teacher_id
    return obj


def write_manifest(path, records):
    path = Path(path)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec, path.parent.resolve())) + "\n")


# -- label tracks --------------------------------------------------------

def read_labels(path, duration):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["start_sec", "end_sec", "speaker"]:
            raise ManifestError(f"{path}: expected header start_sec,end_sec,speaker")
        for lineno, r in enumerate(reader, start=2):
            try:
                rows.append((float(r["start_sec"]), float(r["end_sec"]), r["speaker"].strip()))
            except (TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: bad label row") from exc
    return LabelTrack(rows, duration)


def write_labels(path, track):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start_sec", "end_sec", "speaker"])
        for s, e, who in track.intervals:
            writer.writerow([f"{s:.4f}", f"{e:.4f}", who])


# -- windows -------------------------------------------------------------

def assemble_windows(features, cfg=FeatureConfig(), start_sec=0.0):
    """Non-overlapping ``W``-frame windows; the trailing partial window is dropped.

    Spans advance by ``W`` frame steps, so consecutive spans tile the
    segment without overlap.
    """
    values = features.values
    step = features.frame_params.step_sec
    n = values.shape[0] // cfg.W
    win_sec = cfg.W * step
    return [Window(values[j * cfg.W:(j + 1) * cfg.W],
                   (start_sec + j * win_sec, start_sec + (j + 1) * win_sec))
            for j in range(n)]


def _overlap(spans, lo, hi):
    return sum(max(0.0, min(e, hi) - max(s, lo)) for s, e in spans)


def label_windows(windows, track):
    """1 when teacher speech covers at least half the window span (ties go to teacher)."""
    teacher = track.speaker_union("teacher")
    labels = []
    for w in windows:
        lo, hi = w.span
        if lo < -_SPAN_EPS or hi > track.duration + _SPAN_EPS:
            raise ValueError(f"window span [{lo}, {hi}) outside track of {track.duration} s")
        covered = _overlap(teacher, lo, hi)
        labels.append(int(covered >= 0.5 * (hi - lo) - _SPAN_EPS))
    return np.asarray(labels, dtype=np.int64)


def window_stats(frames):
    """Per-bin mean and population std over the frames of each window.

    ``frames`` is ``(n_windows, W, 40)``; the result is ``(n_windows, 80)``.
    """
    frames = np.asarray(frames, dtype=np.float64)
    return np.concatenate([frames.mean(axis=1), frames.std(axis=1)], axis=1)


# -- featurized recordings -------------------------------------------------

@dataclass
class FeaturizedSegment:
    start_sec: float
    end_sec: float
    logmel: np.ndarray
    W: int = 40
    step_sec: float = 0.01
    labels: np.ndarray = None
    stats: np.ndarray = field(init=False, repr=False)
    spans: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.logmel = np.asarray(self.logmel, dtype=np.float64).reshape(-1, N_MELS)
        n = self.logmel.shape[0] // self.W
        blocks = self.logmel[:n * self.W].reshape(n, self.W, N_MELS)
        self.stats = window_stats(blocks) if n else np.zeros((0, 2 * N_MELS))
        win = self.W * self.step_sec
        self.spans = np.column_stack([self.start_sec + win * np.arange(n),
                                      self.start_sec + win * np.arange(1, n + 1)])

    @property
    def n_windows(self):
        return self.stats.shape[0]

    def windows(self):
        return [Window(self.logmel[j * self.W:(j + 1) * self.W], tuple(self.spans[j]))
                for j in range(self.n_windows)]


@dataclass
class RecordingFeatures:
    recording_id: str
    teacher_id: str
    segments: list
    enrollment: list
    frame_params: FrameParams = field(default_factory=FrameParams)

    @property
    def n_windows(self):
        return sum(s.n_windows for s in self.segments)

    @property
    def enrollment_windows(self):
        return sum(s.n_windows for s in self.enrollment)

    def labels(self):
        parts = [s.labels for s in self.segments if s.n_windows]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def featurize_signal(signal, vad, fp=FrameParams(), cfg=FeatureConfig()):
    segs = []
    for seg in vad.segments(signal, fp):
        lm = log_mel(slice_segment(signal, seg), fp)
        segs.append(FeaturizedSegment(seg.start_sec, seg.end_sec, lm.values, cfg.W, fp.step_sec))
    return segs


def featurize_record(rec, vad=None, fp=FrameParams(), cfg=FeatureConfig(),
                     enrollment_vad=True, require_labels=False):
    """Run VAD, log-mel and windowing for one manifest record (both branches)."""
    vad = EnergyVAD() if vad is None else vad
    signal = read_wav(rec.wav_path)
    segments = featurize_signal(signal, vad, fp, cfg)
    enroll_vad = vad if enrollment_vad else EnergyVAD(enabled=False)
    enrollment = []
    for p in rec.teacher_sample_paths:
        enrollment.extend(featurize_signal(read_wav(p), enroll_vad, fp, cfg))
    if rec.label_path is not None:
        track = read_labels(rec.label_path, signal.duration_sec)
        for seg in segments:
            seg.labels = label_windows(seg.windows(), track)
    elif require_labels:
        raise ManifestError(f"recording {rec.recording_id!r} has no label file")
    return RecordingFeatures(rec.recording_id, rec.teacher_id, segments, enrollment, fp)


# -- feature cache ---------------------------------------------------------

def _seg_to_json(seg):
    out = {"start_sec": seg.start_sec, "end_sec": seg.end_sec, "logmel": seg.logmel.tolist()}
    if seg.labels is not None:
        out["labels"] = seg.labels.tolist()
    return out


def save_feature_cache(path, feats):
    obj = {
        "recording_id": feats.recording_id,
        "teacher_id": feats.teacher_id,
        "frame_params": feats.frame_params.to_dict(),
        "segments": [_seg_to_json(s) for s in feats.segments],
        "enrollment": [_seg_to_json(s) for s in feats.enrollment],
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_feature_cache(path, cfg=FeatureConfig()):
    try:
        with open(path) as fh:
            obj = json.load(fh)
        fp = FrameParams(**obj["frame_params"])

        def seg(d):
            s = FeaturizedSegment(d["start_sec"], d["end_sec"], np.asarray(d["logmel"]),
                                  cfg.W, fp.step_sec)
            if "labels" in d:
                s.labels = np.asarray(d["labels"], dtype=np.int64)
            return s

        return RecordingFeatures(obj["recording_id"], obj.get("teacher_id", ""),
                                 [seg(d) for d in obj["segments"]],
                                 [seg(d) for d in obj.get("enrollment", [])], fp)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: malformed feature cache ({exc})") from exc


def as_logmel(seg, fp=FrameParams()):
    return LogMelMatrix(seg.logmel, fp)


def segment_of(seg):
    return SpeechSegment(seg.start_sec, seg.end_sec)
