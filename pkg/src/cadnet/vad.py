"""Energy-threshold voice activity detection with gap-merge hangover."""

import csv
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .audio import SAMPLE_RATE, AudioSignal, FrameParams, raw_frames


@dataclass(frozen=True)
class VadParams:
    margin_db: float = 12.0
    min_speech_ms: int = 200
    min_gap_ms: int = 300
    floor_db: float = -100.0

    def __post_init__(self):
        if not self.margin_db > 0:
            raise ValueError(f"margin_db must be > 0, got {self.margin_db}")
        if self.min_speech_ms <= 0 or self.min_gap_ms <= 0:
            raise ValueError("min_speech_ms and min_gap_ms must be > 0")


@dataclass(frozen=True)
class SpeechSegment:
    start_sec: float
    end_sec: float

    def __post_init__(self):
        if not 0 <= self.start_sec < self.end_sec:
            raise ValueError(f"invalid segment [{self.start_sec}, {self.end_sec})")

    @property
    def duration_sec(self):
        return self.end_sec - self.start_sec


def frame_energies_db(signal, params=FrameParams(), floor_db=-100.0):
    """Frame RMS in dB, ``20 log10(max(rms, 1e-5))`` clamped at ``floor_db``.

    Energies are measured on the raw samples (no pre-emphasis, no taper).
    """
    frames = raw_frames(signal.samples, params.width_samples, params.step_samples)
    rms = np.sqrt(np.mean(frames**2, axis=1)) if frames.shape[0] else np.zeros(0)
    db = 20.0 * np.log10(np.maximum(rms, 1e-5))
    return np.maximum(db, floor_db)


def _runs(mask):
    """(start, stop) frame index pairs of the True runs of ``mask``."""
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def detect_segments(signal, vad=VadParams(), fp=FrameParams()):
    """Speech segments of ``signal``, sorted and disjoint.

    A frame counts as speech when its energy reaches the 10th-percentile
    frame energy plus ``margin_db``. Runs separated by less than
    ``min_gap_ms`` are merged, then runs shorter than ``min_speech_ms`` are
    dropped. Frame runs ``[a, b)`` map to ``[a * step, (b - 1) * step + width)``
    in seconds, clipped to the signal duration.
    """
    energies = frame_energies_db(signal, fp, vad.floor_db)
    if energies.size == 0:
        return []
    threshold = np.percentile(energies, 10) + vad.margin_db
    step, width = fp.step_samples, fp.width_samples

    runs = []
    for a, b in _runs(energies >= threshold):
        if runs:
            gap_ms = 1000.0 * (a * step - ((runs[-1][1] - 1) * step + width)) / SAMPLE_RATE
            if gap_ms < vad.min_gap_ms:
                runs[-1] = (runs[-1][0], b)
                continue
        runs.append((a, b))

    duration = signal.duration_sec
    segments = []
    for a, b in runs:
        start = a * step / SAMPLE_RATE
        end = min(((b - 1) * step + width) / SAMPLE_RATE, duration)
        if 1000.0 * (end - start) >= vad.min_speech_ms:
            segments.append(SpeechSegment(start, end))
    return segments


def slice_segment(signal, seg):
    """Sample-exact slice ``[round(start*sr), round(end*sr))``."""
    lo = int(round(seg.start_sec * SAMPLE_RATE))
    hi = int(round(seg.end_sec * SAMPLE_RATE))
    if lo < 0 or hi > len(signal) or lo >= hi:
        raise ValueError(
            f"segment [{seg.start_sec}, {seg.end_sec}) outside signal of {signal.duration_sec} s"
        )
    return AudioSignal(signal.samples[lo:hi])


def write_segments_csv(path, segments):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start_sec", "end_sec"])
        for seg in segments:
            writer.writerow([f"{seg.start_sec:.3f}", f"{seg.end_sec:.3f}"])


def read_segments_csv(path):
    with open(path, newline="") as fh:
        return [SpeechSegment(float(r["start_sec"]), float(r["end_sec"]))
                for r in csv.DictReader(fh)]


class EnergyVAD(BaseEstimator):
    """Estimator wrapper: ``transform`` maps signals to their speech segments.

    With ``enabled=False`` every signal becomes a single whole-file segment.
    """

    def __init__(self, margin_db=12.0, min_speech_ms=200, min_gap_ms=300,
                 floor_db=-100.0, enabled=True):
        self.margin_db = margin_db
        self.min_speech_ms = min_speech_ms
        self.min_gap_ms = min_gap_ms
        self.floor_db = floor_db
        self.enabled = enabled

    def fit(self, X=None, y=None):
        self.params_ = VadParams(self.margin_db, self.min_speech_ms, self.min_gap_ms, self.floor_db)
        return self

    def segments(self, signal, fp=FrameParams()):
        if not hasattr(self, "params_"):
            self.fit()
        if not self.enabled:
            return [SpeechSegment(0.0, signal.duration_sec)] if len(signal) else []
        return detect_segments(signal, self.params_, fp)

    def transform(self, X):
        return [self.segments(s) for s in X]
