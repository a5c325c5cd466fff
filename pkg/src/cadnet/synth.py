"""Deterministic synthetic classrooms built from harmonic voices.

Each speaker is a sum of 8 harmonics with a slight vibrato and a syllable-rate
amplitude envelope. A recording alternates teacher and student turns with
random gaps and occasional overlaps, adds white noise at a target SNR, and
ships with a label track and a separate clean teacher enrollment file.
"""

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, AudioSignal, write_wav
from .dataset import LabelTrack, ManifestRecord, write_labels, write_manifest

N_HARMONICS = 8
FADE_SEC = 0.05
SPEECH_RMS = 0.1

PRESETS = {
    "online": {"snr_db": 30.0},
    "offline": {"snr_db": 10.0},
    "hard": {"snr_db": 30.0, "student_f0": (120.0, 260.0)},
}


@dataclass(frozen=True)
class SpeakerProfile:
    f0_hz: float
    harmonic_amps: tuple
    vibrato_rate_hz: float
    vibrato_depth: float
    role: str
    syllable_rate_hz: float = 4.0


@dataclass(frozen=True)
class ScenarioConfig:
    n_recordings: int = 10
    duration_sec: float = 120.0
    teacher_f0: tuple = (100.0, 180.0)
    student_f0: tuple = (180.0, 300.0)
    utterance_sec: tuple = (1.0, 5.0)
    gap_sec: tuple = (0.2, 1.0)
    overlap_sec: tuple = (0.2, 1.0)
    overlap_prob: float = 0.15
    snr_db: float = 30.0
    enrollment_sec: float = 20.0
    n_students: int = 2
    teacher_reuse: float = 0.0
    seed: int = 0
    mode: str = "online"

    def __post_init__(self):
        for name in ("teacher_f0", "student_f0", "utterance_sec", "gap_sec", "overlap_sec"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must be an ordered positive range, got {(lo, hi)}")
        if not 0 <= self.overlap_prob <= 1:
            raise ValueError("overlap_prob must be in [0, 1]")
        if not 0 <= self.teacher_reuse < 1:
            raise ValueError("teacher_reuse must be in [0, 1)")
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.n_recordings < 0 or self.duration_sec <= 0 or self.enrollment_sec <= 0:
            raise ValueError("n_recordings, duration_sec and enrollment_sec must be positive")

    @classmethod
    def preset(cls, mode="online", **overrides):
        if mode not in PRESETS:
            raise ValueError(f"unknown preset {mode!r}; choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[mode], "mode": mode, **overrides})

    def to_dict(self):
        return asdict(self)


@dataclass
class GeneratedRecording:
    recording_id: str
    wav: AudioSignal
    labels: LabelTrack
    enrollment: list
    teacher_id: str
    teacher: SpeakerProfile = None
    students: list = field(default_factory=list)
    noise_rms: float = 0.0


def sample_speaker(rng, role, config):
    """Draw a voice: f0 uniform in the role range, amplitudes ``1/k**gamma``."""
    lo, hi = config.teacher_f0 if role == "teacher" else config.student_f0
    f0 = rng.uniform(lo, hi)
    gamma = rng.uniform(0.8, 1.6)
    amps = tuple((1.0 / np.arange(1, N_HARMONICS + 1) ** gamma).tolist())
    return SpeakerProfile(
        f0_hz=float(f0),
        harmonic_amps=amps,
        vibrato_rate_hz=float(rng.uniform(4.0, 7.0)),
        vibrato_depth=float(rng.uniform(0.002, 0.008)),
        role=role,
        syllable_rate_hz=float(rng.uniform(3.0, 5.0)),
    )


def _fade(n):
    n_fade = min(int(FADE_SEC * SAMPLE_RATE), n // 2)
    env = np.ones(n)
    if n_fade > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(n_fade) / n_fade))
        env[:n_fade] = ramp
        env[n - n_fade:] = ramp[::-1]
        env[-1] = 0.0
    return env


def render_utterance(profile, duration_sec, rng):
    """Harmonic tone with vibrato, syllabic envelope and 50 ms raised-cosine fades."""
    if duration_sec <= 0:
        raise ValueError("duration must be > 0")
    n = int(round(duration_sec * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    vib_phase = rng.uniform(0, 2 * np.pi)
    inst_f = profile.f0_hz * (1.0 + profile.vibrato_depth
                             * np.sin(2 * np.pi * profile.vibrato_rate_hz * t + vib_phase))
    phase = 2 * np.pi * np.cumsum(inst_f) / SAMPLE_RATE
    offsets = rng.uniform(0, 2 * np.pi, N_HARMONICS)
    x = np.zeros(n)
    for k, (a, off) in enumerate(zip(profile.harmonic_amps, offsets), start=1):
        x += a * np.sin(k * phase + off)
    syl = 1.0 + 0.8 * np.sin(2 * np.pi * profile.syllable_rate_hz * t + rng.uniform(0, 2 * np.pi))
    x *= syl * _fade(n)
    rms = np.sqrt(np.mean(x**2))
    if rms > 0:
        x *= SPEECH_RMS / rms
    return AudioSignal(np.clip(x, -1.0, 1.0))


def _turns(rng, config, speakers):
    """Alternating (start, end, speaker_index) turns; index 0 is the teacher."""
    turns = []
    t = rng.uniform(0.2, 1.0)
    role = int(rng.integers(0, 2))
    n_overlaps = 0
    while True:
        dur = rng.uniform(*config.utterance_sec)
        end = min(t + dur, config.duration_sec - 0.1)
        if end - t < config.utterance_sec[0] * 0.5:
            break
        who = 0 if role == 0 else 1 + int(rng.integers(0, len(speakers) - 1))
        turns.append((t, end, who))
        role = 1 - role
        if rng.uniform() < config.overlap_prob:
            ov = min(rng.uniform(*config.overlap_sec), 0.5 * (end - t))
            t = end - ov
            n_overlaps += 1
        else:
            t = end + rng.uniform(*config.gap_sec)
        if t >= config.duration_sec - 0.1:
            break
    return turns, n_overlaps


def render_enrollment(profile, config, rng):
    """Clean teacher-only audio of ``enrollment_sec`` with silent gaps between utterances."""
    total = int(round(config.enrollment_sec * SAMPLE_RATE))
    x = np.zeros(total)
    t = 0.3
    while t < config.enrollment_sec - 0.3 - config.utterance_sec[0] * 0.5:
        dur = min(rng.uniform(*config.utterance_sec), config.enrollment_sec - 0.3 - t)
        u = render_utterance(profile, dur, rng).samples
        i = int(round(t * SAMPLE_RATE))
        x[i:i + u.size] += u[:total - i]
        t += dur + rng.uniform(0.4, 0.8)
    return AudioSignal(x)


def generate_recording(config, rng, recording_id="rec0000", teacher=None, teacher_id="T000"):
    """Render one classroom recording plus its teacher enrollment."""
    teacher = sample_speaker(rng, "teacher", config) if teacher is None else teacher
    students = [sample_speaker(rng, "student", config) for _ in range(config.n_students)]
    speakers = [teacher] + students
    n = int(round(config.duration_sec * SAMPLE_RATE))
    clean = np.zeros(n)
    active = np.zeros(n, dtype=bool)
    intervals = []
    turns, _ = _turns(rng, config, speakers)
    for start, end, who in turns:
        u = render_utterance(speakers[who], end - start, rng).samples
        i = int(round(start * SAMPLE_RATE))
        j = min(i + u.size, n)
        clean[i:j] += u[:j - i]
        active[i:j] = True
        intervals.append((round(start, 4), round(end, 4), "teacher" if who == 0 else "student"))
    speech_rms = float(np.sqrt(np.mean(clean[active] ** 2))) if active.any() else SPEECH_RMS
    noise_rms = speech_rms / 10 ** (config.snr_db / 20.0)
    noisy = np.clip(clean + rng.normal(0.0, noise_rms, n), -1.0, 1.0)
    enrollment = render_enrollment(teacher, config, rng)
    return GeneratedRecording(recording_id, AudioSignal(noisy),
                              LabelTrack(intervals, config.duration_sec), [enrollment],
                              teacher_id, teacher, students, noise_rms)


def teacher_assignment(n_recordings, reuse):
    """Teacher index per recording; ``reuse`` is the fraction of recordings with a repeat teacher."""
    n_teachers = max(1, int(math.ceil(n_recordings * (1.0 - reuse) - 1e-9)))
    return [i % n_teachers for i in range(n_recordings)], n_teachers


def _rng(seed, kind, index):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(kind, index)))


def iter_recordings(config):
    assignment, n_teachers = teacher_assignment(config.n_recordings, config.teacher_reuse)
    teachers = [sample_speaker(_rng(config.seed, 0, k), "teacher", config)
                for k in range(n_teachers)]
    for i, k in enumerate(assignment):
        yield generate_recording(config, _rng(config.seed, 1, i), f"rec{i:04d}",
                                 teachers[k], f"T{k:03d}")


def generate_corpus(config, out_dir):
    """Write WAVs, label CSVs, enrollment WAVs, ``manifest.jsonl`` and ``synth_config.json``."""
    out = Path(out_dir)
    for sub in ("wav", "labels", "enroll"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    records = []
    for rec in iter_recordings(config):
        wav = out / "wav" / f"{rec.recording_id}.wav"
        lab = out / "labels" / f"{rec.recording_id}.csv"
        enroll = [out / "enroll" / f"{rec.recording_id}_teacher{k}.wav"
                  for k in range(len(rec.enrollment))]
        write_wav(wav, rec.wav)
        write_labels(lab, rec.labels)
        for p, sig in zip(enroll, rec.enrollment):
            write_wav(p, sig)
        records.append(ManifestRecord(rec.recording_id, wav, tuple(enroll), rec.teacher_id, lab))
    manifest = out / "manifest.jsonl"
    write_manifest(manifest, records)
    with open(out / "synth_config.json", "w") as fh:
        json.dump({"format_version": 1, "config": config.to_dict()}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def with_overrides(config, **kw):
    return replace(config, **kw)
