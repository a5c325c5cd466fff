"""WAV ingestion and 40-band log-mel filterbank features."""

from dataclasses import dataclass, field
import wave

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import WavFormatError, WavParseError

SAMPLE_RATE = 16000
N_MELS = 40
ENERGY_FLOOR = 1e-10
LOG_FLOOR = float(np.log(ENERGY_FLOOR))


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("samples must be 1-d")
        if self.sample_rate_hz != SAMPLE_RATE:
            raise ValueError(f"sample_rate_hz must be {SAMPLE_RATE}, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(x)) or (x.size and np.max(np.abs(x)) > 1.0):
            raise ValueError("samples must be finite and within [-1, 1]")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_sec(self):
        return len(self) / self.sample_rate_hz


@dataclass(frozen=True)
class FrameParams:
    width_samples: int = 400
    step_samples: int = 160
    preemphasis: float = 0.97
    fft_size: int = 512

    def __post_init__(self):
        if not 0 < self.step_samples <= self.width_samples <= self.fft_size:
            raise ValueError(
                "FrameParams require 0 < step_samples <= width_samples <= fft_size, got "
                f"{self.step_samples}, {self.width_samples}, {self.fft_size}"
            )

    @property
    def step_sec(self):
        return self.step_samples / SAMPLE_RATE

    def to_dict(self):
        return {
            "width_samples": self.width_samples,
            "step_samples": self.step_samples,
            "preemphasis": self.preemphasis,
            "fft_size": self.fft_size,
        }


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray
    center_freqs_hz: np.ndarray


@dataclass
class LogMelMatrix:
    values: np.ndarray
    frame_params: FrameParams = field(default_factory=FrameParams)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1, N_MELS)
        self.values = v

    @property
    def n_frames(self):
        return self.values.shape[0]


# -- WAV I/O ---------------------------------------------------------------

def read_wav(path):
    """Read a PCM16 mono 16 kHz WAV file into an :class:`AudioSignal`."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            comptype = wf.getcomptype()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise WavFormatError(f"{path}: unsupported encoding ({msg}); expected PCM16") from exc
        raise WavParseError(f"{path}: not a valid RIFF/WAVE file ({msg})") from exc
    except EOFError as exc:
        raise WavParseError(f"{path}: truncated WAV header") from exc
    if channels != 1:
        raise WavFormatError(f"{path}: expected 1 channel, got {channels} channels")
    if comptype != "NONE" or width != 2:
        raise WavFormatError(f"{path}: expected PCM16 encoding, got {8 * width}-bit {comptype}")
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: expected sample rate {SAMPLE_RATE} Hz, got {rate} Hz")
    if len(raw) != n_frames * 2:
        raise WavParseError(
            f"{path}: truncated data chunk ({len(raw)} bytes, header declares {n_frames * 2})"
        )
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return AudioSignal(pcm / 32768.0)


def to_pcm16(samples):
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 32767 / 32768)
    return np.round(x * 32768.0).astype("<i2")


def write_wav(path, signal):
    samples = signal.samples if isinstance(signal, AudioSignal) else signal
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(SAMPLE_RATE)
        wf.writeframes(to_pcm16(samples).tobytes())


# -- framing and spectra ------------------------------------------------------

def frame_count(n_samples, width, step):
    if n_samples < width:
        return 0
    return 1 + (n_samples - width) // step


def raw_frames(samples, width, step):
    """Strided (read-only) view of the frames of ``samples``; no windowing."""
    x = np.asarray(samples, dtype=np.float64)
    n = frame_count(x.shape[0], width, step)
    if n == 0:
        return np.zeros((0, width))
    return np.lib.stride_tricks.sliding_window_view(x, width)[::step][:n]


def preemphasize(samples, coeff):
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    out = np.empty_like(x)
    out[0] = x[0]
    out[1:] = x[1:] - coeff * x[:-1]
    return out


def frame_signal(signal, params=FrameParams()):
    """Pre-emphasize the whole signal, cut it into frames, and apply a Hamming window.

    Returns an array of shape ``(n_frames, width_samples)``; a signal shorter
    than one frame gives zero frames.
    """
    x = preemphasize(signal.samples, params.preemphasis)
    frames = raw_frames(x, params.width_samples, params.step_samples)
    return frames * np.hamming(params.width_samples)


def power_spectrum(frame, fft_size=512):
    """|DFT_k|^2 of the zero-padded frame for k = 0..fft_size/2.

    Accepts a single frame or a stack of frames along the last axis.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] > fft_size:
        raise ValueError(f"frame length {frame.shape[-1]} exceeds fft_size {fft_size}")
    spec = np.fft.rfft(frame, n=fft_size, axis=-1)
    return spec.real**2 + spec.imag**2


# -- mel scale -------------------------------------------------------------

def mel_scale(f_hz):
    f = np.asarray(f_hz, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError(f"frequency must be >= 0 Hz, got {f_hz}")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(mel):
    m = np.asarray(mel, dtype=np.float64)
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


def mel_filterbank(n_mels=N_MELS, fft_size=512, sample_rate=SAMPLE_RATE,
                   f_min=0.0, f_max=None):
    """Triangular peak-1 filters evenly spaced on the HTK mel scale.

    Triangles are evaluated at the exact bin frequencies (no bin-index
    rounding), so even the narrow low-frequency filters stay non-degenerate.
    """
    f_max = sample_rate / 2 if f_max is None else f_max
    edges_hz = mel_to_hz(np.linspace(mel_scale(f_min), mel_scale(f_max), n_mels + 2))
    bins_hz = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (bins_hz - lo) / (mid - lo)
    falling = (hi - bins_hz) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    return MelFilterbank(weights=weights, center_freqs_hz=edges_hz[1:-1].copy())


_DEFAULT_FB = {}


def default_filterbank(fft_size=512):
    if fft_size not in _DEFAULT_FB:
        _DEFAULT_FB[fft_size] = mel_filterbank(fft_size=fft_size)
    return _DEFAULT_FB[fft_size]


def log_mel(signal, params=FrameParams(), fb=None):
    """Per-frame natural-log mel energies floored at ``ln(1e-10)``."""
    fb = default_filterbank(params.fft_size) if fb is None else fb
    frames = frame_signal(signal, params)
    if frames.shape[0] == 0:
        return LogMelMatrix(np.zeros((0, fb.weights.shape[0])), params)
    energies = power_spectrum(frames, params.fft_size) @ fb.weights.T
    return LogMelMatrix(np.log(np.maximum(energies, ENERGY_FLOOR)), params)


class LogMelExtractor(BaseEstimator, TransformerMixin):
    """Stateless transformer mapping a list of signals to log-mel matrices."""

    def __init__(self, width_samples=400, step_samples=160, preemphasis=0.97, fft_size=512):
        self.width_samples = width_samples
        self.step_samples = step_samples
        self.preemphasis = preemphasis
        self.fft_size = fft_size

    def fit(self, X=None, y=None):
        self.frame_params_ = FrameParams(self.width_samples, self.step_samples,
                                         self.preemphasis, self.fft_size)
        self.filterbank_ = mel_filterbank(fft_size=self.fft_size)
        return self

    def transform(self, X):
        if not hasattr(self, "frame_params_"):
            self.fit()
        return [log_mel(s, self.frame_params_, self.filterbank_) for s in X]
