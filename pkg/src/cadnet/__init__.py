"""Siamese teacher/student activity detection for classroom audio."""

__version__ = "0.1.0"

from .audio import AudioSignal, FrameParams, LogMelExtractor, log_mel, read_wav, write_wav
from .vad import EnergyVAD, SpeechSegment, VadParams, detect_segments
from .dataset import (FeatureConfig, ManifestRecord, RecordingFeatures, featurize_record,
                      load_manifest)
from .model import CadModel, build_model, forward_pair
from .training import Checkpoint, TrainConfig, fit, load_checkpoint, save_checkpoint, train
from .evaluation import RocReport, auc_oracle, evaluate, make_split, roc_auc
from .synth import ScenarioConfig, generate_corpus
from .estimator import SiameseCAD

__all__ = [
    "AudioSignal", "FrameParams", "LogMelExtractor", "log_mel", "read_wav", "write_wav",
    "EnergyVAD", "SpeechSegment", "VadParams", "detect_segments",
    "FeatureConfig", "ManifestRecord", "RecordingFeatures", "featurize_record", "load_manifest",
    "CadModel", "build_model", "forward_pair",
    "Checkpoint", "TrainConfig", "fit", "load_checkpoint", "save_checkpoint", "train",
    "RocReport", "auc_oracle", "evaluate", "make_split", "roc_auc",
    "ScenarioConfig", "generate_corpus", "SiameseCAD",
]
