"""Training-time symptom detection and fault localization for small feed-forward nets."""

from nndiag.detectors import MonitorConfig
from nndiag.diagnosis import MessageCode, SymptomCode, map_symptom
from nndiag.engine import LayerSpec, ModelSpec, build_model
from nndiag.monitor import DiagnosisReport, run_diagnosis

__all__ = [
    "DiagnosisReport",
    "LayerSpec",
    "MessageCode",
    "ModelSpec",
    "MonitorConfig",
    "SymptomCode",
    "build_model",
    "map_symptom",
    "run_diagnosis",
]

__version__ = "0.1.0"
