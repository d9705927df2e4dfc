"""Bridge from pretrained SSL models into the imitation toolkit's file
formats: per-layer wav2vec 2.0 feature export and mel-window encoder
distillation. Talks to the toolkit only through its FTR1/CKP1 files and
manifests."""

from .distill import DistillReport, distill_encoder
from .exporter import ExportError, ExportJob, export_features, load_model

__all__ = ["DistillReport", "ExportError", "ExportJob", "distill_encoder",
           "export_features", "load_model"]
