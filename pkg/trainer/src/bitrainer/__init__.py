"""Training side of the bi-branch encrypted-inference pipeline.

Trains a conventional teacher on whole images, distills a two-branch
student in two stages (intermediate-representation matching, then softened
logits), and exports the weights as the manifest+blob archive the inference
engine consumes. The engine is a separate package reached only through its
file formats and CLI.
"""

from .config import TrainConfig, load_config
from .data import DatasetSplits, prepare_dataset
from .distill import (
    distill_stage1,
    distill_stage2,
    evaluate,
    representation_loss,
    soft_distill_loss,
    train_plain,
    train_teacher,
)
from .export import export_weights, load_archive_back
from .models import BiBranchNet, Teacher, build_student, build_teacher, pad_into_frame

__version__ = "0.1.0"
