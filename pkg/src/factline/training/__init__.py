from factline.training.losses import (
    TASKS,
    classification_loss,
    ec_quadruplet_loss,
    entity_relation_loss,
    nli_loss,
    sentence_decoding_loss,
    task_loss,
    triplet_bce_loss,
)
from factline.training.loop import (
    ERExample,
    HistoryRow,
    LabeledFact,
    MissingDatasetError,
    TrainConfig,
    TrainResult,
    labeled_fact,
    train,
)
from factline.training.schedule import default_window, interleave_tasks, lr_schedule

__all__ = [
    "TASKS", "ERExample", "HistoryRow", "LabeledFact", "MissingDatasetError", "TrainConfig", "TrainResult",
    "classification_loss", "default_window", "ec_quadruplet_loss", "entity_relation_loss", "interleave_tasks",
    "labeled_fact", "lr_schedule", "nli_loss", "sentence_decoding_loss", "task_loss", "train", "triplet_bce_loss",
]
