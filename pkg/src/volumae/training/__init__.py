from volumae.training.ablation import ablate  # noqa F401
from volumae.training.artifacts import dump_reconstruction  # noqa F401
from volumae.training.checkpoint import (  # noqa F401
    Checkpoint,
    check_compatible,
    load_checkpoint,
    restore_model,
    save_checkpoint,
)
from volumae.training.loop import TrainingSummary, pretrain_run  # noqa F401
from volumae.training.optimizer import AdamState, adamw_step, learning_rate  # noqa F401
from volumae.training.report import TrainingReport, summarize_metrics  # noqa F401
