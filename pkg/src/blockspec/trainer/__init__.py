from .data import (
    BlockSampler,
    TrainBatch,
    all_blocks,
    compute_features,
    make_batch,
    read_corpus,
    sample_corpus,
    validate_corpus,
    write_corpus,
)
from .losses import block_losses, causal_states_tf, causal_states_ttt, combined_loss, corrected_logits
from .schedule import CurriculumSchedule, curriculum_lambda, position_weights
from .train import (
    BLOCK_MODES,
    CURVE_COLUMNS,
    MODES,
    LossRecord,
    TrainResult,
    ar_train_step,
    block_logits,
    heldout_losses,
    lm_loss,
    mode_lambda,
    read_curves,
    train_run,
    train_step,
    train_target_lm,
    write_curves,
)
