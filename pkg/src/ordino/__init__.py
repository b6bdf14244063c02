"""Ordinal classification by aligning images with ordered rank templates.

The library pairs a prompt space of rank-valued text templates with a small
attention block that refines their token embeddings, trains the two
modalities in a two-stage schedule, and measures how well the resulting
text features preserve the label order.
"""

from .config import (
    DataConfig,
    LossConfig,
    ModelConfig,
    RunConfig,
    TrainConfig,
    config_hash,
)
from .data import (
    DatasetSpec,
    OrdinalDataset,
    OrdinalSample,
    distribution_shift_subsample,
    few_shot_subsample,
    generate_synthetic,
    kfold_split,
    load_image_folder,
    save_image_folder,
    stratified_split,
)
from .encoders import (
    EncodedBatch,
    ToyImageEncoder,
    ToyTextEncoder,
    encode_image,
    encode_text,
    normalize,
)
from .errors import (
    BackboneUnavailableError,
    CheckpointError,
    ConfigError,
    DataError,
    DivergenceError,
    LossError,
    NonFiniteError,
    OrdinoError,
    ShapeError,
    TemplateError,
    UnknownTokenError,
    ZeroFeatureError,
)
from .losses import (
    asym_contrastive_i2t,
    asym_contrastive_t2i,
    cop_loss,
    cpce_diversity,
    cpce_tightness,
    cross_entropy,
    label_distance_weights,
    pce_reference,
    scop_loss,
    softmax_probs,
    stage_loss,
)
from .metrics import (
    SimilarityMatrix,
    load_similarity_csv,
    local_ordinality_score,
    mae_accuracy,
    ordinality_score,
    predict_rank,
    save_similarity_csv,
    similarity_matrix,
)
from .prompts import (
    ContextPrompts,
    RankPromptBank,
    RankTemplateSet,
    TaskSpec,
    ToyTokenizer,
    build_templates,
)
from .rankformer import RankFormerParams, init_rankformer, refine
from .training import (
    Checkpoint,
    Model,
    build_model,
    checkpoint_from_model,
    compute_rank_features,
    evaluate,
    generate_run_datasets,
    initial_checkpoint,
    load_checkpoint,
    model_from_checkpoint,
    run_two_stage,
    save_checkpoint,
    sweep,
    train_stage1,
    train_stage2,
)

__version__ = "0.1.0"
