"""Few-shot multi-label intent detection.

An embedding-agnostic engine combining anchored label representations
(label-name embeddings pull prototypes apart) with a meta-calibrated
threshold (a logit-adaptive interpolation blended with a kernel-regression
estimate from the support set).
"""

from .corpus import (
    Domain,
    LabeledUtterance,
    LabelSpace,
    SynthSpec,
    Utterance,
    generate_synthetic,
    load_corpus,
    save_domain,
)
from .embeddings import (
    EmbeddingTable,
    build_toy_table,
    label_name_embedding,
    load_embedding_table,
    sentence_embedding,
    toy_embed,
    write_embedding_table,
)
from .episodes import Episode, SupportSet, build_split, build_support_set
from .errors import ConfigError, DataError, FewshotError, NumericError
from .evaluation import (
    EvalReport,
    ablation_run,
    cross_validate,
    evaluate_split,
    label_count_accuracy,
    micro_f1,
)
from .labelrep import LabelReps, anchored_rep, compute_label_reps, prototype
from .scoring import RelevanceScores, matching_scores, relevance_scores
from .thresholding import (
    Lexicons,
    Prediction,
    RawFeatures,
    ThresholdParams,
    calibrated_threshold,
    default_lexicons,
    estimate_label_count,
    estimate_threshold,
    extract_features,
    kernel_weight,
    kth_score_threshold,
    meta_threshold,
    predict,
    project_features,
)
from .training import (
    ModelParams,
    TrainConfig,
    fit_r,
    load_model,
    pretrain_kernel,
    save_model,
    sigmoid_ce_loss,
    train_pipeline,
    train_scorer,
)

__version__ = "0.1.0"
