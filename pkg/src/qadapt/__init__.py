"""Unsupervised domain adaptation for extractive span QA.

Pipeline: supervised source training, confidence-filtered pseudo-label
self-training on the target domain, and conditional adversarial feature
alignment, alternated per epoch.
"""

from .adversary import (
    Discriminator,
    DiscriminatorConfig,
    DomainBatch,
    RandomizedMap,
    adversarial_loss,
    adversarial_step,
    entropy_weight,
    gradient_reversal,
    init_randomized_map,
    multilinear_embed,
    sample_entropy,
)
from .checkpoint import Checkpoint, load_checkpoint, restore_model, save_checkpoint
from .corpus import (
    AnswerSpan,
    EncodedWindow,
    RCExample,
    StyleShift,
    SyntheticTaskSpec,
    Vocabulary,
    best_f1_span,
    build_conversational_question,
    extract_cloze_span,
    generate_synthetic_domain_pair,
    load_dataset,
    window_examples,
    write_span_json,
)
from .errors import ConfigurationError, DatasetParseError
from .evaluation import (
    EvalResult,
    TransferMatrix,
    build_force_graph,
    compute_force,
    emit_graph,
    evaluate,
    exact_match,
    f1_score,
    normalize_answer,
    probe_threshold,
    score_predictions,
    zero_shot_matrix,
)
from .model import EncoderConfig, ModelOutput, SpanModel, collate_windows, span_loss
from .pipeline import (
    ABLATION_TOGGLES,
    EpochLog,
    PipelineConfig,
    RunResult,
    adversarial_epoch,
    balance_domains,
    pretrain_source,
    run_case,
    self_train_epoch,
)
from .pseudo import (
    NBestList,
    PseudoLabeledSet,
    SpanPrediction,
    aggregate_windows,
    filter_pseudo_labels,
    generating_probability,
    n_best_spans,
    predict_spans,
)

__version__ = "0.1.0"
