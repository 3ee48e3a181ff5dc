"""Dual-branch class-incremental fault diagnosis.

A class-specific encoder learns discriminative features under supervised
contrastive training with relational distillation; a class-agnostic encoder
preserves shared signal structure through paired-view contrastive learning
with cross-session alignment.  Cross-attention fuses the two (gradient-blocked
toward the class-agnostic branch), exemplar replay with boundary-aware
selection fights forgetting, and a balanced random forest over frozen
embeddings makes the final call.
"""

__version__ = "0.1.0"

from .analysis import cka_matrix, cka_similarity
from .attention import AttentionConfig, MultiSemanticCrossAttention
from .classifiers import (
    ForestModel,
    balanced_subset,
    brf_fit,
    brf_predict,
    cart_fit,
    forest_from_json,
    forest_to_json,
    knn_baseline,
    linear_head_baseline,
)
from .config import RunConfig, apply_ablation, finetuning_config, preset_config
from .data import (
    ChannelScaler,
    GeneratorSpec,
    SessionSchedule,
    SignalSample,
    build_schedule,
    export_csv,
    generate_synthetic,
    ingest_csv,
    make_views,
    segment_shuffle_augment,
)
from .encoder import EncoderConfig, Moia, MoiaConfig, ResNet1d
from .harness import RunResult, SessionReport, evaluate, run_experiment
from .memory import ExemplarMemory, baep_select, herding_select, quota, update_memory
from .reporting import report_emit, report_from_files
