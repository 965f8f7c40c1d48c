"""Zero- and few-shot node classification on text-attributed graphs.

Prompt-derived label scores are smoothed over the graph with a
row-stochastic adjacency, z-scored per class, and used directly for
zero-shot prediction; given a handful of labels per class, a shrunk,
ensemble-averaged MLP calibrates those prior logits further.
"""

from .backends import (
    HttpScoringBackend,
    MockBackend,
    MockVocabModel,
    PriorScoreBackend,
    PriorScoreFile,
    TokenProbQuery,
    http_score_tokens,
    load_prior_scores,
    mock_token_prob,
    save_prior_scores,
)
from .calibrate import (
    CalibratorParams,
    FewShotSplit,
    TrainConfig,
    ensemble_calibrate,
    forward,
    init_params,
    loss,
    parse_train_config,
    scale_columns,
    shrink,
    train_calibrator,
)
from .errors import (
    ConfigError,
    FormatError,
    MalformedResponseError,
    ScoringError,
    TransportError,
)
from .evaluate import (
    ExperimentResult,
    MetricReport,
    PipelineConfig,
    accuracy,
    mann_whitney_u,
    per_class_f1,
    run_experiment,
    sample_few_shot_split,
    weighted_f1,
)
from .graph import Graph, NormalizedAdjacency, build_normalized_adjacency, load_edge_list, propagate
from .prior import (
    LabelVocab,
    PromptTemplate,
    assemble_score_matrix,
    build_prompt,
    label_score,
    load_labels,
    load_node_texts,
    load_predictions,
    normalize_columns,
    prior_pipeline,
    refine_scores,
    save_predictions,
    zero_shot_predict,
)
from .synth import SynthParams, SyntheticDataset, generate_synthetic, write_dataset

__version__ = "0.1.0"
