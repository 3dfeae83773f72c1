"""Taxonomy expansion with Gaussian box embeddings.

Concepts are represented as axis-aligned boxes whose per-axis extents double
as the standard deviations of a diagonal Gaussian.  A small projection network
maps pretrained text embeddings onto boxes, trained self-supervised from the
edges of an existing taxonomy, and new concepts are attached by ranking
candidate parents with closed-form Gaussian energies.
"""

from gaussbox.embeddings import (
    EmbeddingError,
    EmbeddingTable,
    load_embeddings,
    pseudo_clustered_embeddings,
    pseudo_hash_embeddings,
    save_embeddings,
)
from gaussbox.geometry import (
    Box,
    DiagGaussian,
    bhattacharyya_coefficient,
    bhattacharyya_distance,
    box_to_gaussian,
    gaussian_to_box,
    kl_divergence,
    log_volume,
)
from gaussbox.losses import (
    GaussTriple,
    LossHyper,
    align_loss,
    asym_loss,
    batch_triple_terms,
    clip_reg,
    diverge_loss,
    min_var_reg,
    overall_loss,
    sym_loss,
)
from gaussbox.projection import (
    CheckpointError,
    ProjectionParams,
    forward,
    forward_batch,
    init_params,
    load_params,
    num_params,
    save_params,
)
from gaussbox.ranking import (
    MetricReport,
    RankedPrediction,
    compute_metrics,
    evaluate_queries,
    fisher_combine,
    rank_anchors,
    save_predictions,
    save_report,
    score_anchor,
)
from gaussbox.taxonomy import (
    ConceptRecord,
    CycleError,
    ParseError,
    QueryExample,
    SplitResult,
    TaxonomyError,
    TaxonomyGraph,
    hard_negative_pool,
    load_split,
    load_taxonomy,
    save_split,
    save_taxonomy,
    split_leaves,
    wu_palmer,
)
from gaussbox.training import (
    ConfigError,
    DivergenceError,
    TrainConfig,
    TrainingInstance,
    generate_instances,
    load_config,
    load_history,
    save_config,
    save_history,
    train,
)

__version__ = "0.1.0"
