"""Scaleograms + a compact Linformer ViT for emotion-quadrant experiments.

The pipeline turns multichannel physiological recordings into per-channel
Morlet scaleograms and trains a small vision transformer to classify
valence/arousal quadrants or regress the continuous ratings, with a
cross-validated channel-subset experiment harness on top.
"""

from .channels import (
    DEAP_CHANNELS,
    ChannelRanking,
    ChannelSubset,
    pca_rank_channels,
    resolve_subset,
    top_k,
)
from .cwt import (
    RasterImage,
    ScaleGrid,
    Scaleogram,
    cwt_forward,
    morlet,
    rasterize,
    scale_grid,
    scaleogram,
)
from .dataio import (
    PortableDataset,
    SynthConfig,
    TrialRecord,
    read_portable,
    synth_generate,
    write_portable,
)
from .model import Head, ModelConfig, ModelParams, backward, forward, init_params, patchify
from .trials import (
    FoldAssignment,
    FoldMode,
    Labels,
    Quadrant,
    Trial,
    make_folds,
    quadrant_from_ratings,
    zscore_normalize,
)
from .training import (
    ExperimentReport,
    FoldResult,
    LabelSource,
    PreprocessConfig,
    TrainConfig,
    adam_step,
    baseline_random_rmse,
    combined_binary_accuracy,
    cross_entropy,
    early_stop_check,
    evaluate_classification,
    evaluate_regression,
    huber,
    relevance_threshold,
    run_experiment,
)

__version__ = "0.1.0"
