"""Self-supervised cycle embeddings for periodic sequences.

Triplets are mined from the temporal self-similarity matrix of a projection
head's own embeddings; embeddings are evaluated with leave-one-video-out
weighted k-NN and used for unsupervised anomaly scoring.
"""

__version__ = "0.1.0"

from .anomaly import AnomalyConfig, lof_scores, nn_distance_score, run_anomaly_pipeline
from .estimator import CycleCL
from .evaluation import (
    MetricsReport, WeightedKNNClassifier, average_precision, evaluate_knn, f1_score, knn_classify,
    oracle_f1, pr_curve,
)
from .exceptions import (
    ConfigError, ContractError, CycleCLError, DatasetParseError, DimensionError, EmptyInputError,
    MissingArtifactError, NumericError, ProtocolError,
)
from .head import HeadConfig, HeadParams, head_backward, head_forward, init_params
from .mining import AugmentConfig, MinerConfig, augment, mine
from .seqdata import (
    NON_PERIODIC, PERIODIC, AnomalySpec, FrozenEncoder, GeneratorConfig, encode, generate_benchmark,
    generate_sequence, make_encoder,
)
from .training import TrainConfig, embed_dataset, train, triplet_loss
from .tsm import autocorrelation, compute_tsm, cycle_features, pca_project_1d

__all__ = [
    "AnomalyConfig", "AnomalySpec", "AugmentConfig", "ConfigError", "ContractError", "CycleCL",
    "CycleCLError", "DatasetParseError", "DimensionError", "EmptyInputError", "FrozenEncoder",
    "GeneratorConfig", "HeadConfig", "HeadParams", "MetricsReport", "MinerConfig",
    "MissingArtifactError", "NON_PERIODIC", "NumericError", "PERIODIC", "ProtocolError",
    "TrainConfig", "WeightedKNNClassifier", "augment", "autocorrelation", "average_precision",
    "compute_tsm", "cycle_features", "embed_dataset", "encode", "evaluate_knn", "f1_score",
    "generate_benchmark", "generate_sequence", "head_backward", "head_forward", "init_params",
    "knn_classify", "lof_scores", "make_encoder", "mine", "nn_distance_score", "oracle_f1",
    "pca_project_1d", "pr_curve", "run_anomaly_pipeline", "train", "triplet_loss",
]
