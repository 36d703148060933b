"""Out-of-distribution detection from per-point PRDC statistics of embeddings."""

from .evaluation import EvaluationReport, aggregate_seeds, auroc, fpr_at_tpr
from .models import (
    GmmModel,
    KdeModel,
    OcsvmModel,
    Standardizer,
    anomaly_score,
    gmm_fit,
    gmm_log_density,
    kde_fit,
    kde_log_density,
    ocsvm_decision,
    ocsvm_fit,
    standardize_fit,
)
from .neighbors import (
    NeighborhoodProfile,
    containment_counts,
    cross_knn_radii,
    knn_radii,
    min_distances,
    squared_distances,
)
from .pipeline import PipelineConfig, run_forte, run_forte_arrays, run_forte_sweep
from .prdc import (
    DensityNormalization,
    PrdcConfig,
    PrdcFeatureMatrix,
    RadiusSource,
    assemble_features,
    coverage_pp,
    density_pp,
    prdc,
    precision_pp,
    recall_pp,
)
from .store import load_binary, load_csv, save_binary, save_csv, three_way_split

__version__ = "0.1.0"
