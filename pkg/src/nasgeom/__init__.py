"""Training-free architecture scoring from the geometry of untrained feature spaces.

The package measures quasi-orthogonality and intrinsic dimension of the
global-average-pooled features of randomly initialised cell networks and
filters candidate architectures with simple interval rules.
"""

from nasgeom.geometry import (
    PcaModel,
    SphereCloud,
    center,
    fishers_preprocess,
    knn,
    pairwise_distances,
    pca,
)
from nasgeom.idest import (
    ESTIMATORS,
    EstimatorParams,
    FisherSProfile,
    IdEstimate,
    estimate_all,
    estimate_corrint,
    estimate_fishers,
    estimate_knn_carter,
    estimate_lpca,
    estimate_mada,
    estimate_mind_ml,
    estimate_mle,
    estimate_mom,
    estimate_twonn,
    fishers_dimension,
    lambert_w0,
)
from nasgeom.netlab import (
    CellSpec,
    ImageBatch,
    InitSpec,
    Network,
    NetworkConfig,
    OpKind,
    build_network,
    format_arch_string,
    forward_features,
    kaiming_init,
    parse_arch_string,
    random_arch,
)
from nasgeom.ortho import OrthoMeasures, centroid_angle_stats, ortho_measures, pairwise_angle_stats
from nasgeom.pipeline import (
    ArchScore,
    FilterRule,
    ScoreConfig,
    apply_rules,
    default_rules,
    rank,
    score_architecture,
)

__version__ = "0.1.0"
