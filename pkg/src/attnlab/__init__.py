"""attnlab: a numerical laboratory for attention blocks as interaction learners.

The package covers the full pipeline at desk scale: synthetic task
generation with exact oracles, closed-form parameter construction or
explicit-gradient training, and equivalence/generalization analysis.
"""

from .analysis import (
    EquivalenceReport,
    LengthBiasProbe,
    compare_transforms,
    eval_generalization,
    generalization_table,
    length_bias_probe,
    product_table,
    rescaled_equivalent_params,
    t_transform,
)
from .attention import (
    DenseHAParams,
    HAParams,
    HFAParams,
    LinearSAParams,
    MultiheadLinearSAParams,
    TwoLayerMultiheadParams,
    UnsupportedConfigError,
    apply_attention,
    ha_fast_linear,
    ha_naive,
    hfa,
    linear_sa,
    load_params,
    multihead_linear_sa,
    param_count,
    save_params,
    two_layer_multihead_linear_sa,
)
from .constructions import (
    ApproxConstruction,
    InteractionSpec,
    build_2d_kronecker,
    build_approx,
    build_collision_onehot,
    build_collision_sinusoidal,
    build_exact,
    build_genotype,
    build_ha_ternary,
    build_hfa_factorized,
    build_timeseries,
    build_vision,
    interaction_targets,
    random_interaction_spec,
    window_score_matrix,
)
from .domain import (
    DataMatrixSet,
    EmbeddingBase,
    SequenceBatch,
    SymbolRankReport,
    Vocabulary,
    build_one_hot,
    build_random_orthonormal,
    build_sinusoidal,
    build_sinusoidal_2d,
    count_matrix,
    embed_batch,
    versatility_check,
)
from .linalg import (
    DimensionError,
    column_rank,
    dtfs_window,
    hadamard,
    kronecker,
    matmul,
    read_matrix_csv,
    singular_values,
    write_matrix_csv,
)
from .tasks import (
    CollisionConfig,
    FactorizedSpec,
    FeatureLayout,
    collision_interaction_table,
    collision_targets,
    collision_value_oracle,
    genotype_targets,
    orthogonal_factor_instance,
    rollout_collisions,
    sample_collision_batch,
    sample_factorized_batch,
    sample_genotype_batch,
    sample_ternary_batch,
    sample_timeseries_batch,
    ternary_targets,
)
from .training import (
    DivergenceError,
    TrainConfig,
    TrainResult,
    TrainTrace,
    conservation_residual,
    finite_difference_grads,
    grad_ha3,
    grad_linear_sa,
    ha3_conservation_residual,
    init_ha3,
    init_linear_sa,
    mse_loss,
    normalized_mse,
    train_generic,
    train_ha3,
    train_linear_sa,
)

__version__ = "0.1.0"
