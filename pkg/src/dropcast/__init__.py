"""Early-warning pipeline for student dropout prediction.

Cohort simulation calibrated to published rate tables, preprocessing with
group aggregates, multi-year design matrices, deployment-shaped splits,
imbalance treatments, from-scratch tree ensembles, threshold-corrected
evaluation, and exact Shapley explanations.
"""

from .core import (
    Cohort,
    Cycle,
    EXCLUDED,
    Label,
    ModelKey,
    StudentStatus,
    StudentYearRecord,
    cycle_of_level,
    derive_label,
    horizon_label,
    validate_transitions,
)
from .evaluate import (
    ConfusionMatrix,
    CorrectorConfig,
    EvalReport,
    apply_corrector,
    confusion,
    metrics,
    roc_auc,
    threshold_sweep,
)
from .explain import ImportanceRanking, ShapVector, global_importance, tree_shap
from .generator import GeneratorConfig, default_dropout_rate_table, generate, solve_intercept
from .imbalance import ClassWeights, ResampleResult, balanced_class_weights, smote, undersample
from .matrix import DesignMatrix, build, dropout_rate_table
from .preprocess import FittedPreprocessor, PreprocessPlan, aggregate_group_features, fit
from .splits import SplitResult, guided_random_split, split_by_schools, split_by_years
from .trees import (
    TrainConfig,
    TrainedModel,
    TreeNode,
    load,
    make_ensemble,
    predict_proba,
    save,
    soft_vote,
    train_decision_tree,
    train_gbdt,
    train_random_forest,
)

__version__ = "0.1.0"
