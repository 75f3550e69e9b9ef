"""Tree ensembles and nested cross-validation."""
from .models import (
    AdaBoostParams,
    Dataset,
    EnsembleModel,
    GBTParams,
    Presorted,
    RFParams,
    Tree,
    load_model,
    predict_proba,
    save_model,
    train_adaboost,
    train_gbt,
    train_random_forest,
)
from .cv import (
    DESK_SPACES,
    FAMILIES,
    SEARCH_SPACES,
    CVPlan,
    CVReport,
    Dist,
    OuterFold,
    StratificationError,
    nested_cv,
    parse_space,
    sample_configs,
)
