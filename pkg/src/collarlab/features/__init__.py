from .levels import PERIODS, ActivityLevelFeatures, PeriodSlice, activity_level_features
from .manifests import (
    ACTIVITY_LEVEL_FEATURES,
    STAT_MANIFEST_ID,
    WINDOW_MANIFEST_ID,
    stat_manifest,
    window_manifest,
)
from .matrix import (
    FEATURE_GROUPS,
    GROUP_PRESETS,
    CohortBundle,
    FeatureMatrix,
    InstanceFeatures,
    build_feature_matrix,
    standardization_params,
)
from .statbank import StatFeatureVector, statistical_features_56
from .windows import WindowFeatureVector, window_features_126

__all__ = [
    "PERIODS",
    "ActivityLevelFeatures",
    "PeriodSlice",
    "activity_level_features",
    "ACTIVITY_LEVEL_FEATURES",
    "STAT_MANIFEST_ID",
    "WINDOW_MANIFEST_ID",
    "stat_manifest",
    "window_manifest",
    "FEATURE_GROUPS",
    "GROUP_PRESETS",
    "CohortBundle",
    "FeatureMatrix",
    "InstanceFeatures",
    "build_feature_matrix",
    "standardization_params",
    "StatFeatureVector",
    "statistical_features_56",
    "WindowFeatureVector",
    "window_features_126",
]
