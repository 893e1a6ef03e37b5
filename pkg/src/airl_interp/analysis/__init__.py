from .mi import discretize, nmi_from_joint, normalized_mi, quantile_bins
from .tables import (
    PosRow,
    RewardRow,
    WordFeatures,
    avg_method1,
    avg_method2,
    build_feature_table,
    build_reward_table,
    normalize_rewards,
    rank_agreement,
    rank_tags,
    summarize_pos,
    tag_counts,
)

__all__ = [
    "PosRow",
    "RewardRow",
    "WordFeatures",
    "avg_method1",
    "avg_method2",
    "build_feature_table",
    "build_reward_table",
    "discretize",
    "nmi_from_joint",
    "normalize_rewards",
    "normalized_mi",
    "quantile_bins",
    "rank_agreement",
    "rank_tags",
    "summarize_pos",
    "tag_counts",
]
