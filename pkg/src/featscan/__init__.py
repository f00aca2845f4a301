"""Region-based similarity search over cached CNN feature maps."""

from .errors import (
    CorruptionError,
    DegenerateQueryError,
    EmptyMaskError,
    FeatscanError,
    ImageNotFoundError,
    InvalidArgumentError,
    ShardParseError,
    StoreExistsError,
)
from .search import (
    QueryFilter,
    RegionScore,
    SearchHit,
    best_region,
    conv_region_scores,
    oracle_region_scores,
    prepare_query,
    topk_search,
)
from .store import (
    ChunkIndexEntry,
    FeatureStore,
    StoreManifest,
    read_interchange_shard,
    write_interchange_shard,
)
from .tensors import (
    BoundingBox,
    DownsampledMask,
    FeatureMap,
    ImageMask,
    apply_mask,
    build_query_vector,
    crop_nonzero,
    downsample_mask,
)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "ChunkIndexEntry",
    "CorruptionError",
    "DegenerateQueryError",
    "DownsampledMask",
    "EmptyMaskError",
    "FeatscanError",
    "FeatureMap",
    "FeatureStore",
    "ImageMask",
    "ImageNotFoundError",
    "InvalidArgumentError",
    "QueryFilter",
    "RegionScore",
    "SearchHit",
    "ShardParseError",
    "StoreExistsError",
    "StoreManifest",
    "apply_mask",
    "best_region",
    "build_query_vector",
    "conv_region_scores",
    "crop_nonzero",
    "downsample_mask",
    "oracle_region_scores",
    "prepare_query",
    "read_interchange_shard",
    "topk_search",
    "write_interchange_shard",
]
