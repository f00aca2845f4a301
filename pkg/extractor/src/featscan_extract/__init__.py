"""CNN feature-map extraction into FMAP1 interchange shards."""

from .extract import (
    ExtractionSpec,
    extract,
    find_layer,
    list_images,
    preprocess_image,
    resolve_model,
    write_fmap1_shard,
)

__version__ = "0.1.0"

__all__ = [
    "ExtractionSpec",
    "extract",
    "find_layer",
    "list_images",
    "preprocess_image",
    "resolve_model",
    "write_fmap1_shard",
]
