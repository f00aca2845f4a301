"""Shared fixtures: small synthetic stores and image directories."""

from pathlib import Path

import numpy as np
import pytest

from featscan.store import FeatureStore, StoreManifest
from featscan.tensors import FeatureMap

FIXTURE_DIMS = (7, 7, 8)


def build_store(
    path: Path,
    n: int = 130,
    dims: tuple[int, int, int] = FIXTURE_DIMS,
    images_per_chunk: int = 64,
    compression: str = "deflate",
    seed: int = 1234,
    labels: dict | None = None,
) -> FeatureStore:
    rng = np.random.default_rng(seed)
    manifest = StoreManifest(
        dataset_name="fixture",
        model_name="toy-net",
        layer_name="conv3",
        dims=dims,
        images_per_chunk=images_per_chunk,
        compression=compression,
        label_map=labels,
    )
    store = FeatureStore.create(path, manifest)
    maps = [
        FeatureMap(f"img_{i:04d}.png", rng.standard_normal(dims).astype(np.float32))
        for i in range(n)
    ]
    store.append_feature_maps(maps)
    store.close()
    return FeatureStore.open(path)


def write_test_images(image_dir: Path, ids: list[str], size=(32, 24)) -> None:
    from PIL import Image

    image_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(7)
    for image_id in ids:
        arr = rng.integers(0, 255, size=(size[1], size[0], 3), dtype=np.uint8)
        Image.fromarray(arr, "RGB").save(image_dir / image_id)


@pytest.fixture(scope="module")
def fixture_store_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture_store")
    store = build_store(root / "store")
    write_test_images(root / "images", store.image_ids[:10])
    return root
