"""Extraction tests using a tiny fixed-seed CNN (no pretrained downloads).

Shard conformance is checked against the search engine's own reader and
store ingestion, i.e. across the FMAP1 format boundary.
"""

import json

import numpy as np
import pytest
import torch

from featscan.store import FeatureStore, StoreManifest, read_interchange_shard
from featscan_extract import ExtractionSpec, extract, find_layer, list_images


def tiny_model(seed=0) -> torch.nn.Module:
    torch.manual_seed(seed)
    return torch.nn.Sequential(
        torch.nn.Conv2d(3, 6, kernel_size=3, stride=2, padding=1),
        torch.nn.ReLU(),
        torch.nn.Conv2d(6, 4, kernel_size=3, stride=2, padding=1),
        torch.nn.ReLU(),
    )


def tiny_spec(**overrides) -> ExtractionSpec:
    base = dict(
        model_name="tiny-test-net",
        layer_name="2",  # second conv: 4 channels at 1/4 resolution
        input_size=(32, 32),
        resize=36,
        batch_size=8,
        expected_dims=(8, 8, 4),
    )
    base.update(overrides)
    return ExtractionSpec(**base)


@pytest.fixture
def image_dir(tmp_path):
    from PIL import Image

    rng = np.random.default_rng(11)
    folder = tmp_path / "images"
    folder.mkdir()
    for i in range(20):
        w, h = int(rng.integers(40, 90)), int(rng.integers(40, 90))
        arr = rng.integers(0, 255, size=(h, w, 3), dtype=np.uint8)
        Image.fromarray(arr, "RGB").save(folder / f"photo_{i:03d}.png")
    return folder


class TestExtract:
    def test_shard_ceiling_division(self, image_dir, tmp_path):
        shards = extract(tiny_spec(), image_dir, tmp_path / "out", shard_size=8,
                         model=tiny_model())
        counts = [len(read_interchange_shard(p)) for p in shards]
        assert counts == [8, 8, 4]

    def test_dims_match_declaration(self, image_dir, tmp_path):
        shards = extract(tiny_spec(), image_dir, tmp_path / "out", shard_size=64,
                         model=tiny_model())
        for fmap in read_interchange_shard(shards[0]):
            assert fmap.dims == (8, 8, 4)

    def test_probe_mismatch_aborts_before_writing(self, image_dir, tmp_path):
        out = tmp_path / "out"
        with pytest.raises(ValueError, match="declared dims"):
            extract(tiny_spec(expected_dims=(7, 7, 4)), image_dir, out,
                    model=tiny_model())
        assert not out.exists()

    def test_layer_not_found_aborts(self, image_dir, tmp_path):
        with pytest.raises(LookupError, match="not found"):
            extract(tiny_spec(layer_name="missing.layer"), image_dir, tmp_path / "out",
                    model=tiny_model())

    def test_deterministic_rerun_byte_identical(self, image_dir, tmp_path):
        first = extract(tiny_spec(), image_dir, tmp_path / "a", shard_size=8,
                        model=tiny_model(seed=3))
        second = extract(tiny_spec(), image_dir, tmp_path / "b", shard_size=8,
                         model=tiny_model(seed=3))
        assert len(first) == len(second)
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()

    def test_lexicographic_order(self, image_dir, tmp_path):
        shards = extract(tiny_spec(), image_dir, tmp_path / "out", shard_size=64,
                         model=tiny_model())
        ids = [m.image_id for m in read_interchange_shard(shards[0])]
        assert ids == sorted(ids)
        assert ids[0] == "photo_000.png"

    def test_undecodable_image_skipped_and_listed(self, image_dir, tmp_path):
        (image_dir / "broken.png").write_bytes(b"\x89PNG\r\n\x1a\nnot really a png")
        shards = extract(tiny_spec(), image_dir, tmp_path / "out", shard_size=64,
                         model=tiny_model())
        sidecar = json.loads((tmp_path / "out" / "extraction.json").read_text())
        assert sidecar["image_count"] == 20
        assert [s["file"] for s in sidecar["skipped"]] == ["broken.png"]
        ids = [m.image_id for m in read_interchange_shard(shards[0])]
        assert "broken.png" not in ids

    def test_sidecar_records_spec(self, image_dir, tmp_path):
        extract(tiny_spec(), image_dir, tmp_path / "out", shard_size=8,
                model=tiny_model())
        sidecar = json.loads((tmp_path / "out" / "extraction.json").read_text())
        assert sidecar["spec"]["model_name"] == "tiny-test-net"
        assert sidecar["spec"]["layer_name"] == "2"
        assert sidecar["spec"]["mean"] == [0.485, 0.456, 0.406]
        assert sidecar["dims"] == [8, 8, 4]
        assert sidecar["shards"] == ["shard-00000.fmap1", "shard-00001.fmap1",
                                     "shard-00002.fmap1"]

    def test_shards_ingest_cleanly(self, image_dir, tmp_path):
        shards = extract(tiny_spec(), image_dir, tmp_path / "out", shard_size=8,
                         model=tiny_model())
        manifest = StoreManifest(
            dataset_name="extracted", model_name="tiny-test-net", layer_name="2",
            dims=(8, 8, 4), images_per_chunk=8,
        )
        store = FeatureStore.create(tmp_path / "store", manifest)
        assert store.ingest_interchange(shards) == 20
        assert store.verify().ok
        store.close()


def test_find_layer_lists_candidates():
    model = tiny_model()
    with pytest.raises(LookupError):
        find_layer(model, "zzz")
    assert find_layer(model, "2") is model[2]


def test_list_images_filters_non_images(tmp_path):
    (tmp_path / "a.png").write_bytes(b"x")
    (tmp_path / "notes.txt").write_bytes(b"x")
    assert [p.name for p in list_images(tmp_path)] == ["a.png"]
