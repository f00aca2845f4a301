"""Feature store tests: round-trips, chunking, corruption, interchange shards."""

import json
import zlib

import numpy as np
import pytest

from featscan.errors import (
    CorruptionError,
    ImageNotFoundError,
    InvalidArgumentError,
    ShardParseError,
    StoreExistsError,
)
from featscan.store import (
    DATA_NAME,
    INDEX_NAME,
    MANIFEST_NAME,
    FeatureStore,
    StoreManifest,
    read_interchange_shard,
    write_interchange_shard,
)
from featscan.tensors import FeatureMap


def make_manifest(**overrides):
    base = dict(
        dataset_name="toy",
        model_name="toy-net",
        layer_name="conv3",
        dims=(3, 4, 2),
        images_per_chunk=4,
        compression="deflate",
    )
    base.update(overrides)
    return StoreManifest(**base)


def make_maps(n, dims=(3, 4, 2), seed=0, prefix="img"):
    rng = np.random.default_rng(seed)
    return [
        FeatureMap(f"{prefix}_{i:04d}", rng.standard_normal(dims).astype(np.float32))
        for i in range(n)
    ]


class TestCreateOpen:
    def test_create_empty(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest())
        assert store.image_count == 0
        store.close()
        reopened = FeatureStore.open(tmp_path / "s")
        assert reopened.image_count == 0
        assert reopened.manifest.dims == (3, 4, 2)

    def test_create_twice_fails(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest())
        store.close()
        with pytest.raises(StoreExistsError):
            FeatureStore.create(tmp_path / "s", make_manifest())

    def test_manifest_round_trips(self, tmp_path):
        manifest = make_manifest(dims=(7, 7, 512), images_per_chunk=64,
                                 label_map={"a": "cat"})
        store = FeatureStore.create(tmp_path / "s", manifest)
        store.close()
        loaded = FeatureStore.open(tmp_path / "s").manifest
        assert loaded.dims == (7, 7, 512)
        assert loaded.images_per_chunk == 64
        assert loaded.dataset_name == "toy"
        assert loaded.model_name == "toy-net"
        assert loaded.layer_name == "conv3"
        assert loaded.compression == "deflate"
        assert loaded.label_map == {"a": "cat"}

    def test_writer_lock_is_exclusive(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest())
        with pytest.raises(StoreExistsError):
            FeatureStore.open(tmp_path / "s", writable=True)
        store.close()
        second = FeatureStore.open(tmp_path / "s", writable=True)
        second.close()


class TestAppendAndRead:
    @pytest.mark.parametrize("compression", ["deflate", "none"])
    def test_round_trip_bit_identical(self, tmp_path, compression):
        store = FeatureStore.create(
            tmp_path / "s", make_manifest(compression=compression)
        )
        maps = make_maps(10)
        assert store.append_feature_maps(maps) == 10
        for fmap in maps:
            loaded = store.get_feature_map(fmap.image_id)
            assert loaded.data.tobytes() == fmap.data.tobytes()
        store.close()

    def test_chunk_grouping(self, tmp_path):
        store = FeatureStore.create(
            tmp_path / "s", make_manifest(images_per_chunk=64, dims=(2, 2, 1))
        )
        store.append_feature_maps(make_maps(130, dims=(2, 2, 1)))
        sizes = [len(e.image_ids) for e in store.chunk_entries]
        assert sizes == [64, 64, 2]
        store.close()

    def test_wrong_dims_rejected_nothing_written(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest())
        good = make_maps(2)
        bad = FeatureMap("bad", np.zeros((3, 4, 3), dtype=np.float32))
        with pytest.raises(InvalidArgumentError):
            store.append_feature_maps(good + [bad])
        assert store.image_count == 0
        assert not store.chunk_entries
        store.close()

    def test_duplicate_id_rejected(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest())
        store.append_feature_maps(make_maps(3))
        with pytest.raises(InvalidArgumentError):
            store.append_feature_maps(make_maps(1))
        assert store.image_count == 3
        store.close()

    def test_append_only_preserves_existing_bytes(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest(images_per_chunk=2))
        store.append_feature_maps(make_maps(3))
        before = (tmp_path / "s" / DATA_NAME).read_bytes()
        store.append_feature_maps(make_maps(2, seed=9, prefix="more"))
        after = (tmp_path / "s" / DATA_NAME).read_bytes()
        assert after[: len(before)] == before
        store.close()

    def test_unknown_id(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest())
        store.append_feature_maps(make_maps(2))
        with pytest.raises(ImageNotFoundError):
            store.get_feature_map("nope")
        store.close()

    def test_read_only_open_cannot_append(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest())
        store.close()
        reader = FeatureStore.open(tmp_path / "s")
        with pytest.raises(InvalidArgumentError):
            reader.append_feature_maps(make_maps(1))

    def test_corrupted_chunk_detected_on_read(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest(images_per_chunk=2))
        maps = make_maps(4)
        store.append_feature_maps(maps)
        store.close()
        data_path = tmp_path / "s" / DATA_NAME
        blob = bytearray(data_path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        data_path.write_bytes(bytes(blob))
        reader = FeatureStore.open(tmp_path / "s")
        with pytest.raises(CorruptionError):
            for fmap in maps:
                reader.get_feature_map(fmap.image_id)


class TestIterateBatches:
    def test_batches_cover_store_in_order(self, tmp_path):
        store = FeatureStore.create(
            tmp_path / "s", make_manifest(images_per_chunk=64, dims=(2, 2, 1))
        )
        maps = make_maps(130, dims=(2, 2, 1))
        store.append_feature_maps(maps)
        batches = list(store.iterate_batches(64))
        assert [len(b) for b in batches] == [64, 64, 2]
        flattened = [m.image_id for b in batches for m in b]
        assert flattened == [m.image_id for m in maps]
        store.close()

    def test_rebatching_across_chunks(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest(images_per_chunk=3))
        store.append_feature_maps(make_maps(10))
        batches = list(store.iterate_batches(4))
        assert [len(b) for b in batches] == [4, 4, 2]
        store.close()

    def test_empty_store_empty_stream(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest())
        assert list(store.iterate_batches(8)) == []
        store.close()

    def test_payload_round_trip_through_iteration(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest(images_per_chunk=2))
        maps = make_maps(5)
        store.append_feature_maps(maps)
        by_id = {m.image_id: m for m in maps}
        for batch in store.iterate_batches(2):
            for fmap in batch:
                assert fmap.data.tobytes() == by_id[fmap.image_id].data.tobytes()
        store.close()

    def test_corruption_halts_stream_naming_chunk(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest(images_per_chunk=2))
        store.append_feature_maps(make_maps(6))
        last = store.chunk_entries[-1]
        store.close()
        data_path = tmp_path / "s" / DATA_NAME
        blob = bytearray(data_path.read_bytes())
        blob[last.byte_offset + 1] ^= 0x01
        data_path.write_bytes(bytes(blob))
        reader = FeatureStore.open(tmp_path / "s")
        seen = 0
        with pytest.raises(CorruptionError) as excinfo:
            for batch in reader.iterate_batches(2):
                seen += len(batch)
        assert excinfo.value.chunk_ordinal == last.chunk_ordinal
        assert seen == 4  # earlier chunks were already delivered


class TestVerify:
    def test_pristine_store_passes(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest(images_per_chunk=2))
        store.append_feature_maps(make_maps(7))
        report = store.verify()
        assert report.ok
        assert all(c.ok for c in report.chunks)
        assert len(report.chunks) == 4
        store.close()

    def test_single_flipped_byte_fails_one_chunk(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest(images_per_chunk=2))
        store.append_feature_maps(make_maps(8))
        target = store.chunk_entries[1]
        store.close()
        data_path = tmp_path / "s" / DATA_NAME
        blob = bytearray(data_path.read_bytes())
        blob[target.byte_offset + 2] ^= 0x10
        data_path.write_bytes(bytes(blob))
        report = FeatureStore.open(tmp_path / "s").verify()
        assert not report.ok
        failing = [c for c in report.chunks if not c.ok]
        assert [c.ordinal for c in failing] == [1]

    def test_truncated_data_file_names_offset(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest(images_per_chunk=2))
        store.append_feature_maps(make_maps(4))
        last = store.chunk_entries[-1]
        store.close()
        data_path = tmp_path / "s" / DATA_NAME
        blob = data_path.read_bytes()
        data_path.write_bytes(blob[: last.byte_offset + 1])
        report = FeatureStore.open(tmp_path / "s").verify()
        assert not report.ok
        failing = [c for c in report.chunks if not c.ok]
        assert len(failing) == 1
        assert failing[0].ordinal == last.chunk_ordinal
        assert str(last.byte_offset) in (failing[0].error or "")


class TestInterchange:
    def test_shard_round_trip(self, tmp_path):
        maps = make_maps(5)
        shard = tmp_path / "a.fmap1"
        write_interchange_shard(shard, maps)
        loaded = read_interchange_shard(shard)
        assert [m.image_id for m in loaded] == [m.image_id for m in maps]
        for a, b in zip(loaded, maps):
            assert a.data.tobytes() == b.data.tobytes()

    def test_ingest_valid_shards(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest())
        s1, s2 = tmp_path / "1.fmap1", tmp_path / "2.fmap1"
        write_interchange_shard(s1, make_maps(2, prefix="a"))
        write_interchange_shard(s2, make_maps(3, prefix="b"))
        assert store.ingest_interchange([s1, s2]) == 5
        assert store.image_count == 5
        store.close()

    def test_truncated_shard_nothing_ingested(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest())
        shard = tmp_path / "t.fmap1"
        write_interchange_shard(shard, make_maps(2))
        blob = shard.read_bytes()
        shard.write_bytes(blob[:-7])
        with pytest.raises(ShardParseError):
            store.ingest_interchange([shard])
        assert store.image_count == 0
        store.close()

    def test_bad_magic(self, tmp_path):
        shard = tmp_path / "bad.fmap1"
        shard.write_bytes(b"NOTFM1\x00\x00\x00\x00")
        with pytest.raises(ShardParseError) as excinfo:
            read_interchange_shard(shard)
        assert excinfo.value.byte_offset == 0

    def test_dim_mismatch_aborts_all(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest())
        good = tmp_path / "good.fmap1"
        bad = tmp_path / "bad.fmap1"
        write_interchange_shard(good, make_maps(2, prefix="g"))
        write_interchange_shard(bad, make_maps(2, dims=(2, 2, 2), prefix="h"))
        with pytest.raises(InvalidArgumentError):
            store.ingest_interchange([good, bad])
        assert store.image_count == 0
        store.close()


class TestOpenValidation:
    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            FeatureStore.open(tmp_path / "nothing")

    def test_mangled_manifest(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest())
        store.close()
        (tmp_path / "s" / MANIFEST_NAME).write_text("{not json", encoding="utf-8")
        with pytest.raises(CorruptionError):
            FeatureStore.open(tmp_path / "s")

    def test_truncated_index(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest())
        store.append_feature_maps(make_maps(3))
        store.close()
        index_path = tmp_path / "s" / INDEX_NAME
        index_path.write_bytes(index_path.read_bytes()[:-3])
        with pytest.raises(CorruptionError):
            FeatureStore.open(tmp_path / "s")

    def test_count_mismatch(self, tmp_path):
        store = FeatureStore.create(tmp_path / "s", make_manifest())
        store.append_feature_maps(make_maps(3))
        store.close()
        manifest_path = tmp_path / "s" / MANIFEST_NAME
        doc = json.loads(manifest_path.read_text())
        doc["image_count"] = 99
        manifest_path.write_text(json.dumps(doc))
        with pytest.raises(CorruptionError):
            FeatureStore.open(tmp_path / "s")


def test_crc_is_over_stored_payload(tmp_path):
    store = FeatureStore.create(tmp_path / "s", make_manifest(compression="none"))
    maps = make_maps(2)
    store.append_feature_maps(maps)
    entry = store.chunk_entries[0]
    blob = (tmp_path / "s" / DATA_NAME).read_bytes()
    payload = blob[entry.byte_offset : entry.byte_offset + entry.byte_length]
    assert zlib.crc32(payload) & 0xFFFFFFFF == entry.checksum
    store.close()
