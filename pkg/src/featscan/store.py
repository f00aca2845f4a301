"""On-disk cache of precomputed feature maps.

Layout: one directory holding `manifest.json` (UTF-8 JSON metadata),
`index.bin` (chunk records, little-endian), and `data.bin` (concatenated
compressed chunk payloads). Appends never rewrite existing data bytes;
manifest and index updates land via write-temp-then-rename, and the index is
only published after the data file is flushed to disk, so readers never see
a partially written chunk.

Index record layout (all little-endian):
    u32 chunk ordinal, u64 byte offset, u64 byte length, u32 CRC32 of the
    stored payload, u16 id count, then per id a u16 byte length followed by
    the UTF-8 id bytes.

Chunk payloads are the concatenated raw row-major float32 little-endian
tensors of the chunk's images, compressed with raw DEFLATE (RFC 1951) or
stored verbatim when compression is "none".
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import (
    CorruptionError,
    ImageNotFoundError,
    InvalidArgumentError,
    ShardParseError,
    StoreExistsError,
)
from .tensors import FeatureMap

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
INDEX_NAME = "index.bin"
DATA_NAME = "data.bin"
LOCK_NAME = ".writer.lock"

SHARD_MAGIC = b"FMAP1\n"

_RECORD_HEAD = struct.Struct("<IQQIH")
_ID_LEN = struct.Struct("<H")


@dataclass
class StoreManifest:
    """Dataset- and layer-level metadata for one store."""

    dataset_name: str
    model_name: str
    layer_name: str
    dims: tuple[int, int, int]
    images_per_chunk: int = 64
    compression: str = "deflate"
    image_count: int = 0
    format_version: int = FORMAT_VERSION
    label_map: dict[str, str] | None = None

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)  # type: ignore[assignment]
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise InvalidArgumentError(f"dims must be three positive integers, got {self.dims}")
        if self.images_per_chunk < 1:
            raise InvalidArgumentError("images_per_chunk must be positive")
        if self.compression not in ("none", "deflate"):
            raise InvalidArgumentError(f"unknown compression {self.compression!r}")

    def to_json(self) -> str:
        doc = {
            "format_version": self.format_version,
            "dataset_name": self.dataset_name,
            "model_name": self.model_name,
            "layer_name": self.layer_name,
            "dims": list(self.dims),
            "image_count": self.image_count,
            "images_per_chunk": self.images_per_chunk,
            "compression": self.compression,
            "label_map": self.label_map,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StoreManifest":
        doc = json.loads(text)
        return cls(
            dataset_name=doc["dataset_name"],
            model_name=doc["model_name"],
            layer_name=doc["layer_name"],
            dims=tuple(doc["dims"]),
            images_per_chunk=doc["images_per_chunk"],
            compression=doc["compression"],
            image_count=doc["image_count"],
            format_version=doc["format_version"],
            label_map=doc.get("label_map"),
        )

    @property
    def map_nbytes(self) -> int:
        h, w, d = self.dims
        return h * w * d * 4

    @property
    def estimated_ram_bytes(self) -> int:
        return self.image_count * self.map_nbytes


@dataclass
class ChunkIndexEntry:
    chunk_ordinal: int
    byte_offset: int
    byte_length: int
    checksum: int
    image_ids: list[str]


@dataclass
class ChunkStatus:
    ordinal: int
    ok: bool
    error: str | None = None


@dataclass
class StoreReport:
    """Outcome of a full store verification; damage is reported, not raised."""

    ok: bool
    image_count: int
    chunks: list[ChunkStatus] = field(default_factory=list)
    problems: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "image_count": self.image_count,
            "chunks": [
                {"ordinal": c.ordinal, "ok": c.ok, "error": c.error} for c in self.chunks
            ],
            "problems": self.problems,
        }


def _write_atomic(path: Path, payload: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _deflate(raw: bytes) -> bytes:
    comp = zlib.compressobj(6, zlib.DEFLATED, -15)
    return comp.compress(raw) + comp.flush()


def _inflate(payload: bytes) -> bytes:
    decomp = zlib.decompressobj(-15)
    out = decomp.decompress(payload)
    return out + decomp.flush()


def _encode_index(entries: list[ChunkIndexEntry]) -> bytes:
    parts: list[bytes] = []
    for e in entries:
        parts.append(
            _RECORD_HEAD.pack(
                e.chunk_ordinal, e.byte_offset, e.byte_length, e.checksum, len(e.image_ids)
            )
        )
        for image_id in e.image_ids:
            raw = image_id.encode("utf-8")
            parts.append(_ID_LEN.pack(len(raw)))
            parts.append(raw)
    return b"".join(parts)


def _decode_index(blob: bytes) -> list[ChunkIndexEntry]:
    entries: list[ChunkIndexEntry] = []
    pos = 0
    while pos < len(blob):
        if pos + _RECORD_HEAD.size > len(blob):
            raise CorruptionError(f"index truncated at byte {pos}")
        ordinal, offset, length, crc, id_count = _RECORD_HEAD.unpack_from(blob, pos)
        pos += _RECORD_HEAD.size
        ids: list[str] = []
        for _ in range(id_count):
            if pos + _ID_LEN.size > len(blob):
                raise CorruptionError(f"index truncated at byte {pos}")
            (id_len,) = _ID_LEN.unpack_from(blob, pos)
            pos += _ID_LEN.size
            if pos + id_len > len(blob):
                raise CorruptionError(f"index truncated at byte {pos}")
            try:
                ids.append(blob[pos : pos + id_len].decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise CorruptionError(f"index id at byte {pos} is not UTF-8") from exc
            pos += id_len
        entries.append(ChunkIndexEntry(ordinal, offset, length, crc, ids))
    return entries


class FeatureStore:
    """Chunked, checksummed, append-only archive of feature maps.

    Single writer (guarded by a lock file), unlimited concurrent readers.
    """

    def __init__(self, path: Path, manifest: StoreManifest, entries: list[ChunkIndexEntry],
                 writable: bool):
        self.path = Path(path)
        self.manifest = manifest
        self._entries = entries
        self._writable = writable
        self._locked = writable
        self._id_lookup: dict[str, tuple[int, int]] = {}
        self._rebuild_lookup()

    def _rebuild_lookup(self) -> None:
        self._id_lookup.clear()
        for idx, entry in enumerate(self._entries):
            for pos, image_id in enumerate(entry.image_ids):
                self._id_lookup[image_id] = (idx, pos)

    # -- lifecycle -----------------------------------------------------------

    @classmethod
    def create(cls, path, manifest: StoreManifest) -> "FeatureStore":
        """Create an empty store; fails if one already exists at path."""
        root = Path(path)
        if (root / MANIFEST_NAME).exists():
            raise StoreExistsError(f"a store already exists at {root}")
        root.mkdir(parents=True, exist_ok=True)
        manifest.image_count = 0
        store = cls(root, manifest, [], writable=False)
        store._acquire_lock()
        _write_atomic(root / INDEX_NAME, b"")
        (root / DATA_NAME).touch()
        _write_atomic(root / MANIFEST_NAME, manifest.to_json().encode("utf-8"))
        return store

    @classmethod
    def open(cls, path, writable: bool = False) -> "FeatureStore":
        """Open an existing store, validating manifest and index structure."""
        root = Path(path)
        manifest_path = root / MANIFEST_NAME
        if not manifest_path.exists():
            raise FileNotFoundError(f"no store at {root} (missing {MANIFEST_NAME})")
        try:
            manifest = StoreManifest.from_json(manifest_path.read_text("utf-8"))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CorruptionError(f"manifest is unreadable: {exc}") from exc
        index_path = root / INDEX_NAME
        if not index_path.exists():
            raise CorruptionError("index.bin is missing")
        entries = _decode_index(index_path.read_bytes())
        cls._check_structure(root, manifest, entries)
        store = cls(root, manifest, entries, writable=False)
        if writable:
            store._acquire_lock()
        return store

    @staticmethod
    def _check_structure(root: Path, manifest: StoreManifest,
                         entries: list[ChunkIndexEntry]) -> None:
        # index-internal consistency only; data-file damage is verify()'s job
        prev_end = 0
        seen: set[str] = set()
        total = 0
        for entry in entries:
            if entry.byte_offset < prev_end:
                raise CorruptionError(
                    f"chunk {entry.chunk_ordinal} overlaps earlier data",
                    chunk_ordinal=entry.chunk_ordinal,
                )
            prev_end = entry.byte_offset + entry.byte_length
            for image_id in entry.image_ids:
                if image_id in seen:
                    raise CorruptionError(f"duplicate image id {image_id!r} in index")
                seen.add(image_id)
            total += len(entry.image_ids)
        if total != manifest.image_count:
            raise CorruptionError(
                f"manifest image_count {manifest.image_count} != index total {total}"
            )

    def _acquire_lock(self) -> None:
        lock = self.path / LOCK_NAME
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StoreExistsError(
                f"store at {self.path} is already opened by a writer (stale {LOCK_NAME}?)"
            )
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        self._writable = True
        self._locked = True

    def close(self) -> None:
        if self._locked:
            (self.path / LOCK_NAME).unlink(missing_ok=True)
            self._locked = False
            self._writable = False

    def __enter__(self) -> "FeatureStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- introspection -------------------------------------------------------

    @property
    def image_ids(self) -> list[str]:
        return [image_id for entry in self._entries for image_id in entry.image_ids]

    @property
    def image_count(self) -> int:
        return self.manifest.image_count

    @property
    def chunk_entries(self) -> list[ChunkIndexEntry]:
        return list(self._entries)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._id_lookup

    def stats(self) -> dict:
        return {
            "dataset_name": self.manifest.dataset_name,
            "model_name": self.manifest.model_name,
            "layer_name": self.manifest.layer_name,
            "dims": list(self.manifest.dims),
            "image_count": self.manifest.image_count,
            "chunks": len(self._entries),
            "compression": self.manifest.compression,
            "data_bytes": (self.path / DATA_NAME).stat().st_size,
        }

    # -- writes --------------------------------------------------------------

    def _require_writable(self) -> None:
        if not self._writable:
            raise InvalidArgumentError("store was opened read-only")

    def append_feature_maps(self, maps: list[FeatureMap]) -> int:
        """Append maps in order, grouped into chunks of images_per_chunk.

        Validates dims and id uniqueness up front; on error nothing is
        written. Returns the number of maps appended.
        """
        self._require_writable()
        if not maps:
            return 0
        dims = self.manifest.dims
        batch_ids: set[str] = set()
        for fmap in maps:
            if fmap.dims != dims:
                raise InvalidArgumentError(
                    f"map {fmap.image_id!r} has dims {fmap.dims}, store expects {dims}"
                )
            if fmap.image_id in self._id_lookup or fmap.image_id in batch_ids:
                raise InvalidArgumentError(f"duplicate image id {fmap.image_id!r}")
            batch_ids.add(fmap.image_id)

        per_chunk = self.manifest.images_per_chunk
        new_entries: list[ChunkIndexEntry] = []
        next_ordinal = len(self._entries)
        data_path = self.path / DATA_NAME
        with open(data_path, "ab") as fh:
            for start in range(0, len(maps), per_chunk):
                chunk = maps[start : start + per_chunk]
                raw = b"".join(
                    np.ascontiguousarray(m.data, dtype="<f4").tobytes() for m in chunk
                )
                payload = _deflate(raw) if self.manifest.compression == "deflate" else raw
                offset = fh.tell()
                fh.write(payload)
                new_entries.append(
                    ChunkIndexEntry(
                        chunk_ordinal=next_ordinal,
                        byte_offset=offset,
                        byte_length=len(payload),
                        checksum=zlib.crc32(payload) & 0xFFFFFFFF,
                        image_ids=[m.image_id for m in chunk],
                    )
                )
                next_ordinal += 1
            fh.flush()
            os.fsync(fh.fileno())

        self._entries.extend(new_entries)
        self.manifest.image_count += len(maps)
        _write_atomic(self.path / INDEX_NAME, _encode_index(self._entries))
        _write_atomic(self.path / MANIFEST_NAME, self.manifest.to_json().encode("utf-8"))
        self._rebuild_lookup()
        return len(maps)

    def set_label_map(self, labels: dict[str, str]) -> None:
        self._require_writable()
        merged = dict(self.manifest.label_map or {})
        merged.update(labels)
        self.manifest.label_map = merged
        _write_atomic(self.path / MANIFEST_NAME, self.manifest.to_json().encode("utf-8"))

    # -- reads ---------------------------------------------------------------

    def _read_chunk_payload(self, entry: ChunkIndexEntry, fh) -> bytes:
        fh.seek(entry.byte_offset)
        payload = fh.read(entry.byte_length)
        if len(payload) != entry.byte_length:
            raise CorruptionError(
                f"chunk {entry.chunk_ordinal} is truncated on disk",
                chunk_ordinal=entry.chunk_ordinal,
            )
        if zlib.crc32(payload) & 0xFFFFFFFF != entry.checksum:
            raise CorruptionError(
                f"chunk {entry.chunk_ordinal} failed its checksum",
                chunk_ordinal=entry.chunk_ordinal,
            )
        return payload

    def _decode_chunk(self, entry: ChunkIndexEntry, payload: bytes) -> np.ndarray:
        if self.manifest.compression == "deflate":
            try:
                raw = _inflate(payload)
            except zlib.error as exc:
                raise CorruptionError(
                    f"chunk {entry.chunk_ordinal} failed to decompress: {exc}",
                    chunk_ordinal=entry.chunk_ordinal,
                ) from exc
        else:
            raw = payload
        expected = len(entry.image_ids) * self.manifest.map_nbytes
        if len(raw) != expected:
            raise CorruptionError(
                f"chunk {entry.chunk_ordinal} decodes to {len(raw)} bytes, expected {expected}",
                chunk_ordinal=entry.chunk_ordinal,
            )
        h, w, d = self.manifest.dims
        arr = np.frombuffer(raw, dtype="<f4").reshape(len(entry.image_ids), h, w, d)
        return arr

    def get_feature_map(self, image_id: str) -> FeatureMap:
        """Exact stored tensor for one image; verifies the chunk checksum."""
        if image_id not in self._id_lookup:
            raise ImageNotFoundError(image_id)
        entry_idx, pos = self._id_lookup[image_id]
        entry = self._entries[entry_idx]
        with open(self.path / DATA_NAME, "rb") as fh:
            payload = self._read_chunk_payload(entry, fh)
        arr = self._decode_chunk(entry, payload)
        return FeatureMap(image_id, arr[pos].copy())

    def iterate_batches(self, batch_size: int) -> Iterator[list[FeatureMap]]:
        """Yield every stored map exactly once, in chunk order, batch_size at a time."""
        if batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        pending: list[FeatureMap] = []
        for entry, arr in self._chunks_with_prefetch():
            for pos, image_id in enumerate(entry.image_ids):
                pending.append(FeatureMap(image_id, arr[pos].copy()))
                if len(pending) == batch_size:
                    yield pending
                    pending = []
        if pending:
            yield pending

    def _chunks_with_prefetch(self) -> Iterator[tuple[ChunkIndexEntry, np.ndarray]]:
        if not self._entries:
            return
        with open(self.path / DATA_NAME, "rb") as fh, ThreadPoolExecutor(1) as pool:

            def load(entry: ChunkIndexEntry) -> np.ndarray:
                payload = self._read_chunk_payload(entry, fh)
                return self._decode_chunk(entry, payload)

            future = pool.submit(load, self._entries[0])
            for i, entry in enumerate(self._entries):
                arr = future.result()
                if i + 1 < len(self._entries):
                    future = pool.submit(load, self._entries[i + 1])
                yield entry, arr

    def iter_feature_maps(self) -> Iterator[FeatureMap]:
        for batch in self.iterate_batches(self.manifest.images_per_chunk):
            yield from batch

    # -- maintenance ---------------------------------------------------------

    def verify(self) -> StoreReport:
        """Check every chunk checksum plus index and count consistency."""
        report = StoreReport(ok=True, image_count=self.manifest.image_count)
        data_path = self.path / DATA_NAME
        data_size = data_path.stat().st_size if data_path.exists() else 0
        prev_end = 0
        total = 0
        seen: set[str] = set()
        with open(data_path, "rb") as fh:
            for entry in self._entries:
                total += len(entry.image_ids)
                for image_id in entry.image_ids:
                    if image_id in seen:
                        report.problems.append(f"duplicate image id {image_id!r}")
                    seen.add(image_id)
                if entry.byte_offset < prev_end:
                    report.chunks.append(
                        ChunkStatus(entry.chunk_ordinal, False, "overlaps earlier chunk")
                    )
                    prev_end = entry.byte_offset + entry.byte_length
                    continue
                prev_end = entry.byte_offset + entry.byte_length
                if entry.byte_offset + entry.byte_length > data_size:
                    report.chunks.append(
                        ChunkStatus(
                            entry.chunk_ordinal,
                            False,
                            f"extends past end of data file (offset {entry.byte_offset})",
                        )
                    )
                    continue
                try:
                    payload = self._read_chunk_payload(entry, fh)
                    self._decode_chunk(entry, payload)
                except CorruptionError as exc:
                    report.chunks.append(ChunkStatus(entry.chunk_ordinal, False, str(exc)))
                    continue
                report.chunks.append(ChunkStatus(entry.chunk_ordinal, True))
        if total != self.manifest.image_count:
            report.problems.append(
                f"manifest image_count {self.manifest.image_count} != index total {total}"
            )
        report.ok = not report.problems and all(c.ok for c in report.chunks)
        return report

    def ingest_interchange(self, shard_paths: list) -> int:
        """Parse and validate every shard, then append them all.

        A malformed shard or dim mismatch aborts the whole call before
        anything is written.
        """
        self._require_writable()
        parsed: list[list[FeatureMap]] = []
        for shard_path in shard_paths:
            maps = read_interchange_shard(shard_path)
            for fmap in maps:
                if fmap.dims != self.manifest.dims:
                    raise InvalidArgumentError(
                        f"shard {shard_path} map {fmap.image_id!r} has dims {fmap.dims}, "
                        f"store expects {self.manifest.dims}"
                    )
            parsed.append(maps)
        count = 0
        for maps in parsed:
            count += self.append_feature_maps(maps)
        return count


# -- interchange shards -------------------------------------------------------


def write_interchange_shard(path, maps: list[FeatureMap]) -> None:
    """Write maps to one FMAP1 shard (all maps must share dims)."""
    if not maps:
        raise InvalidArgumentError("cannot write an empty shard")
    dims = maps[0].dims
    for fmap in maps:
        if fmap.dims != dims:
            raise InvalidArgumentError(
                f"shard maps disagree on dims: {fmap.image_id!r} has {fmap.dims}, "
                f"first map has {dims}"
            )
    header = json.dumps(
        {"dims": list(dims), "dtype": "f32le", "image_ids": [m.image_id for m in maps]}
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SHARD_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for fmap in maps:
            fh.write(np.ascontiguousarray(fmap.data, dtype="<f4").tobytes())


def read_interchange_shard(path) -> list[FeatureMap]:
    """Parse one FMAP1 shard; raises ShardParseError with a byte offset."""
    blob = Path(path).read_bytes()
    if blob[: len(SHARD_MAGIC)] != SHARD_MAGIC:
        raise ShardParseError(f"bad magic bytes in {path}", byte_offset=0)
    pos = len(SHARD_MAGIC)
    if len(blob) < pos + 4:
        raise ShardParseError(f"shard {path} truncated before header length", byte_offset=pos)
    (header_len,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if len(blob) < pos + header_len:
        raise ShardParseError(f"shard {path} truncated inside header", byte_offset=pos)
    try:
        header = json.loads(blob[pos : pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ShardParseError(f"shard {path} header is not valid JSON: {exc}", byte_offset=pos)
    pos += header_len
    try:
        dims = tuple(int(d) for d in header["dims"])
        dtype = header["dtype"]
        image_ids = list(header["image_ids"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ShardParseError(f"shard {path} header missing fields: {exc}", byte_offset=pos)
    if dtype != "f32le":
        raise ShardParseError(f"shard {path} has unsupported dtype {dtype!r}", byte_offset=pos)
    if len(dims) != 3:
        raise ShardParseError(f"shard {path} dims must have three entries", byte_offset=pos)
    map_nbytes = dims[0] * dims[1] * dims[2] * 4
    expected = pos + map_nbytes * len(image_ids)
    if len(blob) < expected:
        raise ShardParseError(
            f"shard {path} payload truncated ({len(blob)} bytes, expected {expected})",
            byte_offset=len(blob),
        )
    if len(blob) > expected:
        raise ShardParseError(
            f"shard {path} has {len(blob) - expected} trailing bytes", byte_offset=expected
        )
    maps: list[FeatureMap] = []
    for i, image_id in enumerate(image_ids):
        start = pos + i * map_nbytes
        arr = np.frombuffer(blob, dtype="<f4", count=dims[0] * dims[1] * dims[2], offset=start)
        maps.append(FeatureMap(str(image_id), arr.reshape(dims).copy()))
    return maps


def create_store(path, manifest: StoreManifest) -> FeatureStore:
    """Module-level alias for FeatureStore.create."""
    return FeatureStore.create(path, manifest)
