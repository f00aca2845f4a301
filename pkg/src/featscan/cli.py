"""Operator entry points: cache building, offline search, serving, benchmarking.

Machine-readable output is JSON on stdout; human diagnostics go to stderr.
Exit codes: 0 success, 1 user error, 2 data corruption, 3 internal error.
"""

from __future__ import annotations

import glob as globlib
import json
import shutil
import statistics
import sys
import time
from pathlib import Path

import click
import numpy as np

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
from .search import oracle_region_scores, prepare_query, topk_search
from .service import ServiceConfig, create_app, hit_to_json
from .store import FeatureStore, StoreManifest, read_interchange_shard
from .tensors import ImageMask, downsample_mask

EXIT_OK = 0
EXIT_USER = 1
EXIT_CORRUPT = 2
EXIT_INTERNAL = 3

_USER_ERRORS = (
    InvalidArgumentError,
    EmptyMaskError,
    DegenerateQueryError,
    ShardParseError,
    ImageNotFoundError,
    StoreExistsError,
    FileNotFoundError,
)


def _emit(doc: dict) -> None:
    click.echo(json.dumps(doc))


def _diag(message: str) -> None:
    click.echo(message, err=True)


def load_mask_file(path) -> ImageMask:
    """Mask file format: JSON {"rows": H, "cols": W, "data": [floats]}."""
    try:
        doc = json.loads(Path(path).read_text("utf-8"))
        rows, cols, data = int(doc["rows"]), int(doc["cols"]), doc["data"]
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"bad mask file {path}: {exc}") from exc
    if len(data) != rows * cols:
        raise InvalidArgumentError(
            f"mask file {path}: data length {len(data)} != rows*cols {rows * cols}"
        )
    return ImageMask(np.asarray(data, dtype=np.float32).reshape(rows, cols))


@click.group()
def cli():
    """Region-based feature search over cached CNN feature maps."""


@cli.command()
@click.option("--store", "store_path", required=True, type=click.Path())
@click.option("--shards", "shard_glob", required=True,
              help="Glob of FMAP1 shard files to ingest.")
@click.option("--create", "create_new", is_flag=True,
              help="Create the store first (requires --dataset/--model/--layer).")
@click.option("--dataset", "dataset_name", default=None)
@click.option("--model", "model_name", default=None)
@click.option("--layer", "layer_name", default=None)
@click.option("--chunk", "images_per_chunk", default=64, show_default=True)
@click.option("--compression", type=click.Choice(["deflate", "none"]), default="deflate",
              show_default=True)
@click.option("--labels", "labels_file", default=None,
              help="JSON file mapping image id to class label.")
def ingest(store_path, shard_glob, create_new, dataset_name, model_name, layer_name,
           images_per_chunk, compression, labels_file):
    """Create or extend a store from interchange shards."""
    shard_paths = sorted(globlib.glob(shard_glob))
    if not shard_paths:
        raise InvalidArgumentError(f"no shards match {shard_glob!r}")
    labels = None
    if labels_file is not None:
        try:
            labels = json.loads(Path(labels_file).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidArgumentError(f"bad labels file {labels_file}: {exc}") from exc
        if not isinstance(labels, dict):
            raise InvalidArgumentError(f"labels file {labels_file} must hold a JSON object")

    if create_new:
        missing = [
            flag
            for flag, value in (
                ("--dataset", dataset_name),
                ("--model", model_name),
                ("--layer", layer_name),
            )
            if value is None
        ]
        if missing:
            raise InvalidArgumentError(f"--create requires {', '.join(missing)}")
        if images_per_chunk < 1:
            raise InvalidArgumentError("--chunk must be >= 1")
        # parse and validate everything before touching disk so a bad shard
        # leaves no store behind
        parsed = [read_interchange_shard(p) for p in shard_paths]
        if not parsed[0]:
            raise InvalidArgumentError(f"shard {shard_paths[0]} is empty")
        dims = parsed[0][0].dims
        seen_ids: set[str] = set()
        for shard_path, maps in zip(shard_paths, parsed):
            for fmap in maps:
                if fmap.dims != dims:
                    raise InvalidArgumentError(
                        f"shard {shard_path} map {fmap.image_id!r} has dims "
                        f"{fmap.dims}, expected {dims}"
                    )
                if fmap.image_id in seen_ids:
                    raise InvalidArgumentError(
                        f"duplicate image id {fmap.image_id!r} across shards"
                    )
                seen_ids.add(fmap.image_id)
        manifest = StoreManifest(
            dataset_name=dataset_name,
            model_name=model_name,
            layer_name=layer_name,
            dims=dims,
            images_per_chunk=images_per_chunk,
            compression=compression,
        )
        store = FeatureStore.create(store_path, manifest)
        try:
            count = 0
            for maps in parsed:
                count += store.append_feature_maps(maps)
            if labels:
                store.set_label_map(labels)
        except BaseException:
            store.close()
            shutil.rmtree(store_path, ignore_errors=True)
            raise
        finally:
            store.close()
    else:
        store = FeatureStore.open(store_path, writable=True)
        try:
            count = store.ingest_interchange(shard_paths)
            if labels:
                store.set_label_map(labels)
        finally:
            store.close()

    refreshed = FeatureStore.open(store_path)
    _emit({"ingested": count, "store": refreshed.stats()})


@cli.command()
@click.option("--store", "store_path", required=True, type=click.Path())
@click.option("--query-id", "query_id", required=True)
@click.option("--mask", "mask_file", required=True, type=click.Path())
@click.option("--k", default=6, show_default=True)
@click.option("--oracle", is_flag=True,
              help="Score with the brute-force sliding window instead of the fast path.")
@click.option("--out", "out_file", required=True, type=click.Path())
def search(store_path, query_id, mask_file, k, oracle, out_file):
    """Search the store and write the ranked hits as JSON to --out."""
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    store = FeatureStore.open(store_path)
    query_fmap = store.get_feature_map(query_id)
    h_l, w_l, _ = store.manifest.dims
    mask = load_mask_file(mask_file)
    mask_l = downsample_mask(mask, h_l, w_l)

    started = time.perf_counter()
    qf = prepare_query(query_fmap, mask_l)
    scorer = None
    if oracle:
        scorer = lambda fmap: oracle_region_scores(query_fmap, mask_l, fmap)  # noqa: E731
    hits = topk_search(qf, store.iter_feature_maps(), k, scorer=scorer)
    elapsed_ms = int(round((time.perf_counter() - started) * 1000))

    response = {"hits": [hit_to_json(h) for h in hits], "timing_ms": elapsed_ms}
    Path(out_file).write_text(json.dumps(response, indent=2), encoding="utf-8")
    _emit({"out": str(out_file), "hits": len(hits), "timing_ms": elapsed_ms,
           "oracle": bool(oracle)})


@cli.command()
@click.option("--config", "config_file", default=None, type=click.Path(),
              envvar="FEATSCAN_CONFIG")
@click.option("--port", default=None, type=int, envvar="FEATSCAN_PORT")
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(config_file, port, host):
    """Run the HTTP service until interrupted."""
    if config_file is None:
        raise InvalidArgumentError("--config (or FEATSCAN_CONFIG) is required")
    config = ServiceConfig.from_file(config_file)
    app = create_app(config)  # mounts (and validates) every store before binding
    import uvicorn

    _diag(f"serving {len(config.stores)} store(s) on {host}:{port or config.port}")
    uvicorn.run(app, host=host, port=port or config.port, log_level="warning")


@cli.command()
@click.option("--store", "store_path", required=True, type=click.Path())
@click.option("--mask", "mask_file", required=True, type=click.Path())
@click.option("--repeat", default=3, show_default=True)
@click.option("--ram-budget", "ram_budget_mb", default=4096, show_default=True,
              help="Skip the in-RAM pass when the store exceeds this many MB.")
@click.option("--k", default=6, show_default=True)
def bench(store_path, mask_file, repeat, ram_budget_mb, k):
    """Time streamed-from-disk vs fully-in-RAM search over the whole store."""
    if repeat < 1:
        raise InvalidArgumentError("--repeat must be >= 1")
    if k < 1:
        raise InvalidArgumentError("--k must be >= 1")
    store = FeatureStore.open(store_path)
    if store.image_count == 0:
        raise InvalidArgumentError("store is empty; nothing to benchmark")
    h_l, w_l, _ = store.manifest.dims
    mask_l = downsample_mask(load_mask_file(mask_file), h_l, w_l)
    query_id = store.image_ids[0]  # first stored image serves as the probe query
    qf = prepare_query(store.get_feature_map(query_id), mask_l)

    streamed_samples = []
    for _ in range(repeat):
        started = time.perf_counter()
        topk_search(qf, store.iter_feature_maps(), k)
        streamed_samples.append((time.perf_counter() - started) * 1000)

    in_ram_samples: list[float] | None = None
    budget_bytes = ram_budget_mb * 1024 * 1024
    if store.manifest.estimated_ram_bytes <= budget_bytes:
        preloaded = list(store.iter_feature_maps())
        in_ram_samples = []
        for _ in range(repeat):
            started = time.perf_counter()
            topk_search(qf, preloaded, k)
            in_ram_samples.append((time.perf_counter() - started) * 1000)
        del preloaded
    else:
        _diag(
            f"store needs ~{store.manifest.estimated_ram_bytes // 2**20} MB, over the "
            f"{ram_budget_mb} MB budget; skipping the in-RAM pass"
        )

    report = {
        "streamed_ms": statistics.median(streamed_samples),
        "in_ram_ms": statistics.median(in_ram_samples) if in_ram_samples else None,
        "images": store.image_count,
        "dims": list(store.manifest.dims),
        "k": k,
        "repeat": repeat,
        "query_id": query_id,
        "streamed_samples_ms": streamed_samples,
        "in_ram_samples_ms": in_ram_samples,
    }
    _emit(report)


@cli.command()
@click.option("--store", "store_path", required=True, type=click.Path())
def verify(store_path):
    """Check every chunk checksum and the index; exit 2 on any failure."""
    store = FeatureStore.open(store_path)
    report = store.verify()
    _emit(report.to_dict())
    if not report.ok:
        sys.exit(EXIT_CORRUPT)


def main(argv=None) -> int:
    """Console entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else EXIT_INTERNAL
        sys.exit(code)
    except click.UsageError as exc:
        _diag(f"error: {exc.format_message()}")
        sys.exit(EXIT_USER)
    except click.ClickException as exc:
        _diag(f"error: {exc.format_message()}")
        sys.exit(EXIT_USER)
    except CorruptionError as exc:
        _diag(f"corruption: {exc}")
        sys.exit(EXIT_CORRUPT)
    except _USER_ERRORS as exc:
        _diag(f"error: {exc}")
        sys.exit(EXIT_USER)
    except KeyboardInterrupt:
        sys.exit(EXIT_OK)
    except FeatscanError as exc:
        _diag(f"error: {exc}")
        sys.exit(EXIT_INTERNAL)
    except Exception as exc:  # pragma: no cover - safety net
        _diag(f"internal error: {type(exc).__name__}: {exc}")
        sys.exit(EXIT_INTERNAL)


if __name__ == "__main__":
    main()
