"""HTTP API for gallery browsing and interactive region search.

The service mounts read-only feature stores described by a JSON config file
and exposes them over JSON endpoints. Each mounted store is either fully
preloaded at startup (when its tensors fit the configured RAM budget) or
streamed from disk per search. The service adds no reranking: search results
are exactly what the library-level top-k returns.
"""

from __future__ import annotations

import io
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, Field

from .errors import (
    DegenerateQueryError,
    EmptyMaskError,
    ImageNotFoundError,
    InvalidArgumentError,
)
from .search import SearchHit, prepare_query, topk_search
from .store import FeatureStore
from .tensors import FeatureMap, ImageMask, downsample_mask

DEFAULT_K = 6
MAX_K = 50
MAX_PAGE_LIMIT = 200
THUMBNAIL_MAX_SIDE = 256

_IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp")


@dataclass
class StoreConfig:
    name: str
    store_path: str
    image_dir: str | None = None
    ram_budget_mb: int = 1024


@dataclass
class ServiceConfig:
    stores: list[StoreConfig]
    port: int = 8000
    cors_origins: list[str] = field(default_factory=lambda: ["*"])

    @classmethod
    def from_file(cls, path) -> "ServiceConfig":
        try:
            doc = json.loads(Path(path).read_text("utf-8"))
            stores = [
                StoreConfig(
                    name=s["name"],
                    store_path=s["store_path"],
                    image_dir=s.get("image_dir"),
                    ram_budget_mb=int(s.get("ram_budget_mb", 1024)),
                )
                for s in doc["stores"]
            ]
            return cls(
                stores=stores,
                port=int(doc.get("port", 8000)),
                cors_origins=list(doc.get("cors_origins", ["*"])),
            )
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InvalidArgumentError(f"bad service config {path}: {exc}") from exc


class MountedStore:
    """One read-only store plus its thumbnail directory and RAM policy."""

    def __init__(self, config: StoreConfig):
        self.config = config
        self.store = FeatureStore.open(config.store_path)
        self.image_dir = Path(config.image_dir) if config.image_dir else None
        budget_bytes = config.ram_budget_mb * 1024 * 1024
        self._preloaded: list[FeatureMap] | None = None
        self._preloaded_by_id: dict[str, FeatureMap] = {}
        if self.store.manifest.estimated_ram_bytes <= budget_bytes:
            self._preloaded = list(self.store.iter_feature_maps())
            self._preloaded_by_id = {m.image_id: m for m in self._preloaded}
        self._thumb_cache: dict[str, tuple[bytes, str]] = {}

    @property
    def name(self) -> str:
        return self.config.name

    def feature_maps(self) -> Iterable[FeatureMap]:
        if self._preloaded is not None:
            return self._preloaded
        return self.store.iter_feature_maps()

    def get_feature_map(self, image_id: str) -> FeatureMap:
        if self._preloaded is not None:
            fmap = self._preloaded_by_id.get(image_id)
            if fmap is None:
                raise ImageNotFoundError(image_id)
            return fmap
        return self.store.get_feature_map(image_id)

    def label_for(self, image_id: str) -> str | None:
        labels = self.store.manifest.label_map
        return labels.get(image_id) if labels else None

    def resolve_image_file(self, image_id: str) -> Path | None:
        if self.image_dir is None:
            return None
        base = self.image_dir.resolve()
        candidate = (base / image_id).resolve()
        if not candidate.is_relative_to(base):  # defend against path traversal
            return None
        if candidate.is_file():
            return candidate
        for ext in _IMAGE_EXTENSIONS:
            with_ext = base / f"{image_id}{ext}"
            if with_ext.is_file():
                return with_ext
        return None

    def thumbnail(self, image_id: str) -> tuple[bytes, str] | None:
        if image_id in self._thumb_cache:
            return self._thumb_cache[image_id]
        path = self.resolve_image_file(image_id)
        if path is None:
            return None
        from PIL import Image

        with Image.open(path) as img:
            img = img.convert("RGB")
            img.thumbnail((THUMBNAIL_MAX_SIDE, THUMBNAIL_MAX_SIDE))
            buf = io.BytesIO()
            img.save(buf, format="PNG")
        result = (buf.getvalue(), "image/png")
        self._thumb_cache[image_id] = result
        return result


class MaskPayload(BaseModel):
    rows: int = Field(ge=1)
    cols: int = Field(ge=1)
    data: list[float]


class InlineFeatures(BaseModel):
    rows: int = Field(ge=1)
    cols: int = Field(ge=1)
    channels: int = Field(ge=1)
    data: list[float]


class SearchRequest(BaseModel):
    dataset: str
    query_image_id: Optional[str] = None
    query_features: Optional[InlineFeatures] = None
    mask: MaskPayload
    k: int = Field(DEFAULT_K, ge=1)


def hit_to_json(hit: SearchHit, mount: MountedStore | None = None) -> dict:
    """Wire form of one hit; the CLI uses the same shape with no mount."""
    doc = {
        "image_id": hit.image_id,
        "score": float(hit.score),
        "alpha": int(hit.alpha),
        "beta": int(hit.beta),
        "region_mask": hit.region_mask.tolist(),
        "thumbnail_url": (
            f"/api/datasets/{mount.name}/thumbnail/{hit.image_id}" if mount else None
        ),
        "label": mount.label_for(hit.image_id) if mount else None,
    }
    return doc


def _error(status: int, code: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "detail": detail})


def create_app(config: ServiceConfig) -> FastAPI:
    """Build the FastAPI app with every configured store mounted."""
    mounts: dict[str, MountedStore] = {}
    for store_config in config.stores:
        mounts[store_config.name] = MountedStore(store_config)

    app = FastAPI(title="featscan", docs_url=None, redoc_url=None)
    app.state.mounts = mounts
    app.add_middleware(
        CORSMiddleware,
        allow_origins=config.cors_origins,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return _error(400, "bad_request", str(exc.errors()[:3]))

    @app.get("/api/datasets")
    def list_datasets():
        out = []
        for mount in mounts.values():
            m = mount.store.manifest
            out.append(
                {
                    "name": mount.name,
                    "model_name": m.model_name,
                    "layer_name": m.layer_name,
                    "dims": list(m.dims),
                    "image_count": m.image_count,
                }
            )
        return out

    @app.get("/api/datasets/{name}/images")
    def list_images(name: str, offset: int = 0, limit: int = 50):
        mount = mounts.get(name)
        if mount is None:
            return _error(404, "not_found", f"no dataset named {name!r}")
        offset = max(0, offset)
        limit = min(max(1, limit), MAX_PAGE_LIMIT)
        ids = mount.store.image_ids
        page = ids[offset : offset + limit]
        return {
            "total": len(ids),
            "offset": offset,
            "limit": limit,
            "images": [
                {
                    "image_id": image_id,
                    "thumbnail_url": f"/api/datasets/{name}/thumbnail/{image_id}",
                    "label": mount.label_for(image_id),
                }
                for image_id in page
            ],
        }

    @app.get("/api/datasets/{name}/thumbnail/{image_id:path}")
    def thumbnail(name: str, image_id: str):
        mount = mounts.get(name)
        if mount is None:
            return _error(404, "not_found", f"no dataset named {name!r}")
        result = mount.thumbnail(image_id)
        if result is None:
            return _error(404, "not_found", f"no image file for {image_id!r}")
        payload, content_type = result
        return Response(
            content=payload,
            media_type=content_type,
            headers={"Cache-Control": "public, max-age=86400"},
        )

    @app.post("/api/search")
    def search(req: SearchRequest):
        mount = mounts.get(req.dataset)
        if mount is None:
            return _error(404, "not_found", f"no dataset named {req.dataset!r}")
        if (req.query_image_id is None) == (req.query_features is None):
            return _error(
                400, "bad_request",
                "exactly one of query_image_id or query_features must be set",
            )
        if len(req.mask.data) != req.mask.rows * req.mask.cols:
            return _error(
                400, "bad_request",
                f"mask data length {len(req.mask.data)} != rows*cols "
                f"{req.mask.rows * req.mask.cols}",
            )

        if req.query_image_id is not None:
            try:
                query_fmap = mount.get_feature_map(req.query_image_id)
            except ImageNotFoundError:
                return _error(404, "not_found", f"no image {req.query_image_id!r}")
        else:
            inline = req.query_features
            assert inline is not None
            if len(inline.data) != inline.rows * inline.cols * inline.channels:
                return _error(400, "bad_request", "query_features data length mismatch")
            try:
                query_fmap = FeatureMap(
                    "__inline__",
                    np.asarray(inline.data, dtype=np.float32).reshape(
                        inline.rows, inline.cols, inline.channels
                    ),
                )
            except InvalidArgumentError as exc:
                return _error(400, "bad_request", str(exc))
            if query_fmap.dims != mount.store.manifest.dims:
                return _error(
                    400, "bad_request",
                    f"inline features dims {query_fmap.dims} do not match store "
                    f"dims {mount.store.manifest.dims}",
                )

        k = min(req.k, MAX_K)
        h_l, w_l, _ = mount.store.manifest.dims
        started = time.perf_counter()
        try:
            mask = ImageMask(
                np.asarray(req.mask.data, dtype=np.float32).reshape(
                    req.mask.rows, req.mask.cols
                )
            )
            mask_l = downsample_mask(mask, h_l, w_l)
            qf = prepare_query(query_fmap, mask_l)
            hits = topk_search(qf, mount.feature_maps(), k)
        except EmptyMaskError:
            return _error(422, "empty_mask", "mask has no positive cells")
        except DegenerateQueryError:
            return _error(422, "degenerate_query", "masked query features are all zero")
        except InvalidArgumentError as exc:
            return _error(400, "bad_request", str(exc))
        elapsed_ms = int(round((time.perf_counter() - started) * 1000))

        return {
            "hits": [hit_to_json(hit, mount) for hit in hits],
            "timing_ms": elapsed_ms,
        }

    return app


def app_from_env() -> FastAPI:
    """Entry point for `uvicorn featscan.service:app_from_env --factory`."""
    config_path = os.environ.get("FEATSCAN_CONFIG", "featscan.json")
    config = ServiceConfig.from_file(config_path)
    return create_app(config)
