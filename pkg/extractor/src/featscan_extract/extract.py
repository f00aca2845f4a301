"""Offline feature extraction: run a CNN, hook one layer, emit FMAP1 shards.

Images are processed in deterministic lexicographic order with inference-mode
settings, so reruns with the same weights and batch size produce byte-identical
shards. A sidecar `extraction.json` records the spec, skipped files, and shard
list so query-time preprocessing can match exactly.

This package talks to the search engine only through the FMAP1 shard format:
magic ``FMAP1\\n``, a u32 little-endian header length, a UTF-8 JSON header
``{"dims": [rows, cols, channels], "dtype": "f32le", "image_ids": [...]}``,
then the raw row-major float32 little-endian tensors in id order.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp")
SIDECAR_NAME = "extraction.json"
SHARD_MAGIC = b"FMAP1\n"


@dataclass
class ExtractionSpec:
    """What to run and how to preprocess, plus the declared output dims."""

    model_name: str
    layer_name: str
    input_size: tuple[int, int] = (224, 224)
    resize: int = 256
    mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    std: tuple[float, float, float] = (0.229, 0.224, 0.225)
    batch_size: int = 16
    expected_dims: tuple[int, int, int] | None = None
    weights: str | None = None

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["input_size"] = list(self.input_size)
        doc["mean"] = list(self.mean)
        doc["std"] = list(self.std)
        if self.expected_dims is not None:
            doc["expected_dims"] = list(self.expected_dims)
        return doc


def write_fmap1_shard(path, image_ids: list[str], tensors: np.ndarray) -> None:
    """Serialize (n, rows, cols, channels) float32 tensors as one FMAP1 shard."""
    if tensors.ndim != 4 or tensors.shape[0] != len(image_ids):
        raise ValueError(
            f"need one (rows, cols, channels) tensor per id; got shape "
            f"{tensors.shape} for {len(image_ids)} ids"
        )
    dims = list(tensors.shape[1:])
    header = json.dumps(
        {"dims": dims, "dtype": "f32le", "image_ids": list(image_ids)}
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SHARD_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(tensors, dtype="<f4").tobytes())


def resolve_model(spec: ExtractionSpec) -> torch.nn.Module:
    """Build the named torchvision model (weights per spec, None = random init)."""
    from torchvision import models

    try:
        return models.get_model(spec.model_name, weights=spec.weights)
    except (ValueError, KeyError) as exc:
        raise ValueError(f"unknown model {spec.model_name!r}: {exc}") from exc


def find_layer(model: torch.nn.Module, layer_name: str) -> torch.nn.Module:
    modules = dict(model.named_modules())
    if layer_name not in modules:
        raise LookupError(
            f"layer {layer_name!r} not found; available layers include "
            f"{[n for n in modules if n][:8]}..."
        )
    return modules[layer_name]


def preprocess_image(path: Path, spec: ExtractionSpec) -> torch.Tensor:
    """Decode, resize shorter side, center crop, normalize; returns CHW float32."""
    from PIL import Image

    with Image.open(path) as img:
        img = img.convert("RGB")
        w, h = img.size
        scale = spec.resize / min(w, h)
        img = img.resize((max(1, round(w * scale)), max(1, round(h * scale))), Image.BILINEAR)
        w, h = img.size
        th, tw = spec.input_size
        left = (w - tw) // 2
        top = (h - th) // 2
        img = img.crop((left, top, left + tw, top + th))
        arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - np.array(spec.mean, dtype=np.float32)) / np.array(spec.std, dtype=np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


class _LayerTap:
    """Forward hook capturing one layer's output for the current batch."""

    def __init__(self, layer: torch.nn.Module):
        self.output: torch.Tensor | None = None
        self._handle = layer.register_forward_hook(self._hook)

    def _hook(self, module, args, output):
        if not isinstance(output, torch.Tensor):
            raise ValueError("hooked layer does not produce a single tensor")
        self.output = output.detach()

    def remove(self) -> None:
        self._handle.remove()


def _probe_dims(model: torch.nn.Module, tap: _LayerTap, spec: ExtractionSpec) -> tuple[int, int, int]:
    probe = torch.zeros((1, 3) + tuple(spec.input_size), dtype=torch.float32)
    with torch.inference_mode():
        model(probe)
    if tap.output is None:
        raise ValueError(f"layer {spec.layer_name!r} never fired on the probe")
    out = tap.output
    if out.ndim != 4 or out.shape[0] != 1:
        raise ValueError(
            f"hooked layer output has shape {tuple(out.shape)}, expected (1, C, H, W)"
        )
    return int(out.shape[2]), int(out.shape[3]), int(out.shape[1])


def list_images(image_dir: Path) -> list[Path]:
    return sorted(
        p for p in Path(image_dir).iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def extract(
    spec: ExtractionSpec,
    image_dir,
    out_dir,
    shard_size: int = 64,
    model: torch.nn.Module | None = None,
) -> list[Path]:
    """Extract feature maps for every image in image_dir into FMAP1 shards.

    Returns the shard paths. Undecodable images are skipped with a warning
    and listed in the sidecar; a probe-shape mismatch aborts before writing.
    """
    if shard_size < 1:
        raise ValueError("shard_size must be >= 1")
    image_dir = Path(image_dir)
    out_dir = Path(out_dir)
    if not image_dir.is_dir():
        raise ValueError(f"image directory {image_dir} does not exist")

    if model is None:
        model = resolve_model(spec)
    model.eval()
    layer = find_layer(model, spec.layer_name)
    tap = _LayerTap(layer)
    try:
        dims = _probe_dims(model, tap, spec)
        if spec.expected_dims is not None and tuple(spec.expected_dims) != dims:
            raise ValueError(
                f"declared dims {tuple(spec.expected_dims)} do not match the hooked "
                f"layer's output {dims}"
            )

        paths = list_images(image_dir)
        batch_paths: list[Path] = []
        tensors: list[torch.Tensor] = []
        skipped: list[dict] = []
        ids: list[str] = []
        outputs: list[np.ndarray] = []

        def flush_batch() -> None:
            if not tensors:
                return
            stacked = torch.stack(tensors)
            with torch.inference_mode():
                model(stacked)
            assert tap.output is not None
            out = tap.output.to(torch.float32).permute(0, 2, 3, 1).contiguous().numpy()
            for i, p in enumerate(batch_paths):
                ids.append(p.name)
                outputs.append(out[i])
            tensors.clear()
            batch_paths.clear()

        for path in paths:
            try:
                tensor = preprocess_image(path, spec)
            except Exception as exc:
                print(f"warning: skipping undecodable image {path.name}: {exc}",
                      file=sys.stderr)
                skipped.append({"file": path.name, "reason": str(exc)})
                continue
            tensors.append(tensor)
            batch_paths.append(path)
            if len(tensors) == spec.batch_size:
                flush_batch()
        flush_batch()

        out_dir.mkdir(parents=True, exist_ok=True)
        shard_paths: list[Path] = []
        for start in range(0, len(ids), shard_size):
            shard_path = out_dir / f"shard-{start // shard_size:05d}.fmap1"
            chunk = slice(start, start + shard_size)
            write_fmap1_shard(shard_path, ids[chunk], np.stack(outputs[chunk]))
            shard_paths.append(shard_path)

        sidecar = {
            "spec": spec.to_dict(),
            "dims": list(dims),
            "image_count": len(ids),
            "skipped": skipped,
            "shards": [p.name for p in shard_paths],
        }
        (out_dir / SIDECAR_NAME).write_text(
            json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8"
        )
        return shard_paths
    finally:
        tap.remove()
