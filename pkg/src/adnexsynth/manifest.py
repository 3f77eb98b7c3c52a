"""Dataset manifests and patch-bank directories.

A manifest is a JSON array of records::

    {"id": "img001", "image": "images/img001.png", "masks": "masks/img001_labels.png",
     "provenance": "real"}

``masks`` is either the path of a bit-packed label PNG or an object mapping
class names to binary PNGs. Synthetic records add ``source_target_id``,
``source_patch_id``, ``roi`` ([x, y, w, h]) and ``seed``. Relative paths are
resolved against the manifest's directory.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Iterable

from .image import (ClassId, LabelMaskSet, load_binary_mask, load_image, load_masks, save_binary_mask,
                    save_image, save_masks)
from .synthesizer import Direction, Patch, Sample

BANK_INDEX = "bank_index.json"


class ManifestError(ValueError):
    """Manifest or bank index is structurally invalid."""


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def read_manifest(path: str | Path) -> list[dict[str, Any]]:
    path = Path(path)
    try:
        records = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(records, list):
        raise ManifestError(f"{path}: manifest must be a JSON array of records")
    seen = set()
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or "id" not in rec or "masks" not in rec:
            raise ManifestError(f"{path}: record {i} needs at least 'id' and 'masks'")
        if not isinstance(rec["masks"], (str, dict)):
            raise ManifestError(f"{path}: record {rec['id']!r} has malformed 'masks'")
        if rec.get("provenance", "real") not in ("real", "synthetic"):
            raise ManifestError(f"{path}: record {rec['id']!r} has unknown provenance {rec['provenance']!r}")
        if rec["id"] in seen:
            raise ManifestError(f"{path}: duplicate id {rec['id']!r}")
        seen.add(rec["id"])
    return records


def write_manifest(records: Iterable[dict[str, Any]], path: str | Path) -> None:
    Path(path).write_text(json.dumps(list(records), indent=2) + "\n")


def _record_masks(rec: dict, base: Path, shape=None) -> LabelMaskSet:
    masks = rec["masks"]
    if isinstance(masks, str):
        return load_masks(_resolve(base, masks), shape=shape)
    try:
        paths = {ClassId.parse(k): _resolve(base, v) for k, v in masks.items()}
    except ValueError as exc:
        raise ManifestError(f"record {rec['id']!r}: {exc}") from exc
    if not paths and shape is None:
        raise ManifestError(f"record {rec['id']!r}: empty mask mapping and no image to size it")
    return load_masks(paths, shape=shape)


def load_samples(path: str | Path) -> list[Sample]:
    """Load every record (image and masks) of a manifest."""
    path = Path(path)
    base = path.parent
    samples = []
    for rec in read_manifest(path):
        if "image" not in rec:
            raise ManifestError(f"{path}: record {rec['id']!r} has no 'image'")
        image = load_image(_resolve(base, rec["image"]))
        samples.append(Sample(rec["id"], image, _record_masks(rec, base, image.shape)))
    return samples


def load_label_sets(path: str | Path) -> dict[str, LabelMaskSet]:
    """Masks only, keyed by id; records need not reference an image."""
    path = Path(path)
    return {rec["id"]: _record_masks(rec, path.parent) for rec in read_manifest(path)}


def relative_to(path: Path, start: Path) -> str:
    return Path(os.path.relpath(Path(path).resolve(), Path(start).resolve())).as_posix()


# --- patch bank -----------------------------------------------------------

def save_bank(patches: Iterable[Patch], directory: str | Path) -> list[Path]:
    """Write crops, masks and metadata plus ``bank_index.json``; return written files."""
    directory = Path(directory)
    pdir = directory / "patches"
    pdir.mkdir(parents=True, exist_ok=True)
    written = []
    entries = []
    for patch in patches:
        img_p = pdir / f"{patch.id}.png"
        mask_p = pdir / f"{patch.id}_mask.png"
        meta_p = pdir / f"{patch.id}.json"
        save_image(patch.image, img_p)
        save_binary_mask(patch.mask, mask_p)
        meta_p.write_text(json.dumps(patch.metadata(), indent=2) + "\n")
        written += [img_p, mask_p, meta_p]
        entries.append({"id": patch.id, "image": f"patches/{img_p.name}", "mask": f"patches/{mask_p.name}",
                        "meta": f"patches/{meta_p.name}", **patch.metadata()})
    index = directory / BANK_INDEX
    index.write_text(json.dumps({"patches": entries}, indent=2) + "\n")
    written.append(index)
    return written


def load_bank(directory: str | Path) -> list[Patch]:
    directory = Path(directory)
    index = directory / BANK_INDEX
    if not index.is_file():
        raise FileNotFoundError(f"{directory}: no {BANK_INDEX}")
    try:
        entries = json.loads(index.read_text())["patches"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ManifestError(f"{index}: malformed bank index") from exc
    patches = []
    for e in entries:
        try:
            meta = json.loads(_resolve(directory, e["meta"]).read_text())
            image = load_image(_resolve(directory, e["image"]))
            mask = load_binary_mask(_resolve(directory, e["mask"]))
            patches.append(Patch(e["id"], image, mask, ClassId.parse(meta["class"]), meta["source_id"],
                                 int(meta["area"]), Direction(meta["rel_direction"]), int(meta["margin"])))
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise ManifestError(f"{index}: bad entry {e!r}: {exc}") from exc
    return patches


def save_sample(sample: Sample, image_dir: Path, mask_dir: Path) -> tuple[Path, Path]:
    image_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    img_p = image_dir / f"{sample.id}.png"
    mask_p = mask_dir / f"{sample.id}_labels.png"
    save_image(sample.image, img_p)
    save_masks(sample.masks, mask_p)
    return img_p, mask_p
