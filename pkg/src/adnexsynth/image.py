"""Grayscale images, per-class label masks, geometry helpers and file I/O.

Intensities are kept as float64 in [0, 1] in memory and written as 8-bit
grayscale on disk. Masks are boolean rasters indexed ``[row, col]``; all
public coordinates are ``(x, y)`` = ``(col, row)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image
from scipy import ndimage


class ImageFormatError(ValueError):
    """Input file is not an 8-bit single-channel raster we can use."""


class ClassId(enum.IntEnum):
    LESION = 0
    LOCULE = 1
    SOLID_AREA = 2
    PAPILLATION = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, name: str | int | "ClassId") -> "ClassId":
        if isinstance(name, ClassId):
            return name
        if isinstance(name, (int, np.integer)):
            return cls(int(name))
        key = str(name).strip().lower().replace("-", "_").replace(" ", "_")
        if key.isdigit():
            return cls(int(key))
        for member in cls:
            if member.label == key:
                return member
        raise ValueError(f"unknown class {name!r}; expected one of "
                         f"{', '.join(m.label for m in cls)}")


N_CLASSES = len(ClassId)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Single-channel image with intensities in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.size == 0:
            raise ValueError(f"GrayImage needs a non-empty 2-D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("GrayImage intensities must be finite")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("GrayImage intensities must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @classmethod
    def from_bytes(cls, arr: np.ndarray) -> "GrayImage":
        return cls(np.asarray(arr, dtype=np.float64) / 255.0)

    def to_bytes(self) -> np.ndarray:
        return quantize(self.data)

    def crop(self, rect: "Rect") -> "GrayImage":
        return GrayImage(self.data[rect.slices])

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))


def quantize(values: np.ndarray) -> np.ndarray:
    """Map real intensities to bytes: round half up, clamp to [0, 255]."""
    scaled = np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"Rect needs w, h >= 1, got {self.w}x{self.h}")

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.h), slice(self.x, self.x + self.w)

    def contained_in(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= width and self.y + self.h <= height

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def bounding(cls, mask: np.ndarray) -> "Rect":
        rows, cols = np.nonzero(mask)
        if rows.size == 0:
            raise ValueError("bounding box of an empty mask")
        return cls(int(cols.min()), int(rows.min()),
                   int(cols.max() - cols.min() + 1), int(rows.max() - rows.min() + 1))


@dataclass(frozen=True, eq=False)
class LabelMaskSet:
    """One boolean raster per ClassId, stacked as ``(4, H, W)``. Masks may overlap."""

    masks: np.ndarray

    def __post_init__(self):
        masks = np.asarray(self.masks)
        if masks.ndim != 3 or masks.shape[0] != N_CLASSES:
            raise ValueError(f"expected ({N_CLASSES}, H, W) masks, got shape {masks.shape}")
        object.__setattr__(self, "masks", _frozen(masks.astype(bool)))

    @classmethod
    def empty(cls, height: int, width: int) -> "LabelMaskSet":
        return cls(np.zeros((N_CLASSES, height, width), dtype=bool))

    @classmethod
    def from_dict(cls, masks: Mapping[ClassId, np.ndarray], shape: tuple[int, int] | None = None) -> "LabelMaskSet":
        if shape is None:
            if not masks:
                raise ValueError("need at least one mask or an explicit shape")
            shape = np.asarray(next(iter(masks.values()))).shape
        stack = np.zeros((N_CLASSES, *shape), dtype=bool)
        for cls_id, mask in masks.items():
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != tuple(shape):
                raise ValueError(f"{ClassId.parse(cls_id).label} mask has shape {mask.shape}, expected {tuple(shape)}")
            stack[ClassId.parse(cls_id)] = mask
        return cls(stack)

    @classmethod
    def from_bits(cls, packed: np.ndarray) -> "LabelMaskSet":
        packed = np.asarray(packed)
        if packed.ndim != 2:
            raise ValueError("bit-packed labels must be 2-D")
        if np.any(packed >> N_CLASSES):
            raise ImageFormatError(f"bit-packed label uses bits above {N_CLASSES - 1}")
        return cls(np.stack([(packed >> k) & 1 for k in range(N_CLASSES)]).astype(bool))

    def to_bits(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.uint8)
        for k in range(N_CLASSES):
            out |= self.masks[k].astype(np.uint8) << k
        return out

    @property
    def shape(self) -> tuple[int, int]:
        return self.masks.shape[1:]

    @property
    def height(self) -> int:
        return self.masks.shape[1]

    @property
    def width(self) -> int:
        return self.masks.shape[2]

    def __getitem__(self, cls_id) -> np.ndarray:
        return self.masks[ClassId.parse(cls_id)]

    def present(self, cls_id) -> bool:
        return bool(self[cls_id].any())

    def classes_present(self) -> frozenset[ClassId]:
        return frozenset(c for c in ClassId if self.present(c))

    def with_mask(self, cls_id, mask: np.ndarray) -> "LabelMaskSet":
        stack = self.masks.copy()
        stack[ClassId.parse(cls_id)] = np.asarray(mask, dtype=bool)
        return LabelMaskSet(stack)

    def __eq__(self, other):
        if not isinstance(other, LabelMaskSet):
            return NotImplemented
        return bool(np.array_equal(self.masks, other.masks))


@dataclass(frozen=True, eq=False)
class Component:
    """A maximal 8-connected set of foreground pixels.

    ``pixels`` is an ``(N, 2)`` array of ``(row, col)`` in raster order.
    """

    cls: ClassId | None
    pixels: np.ndarray
    bbox: Rect
    centroid: tuple[float, float]
    area: int

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        out[self.pixels[:, 0], self.pixels[:, 1]] = True
        return out

    def coords(self) -> set[tuple[int, int]]:
        return {(int(c), int(r)) for r, c in self.pixels}


_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)


def connected_components(mask: np.ndarray, cls: ClassId | None = None) -> list[Component]:
    """8-connected components of ``mask``, ordered by (bbox.y, bbox.x, first pixel)."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=_EIGHT)
    comps = []
    for lab in range(1, n + 1):
        rows, cols = np.nonzero(labels == lab)
        pixels = _frozen(np.stack([rows, cols], axis=1))
        bbox = Rect(int(cols.min()), int(rows.min()),
                    int(cols.max() - cols.min() + 1), int(rows.max() - rows.min() + 1))
        centroid = (float(cols.mean()), float(rows.mean()))
        comps.append(Component(cls, pixels, bbox, centroid, int(rows.size)))
    comps.sort(key=lambda c: (c.bbox.y, c.bbox.x, int(c.pixels[0, 0]), int(c.pixels[0, 1])))
    return comps


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with a 4-neighbour that is background or off-raster."""
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=_FOUR, border_value=0)
    return mask & ~interior


def boundary_pixels(mask: np.ndarray) -> set[tuple[int, int]]:
    rows, cols = np.nonzero(boundary_mask(mask))
    return {(int(c), int(r)) for r, c in zip(rows, cols)}


# --- file I/O -------------------------------------------------------------

def _read_gray(path: str | Path, allow_bilevel: bool = False) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "1" and allow_bilevel:
                return np.asarray(im, dtype=np.uint8)
            if mode != "L":
                raise ImageFormatError(f"{path}: expected 8-bit grayscale, got mode {mode!r}")
            return np.asarray(im, dtype=np.uint8).copy()
    except (OSError, SyntaxError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise ImageFormatError(f"{path}: unreadable image ({exc})") from exc


def _write_gray(arr: np.ndarray, path: str | Path) -> None:
    Image.fromarray(np.ascontiguousarray(arr, dtype=np.uint8)).save(Path(path), format="PNG")


def load_image(path: str | Path) -> GrayImage:
    """Read an 8-bit grayscale PNG or PGM into [0, 1] intensities."""
    return GrayImage.from_bytes(_read_gray(path))


def save_image(img: GrayImage, path: str | Path) -> None:
    _write_gray(img.to_bytes(), path)


def load_masks(paths: str | Path | Mapping[ClassId | str, str | Path],
               shape: tuple[int, int] | None = None) -> LabelMaskSet:
    """Load masks from one bit-packed PNG or from a ``{class: path}`` mapping.

    Classes missing from the mapping are empty. A mask pixel is foreground when
    non-zero. ``shape`` (height, width), if given, is checked against every file.
    """
    if isinstance(paths, (str, Path)):
        packed = _read_gray(paths)
        if shape is not None and packed.shape != tuple(shape):
            raise ValueError(f"{paths}: label shape {packed.shape} does not match image {tuple(shape)}")
        return LabelMaskSet.from_bits(packed)

    arrays = {}
    for key, p in paths.items():
        cls_id = ClassId.parse(key)
        arr = load_binary_mask(p)
        ref = shape if shape is not None else next(iter(a.shape for a in arrays.values()), None)
        if ref is not None and arr.shape != tuple(ref):
            raise ValueError(f"{p}: {cls_id.label} mask shape {arr.shape} does not match {tuple(ref)}")
        arrays[cls_id] = arr
    if not arrays and shape is None:
        raise ValueError("no mask files given and no shape to build empty masks")
    return LabelMaskSet.from_dict(arrays, shape=shape)


def load_binary_mask(path: str | Path) -> np.ndarray:
    return _read_gray(path, allow_bilevel=True) != 0


def save_binary_mask(mask: np.ndarray, path: str | Path) -> None:
    _write_gray(np.asarray(mask, dtype=bool).astype(np.uint8) * 255, path)


def save_masks(masks: LabelMaskSet, path: str | Path) -> None:
    """Write the bit-packed form: bit k of each pixel is membership in class k."""
    _write_gray(masks.to_bits(), path)


def save_class_masks(masks: LabelMaskSet, directory: str | Path, image_id: str) -> dict[str, str]:
    directory = Path(directory)
    out = {}
    for cls_id in ClassId:
        p = directory / f"{image_id}_{cls_id.label}.png"
        save_binary_mask(masks[cls_id], p)
        out[cls_id.label] = str(p)
    return out
