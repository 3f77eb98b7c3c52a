"""Pathology-specific copy-and-blend synthesis for class balancing.

Structures of an under-represented class (papillations by default) are cut
from annotated images, placed over a host structure (a solid area) in target
images where their presence is clinically plausible, blended with the Poisson
engine, and their class mask is OR-ed into the target's ground truth.
"""
from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .image import ClassId, Component, GrayImage, LabelMaskSet, Rect, connected_components
from .poisson import BorderError, check_placement, naive_paste, placed_pixels, seamless_clone

log = logging.getLogger(__name__)


class Direction(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"

    @property
    def sign(self) -> int:
        return 1 if self is Direction.RIGHT else -1


class PlacementError(RuntimeError):
    """No valid placement of a patch on a target within the retry budget."""


@dataclass(frozen=True, eq=False)
class Sample:
    id: str
    image: GrayImage
    masks: LabelMaskSet

    def __post_init__(self):
        if self.image.shape != self.masks.shape:
            raise ValueError(f"{self.id}: image {self.image.shape} and masks {self.masks.shape} differ")


@dataclass(frozen=True, eq=False)
class Patch:
    id: str
    image: GrayImage
    mask: np.ndarray
    cls: ClassId
    source_id: str
    area: int
    rel_direction: Direction
    margin: int

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != self.image.shape:
            raise ValueError(f"patch {self.id}: mask {mask.shape} vs crop {self.image.shape}")
        if not mask.any():
            raise ValueError(f"patch {self.id}: empty mask")
        if int(mask.sum()) != self.area:
            raise ValueError(f"patch {self.id}: area {self.area} != mask count {int(mask.sum())}")
        bb = Rect.bounding(mask)
        h, w = mask.shape
        if min(bb.x, bb.y, w - bb.x - bb.w, h - bb.y - bb.h) < self.margin:
            raise ValueError(f"patch {self.id}: mask closer than {self.margin} px to the crop edge")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def centroid(self) -> tuple[float, float]:
        rows, cols = np.nonzero(self.mask)
        return float(cols.mean()), float(rows.mean())

    def metadata(self) -> dict:
        return {"class": self.cls.label, "source_id": self.source_id, "area": self.area,
                "rel_direction": self.rel_direction.value, "margin": self.margin}


@dataclass(frozen=True)
class EligibilityRule:
    required_classes: frozenset[ClassId]
    forbidden_classes: frozenset[ClassId]

    def __post_init__(self):
        req = frozenset(ClassId.parse(c) for c in self.required_classes)
        forb = frozenset(ClassId.parse(c) for c in self.forbidden_classes)
        if req & forb:
            raise ValueError(f"classes both required and forbidden: {sorted(c.label for c in req & forb)}")
        object.__setattr__(self, "required_classes", req)
        object.__setattr__(self, "forbidden_classes", forb)

    def accepts(self, masks: LabelMaskSet) -> bool:
        present = masks.classes_present()
        return self.required_classes <= present and not (self.forbidden_classes & present)


def default_rule(cls: ClassId = ClassId.PAPILLATION, host_class: ClassId = ClassId.SOLID_AREA) -> EligibilityRule:
    """Papillations need a lesion, a locule and a solid area; other modes need the host."""
    if cls is ClassId.PAPILLATION and host_class is ClassId.SOLID_AREA:
        return EligibilityRule(frozenset({ClassId.LESION, ClassId.LOCULE, ClassId.SOLID_AREA}),
                               frozenset({ClassId.PAPILLATION}))
    return EligibilityRule(frozenset({host_class}), frozenset({cls}))


@dataclass(frozen=True)
class SynthesisConfig:
    offset_fraction: float = 1.0 / 3.0
    class_targets: Mapping[ClassId, int] = field(default_factory=dict)
    rng_seed: int = 0
    min_overlap_fraction: float = 0.3
    max_placement_retries: int = 20
    patch_class: ClassId = ClassId.PAPILLATION
    host_class: ClassId = ClassId.SOLID_AREA
    naive_paste: bool = False
    tolerance: float = 1e-6

    def __post_init__(self):
        if not self.offset_fraction >= 0:
            raise ValueError("offset_fraction must be non-negative")
        if not 0 < self.min_overlap_fraction <= 1:
            raise ValueError("min_overlap_fraction must be in (0, 1]")
        if self.max_placement_retries < 0:
            raise ValueError("max_placement_retries must be >= 0")
        if not 0 <= int(self.rng_seed) < 2 ** 64:
            raise ValueError("rng_seed must be an unsigned 64-bit integer")


@dataclass(frozen=True, eq=False)
class PlacementPlan:
    patch_ref: int
    host_component: Component
    dest_offset: tuple[int, int]
    seed_state: tuple[int, ...]
    overlap_fraction: float
    attempts: int


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based (Philox) stream for ``seed`` split by an integer key path."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, key)])))


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


# --- patch bank -----------------------------------------------------------

def _crop_rect(comp: Component, margin: int, shape: tuple[int, int]) -> Rect | None:
    bb = comp.bbox
    rect = Rect(bb.x - margin, bb.y - margin, bb.w + 2 * margin, bb.h + 2 * margin)
    return rect if rect.contained_in(shape[1], shape[0]) else None


def _reference_component(comp: Component, refs: Sequence[Component], shape: tuple[int, int]) -> Component:
    mask = comp.mask(shape)
    overlaps = [int(mask[r.pixels[:, 0], r.pixels[:, 1]].sum()) for r in refs]
    best = max(range(len(refs)), key=lambda i: (overlaps[i], -i))
    if overlaps[best] > 0:
        return refs[best]
    cx, cy = comp.centroid
    return min(refs, key=lambda r: math.hypot(r.centroid[0] - cx, r.centroid[1] - cy))


def extract_patches(dataset: Iterable[Sample], cls: ClassId = ClassId.PAPILLATION, margin: int = 5,
                    host_class: ClassId = ClassId.SOLID_AREA, skipped: list | None = None) -> list[Patch]:
    """One patch per connected component of ``cls``, largest first.

    The side (left/right) is taken relative to the host-class component that
    overlaps the structure most, or the nearest one by centroid. Components
    without any host structure in their image, or too close to the border to
    keep ``margin`` pixels of context, are skipped; a record of each skip is
    appended to ``skipped`` when given.
    """
    cls = ClassId.parse(cls)
    host_class = ClassId.parse(host_class)
    patches = []
    for sample in dataset:
        comps = connected_components(sample.masks[cls], cls)
        if not comps:
            continue
        hosts = connected_components(sample.masks[host_class], host_class)
        for k, comp in enumerate(comps):
            pid = f"{sample.id}_{cls.label}_{k}"
            if not hosts:
                _skip(skipped, pid, sample.id, f"no {host_class.label} in image")
                continue
            rect = _crop_rect(comp, margin, sample.masks.shape)
            if rect is None:
                _skip(skipped, pid, sample.id, f"fewer than {margin} px of context to the image border")
                continue
            ref = _reference_component(comp, hosts, sample.masks.shape)
            direction = Direction.RIGHT if comp.centroid[0] >= ref.centroid[0] else Direction.LEFT
            mask = comp.mask(sample.masks.shape)[rect.slices]
            patches.append(Patch(pid, sample.image.crop(rect), mask, cls, sample.id,
                                 comp.area, direction, margin))
    patches.sort(key=lambda p: -p.area)
    return patches


def _skip(skipped, pid, source_id, reason):
    log.warning("skipping %s: %s", pid, reason)
    if skipped is not None:
        skipped.append({"patch_id": pid, "source_id": source_id, "reason": reason})


# --- targets and placement -------------------------------------------------

def eligible_targets(dataset: Iterable[Sample], rule: EligibilityRule) -> list[str]:
    return [s.id for s in dataset if rule.accepts(s.masks)]


def centered_offset(patch: Patch, host: Component) -> tuple[int, int]:
    """Offset putting the patch-mask centroid on the host centroid."""
    px, py = patch.centroid
    hx, hy = host.centroid
    return _round_half_up(hx - px), _round_half_up(hy - py)


def horizontal_shift(patch: Patch, host: Component, offset_fraction: float) -> int:
    return patch.rel_direction.sign * _round_half_up(offset_fraction * host.bbox.w)


def overlap_fraction(patch_mask: np.ndarray, dest_offset: tuple[int, int], host_mask: np.ndarray) -> float:
    rows, cols = placed_pixels(patch_mask, dest_offset)
    h, w = host_mask.shape
    ok = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    hits = int(host_mask[rows[ok], cols[ok]].sum())
    return hits / rows.size


def plan_placement(patch: Patch, target_masks: LabelMaskSet, config: SynthesisConfig,
                   rng: np.random.Generator, patch_ref: int = 0,
                   seed_state: tuple[int, ...] = ()) -> PlacementPlan:
    """Place ``patch`` over a host structure in the target.

    Attempt 0 uses a uniformly drawn host with the full sideways shift. Each
    retry draws a fresh host and scales the shift down linearly, ending with
    the patch centred on its host.
    """
    hosts = connected_components(target_masks[config.host_class], config.host_class)
    if not hosts:
        raise PlacementError(f"target has no {config.host_class.label} to host the patch")
    retries = config.max_placement_retries
    last_reason = ""
    for attempt in range(retries + 1):
        host = hosts[int(rng.integers(len(hosts)))]
        scale = 1.0 - attempt / retries if retries else 1.0
        cdx, cdy = centered_offset(patch, host)
        shift = _round_half_up(scale * horizontal_shift(patch, host, config.offset_fraction)) \
            if attempt else horizontal_shift(patch, host, config.offset_fraction)
        offset = (cdx + shift, cdy)
        try:
            check_placement(patch.mask, offset, target_masks.shape)
        except BorderError as exc:
            last_reason = str(exc)
            continue
        frac = overlap_fraction(patch.mask, offset, host.mask(target_masks.shape))
        if frac >= config.min_overlap_fraction and frac > 0:
            return PlacementPlan(patch_ref, host, offset, tuple(seed_state), frac, attempt + 1)
        last_reason = f"overlap {frac:.3f} below {config.min_overlap_fraction}"
    raise PlacementError(f"patch {patch.id}: no valid placement after {retries + 1} attempts ({last_reason})")


def synthesize_one(target: Sample, patch: Patch, plan: PlacementPlan,
                   naive: bool = False, tolerance: float = 1e-6) -> tuple[GrayImage, LabelMaskSet, Rect]:
    """Blend ``patch`` into ``target`` per ``plan`` and add its class to the masks.

    Returns the new image, the new masks and the modified region (bounding box
    of the placed structure).
    """
    if naive:
        image = naive_paste(target.image, patch.image, patch.mask, plan.dest_offset)
    else:
        image = seamless_clone(target.image, patch.image, patch.mask, plan.dest_offset, tolerance)
    rows, cols = placed_pixels(patch.mask, plan.dest_offset)
    cls_mask = target.masks[patch.cls].copy()
    cls_mask[rows, cols] = True
    roi = Rect(int(cols.min()), int(rows.min()), int(cols.max() - cols.min() + 1), int(rows.max() - rows.min() + 1))
    return image, target.masks.with_mask(patch.cls, cls_mask), roi


# --- balancing -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SyntheticRecord:
    id: str
    sample: Sample
    target_id: str
    patch_id: str
    roi: Rect
    plan: PlacementPlan


@dataclass
class BalanceReport:
    before: dict[ClassId, int]
    after: dict[ClassId, int]
    targets: dict[ClassId, int]
    n_synthetic: int = 0
    unreachable: list[ClassId] = field(default_factory=list)
    failed_placements: int = 0
    exhausted_targets: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "n_synthetic": self.n_synthetic,
            "classes": {c.label: {"before": self.before[c], "after": self.after[c], "target": self.targets[c]}
                        for c in ClassId},
            "unreachable": [c.label for c in self.unreachable],
            "failed_placements": self.failed_placements,
            "exhausted_targets": list(self.exhausted_targets),
        }


def class_counts(masks: Iterable[LabelMaskSet]) -> dict[ClassId, int]:
    counts = {c: 0 for c in ClassId}
    for m in masks:
        for c in m.classes_present():
            counts[c] += 1
    return counts


def resolve_targets(wanted: Mapping[ClassId | str, int | str], counts: Mapping[ClassId, int]) -> dict[ClassId, int]:
    """Turn ``{class: count}`` into absolute image counts; ``"+N"`` strings are relative."""
    out = dict(counts)
    for key, value in wanted.items():
        cls = ClassId.parse(key)
        text = str(value).strip()
        target = counts[cls] + int(text[1:]) if text.startswith("+") else int(text)
        if target < counts[cls]:
            raise ValueError(f"target for {cls.label} ({target}) is below the current count {counts[cls]}")
        out[cls] = target
    return out


def balance_dataset(dataset: Sequence[Sample], bank: Sequence[Patch], config: SynthesisConfig,
                    rule: EligibilityRule | None = None, jobs: int = 1,
                    id_prefix: str = "synth") -> tuple[list[SyntheticRecord], BalanceReport]:
    """Add synthetic images until every reachable class target is met.

    Targets are drawn without replacement within a pass over the eligible
    images and patches uniformly from the bank. A target on which no patch can
    be placed is dropped. Planning is sequential on the seeded stream; the
    blending of planned records runs on ``jobs`` threads and is merged in plan
    order, so output does not depend on ``jobs``.
    """
    rule = rule or default_rule(config.patch_class, config.host_class)
    before = class_counts(s.masks for s in dataset)
    targets = {c: before[c] for c in ClassId}
    targets.update({ClassId.parse(k): int(v) for k, v in config.class_targets.items()})
    for c in ClassId:
        if targets[c] < before[c]:
            raise ValueError(f"target for {c.label} is below the current count")

    # Each synthetic record contains the rule's required classes plus the patch class.
    gained = set(rule.required_classes) | {config.patch_class}
    unreachable = [c for c in ClassId if targets[c] > before[c] and c not in gained]
    pending = [c for c in ClassId if targets[c] > before[c] and c in gained]

    by_id = {s.id: s for s in dataset}
    usable = eligible_targets(dataset, rule)
    counts = dict(before)
    select = make_rng(config.rng_seed, 0)
    plans: list[tuple[Sample, int, PlacementPlan]] = []
    failed = 0
    exhausted: list[str] = []

    def need() -> bool:
        return any(counts[c] < targets[c] for c in pending)

    while need() and usable and bank:
        order = [usable[i] for i in select.permutation(len(usable))]
        for tid in order:
            if not need():
                break
            target = by_id[tid]
            index = len(plans)
            place_rng = make_rng(config.rng_seed, 1, index)
            plan = None
            for patch_ref in select.permutation(len(bank)):
                try:
                    plan = plan_placement(bank[patch_ref], target.masks, config, place_rng,
                                          int(patch_ref), (config.rng_seed, 1, index))
                    break
                except PlacementError as exc:
                    failed += 1
                    log.debug("%s", exc)
            if plan is None:
                log.warning("no patch fits target %s; dropping it", tid)
                usable.remove(tid)
                exhausted.append(tid)
                continue
            plans.append((target, plan.patch_ref, plan))
            for c in target.masks.classes_present() | {bank[plan.patch_ref].cls}:
                counts[c] += 1

    def run(item):
        target, patch_ref, plan = item
        return synthesize_one(target, bank[patch_ref], plan, config.naive_paste, config.tolerance)

    if jobs > 1 and len(plans) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(run, plans))
    else:
        outputs = [run(item) for item in plans]

    records = []
    for i, ((target, patch_ref, plan), (image, masks, roi)) in enumerate(zip(plans, outputs)):
        rid = f"{id_prefix}_{i:05d}"
        records.append(SyntheticRecord(rid, Sample(rid, image, masks), target.id, bank[patch_ref].id, roi, plan))

    after = class_counts([s.masks for s in dataset] + [r.sample.masks for r in records])
    unreachable += [c for c in pending if after[c] < targets[c]]
    report = BalanceReport(before, after, targets, len(records), sorted(set(unreachable)), failed, exhausted)
    return records, report
