"""Poisson-blending data synthesis for imbalanced segmentation datasets, plus evaluation."""
from .image import (ClassId, Component, GrayImage, LabelMaskSet, Rect, boundary_mask, boundary_pixels,
                    connected_components, load_image, load_masks, save_image, save_masks)
from .metrics import dice, evaluate, evaluate_dataset, hd95, recall, surface_dice
from .poisson import build_system, naive_paste, seamless_clone, solve
from .stats import cohens_kappa, paired_t_test
from .synthesizer import (EligibilityRule, Patch, PlacementPlan, Sample, SynthesisConfig, balance_dataset,
                          eligible_targets, extract_patches, plan_placement, synthesize_one)

__version__ = "0.1.0"

__all__ = [
    "ClassId", "Component", "GrayImage", "LabelMaskSet", "Rect", "boundary_mask", "boundary_pixels",
    "connected_components", "load_image", "load_masks", "save_image", "save_masks",
    "dice", "evaluate", "evaluate_dataset", "hd95", "recall", "surface_dice",
    "build_system", "naive_paste", "seamless_clone", "solve",
    "cohens_kappa", "paired_t_test",
    "EligibilityRule", "Patch", "PlacementPlan", "Sample", "SynthesisConfig", "balance_dataset",
    "eligible_targets", "extract_patches", "plan_placement", "synthesize_one",
]
