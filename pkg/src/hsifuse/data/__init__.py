"""Cube ingestion, band normalisation, patch extraction and disjoint splitting."""

from .cube import CubeFormatError, HsiCube, LabelRaster, load_cube, normalize_bands, save_cube
from .patches import PatchSet, PatchSpec, batch_iterator, candidate_mask, extract_patches
from .split import (
    FRACTION_PRESETS,
    ROLES,
    SplitAssignment,
    Violation,
    load_split,
    make_disjoint_split,
    role_counts,
    save_split,
    validate_split,
)
from .synthetic import make_synthetic

__all__ = [
    "CubeFormatError",
    "FRACTION_PRESETS",
    "HsiCube",
    "LabelRaster",
    "PatchSet",
    "PatchSpec",
    "ROLES",
    "SplitAssignment",
    "Violation",
    "batch_iterator",
    "candidate_mask",
    "extract_patches",
    "load_cube",
    "load_split",
    "make_disjoint_split",
    "make_synthetic",
    "normalize_bands",
    "role_counts",
    "save_cube",
    "save_split",
    "validate_split",
]
