"""Dataset plumbing: image io, manifests, splits, synthesis, checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .images import (
    decode_image,
    image_to_uint8,
    load_mask,
    make_resolution_stack,
    resize_bilinear,
    save_image,
    save_mask,
)
from .manifest import (
    DatasetManifest,
    ManifestEntry,
    SplitIndices,
    SplitSpec,
    load_manifest,
    save_manifest,
    split_dataset,
    stratified_split,
)
from .synthetic import APPEARANCES, SyntheticConfig, generate_synthetic, render_cell

__all__ = [
    "load_checkpoint",
    "save_checkpoint",
    "decode_image",
    "image_to_uint8",
    "load_mask",
    "make_resolution_stack",
    "resize_bilinear",
    "save_image",
    "save_mask",
    "DatasetManifest",
    "ManifestEntry",
    "SplitIndices",
    "SplitSpec",
    "load_manifest",
    "save_manifest",
    "split_dataset",
    "stratified_split",
    "APPEARANCES",
    "SyntheticConfig",
    "generate_synthetic",
    "render_cell",
]
