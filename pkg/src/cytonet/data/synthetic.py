"""Synthetic single-cell images with paired masks and labels.

Each class renders an elliptical cytoplasm with a nucleus inside it on a
light background. Per-class knobs (hue, nucleus-to-cell ratio,
eccentricity, texture noise) keep the classes separable by simple
statistics while the generator stays fully deterministic in the seed.
"""

import os
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..labels import CLASS_NAMES, NUM_CLASSES
from .images import save_image, save_mask
from .manifest import DatasetManifest, ManifestEntry, save_manifest


@dataclass(frozen=True)
class ClassAppearance:
    cytoplasm_rgb: tuple
    nucleus_rgb: tuple
    radius_range: tuple  # cell semi-major axis, as a fraction of the side
    nucleus_ratio_range: tuple  # nucleus axis over cell axis
    eccentricity_range: tuple  # 0 round .. close to 1 elongated
    noise_amplitude: float


# one entry per label id, visually distinct hues
APPEARANCES = (
    ClassAppearance((0.93, 0.62, 0.71), (0.45, 0.15, 0.30), (0.30, 0.38), (0.14, 0.22), (0.05, 0.25), 0.02),
    ClassAppearance((0.35, 0.62, 0.80), (0.10, 0.20, 0.45), (0.22, 0.28), (0.45, 0.60), (0.05, 0.20), 0.03),
    ClassAppearance((0.78, 0.78, 0.38), (0.35, 0.32, 0.10), (0.28, 0.36), (0.25, 0.35), (0.30, 0.50), 0.06),
    ClassAppearance((0.62, 0.35, 0.72), (0.25, 0.08, 0.35), (0.24, 0.32), (0.35, 0.50), (0.45, 0.65), 0.04),
    ClassAppearance((0.88, 0.58, 0.30), (0.42, 0.22, 0.08), (0.26, 0.33), (0.28, 0.40), (0.15, 0.35), 0.05),
)

BACKGROUND_LEVEL = 0.92


@dataclass
class SyntheticConfig:
    per_class: int = 100
    image_side: int = 128
    seed: int = 0
    num_classes: int = NUM_CLASSES

    def validate(self):
        if self.per_class < 1:
            raise ValidationError(f"per_class must be >= 1, got {self.per_class}")
        if self.image_side < 16:
            raise ValidationError(f"image side must be >= 16, got {self.image_side}")
        if not 1 <= self.num_classes <= len(APPEARANCES):
            raise ValidationError(
                f"num_classes must lie in [1, {len(APPEARANCES)}], got {self.num_classes}"
            )
        return self


def _ellipse_support(side, cx, cy, a, b, theta):
    y, x = np.mgrid[0:side, 0:side]
    dx = x - cx
    dy = y - cy
    ct, st = np.cos(theta), np.sin(theta)
    u = (ct * dx + st * dy) / a
    v = (-st * dx + ct * dy) / b
    return u * u + v * v <= 1.0


def render_cell(rng, side, appearance):
    """One (3, side, side) float image in [0, 1] plus its cell mask."""
    ap = appearance
    cx = side * (0.5 + rng.uniform(-0.08, 0.08))
    cy = side * (0.5 + rng.uniform(-0.08, 0.08))
    a = side * rng.uniform(*ap.radius_range)
    ecc = rng.uniform(*ap.eccentricity_range)
    b = a * (1.0 - ecc)
    theta = rng.uniform(0.0, np.pi)
    cell = _ellipse_support(side, cx, cy, a, b, theta)
    ratio = rng.uniform(*ap.nucleus_ratio_range)
    nucleus = _ellipse_support(
        side,
        cx + rng.uniform(-0.03, 0.03) * side,
        cy + rng.uniform(-0.03, 0.03) * side,
        max(a * ratio, 1.0),
        max(b * ratio, 1.0),
        theta,
    )
    nucleus &= cell

    img = np.empty((3, side, side), dtype=np.float32)
    base = BACKGROUND_LEVEL + rng.normal(0.0, 0.01, (side, side))
    for ch in range(3):
        img[ch] = base
        img[ch][cell] = ap.cytoplasm_rgb[ch]
        img[ch][nucleus] = ap.nucleus_rgb[ch]
    img += rng.normal(0.0, ap.noise_amplitude, (3, side, side)).astype(np.float32)
    np.clip(img, 0.0, 1.0, out=img)
    return img, cell


def generate_synthetic(config, out_dir):
    """Write images, masks and a manifest under out_dir.

    Every sample draws from its own generator seeded by (seed, label,
    index), so outputs are byte-identical across reruns of any subset.
    """
    config = config.validate()
    images_dir = os.path.join(out_dir, "images")
    masks_dir = os.path.join(out_dir, "masks")
    os.makedirs(images_dir, exist_ok=True)
    os.makedirs(masks_dir, exist_ok=True)
    entries = []
    for label in range(config.num_classes):
        for i in range(config.per_class):
            rng = np.random.default_rng([config.seed, label, i])
            img, mask = render_cell(rng, config.image_side, APPEARANCES[label])
            sample_id = f"c{label}_{i:04d}"
            image_rel = os.path.join("images", f"{sample_id}.png")
            mask_rel = os.path.join("masks", f"{sample_id}.png")
            save_image(img, os.path.join(out_dir, image_rel))
            save_mask(mask, os.path.join(out_dir, mask_rel))
            entries.append(
                ManifestEntry(id=sample_id, image=image_rel, mask=mask_rel, label=label)
            )
    manifest = DatasetManifest(
        root=os.path.abspath(out_dir),
        entries=entries,
        class_names=CLASS_NAMES[: config.num_classes],
    )
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest
