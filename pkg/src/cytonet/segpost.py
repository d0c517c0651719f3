"""Mask post-processing: thresholding, bounding boxes, patch grids, rendering.

Coordinates are pixel indices with x running along columns and y along
rows; bounding boxes are inclusive on both ends.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ShapeError, ValidationError

DEFAULT_BBOX_MARGIN = 10
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass
class BinaryMask:
    """A row-major boolean grid."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise ShapeError(f"mask bits must be 2-d, got shape {arr.shape}")
        if arr.dtype != np.bool_:
            arr = arr.astype(bool)
        self.bits = arr

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]

    def any(self):
        return bool(self.bits.any())

    def count(self):
        return int(np.count_nonzero(self.bits))


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel bounds [x_min, x_max] x [y_min, y_max]."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValidationError(f"degenerate bounding box {self.to_list()}")

    @property
    def width(self):
        return self.x_max - self.x_min + 1

    @property
    def height(self):
        return self.y_max - self.y_min + 1

    def to_list(self):
        return [int(self.x_min), int(self.y_min), int(self.x_max), int(self.y_max)]


def binarize(probs, threshold=0.5):
    """Threshold a probability map; p >= threshold becomes foreground."""
    probs = np.asarray(probs)
    if probs.ndim != 2:
        raise ShapeError(f"probability map must be 2-d, got shape {probs.shape}")
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must lie in (0, 1), got {threshold}")
    if probs.size:
        lo, hi = probs.min(), probs.max()
        if lo < 0.0 or hi > 1.0 or not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValidationError("probability map must lie in [0, 1]")
    return BinaryMask(probs >= threshold)


def _as_mask(mask):
    if isinstance(mask, BinaryMask):
        return mask
    return BinaryMask(np.asarray(mask))


def extract_bbox(mask, margin=DEFAULT_BBOX_MARGIN):
    """Tight box around all set bits, grown by margin and clamped to the
    mask bounds. Returns None for an empty mask."""
    mask = _as_mask(mask)
    if margin < 0:
        raise ValidationError(f"margin must be >= 0, got {margin}")
    if not mask.any():
        return None
    rows = np.any(mask.bits, axis=1)
    cols = np.any(mask.bits, axis=0)
    y_min, y_max = np.flatnonzero(rows)[[0, -1]]
    x_min, x_max = np.flatnonzero(cols)[[0, -1]]
    return BoundingBox(
        x_min=max(int(x_min) - margin, 0),
        y_min=max(int(y_min) - margin, 0),
        x_max=min(int(x_max) + margin, mask.width - 1),
        y_max=min(int(y_max) + margin, mask.height - 1),
    )


def extract_component_boxes(mask, margin=DEFAULT_BBOX_MARGIN):
    """One padded box per 8-connected component, in label scan order."""
    mask = _as_mask(mask)
    if margin < 0:
        raise ValidationError(f"margin must be >= 0, got {margin}")
    labeled, _ = ndimage.label(mask.bits, structure=EIGHT_CONNECTED)
    boxes = []
    for sl in ndimage.find_objects(labeled):
        ys, xs = sl
        boxes.append(
            BoundingBox(
                x_min=max(xs.start - margin, 0),
                y_min=max(ys.start - margin, 0),
                x_max=min(xs.stop - 1 + margin, mask.width - 1),
                y_max=min(ys.stop - 1 + margin, mask.height - 1),
            )
        )
    return boxes


@dataclass(frozen=True)
class PatchGrid:
    width: int
    height: int
    patch_side: int
    anchors: tuple  # (x, y) top-left corners, row-major


def _round_half_up(value):
    return int(math.floor(value + 0.5))


def make_patch_grid(width, height, patch_side=512, cols=5, rows=4):
    """Evenly spread patch anchors; first patches flush left/top, last flush
    right/bottom, interior anchors rounded half up. Duplicate anchors from a
    degenerate geometry are dropped."""
    if width < 1 or height < 1:
        raise ValidationError(f"image size must be positive, got {width}x{height}")
    if patch_side < 1:
        raise ValidationError(f"patch side must be >= 1, got {patch_side}")
    if cols < 1 or rows < 1:
        raise ValidationError(f"grid must be at least 1x1, got {cols}x{rows}")
    if patch_side > width or patch_side > height:
        raise ValidationError(
            f"patch side {patch_side} exceeds image {width}x{height}"
        )
    xs = [_round_half_up(j * (width - patch_side) / (cols - 1)) for j in range(cols)] if cols > 1 else [0]
    ys = [_round_half_up(i * (height - patch_side) / (rows - 1)) for i in range(rows)] if rows > 1 else [0]
    anchors = []
    for y in ys:
        for x in xs:
            if (x, y) not in anchors:
                anchors.append((x, y))
    return PatchGrid(width=width, height=height, patch_side=patch_side, anchors=tuple(anchors))


def crop_patch(image, grid, index):
    """Slice patch `index` of the grid out of a (..., H, W) array."""
    if not 0 <= index < len(grid.anchors):
        raise ValidationError(f"patch index {index} out of range")
    x, y = grid.anchors[index]
    s = grid.patch_side
    if image.shape[-2] != grid.height or image.shape[-1] != grid.width:
        raise ShapeError(
            f"image shape {image.shape} does not match grid {grid.width}x{grid.height}"
        )
    return image[..., y : y + s, x : x + s]


def filter_empty(masks):
    """Indices of masks that keep at least one set bit."""
    return [i for i, m in enumerate(masks) if _as_mask(m).any()]


def render_bbox(image, box, color=(255, 0, 0), thickness=2):
    """Draw the box perimeter on a copy of an (H, W, 3) uint8 image; the
    band grows inward from the box edge."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"image must be (H, W, 3), got {image.shape}")
    if image.dtype != np.uint8:
        raise ValidationError(f"image must be uint8, got {image.dtype}")
    if thickness < 1:
        raise ValidationError(f"thickness must be >= 1, got {thickness}")
    color = tuple(int(c) for c in color)
    if len(color) != 3 or any(c < 0 or c > 255 for c in color):
        raise ValidationError(f"color must be three bytes, got {color}")
    h, w = image.shape[:2]
    if box.x_min < 0 or box.y_min < 0 or box.x_max >= w or box.y_max >= h:
        raise ValidationError(
            f"box {box.to_list()} falls outside the {w}x{h} image"
        )
    out = image.copy()
    t = min(thickness, box.width, box.height)
    x0, x1 = box.x_min, box.x_max + 1
    y0, y1 = box.y_min, box.y_max + 1
    out[y0 : y0 + t, x0:x1] = color
    out[y1 - t : y1, x0:x1] = color
    out[y0:y1, x0 : x0 + t] = color
    out[y0:y1, x1 - t : x1] = color
    return out
