"""Image decoding, mask files and bilinear resizing.

Images travel through the pipeline as float32 (3, H, W) arrays scaled to
[0, 1]; masks are single-channel PNGs with 0 for background and 255 for
foreground.
"""

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import ShapeError, ValidationError
from ..segpost import BinaryMask


def decode_image(path):
    """Read PNG/PGM/PPM into a float32 (3, H, W) array in [0, 1]."""
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32)
    except FileNotFoundError:
        raise ValidationError(f"image not found: {path}")
    except UnidentifiedImageError as exc:
        raise ValidationError(f"cannot decode image: {path}") from exc
    return arr.transpose(2, 0, 1) / np.float32(255.0)


def image_to_uint8(img):
    """(3, H, W) floats in [0, 1] to an (H, W, 3) byte image."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"expected (3, H, W) image, got {img.shape}")
    out = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return out.transpose(1, 2, 0)


def save_image(img, path):
    """Write a float (3, H, W) or uint8 (H, W, 3) array as an image file."""
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeError(f"uint8 image must be (H, W, 3), got {arr.shape}")
    else:
        arr = image_to_uint8(arr)
    Image.fromarray(arr, mode="RGB").save(path)


def load_mask(path):
    """Read a mask PNG; values of at least 128 count as foreground."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except FileNotFoundError:
        raise ValidationError(f"mask not found: {path}")
    except UnidentifiedImageError as exc:
        raise ValidationError(f"cannot decode mask: {path}") from exc
    return BinaryMask(arr >= 128)


def save_mask(mask, path):
    bits = mask.bits if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    Image.fromarray(np.where(bits, 255, 0).astype(np.uint8), mode="L").save(path)


def _axis_lerp(arr, n_out, axis):
    n_in = arr.shape[axis]
    if n_in == n_out:
        return arr
    # half-pixel centers: src = (dst + 0.5) * n_in / n_out - 0.5, clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    w = (src - lo).astype(arr.dtype)
    shape = [1] * arr.ndim
    shape[axis] = n_out
    w = w.reshape(shape)
    return np.take(arr, lo, axis=axis) * (1 - w) + np.take(arr, hi, axis=axis) * w


def resize_bilinear(img, out_h, out_w):
    """Separable bilinear resize of a (..., H, W) float array."""
    img = np.asarray(img)
    if img.ndim < 2:
        raise ShapeError(f"resize needs at least 2 dimensions, got shape {img.shape}")
    if img.shape[-1] < 1 or img.shape[-2] < 1:
        raise ShapeError(f"cannot resize an empty image of shape {img.shape}")
    if out_h < 1 or out_w < 1:
        raise ValidationError(f"target size must be positive, got {out_h}x{out_w}")
    if not np.issubdtype(img.dtype, np.floating):
        img = img.astype(np.float32)
    out = _axis_lerp(img, out_w, img.ndim - 1)
    return _axis_lerp(out, out_h, img.ndim - 2)


def make_resolution_stack(img, sides=(32, 64, 128)):
    """Resize one cell crop to each branch resolution."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"expected (3, H, W) image, got {img.shape}")
    return tuple(
        resize_bilinear(img, side, side).astype(np.float32, copy=False)
        for side in sides
    )
