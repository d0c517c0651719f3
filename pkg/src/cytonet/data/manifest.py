"""Dataset manifests and the stratified train/val/test split.

A manifest is a JSON file listing sample ids, image paths, optional mask
paths and optional integer labels. Paths are stored relative to the
manifest's own directory so a dataset folder can be moved wholesale.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..labels import CLASS_NAMES

FORMAT_VERSION = 1


@dataclass
class ManifestEntry:
    id: str
    image: str
    mask: str = None
    label: int = None

    def class_name(self, class_names=CLASS_NAMES):
        if self.label is None:
            return None
        return class_names[self.label]


@dataclass
class DatasetManifest:
    root: str
    entries: list
    class_names: tuple = CLASS_NAMES

    def __len__(self):
        return len(self.entries)

    def image_path(self, entry):
        return os.path.join(self.root, entry.image)

    def mask_path(self, entry):
        if entry.mask is None:
            return None
        return os.path.join(self.root, entry.mask)

    def labels(self):
        """Label vector; raises if any entry is unlabeled."""
        out = []
        for e in self.entries:
            if e.label is None:
                raise ValidationError(f"entry {e.id} has no label")
            out.append(e.label)
        return np.array(out, dtype=np.int64)

    def counts_by_class(self):
        counts = [0] * len(self.class_names)
        for e in self.entries:
            if e.label is not None:
                counts[e.label] += 1
        return counts

    def subset(self, indices):
        return DatasetManifest(
            root=self.root,
            entries=[self.entries[i] for i in indices],
            class_names=self.class_names,
        )


def save_manifest(manifest, path):
    payload = {
        "format_version": FORMAT_VERSION,
        "class_names": list(manifest.class_names),
        "entries": [
            {"id": e.id, "image": e.image, "mask": e.mask, "label": e.label}
            for e in manifest.entries
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_manifest(path, check_paths=False):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"manifest not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON") from exc
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported manifest version")
    class_names = tuple(payload.get("class_names", CLASS_NAMES))
    entries = []
    seen = set()
    for i, row in enumerate(payload.get("entries", [])):
        if "id" not in row or "image" not in row:
            raise ValidationError(f"{path}: entry {i} needs 'id' and 'image'")
        eid = str(row["id"])
        if eid in seen:
            raise ValidationError(f"{path}: duplicate entry id {eid!r}")
        seen.add(eid)
        label = row.get("label")
        if label is not None:
            label = int(label)
            if not 0 <= label < len(class_names):
                raise ValidationError(
                    f"{path}: entry {eid} label {label} outside [0, {len(class_names)})"
                )
        entries.append(
            ManifestEntry(id=eid, image=row["image"], mask=row.get("mask"), label=label)
        )
    if not entries:
        raise ValidationError(f"{path}: manifest holds no entries")
    manifest = DatasetManifest(
        root=os.path.dirname(os.path.abspath(path)), entries=entries, class_names=class_names
    )
    if check_paths:
        for e in entries:
            if not os.path.isfile(manifest.image_path(e)):
                raise ValidationError(f"missing image file: {manifest.image_path(e)}")
            mp = manifest.mask_path(e)
            if mp is not None and not os.path.isfile(mp):
                raise ValidationError(f"missing mask file: {mp}")
    return manifest


@dataclass
class SplitSpec:
    train: float = 0.7
    val: float = 0.15
    test: float = 0.15
    seed: int = 0

    def validate(self):
        for name, r in (("train", self.train), ("val", self.val), ("test", self.test)):
            if r < 0:
                raise ValidationError(f"{name} ratio must be >= 0, got {r}")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValidationError(
                f"split ratios must sum to 1, got {self.train + self.val + self.test}"
            )
        return self


@dataclass
class SplitIndices:
    train: list
    val: list
    test: list


def _allocate(counts, ratio, targets_total, already=None):
    """Largest-remainder allocation of targets_total across classes."""
    base = []
    rema = []
    for c, n_c in enumerate(counts):
        exact = n_c * ratio
        b = math.floor(exact)
        cap = n_c - (already[c] if already else 0)
        b = min(b, cap)
        base.append(b)
        rema.append(exact - b)
    extra = targets_total - sum(base)
    # hand out the shortfall by descending fractional remainder, low id first
    order = sorted(range(len(counts)), key=lambda c: (-rema[c], c))
    for c in order:
        if extra <= 0:
            break
        cap = counts[c] - (already[c] if already else 0)
        if base[c] < cap:
            base[c] += 1
            extra -= 1
    if extra > 0:
        # ratios left no room in the stratified layout
        for c in order:
            while extra > 0 and base[c] < counts[c] - (already[c] if already else 0):
                base[c] += 1
                extra -= 1
    return base


def stratified_split(labels, spec=None):
    """Split indices per class so the global sizes hit floor(n * ratio)
    for train and val, with the test split taking the remainder. Per-class
    counts stay within one sample of exact proportionality."""
    spec = (spec or SplitSpec()).validate()
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise ValidationError("labels must be a non-empty vector")
    n = labels.size
    n_train = math.floor(n * spec.train)
    n_val = math.floor(n * spec.val)
    class_ids = sorted(int(c) for c in np.unique(labels))
    counts = {c: int((labels == c).sum()) for c in class_ids}
    count_list = [counts[c] for c in class_ids]
    train_alloc = _allocate(count_list, spec.train, n_train)
    val_alloc = _allocate(count_list, spec.val, n_val, already=train_alloc)
    rng = np.random.default_rng(spec.seed)
    train, val, test = [], [], []
    for pos, c in enumerate(class_ids):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        t, v = train_alloc[pos], val_alloc[pos]
        train += idx[:t].tolist()
        val += idx[t : t + v].tolist()
        test += idx[t + v :].tolist()
    return SplitIndices(train=sorted(train), val=sorted(val), test=sorted(test))


def split_dataset(manifest, spec=None):
    """Stratified split over a labeled manifest."""
    return stratified_split(manifest.labels(), spec)
