"""Multi-task U-Net: one encoder, a segmentation decoder and a class head.

The encoder halves resolution four times (16/32/64/128 channels). A 1x1
squeeze after the bottleneck compresses to 32 channels shared by both
heads: the class head pools globally and classifies, the decoder upsamples
back with skip connections and emits a sigmoid nucleus mask. The combined
loss is a convex-ish blend lambda_seg * BCE + lambda_cls * CE.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import NumericError, ShapeError, ValidationError
from ..labels import NUM_CLASSES
from .. import nn
from ..nn import functional as F

ENC_CHANNELS = ((3, 16), (16, 32), (32, 64), (64, 128))
SQUEEZE_CHANNELS = 32
POOL_FACTOR = 2 ** len(ENC_CHANNELS)


@dataclass
class LossWeights:
    seg: float = 0.5
    cls: float = 0.5

    def validate(self):
        for name, w in (("seg", self.seg), ("cls", self.cls)):
            if not 0.0 <= w <= 1.0:
                raise ValidationError(
                    f"loss weight {name} must lie in [0, 1], got {w}"
                )
        return self


@dataclass
class MtlEpochStats:
    loss: float
    seg_loss: float
    cls_loss: float
    steps: int


class _EncBlock:
    def __init__(self, cin, cout, rng, dtype):
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1, rng=rng, dtype=dtype)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, rng=rng, dtype=dtype)

    def forward(self, x, reuse_buffers):
        h = F.relu(self.conv1(x, reuse_buffers))
        return F.relu(self.conv2(h, reuse_buffers))


class _DecBlock:
    def __init__(self, cin, cout, rng, dtype):
        self.up_conv = nn.Conv2d(cin, cout, 3, padding=1, rng=rng, dtype=dtype)
        self.merge_conv = nn.Conv2d(2 * cout, cout, 3, padding=1, rng=rng, dtype=dtype)

    def forward(self, x, skip, reuse_buffers):
        h = F.upsample_nearest(x, 2)
        h = F.relu(self.up_conv(h, reuse_buffers))
        h = F.concat([h, skip], axis=1)
        return F.relu(self.merge_conv(h, reuse_buffers))


class MtlUnet:
    """Built model; parameters are independent of the input side.

    input_side is the declared default patch size. forward() accepts any
    square side that divides by POOL_FACTOR, the declared one included.
    """

    kind = "mtl_unet"

    def __init__(self, seed, input_side=128, num_classes=NUM_CLASSES, dtype=np.float32):
        if input_side < POOL_FACTOR or input_side % POOL_FACTOR:
            raise ValidationError(
                f"input_side must be a positive multiple of {POOL_FACTOR}, got {input_side}"
            )
        if num_classes < 2:
            raise ValidationError(f"need at least 2 classes, got {num_classes}")
        self.seed = int(seed)
        self.input_side = int(input_side)
        self.num_classes = int(num_classes)
        rng = np.random.default_rng(self.seed)
        self.enc = [_EncBlock(cin, cout, rng, dtype) for cin, cout in ENC_CHANNELS]
        bot_ch = ENC_CHANNELS[-1][1]
        self.bottleneck = nn.Conv2d(bot_ch, bot_ch, 3, padding=1, rng=rng, dtype=dtype)
        self.squeeze = nn.Conv2d(bot_ch, SQUEEZE_CHANNELS, 1, rng=rng, dtype=dtype)
        self.cls_fc1 = nn.Linear(SQUEEZE_CHANNELS, 64, rng=rng, dtype=dtype)
        self.cls_fc2 = nn.Linear(64, self.num_classes, rng=rng, dtype=dtype)
        dec_out = [cout for _, cout in reversed(ENC_CHANNELS)]
        dec_in = [SQUEEZE_CHANNELS] + dec_out[:-1]
        self.dec = [_DecBlock(cin, cout, rng, dtype) for cin, cout in zip(dec_in, dec_out)]
        self.seg_head = nn.Conv2d(dec_out[-1], 1, 1, rng=rng, dtype=dtype)

    def parameters(self):
        params = []
        for blk in self.enc:
            params += blk.conv1.parameters() + blk.conv2.parameters()
        params += self.bottleneck.parameters() + self.squeeze.parameters()
        params += self.cls_fc1.parameters() + self.cls_fc2.parameters()
        for blk in self.dec:
            params += blk.up_conv.parameters() + blk.merge_conv.parameters()
        return params + self.seg_head.parameters()

    def param_entries(self):
        entries = []
        for i, blk in enumerate(self.enc, start=1):
            entries += [
                (f"enc{i}.conv1.weight", blk.conv1.weight),
                (f"enc{i}.conv1.bias", blk.conv1.bias),
                (f"enc{i}.conv2.weight", blk.conv2.weight),
                (f"enc{i}.conv2.bias", blk.conv2.bias),
            ]
        entries += [
            ("bottleneck.weight", self.bottleneck.weight),
            ("bottleneck.bias", self.bottleneck.bias),
            ("squeeze.weight", self.squeeze.weight),
            ("squeeze.bias", self.squeeze.bias),
            ("cls_fc1.weight", self.cls_fc1.weight),
            ("cls_fc1.bias", self.cls_fc1.bias),
            ("cls_fc2.weight", self.cls_fc2.weight),
            ("cls_fc2.bias", self.cls_fc2.bias),
        ]
        for i, blk in enumerate(self.dec, start=1):
            entries += [
                (f"dec{i}.up_conv.weight", blk.up_conv.weight),
                (f"dec{i}.up_conv.bias", blk.up_conv.bias),
                (f"dec{i}.merge_conv.weight", blk.merge_conv.weight),
                (f"dec{i}.merge_conv.bias", blk.merge_conv.bias),
            ]
        entries += [
            ("seg_head.weight", self.seg_head.weight),
            ("seg_head.bias", self.seg_head.bias),
        ]
        return entries

    def meta(self):
        return {"num_classes": self.num_classes, "input_side": self.input_side}

    def _check_input(self, patch):
        t = nn.as_tensor(patch)
        unbatched = t.ndim == 3
        if unbatched:
            t = nn.Tensor(t.data[None])
        if t.ndim != 4 or t.shape[1] != 3:
            raise ShapeError(f"patch must be (N, 3, S, S), got {t.shape}")
        n, _, h, w = t.shape
        if h != w:
            raise ShapeError(f"patch must be square, got {h}x{w}")
        if h < POOL_FACTOR or h % POOL_FACTOR:
            raise ShapeError(
                f"patch side must be a positive multiple of {POOL_FACTOR}, got {h}"
            )
        return t, unbatched

    def forward(self, patch, reuse_buffers=False):
        """Returns (mask_probs (N, 1, S, S), class_probs (N, num_classes));
        an unbatched (3, S, S) patch drops the leading batch axis again."""
        x, unbatched = self._check_input(patch)
        skips = []
        h = x
        for blk in self.enc:
            h = blk.forward(h, reuse_buffers)
            skips.append(h)
            h = F.maxpool2d(h, 2)
        h = F.relu(self.bottleneck(h, reuse_buffers))
        z = F.relu(self.squeeze(h, reuse_buffers))
        pooled = F.global_avg_pool(z)
        class_probs = F.softmax(self.cls_fc2(F.relu(self.cls_fc1(pooled))))
        d = z
        for blk, skip in zip(self.dec, reversed(skips)):
            d = blk.forward(d, skip, reuse_buffers)
        mask_probs = F.sigmoid(self.seg_head(d, reuse_buffers))
        if unbatched:
            mask_probs = F.reshape(mask_probs, mask_probs.shape[1:])
            class_probs = F.reshape(class_probs, (self.num_classes,))
        return mask_probs, class_probs


def build_mtl_unet(seed, input_side=128, num_classes=NUM_CLASSES, dtype=np.float32):
    return MtlUnet(seed, input_side, num_classes, dtype)


def forward(model, patch):
    return model.forward(patch)


def multitask_loss(mask_probs, mask_target, class_probs, labels, weights=None):
    """Blend the two task losses; returns (total, seg_value, cls_value)."""
    weights = (weights or LossWeights()).validate()
    seg = nn.binary_cross_entropy(mask_probs, mask_target)
    cls = nn.cross_entropy(class_probs, labels)
    total = F.add(F.scale(seg, weights.seg), F.scale(cls, weights.cls))
    return total, seg.item(), cls.item()


@dataclass
class MtlDataset:
    """Patches with nucleus masks and class labels."""

    patches: np.ndarray
    masks: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        n, _, side, _ = self.patches.shape
        if self.masks.shape != (n, 1, side, side):
            raise ShapeError(
                f"masks must be ({n}, 1, {side}, {side}), got {self.masks.shape}"
            )
        if self.labels.shape != (n,):
            raise ShapeError(f"labels must be ({n},), got {self.labels.shape}")

    def __len__(self):
        return self.labels.shape[0]


def train_step(model, patches, masks, labels, optimizer, weights=None):
    """Forward, backward and Adam update on one batch; returns loss parts."""
    with nn.GradGraph() as graph:
        mask_probs, class_probs = model.forward(patches, reuse_buffers=True)
        total, seg_value, cls_value = multitask_loss(
            mask_probs, masks, class_probs, labels, weights
        )
        value = total.item()
        if not math.isfinite(value):
            raise NumericError("training loss became non-finite")
        graph.backward(total)
    optimizer.step()
    optimizer.zero_grad()
    return value, seg_value, cls_value


def train_epoch(model, data, optimizer, weights=None, batch_size=8, shuffle_rng=None):
    """One shuffled pass; elementwise guards are lifted around the hot loop."""
    n = len(data)
    if n == 0:
        raise ValidationError("train_epoch needs a non-empty dataset")
    if batch_size < 1:
        raise ValidationError(f"batch size must be >= 1, got {batch_size}")
    order = shuffle_rng.permutation(n) if shuffle_rng is not None else np.arange(n)
    tot = seg = cls = 0.0
    steps = 0
    with nn.finite_checks(False):
        for start in range(0, n, batch_size):
            sel = order[start : start + batch_size]
            li, si, ci = train_step(
                model,
                nn.Tensor(data.patches[sel]),
                data.masks[sel],
                data.labels[sel],
                optimizer,
                weights,
            )
            tot += li * len(sel)
            seg += si * len(sel)
            cls += ci * len(sel)
            steps += 1
    return MtlEpochStats(loss=tot / n, seg_loss=seg / n, cls_loss=cls / n, steps=steps)


def evaluate(model, data, threshold=0.5, batch_size=8, reuse_buffers=False):
    """Mean mask IoU at the given threshold plus class accuracy."""
    from ..metrics import iou

    n = len(data)
    if n == 0:
        raise ValidationError("evaluate needs a non-empty dataset")
    iou_sum = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        sel = np.arange(start, min(start + batch_size, n))
        mask_probs, class_probs = model.forward(
            nn.Tensor(data.patches[sel]), reuse_buffers=reuse_buffers
        )
        pred_masks = mask_probs.data >= threshold
        gt = data.masks[sel] >= 0.5
        for i in range(len(sel)):
            iou_sum += iou(pred_masks[i, 0], gt[i, 0])
        correct += int((class_probs.data.argmax(axis=1) == data.labels[sel]).sum())
    return iou_sum / n, correct / n
