"""Multi-resolution fusion classifier for single-cell crops.

Three branches see the same cell at 32, 64 and 128 pixels. Each branch is
conv(3->32) + ReLU, conv(32->64) + ReLU, then enough 2x2 max pools to land
on a compact map, a branch-local FC to 64 features and ReLU. The three
64-vectors are concatenated (192), fused by an FC to 64, and a final FC
plus softmax yields the five class probabilities.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import NumericError, ShapeError, ValidationError
from ..labels import NUM_CLASSES
from .. import nn
from ..nn import functional as F

FEATURE_DIM = 64

# pools follow the conv stack; deeper branches pool more so every branch
# flattens to a manageable width
BRANCH_SPECS = ((32, 1), (64, 3), (128, 4))
INPUT_SIDES = tuple(side for side, _ in BRANCH_SPECS)


@dataclass
class EpochStats:
    loss: float
    accuracy: float
    steps: int


class _Branch:
    def __init__(self, side, pools, rng, dtype):
        self.side = side
        self.pools = pools
        self.conv1 = nn.Conv2d(3, 32, 3, padding=1, rng=rng, dtype=dtype)
        self.conv2 = nn.Conv2d(32, 64, 3, padding=1, rng=rng, dtype=dtype)
        flat = 64 * (side // 2 ** pools) ** 2
        self.fc = nn.Linear(flat, FEATURE_DIM, rng=rng, dtype=dtype)

    def forward(self, x, reuse_buffers):
        h = F.relu(self.conv1(x, reuse_buffers))
        h = F.relu(self.conv2(h, reuse_buffers))
        for _ in range(self.pools):
            h = F.maxpool2d(h, 2)
        return F.relu(self.fc(F.flatten(h)))


class MrfDcn:
    """The built classifier; immutable for inference once constructed."""

    kind = "mrf_dcn"

    def __init__(self, seed, num_classes=NUM_CLASSES, dtype=np.float32):
        if num_classes < 2:
            raise ValidationError(f"need at least 2 classes, got {num_classes}")
        self.seed = int(seed)
        self.num_classes = int(num_classes)
        rng = np.random.default_rng(self.seed)
        self.branches = [_Branch(side, pools, rng, dtype) for side, pools in BRANCH_SPECS]
        self.fusion_fc = nn.Linear(FEATURE_DIM * len(self.branches), FEATURE_DIM, rng=rng, dtype=dtype)
        self.output_fc = nn.Linear(FEATURE_DIM, self.num_classes, rng=rng, dtype=dtype)

    def parameters(self):
        params = []
        for br in self.branches:
            params += br.conv1.parameters() + br.conv2.parameters() + br.fc.parameters()
        return params + self.fusion_fc.parameters() + self.output_fc.parameters()

    def param_entries(self):
        entries = []
        for br in self.branches:
            prefix = f"branch{br.side}"
            entries += [
                (f"{prefix}.conv1.weight", br.conv1.weight),
                (f"{prefix}.conv1.bias", br.conv1.bias),
                (f"{prefix}.conv2.weight", br.conv2.weight),
                (f"{prefix}.conv2.bias", br.conv2.bias),
                (f"{prefix}.fc.weight", br.fc.weight),
                (f"{prefix}.fc.bias", br.fc.bias),
            ]
        entries += [
            ("fusion_fc.weight", self.fusion_fc.weight),
            ("fusion_fc.bias", self.fusion_fc.bias),
            ("output_fc.weight", self.output_fc.weight),
            ("output_fc.bias", self.output_fc.bias),
        ]
        return entries

    def meta(self):
        return {"num_classes": self.num_classes, "input_sides": list(INPUT_SIDES)}

    def _check_inputs(self, inputs):
        if len(inputs) != len(self.branches):
            raise ValidationError(
                f"expected {len(self.branches)} resolution inputs, got {len(inputs)}"
            )
        xs = []
        batch = None
        unbatched = True
        for t, br in zip(inputs, self.branches):
            t = nn.as_tensor(t)
            if t.ndim == 3:
                t = nn.Tensor(t.data[None])
            else:
                unbatched = False
            if t.ndim != 4 or t.shape[1] != 3:
                raise ShapeError(
                    f"branch {br.side} input must be (N, 3, {br.side}, {br.side}), got {t.shape}"
                )
            if t.shape[2] != br.side or t.shape[3] != br.side:
                raise ShapeError(
                    f"branch {br.side} input must be {br.side}x{br.side}, got {t.shape[2]}x{t.shape[3]}"
                )
            if batch is None:
                batch = t.shape[0]
            elif t.shape[0] != batch:
                raise ShapeError("all resolution inputs must share the batch size")
            xs.append(t)
        return xs, unbatched

    def fused_features(self, inputs, reuse_buffers=False):
        xs, unbatched = self._check_inputs(inputs)
        feats = [br.forward(x, reuse_buffers) for br, x in zip(self.branches, xs)]
        fused = F.relu(self.fusion_fc(F.concat(feats, axis=1)))
        # a plain (unbatched) triple comes back as a flat 64-vector
        return F.reshape(fused, (FEATURE_DIM,)) if unbatched else fused

    def forward(self, inputs, reuse_buffers=False):
        fused = self.fused_features(inputs, reuse_buffers)
        return F.softmax(self.output_fc(fused))


def build_mrf_dcn(seed, num_classes=NUM_CLASSES, dtype=np.float32):
    return MrfDcn(seed, num_classes, dtype)


def forward(model, inputs):
    """Class probabilities, shape (N, num_classes)."""
    return model.forward(inputs)


def extract_features(model, inputs):
    """Fused 64-wide feature vectors as a plain array, no graph attached."""
    return model.fused_features(inputs).data


def count_parameters(model):
    return sum(p.size for p in model.parameters())


@dataclass
class TripleDataset:
    """Cell crops at the three branch resolutions plus integer labels."""

    x32: np.ndarray
    x64: np.ndarray
    x128: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        n = self.labels.shape[0]
        for arr, side in ((self.x32, 32), (self.x64, 64), (self.x128, 128)):
            if arr.shape != (n, 3, side, side):
                raise ShapeError(
                    f"expected ({n}, 3, {side}, {side}) input block, got {arr.shape}"
                )

    def __len__(self):
        return self.labels.shape[0]

    def take(self, idx):
        return (
            nn.Tensor(self.x32[idx]),
            nn.Tensor(self.x64[idx]),
            nn.Tensor(self.x128[idx]),
        )


def train_epoch(model, data, optimizer, batch_size=32, shuffle_rng=None):
    """One pass over data; returns mean loss, running accuracy and step count.

    The elementwise finite guards are lifted inside the step loop; a scalar
    check on each batch loss still trips on non-finite values.
    """
    n = len(data)
    if n == 0:
        raise ValidationError("train_epoch needs a non-empty dataset")
    if batch_size < 1:
        raise ValidationError(f"batch size must be >= 1, got {batch_size}")
    order = shuffle_rng.permutation(n) if shuffle_rng is not None else np.arange(n)
    total_loss = 0.0
    correct = 0
    steps = 0
    with nn.finite_checks(False):
        for start in range(0, n, batch_size):
            sel = order[start : start + batch_size]
            labels = data.labels[sel]
            with nn.GradGraph() as graph:
                probs = model.forward(data.take(sel), reuse_buffers=True)
                loss = nn.cross_entropy(probs, labels)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericError("training loss became non-finite")
                graph.backward(loss)
            optimizer.step()
            optimizer.zero_grad()
            total_loss += value * len(sel)
            correct += int((probs.data.argmax(axis=1) == labels).sum())
            steps += 1
    return EpochStats(loss=total_loss / n, accuracy=correct / n, steps=steps)


def evaluate(model, data, batch_size=32, reuse_buffers=False):
    """Forward-only pass; returns (mean loss, accuracy).

    Leave reuse_buffers off when the model is shared between threads.
    """
    n = len(data)
    if n == 0:
        raise ValidationError("evaluate needs a non-empty dataset")
    total_loss = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        sel = np.arange(start, min(start + batch_size, n))
        labels = data.labels[sel]
        probs = model.forward(data.take(sel), reuse_buffers=reuse_buffers)
        total_loss += nn.cross_entropy(probs, labels).item() * len(sel)
        correct += int((probs.data.argmax(axis=1) == labels).sum())
    return total_loss / n, correct / n
