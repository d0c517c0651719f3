"""Gaussian class models over feature vectors, posteriors and risk reports.

Everything here runs in float64. Each class gets a mean and a ridge-
stabilized unbiased covariance; posteriors come from log densities combined
with log-sum-exp so distant queries cannot underflow to an all-zero row.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError, ValidationError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class RiskConfig:
    ridge: float = 1e-6
    cosine_threshold: float = 0.65
    priors: str = "equal"  # or "empirical"

    def validate(self):
        if self.ridge <= 0:
            raise ValidationError(f"ridge must be > 0, got {self.ridge}")
        if not -1.0 < self.cosine_threshold < 1.0:
            raise ValidationError(
                f"cosine threshold must lie in (-1, 1), got {self.cosine_threshold}"
            )
        if self.priors not in ("equal", "empirical"):
            raise ValidationError(f"priors must be 'equal' or 'empirical', got {self.priors!r}")
        return self


@dataclass
class ClassStatistics:
    """Per-class Gaussian: mean, regularized covariance and cached factors."""

    class_id: int
    count: int
    mean: np.ndarray
    cov: np.ndarray
    cov_inv: np.ndarray = field(init=False, repr=False)
    log_det: float = field(init=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        d = self.mean.shape[0]
        if self.mean.ndim != 1 or self.cov.shape != (d, d):
            raise ShapeError(
                f"mean {self.mean.shape} and covariance {self.cov.shape} disagree"
            )
        try:
            chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise NumericError(
                f"covariance for class {self.class_id} is not positive definite"
            ) from exc
        self.log_det = float(2.0 * np.log(np.diag(chol)).sum())
        inv_chol = np.linalg.solve(chol, np.eye(d))
        self.cov_inv = inv_chol.T @ inv_chol

    @property
    def dim(self):
        return self.mean.shape[0]


@dataclass
class RiskModel:
    classes: list  # ClassStatistics, ascending class_id
    config: RiskConfig

    @property
    def class_ids(self):
        return [s.class_id for s in self.classes]

    @property
    def dim(self):
        return self.classes[0].dim

    def log_priors(self):
        if self.config.priors == "empirical":
            counts = np.array([s.count for s in self.classes], dtype=np.float64)
            return np.log(counts / counts.sum())
        k = len(self.classes)
        return np.full(k, -np.log(k))


def fit_class_statistics(features, labels, config=None):
    """Fit one Gaussian per class id present in labels.

    The covariance is the unbiased sample covariance plus
    ridge * (trace / d) * I; a zero-trace covariance (identical samples)
    falls back to a unit scale so the result stays positive definite.
    """
    config = (config or RiskConfig()).validate()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"features must be (N, d) with N >= 1, got {x.shape}")
    if y.shape != (x.shape[0],):
        raise ShapeError(f"labels shape {y.shape} does not match {x.shape[0]} rows")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValidationError("labels must be integers")
    d = x.shape[1]
    eye = np.eye(d)
    classes = []
    for cls in sorted(int(c) for c in np.unique(y)):
        rows = x[y == cls]
        n = rows.shape[0]
        if n < 2:
            raise ValidationError(
                f"class {cls} has {n} sample(s); at least 2 are needed for a covariance"
            )
        mean = rows.mean(axis=0)
        diff = rows - mean
        cov = diff.T @ diff / (n - 1)
        cov = (cov + cov.T) / 2.0
        trace = float(np.trace(cov))
        scale = trace / d if trace > 0 else 1.0
        cov = cov + config.ridge * scale * eye
        classes.append(ClassStatistics(class_id=cls, count=n, mean=mean, cov=cov))
    return RiskModel(classes=classes, config=config)


def _check_vector(x, dim, what="feature vector"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dim,):
        raise ShapeError(f"{what} must have shape ({dim},), got {x.shape}")
    return x


def log_gaussian_pdf(x, stats):
    """Log density of N(mean, cov) at x."""
    x = _check_vector(x, stats.dim)
    diff = x - stats.mean
    maha = float(diff @ stats.cov_inv @ diff)
    return -0.5 * (stats.dim * LOG_2PI + stats.log_det + maha)


def posterior_from_log_likelihoods(log_liks, log_priors=None):
    """Normalize log joint terms with log-sum-exp; rows always sum to 1."""
    ll = np.asarray(log_liks, dtype=np.float64)
    if ll.ndim != 1 or ll.size == 0:
        raise ShapeError(f"log likelihoods must be a non-empty vector, got {ll.shape}")
    if log_priors is not None:
        lp = np.asarray(log_priors, dtype=np.float64)
        if lp.shape != ll.shape:
            raise ShapeError("log priors must match log likelihoods")
        ll = ll + lp
    if not np.all(np.isfinite(ll)):
        raise NumericError("non-finite log likelihood")
    shifted = ll - ll.max()
    w = np.exp(shifted)
    return w / w.sum()


def class_log_likelihoods(x, model):
    return np.array([log_gaussian_pdf(x, s) for s in model.classes])


def posterior(x, model):
    """Posterior class probabilities in ascending class-id order."""
    return posterior_from_log_likelihoods(class_log_likelihoods(x, model), model.log_priors())


def predict_class(x, model):
    """Arg max of the posterior; ties resolve to the lowest class id."""
    p = posterior(x, model)
    return model.classes[int(np.argmax(p))].class_id


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"vectors must match, got {a.shape} and {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine similarity is undefined for a zero vector")
    return float(a @ b / (na * nb))


@dataclass
class RiskReport:
    predicted_class: int
    posteriors: dict  # class_id -> probability
    cosines: dict  # class_id -> similarity to the class mean
    high_risk: list  # class ids with cosine above the threshold, ascending

    def to_dict(self, sample_id=None):
        out = {
            "predicted": int(self.predicted_class),
            "posteriors": {str(k): float(v) for k, v in self.posteriors.items()},
            "cosine": {str(k): float(v) for k, v in self.cosines.items()},
            "high_risk": [int(c) for c in self.high_risk],
        }
        if sample_id is not None:
            out = {"id": sample_id, **out}
        return out


def assess_risk(x, model):
    """Posterior, per-class cosine against the class means, and the set of
    classes whose cosine exceeds the configured threshold."""
    x = _check_vector(x, model.dim)
    probs = posterior(x, model)
    ids = model.class_ids
    cosines = {cid: cosine_similarity(x, s.mean) for cid, s in zip(ids, model.classes)}
    threshold = model.config.cosine_threshold
    high = sorted(cid for cid, c in cosines.items() if c > threshold)
    return RiskReport(
        predicted_class=ids[int(np.argmax(probs))],
        posteriors=dict(zip(ids, probs.tolist())),
        cosines=cosines,
        high_risk=high,
    )


def knn_predict(train_x, train_y, x, k):
    """Majority vote among the k nearest by Euclidean distance. Vote ties
    go to the class with the closest member, then the lowest class id."""
    d2 = ((train_x - x) ** 2).sum(axis=1)
    order = np.argsort(d2, kind="stable")[:k]
    top_labels = train_y[order]
    votes = {}
    nearest = {}
    for rank, lbl in enumerate(top_labels):
        lbl = int(lbl)
        votes[lbl] = votes.get(lbl, 0) + 1
        if lbl not in nearest:
            nearest[lbl] = float(d2[order[rank]])
    most = max(votes.values())
    tied = [c for c, v in votes.items() if v == most]
    return min(tied, key=lambda c: (nearest[c], c))


@dataclass
class KnnEvalResult:
    accuracy: float
    predictions: np.ndarray
    report: "object"


def knn_feature_eval(train_x, train_y, test_x, test_y, k=5):
    """Classify held-out features with kNN and score the predictions."""
    from .metrics import classification_report

    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    train_y = np.asarray(train_y)
    test_y = np.asarray(test_y)
    if train_x.ndim != 2 or test_x.ndim != 2 or train_x.shape[1] != test_x.shape[1]:
        raise ShapeError("train and test features must be (N, d) with matching d")
    if train_y.shape != (train_x.shape[0],) or test_y.shape != (test_x.shape[0],):
        raise ShapeError("feature and label counts must match")
    if not 1 <= k <= train_x.shape[0]:
        raise ValidationError(
            f"k must lie in [1, {train_x.shape[0]}], got {k}"
        )
    preds = np.array(
        [knn_predict(train_x, train_y, row, k) for row in test_x], dtype=np.int64
    )
    num_classes = int(max(train_y.max(), test_y.max())) + 1
    report = classification_report(preds, test_y.astype(np.int64), num_classes)
    accuracy = float((preds == test_y).mean())
    return KnnEvalResult(accuracy=accuracy, predictions=preds, report=report)


@dataclass
class FeatureRecord:
    """One row of the features file: sample id, optional label, the vector."""

    id: str
    label: int
    values: np.ndarray


def save_feature_records(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            row = {
                "id": rec.id,
                "label": None if rec.label is None else int(rec.label),
                "features": [float(v) for v in np.asarray(rec.values).reshape(-1)],
            }
            fh.write(json.dumps(row) + "\n")


def load_feature_records(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{line_no}: invalid JSON") from exc
            for key in ("id", "features"):
                if key not in row:
                    raise ValidationError(f"{path}:{line_no}: missing '{key}'")
            label = row.get("label")
            records.append(
                FeatureRecord(
                    id=str(row["id"]),
                    label=None if label is None else int(label),
                    values=np.asarray(row["features"], dtype=np.float64),
                )
            )
    if not records:
        raise ValidationError(f"{path}: no feature records found")
    dims = {r.values.shape[0] for r in records}
    if len(dims) != 1:
        raise ValidationError(f"{path}: inconsistent feature dimensions {sorted(dims)}")
    return records


def save_risk_model(model, path):
    payload = {
        "format_version": 1,
        "ridge": model.config.ridge,
        "cosine_threshold": model.config.cosine_threshold,
        "priors": model.config.priors,
        "classes": [
            {
                "class_id": s.class_id,
                "count": s.count,
                "mean": s.mean.tolist(),
                "cov": s.cov.tolist(),
            }
            for s in model.classes
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_risk_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON") from exc
    if payload.get("format_version") != 1:
        raise ValidationError(f"{path}: unsupported format version")
    config = RiskConfig(
        ridge=float(payload["ridge"]),
        cosine_threshold=float(payload["cosine_threshold"]),
        priors=str(payload["priors"]),
    ).validate()
    classes = [
        ClassStatistics(
            class_id=int(c["class_id"]),
            count=int(c["count"]),
            mean=np.asarray(c["mean"], dtype=np.float64),
            cov=np.asarray(c["cov"], dtype=np.float64),
        )
        for c in sorted(payload["classes"], key=lambda c: c["class_id"])
    ]
    if not classes:
        raise ValidationError(f"{path}: no classes in risk model")
    return RiskModel(classes=classes, config=config)
