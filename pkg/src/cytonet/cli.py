"""Command-line pipeline: synth, training, segmentation, boxes, features,
risk scoring and evaluation as independently invokable stages.

Config precedence is CLI flag > config file (flat `key = value` lines) >
built-in default. Every stage writes its artifacts plus a run_report.json
under --out. Exit codes: 0 success, 1 validation problem, 2 numeric or
unexpected runtime failure.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import metrics as metrics_mod
from . import nn, risk, segpost
from .data import (
    SplitSpec,
    SyntheticConfig,
    decode_image,
    generate_synthetic,
    image_to_uint8,
    load_checkpoint,
    load_manifest,
    load_mask,
    make_resolution_stack,
    resize_bilinear,
    save_checkpoint,
    save_image,
    save_mask,
    split_dataset,
)
from .errors import NumericError, ValidationError
from .models import (
    LossWeights,
    MtlDataset,
    TripleDataset,
    build_mrf_dcn,
    build_mtl_unet,
)
from .models import mrf_dcn as mrf
from .models import mtl_unet as mtl


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route through ValidationError
    # instead so every usage problem maps to exit code 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


@dataclass(frozen=True)
class Opt:
    name: str
    type: object
    default: object
    help: str
    required: bool = False
    choices: tuple = None
    is_flag: bool = False


def _bool_arg(value):
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"expected a boolean, got {value!r}")


_COMMON = (
    Opt("out", str, None, "output directory for artifacts and the run report", required=True),
    Opt("config", str, None, "flat key=value config file; flags override it"),
)

_SPLIT_OPTS = (
    Opt("train-ratio", float, 0.7, "fraction of samples for training"),
    Opt("val-ratio", float, 0.15, "fraction of samples for validation"),
    Opt("test-ratio", float, 0.15, "fraction of samples for testing"),
)

_SUBCOMMANDS = {
    "synth": (
        "generate a synthetic labeled cell dataset",
        (
            Opt("per-class", int, 100, "images per class"),
            Opt("image-side", int, 128, "square image side in pixels"),
            Opt("seed", int, 0, "generator seed"),
        )
        + _COMMON,
    ),
    "train-classifier": (
        "train the multi-resolution fusion classifier",
        (
            Opt("manifest", str, None, "dataset manifest JSON", required=True),
            Opt("epochs", int, 50, "training epochs"),
            Opt("batch-size", int, 32, "minibatch size"),
            Opt("lr", float, 0.001, "Adam learning rate"),
            Opt("seed", int, 7, "seed for init, shuffling and the split"),
        )
        + _SPLIT_OPTS
        + _COMMON,
    ),
    "train-mtl": (
        "train the multi-task U-Net on images with masks",
        (
            Opt("manifest", str, None, "dataset manifest JSON with masks", required=True),
            Opt("epochs", int, 30, "training epochs"),
            Opt("batch-size", int, 8, "minibatch size"),
            Opt("lr", float, 0.002, "Adam learning rate"),
            Opt("seed", int, 9, "seed for init and shuffling"),
            Opt("lambda-seg", float, 0.5, "weight of the segmentation loss"),
            Opt("lambda-cls", float, 0.5, "weight of the classification loss"),
            Opt("patch-side", int, 64, "training resolution (multiple of 16)"),
        )
        + _COMMON,
    ),
    "segment": (
        "predict masks for every manifest image",
        (
            Opt("checkpoint", str, None, "mtl_unet checkpoint", required=True),
            Opt("manifest", str, None, "dataset manifest JSON", required=True),
            Opt("threshold", float, 0.5, "binarization threshold in (0, 1)"),
        )
        + _COMMON,
    ),
    "bbox": (
        "extract padded bounding boxes from masks",
        (
            Opt("manifest", str, None, "manifest whose mask files are boxed"),
            Opt("masks-dir", str, None, "directory of mask PNGs (alternative input)"),
            Opt("margin", int, segpost.DEFAULT_BBOX_MARGIN, "padding around the tight box"),
            Opt("per-component", bool, False, "one box per 8-connected component", is_flag=True),
            Opt("render", bool, False, "draw boxes on the source images", is_flag=True),
        )
        + _COMMON,
    ),
    "classify": (
        "predict class probabilities for manifest images",
        (
            Opt("checkpoint", str, None, "mrf_dcn checkpoint", required=True),
            Opt("manifest", str, None, "dataset manifest JSON", required=True),
            Opt("subset", str, "all", "which split to classify", choices=("all", "train", "val", "test")),
            Opt("seed", int, 7, "split seed (must match training)"),
        )
        + _SPLIT_OPTS
        + _COMMON,
    ),
    "extract-features": (
        "write fused 64-dim feature vectors to JSONL",
        (
            Opt("checkpoint", str, None, "mrf_dcn checkpoint", required=True),
            Opt("manifest", str, None, "dataset manifest JSON", required=True),
            Opt("subset", str, "all", "which split to use", choices=("all", "train", "val", "test")),
            Opt("seed", int, 7, "split seed (must match training)"),
        )
        + _SPLIT_OPTS
        + _COMMON,
    ),
    "fit-risk": (
        "fit per-class Gaussians over feature vectors",
        (
            Opt("features", str, None, "features JSONL from extract-features", required=True),
            Opt("ridge", float, 1e-6, "covariance ridge factor"),
            Opt("priors", str, "equal", "class priors", choices=("equal", "empirical")),
            Opt("threshold", float, 0.65, "cosine threshold stored with the model"),
        )
        + _COMMON,
    ),
    "risk": (
        "score feature vectors against fitted class Gaussians",
        (
            Opt("features", str, None, "features JSONL to score", required=True),
            Opt("stats", str, None, "risk model JSON from fit-risk", required=True),
            Opt("threshold", float, None, "override the stored cosine threshold"),
        )
        + _COMMON,
    ),
    "eval": (
        "score predictions or masks against a labeled manifest",
        (
            Opt("task", str, None, "what to evaluate", required=True, choices=("classification", "segmentation")),
            Opt("manifest", str, None, "dataset manifest JSON", required=True),
            Opt("predictions", str, None, "predictions JSONL (classification task)"),
            Opt("pred-masks", str, None, "directory of predicted masks (segmentation task)"),
            Opt("threshold", float, 0.5, "mask binarization threshold"),
        )
        + _COMMON,
    ),
}


def build_parser():
    parser = _Parser(prog="cytonet", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name, (help_text, opts) in _SUBCOMMANDS.items():
        sp = subs.add_parser(name, help=help_text, description=help_text)
        for opt in opts:
            suffix = "(required)" if opt.required else f"(default: {opt.default})"
            kwargs = {"default": None, "help": f"{opt.help} {suffix}"}
            if opt.is_flag:
                kwargs["action"] = "store_const"
                kwargs["const"] = True
            else:
                kwargs["type"] = opt.type
                if opt.choices:
                    kwargs["choices"] = list(opt.choices)
            sp.add_argument(f"--{opt.name}", **kwargs)
    return parser


def _load_config_file(path, opts):
    known = {o.name.replace("-", "_"): o for o in opts}
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}")
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{line_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if key not in known:
            raise ValidationError(f"{path}:{line_no}: unknown option {key!r}")
        opt = known[key]
        if opt.is_flag:
            values[key] = _bool_arg(value)
        else:
            try:
                values[key] = opt.type(value)
            except (TypeError, ValueError):
                raise ValidationError(
                    f"{path}:{line_no}: cannot parse {value!r} for {key}"
                )
    return values


def _resolve_config(args, opts):
    cli = {o.name.replace("-", "_"): getattr(args, o.name.replace("-", "_")) for o in opts}
    file_values = {}
    if cli.get("config") is not None:
        file_values = _load_config_file(cli["config"], opts)
    resolved = {}
    for opt in opts:
        key = opt.name.replace("-", "_")
        value = cli.get(key)
        if value is None:
            value = file_values.get(key, opt.default)
        if value is None and opt.required:
            raise ValidationError(f"--{opt.name} is required")
        if opt.choices and value is not None and value not in opt.choices:
            raise ValidationError(
                f"--{opt.name} must be one of {', '.join(map(str, opt.choices))}"
            )
        resolved[key] = value
    return resolved


class _Stage:
    """Collects artifacts and metrics, then writes the run report."""

    def __init__(self, command, config):
        self.command = command
        self.config = config
        self.out_dir = config["out"]
        self.metrics = {}
        self.artifacts = []
        self._t0 = time.perf_counter()
        os.makedirs(self.out_dir, exist_ok=True)

    def path(self, *parts, record=True):
        rel = os.path.join(*parts)
        full = os.path.join(self.out_dir, rel)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        if record:
            self.artifacts.append(rel)
        return full

    def write_json(self, rel, payload):
        with open(self.path(rel), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")

    def write_text(self, rel, text):
        with open(self.path(rel), "w", encoding="utf-8") as fh:
            fh.write(text)

    def finish(self):
        report = {
            "command": self.command,
            "config": {k: v for k, v in self.config.items() if k != "config"},
            "wall_time_s": round(time.perf_counter() - self._t0, 3),
            "metrics": self.metrics,
            "artifacts": sorted(self.artifacts),
        }
        with open(os.path.join(self.out_dir, "run_report.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
        return report


def _split_spec(cfg):
    return SplitSpec(
        train=cfg["train_ratio"], val=cfg["val_ratio"], test=cfg["test_ratio"], seed=cfg["seed"]
    )


def _subset_entries(manifest, cfg):
    if cfg["subset"] == "all":
        return manifest.entries
    split = split_dataset(manifest, _split_spec(cfg))
    indices = getattr(split, cfg["subset"])
    return [manifest.entries[i] for i in indices]


def _load_triples(manifest, entries):
    n = len(entries)
    x32 = np.empty((n, 3, 32, 32), dtype=np.float32)
    x64 = np.empty((n, 3, 64, 64), dtype=np.float32)
    x128 = np.empty((n, 3, 128, 128), dtype=np.float32)
    labels = np.full(n, -1, dtype=np.int64)
    for i, entry in enumerate(entries):
        img = decode_image(manifest.image_path(entry))
        x32[i], x64[i], x128[i] = make_resolution_stack(img)
        if entry.label is not None:
            labels[i] = entry.label
    return TripleDataset(x32=x32, x64=x64, x128=x128, labels=labels)


def _cmd_synth(cfg, stage):
    config = SyntheticConfig(
        per_class=cfg["per_class"], image_side=cfg["image_side"], seed=cfg["seed"]
    )
    manifest = generate_synthetic(config, stage.out_dir)
    for entry in manifest.entries:
        stage.artifacts.append(entry.image)
        stage.artifacts.append(entry.mask)
    stage.artifacts.append("manifest.json")
    stage.metrics = {
        "images": len(manifest.entries),
        "per_class": cfg["per_class"],
        "image_side": cfg["image_side"],
    }


def _cmd_train_classifier(cfg, stage):
    manifest = load_manifest(cfg["manifest"], check_paths=True)
    split = split_dataset(manifest, _split_spec(cfg))
    stage.write_json(
        "split.json",
        {
            part: [manifest.entries[i].id for i in getattr(split, part)]
            for part in ("train", "val", "test")
        },
    )
    train_data = _load_triples(manifest, [manifest.entries[i] for i in split.train])
    val_data = _load_triples(manifest, [manifest.entries[i] for i in split.val])
    test_data = _load_triples(manifest, [manifest.entries[i] for i in split.test])
    model = build_mrf_dcn(seed=cfg["seed"])
    optimizer = nn.Adam(model.parameters(), lr=cfg["lr"])
    shuffle_rng = np.random.default_rng([cfg["seed"], 1])
    history = []
    for epoch in range(cfg["epochs"]):
        stats = mrf.train_epoch(
            model, train_data, optimizer, batch_size=cfg["batch_size"], shuffle_rng=shuffle_rng
        )
        history.append(
            {"epoch": epoch + 1, "loss": stats.loss, "accuracy": stats.accuracy}
        )
    _, train_acc = mrf.evaluate(model, train_data, cfg["batch_size"], reuse_buffers=True)
    val_acc = None
    if len(val_data):
        _, val_acc = mrf.evaluate(model, val_data, cfg["batch_size"], reuse_buffers=True)
    test_acc = None
    if len(test_data):
        _, test_acc = mrf.evaluate(model, test_data, cfg["batch_size"], reuse_buffers=True)
    save_checkpoint(model, stage.path("mrf_dcn.ckpt"))
    stage.write_json("training_history.json", history)
    stage.metrics = {
        "epochs": cfg["epochs"],
        "final_loss": history[-1]["loss"] if history else None,
        "train_accuracy": train_acc,
        "val_accuracy": val_acc,
        "test_accuracy": test_acc,
        "parameters": mrf.count_parameters(model),
    }


def _load_mtl_data(manifest, entries, side):
    n = len(entries)
    patches = np.empty((n, 3, side, side), dtype=np.float32)
    masks = np.empty((n, 1, side, side), dtype=np.float32)
    labels = np.full(n, -1, dtype=np.int64)
    for i, entry in enumerate(entries):
        img = decode_image(manifest.image_path(entry))
        patches[i] = resize_bilinear(img, side, side)
        mask_path = manifest.mask_path(entry)
        if mask_path is None:
            raise ValidationError(f"entry {entry.id} has no mask; train-mtl needs masks")
        bits = load_mask(mask_path).bits.astype(np.float32)
        masks[i, 0] = resize_bilinear(bits, side, side) >= 0.5
        if entry.label is not None:
            labels[i] = entry.label
    return MtlDataset(patches=patches, masks=masks, labels=labels)


def _cmd_train_mtl(cfg, stage):
    manifest = load_manifest(cfg["manifest"], check_paths=True)
    data = _load_mtl_data(manifest, manifest.entries, cfg["patch_side"])
    if (data.labels < 0).any():
        raise ValidationError("train-mtl needs a label on every entry")
    weights = LossWeights(seg=cfg["lambda_seg"], cls=cfg["lambda_cls"]).validate()
    model = build_mtl_unet(seed=cfg["seed"], input_side=cfg["patch_side"])
    optimizer = nn.Adam(model.parameters(), lr=cfg["lr"])
    shuffle_rng = np.random.default_rng([cfg["seed"], 1])
    history = []
    for epoch in range(cfg["epochs"]):
        stats = mtl.train_epoch(
            model, data, optimizer, weights, batch_size=cfg["batch_size"], shuffle_rng=shuffle_rng
        )
        history.append(
            {
                "epoch": epoch + 1,
                "loss": stats.loss,
                "seg_loss": stats.seg_loss,
                "cls_loss": stats.cls_loss,
            }
        )
    train_iou, train_acc = mtl.evaluate(model, data, reuse_buffers=True)
    save_checkpoint(model, stage.path("mtl_unet.ckpt"))
    stage.write_json("training_history.json", history)
    stage.metrics = {
        "epochs": cfg["epochs"],
        "final_loss": history[-1]["loss"] if history else None,
        "train_iou": train_iou,
        "train_accuracy": train_acc,
    }


def _cmd_segment(cfg, stage):
    model = load_checkpoint(cfg["checkpoint"], expected_kind="mtl_unet")
    manifest = load_manifest(cfg["manifest"], check_paths=True)
    if not 0.0 < cfg["threshold"] < 1.0:
        raise ValidationError(f"threshold must lie in (0, 1), got {cfg['threshold']}")
    records = []
    masks = []
    for entry in manifest.entries:
        img = decode_image(manifest.image_path(entry))
        _, h, w = img.shape
        side = max(mtl.POOL_FACTOR, min(h, w) // mtl.POOL_FACTOR * mtl.POOL_FACTOR)
        resized = img if (h == w == side) else resize_bilinear(img, side, side)
        mask_probs, _ = model.forward(resized.astype(np.float32, copy=False))
        probs = mask_probs.data[0]
        if probs.shape != (h, w):
            probs = np.clip(resize_bilinear(probs, h, w), 0.0, 1.0)
        mask = segpost.binarize(probs, cfg["threshold"])
        masks.append(mask)
        rel = os.path.join("masks_pred", f"{entry.id}.png")
        save_mask(mask, stage.path(rel))
        records.append({"id": entry.id, "mask": rel, "foreground_pixels": mask.count()})
    kept = segpost.filter_empty(masks)
    kept_ids = {manifest.entries[i].id for i in kept}
    for rec in records:
        rec["empty"] = rec["id"] not in kept_ids
    stage.write_json("segmented.json", records)
    stage.metrics = {
        "images": len(manifest.entries),
        "non_empty_masks": len(kept),
        "threshold": cfg["threshold"],
    }


def _iter_bbox_inputs(cfg):
    if cfg["manifest"] is None and cfg["masks_dir"] is None:
        raise ValidationError("bbox needs --manifest or --masks-dir")
    if cfg["manifest"] is not None and cfg["masks_dir"] is not None:
        raise ValidationError("bbox takes --manifest or --masks-dir, not both")
    if cfg["manifest"] is not None:
        manifest = load_manifest(cfg["manifest"], check_paths=True)
        for entry in manifest.entries:
            mask_path = manifest.mask_path(entry)
            if mask_path is None:
                raise ValidationError(f"entry {entry.id} has no mask path")
            image_path = manifest.image_path(entry) if cfg["render"] else None
            yield entry.id, mask_path, image_path
    else:
        if not os.path.isdir(cfg["masks_dir"]):
            raise ValidationError(f"masks directory not found: {cfg['masks_dir']}")
        if cfg["render"]:
            raise ValidationError("--render needs a --manifest for the source images")
        for name in sorted(os.listdir(cfg["masks_dir"])):
            if name.lower().endswith(".png"):
                yield os.path.splitext(name)[0], os.path.join(cfg["masks_dir"], name), None


def _cmd_bbox(cfg, stage):
    if cfg["margin"] < 0:
        raise ValidationError(f"margin must be >= 0, got {cfg['margin']}")
    lines = []
    total_boxes = 0
    empty = 0
    for sample_id, mask_path, image_path in _iter_bbox_inputs(cfg):
        mask = load_mask(mask_path)
        if cfg["per_component"]:
            boxes = segpost.extract_component_boxes(mask, cfg["margin"])
            if not boxes:
                empty += 1
                lines.append({"image": sample_id, "box": None})
            for j, box in enumerate(boxes):
                lines.append({"image": sample_id, "box": box.to_list(), "component": j})
        else:
            box = segpost.extract_bbox(mask, cfg["margin"])
            boxes = [box] if box is not None else []
            if box is None:
                empty += 1
            lines.append({"image": sample_id, "box": None if box is None else box.to_list()})
        total_boxes += len(boxes)
        if image_path is not None and boxes:
            img = image_to_uint8(decode_image(image_path))
            for box in boxes:
                img = segpost.render_bbox(img, box)
            save_image(img, stage.path("rendered", f"{sample_id}.png"))
    with open(stage.path("boxes.jsonl"), "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line) + "\n")
    stage.metrics = {"boxes": total_boxes, "empty_masks": empty, "margin": cfg["margin"]}


def _cmd_classify(cfg, stage):
    model = load_checkpoint(cfg["checkpoint"], expected_kind="mrf_dcn")
    manifest = load_manifest(cfg["manifest"], check_paths=True)
    entries = _subset_entries(manifest, cfg)
    if not entries:
        raise ValidationError(f"subset {cfg['subset']!r} selected no entries")
    data = _load_triples(manifest, entries)
    preds = []
    probs_all = []
    for start in range(0, len(data), 32):
        sel = np.arange(start, min(start + 32, len(data)))
        probs = model.forward(data.take(sel), reuse_buffers=True).data
        probs_all.append(probs)
    probs_all = np.concatenate(probs_all, axis=0)
    with open(stage.path("predictions.jsonl"), "w", encoding="utf-8") as fh:
        for i, entry in enumerate(entries):
            predicted = int(np.argmax(probs_all[i]))
            preds.append(predicted)
            fh.write(
                json.dumps(
                    {
                        "id": entry.id,
                        "label": entry.label,
                        "predicted": predicted,
                        "probs": [float(p) for p in probs_all[i]],
                    }
                )
                + "\n"
            )
    stage.metrics = {"images": len(entries), "subset": cfg["subset"]}
    if all(e.label is not None for e in entries):
        labels = np.array([e.label for e in entries], dtype=np.int64)
        stage.metrics["accuracy"] = float((np.array(preds) == labels).mean())


def _cmd_extract_features(cfg, stage):
    model = load_checkpoint(cfg["checkpoint"], expected_kind="mrf_dcn")
    manifest = load_manifest(cfg["manifest"], check_paths=True)
    entries = _subset_entries(manifest, cfg)
    if not entries:
        raise ValidationError(f"subset {cfg['subset']!r} selected no entries")
    data = _load_triples(manifest, entries)
    records = []
    for start in range(0, len(data), 32):
        sel = np.arange(start, min(start + 32, len(data)))
        feats = model.fused_features(data.take(sel), reuse_buffers=True).data
        for row, i in zip(feats, sel):
            entry = entries[int(i)]
            records.append(
                risk.FeatureRecord(id=entry.id, label=entry.label, values=row.astype(np.float64))
            )
    risk.save_feature_records(records, stage.path("features.jsonl"))
    stage.metrics = {
        "images": len(entries),
        "subset": cfg["subset"],
        "feature_dim": mrf.FEATURE_DIM,
    }


def _cmd_fit_risk(cfg, stage):
    records = risk.load_feature_records(cfg["features"])
    if any(r.label is None for r in records):
        raise ValidationError("fit-risk needs a label on every feature record")
    features = np.stack([r.values for r in records])
    labels = np.array([r.label for r in records], dtype=np.int64)
    config = risk.RiskConfig(
        ridge=cfg["ridge"], cosine_threshold=cfg["threshold"], priors=cfg["priors"]
    )
    model = risk.fit_class_statistics(features, labels, config)
    risk.save_risk_model(model, stage.path("risk_stats.json"))
    stage.metrics = {
        "samples": len(records),
        "classes": len(model.classes),
        "feature_dim": model.dim,
        "ridge": cfg["ridge"],
    }


def _cmd_risk(cfg, stage):
    model = risk.load_risk_model(cfg["stats"])
    if cfg["threshold"] is not None:
        model.config.cosine_threshold = cfg["threshold"]
        model.config.validate()
    records = risk.load_feature_records(cfg["features"])
    correct = 0
    labeled = 0
    high_risk_total = 0
    with open(stage.path("risk.jsonl"), "w", encoding="utf-8") as fh:
        for rec in records:
            report = risk.assess_risk(rec.values, model)
            fh.write(json.dumps(report.to_dict(sample_id=rec.id)) + "\n")
            high_risk_total += len(report.high_risk)
            if rec.label is not None:
                labeled += 1
                correct += int(report.predicted_class == rec.label)
    stage.metrics = {
        "samples": len(records),
        "high_risk_flags": high_risk_total,
        "cosine_threshold": model.config.cosine_threshold,
    }
    if labeled:
        stage.metrics["accuracy"] = correct / labeled


def _eval_classification(cfg, stage, manifest):
    if cfg["predictions"] is None:
        raise ValidationError("eval --task classification needs --predictions")
    labels_by_id = {}
    for entry in manifest.entries:
        if entry.label is None:
            raise ValidationError(f"entry {entry.id} has no label")
        labels_by_id[entry.id] = entry.label
    preds = []
    truths = []
    try:
        fh = open(cfg["predictions"], "r", encoding="utf-8")
    except FileNotFoundError:
        raise ValidationError(f"predictions not found: {cfg['predictions']}")
    with fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(
                    f"{cfg['predictions']}:{line_no}: invalid JSON"
                ) from exc
            if row.get("id") not in labels_by_id:
                raise ValidationError(
                    f"{cfg['predictions']}:{line_no}: unknown id {row.get('id')!r}"
                )
            preds.append(int(row["predicted"]))
            truths.append(labels_by_id[row["id"]])
    if not preds:
        raise ValidationError(f"{cfg['predictions']}: no prediction rows")
    names = manifest.class_names
    report = metrics_mod.classification_report(
        np.array(preds), np.array(truths), len(names)
    )
    stage.write_json("eval_report.json", metrics_mod.report_to_dict(report, names))
    stage.write_text("eval_report.txt", metrics_mod.format_report(report, names) + "\n")
    stage.write_text("confusion.csv", metrics_mod.confusion_to_csv(report.confusion, names))
    stage.metrics = {
        "task": "classification",
        "samples": len(preds),
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
        "weighted_f1": report.weighted_f1,
    }


def _eval_segmentation(cfg, stage, manifest):
    if cfg["pred_masks"] is None:
        raise ValidationError("eval --task segmentation needs --pred-masks")
    if not os.path.isdir(cfg["pred_masks"]):
        raise ValidationError(f"mask directory not found: {cfg['pred_masks']}")
    rows = []
    iou_sum = dice_sum = 0.0
    for entry in manifest.entries:
        gt_path = manifest.mask_path(entry)
        if gt_path is None:
            raise ValidationError(f"entry {entry.id} has no ground-truth mask")
        pred_path = os.path.join(cfg["pred_masks"], f"{entry.id}.png")
        if not os.path.isfile(pred_path):
            raise ValidationError(f"missing predicted mask: {pred_path}")
        score = metrics_mod.segmentation_score(load_mask(pred_path), load_mask(gt_path))
        rows.append({"id": entry.id, "iou": score.iou, "dice": score.dice})
        iou_sum += score.iou
        dice_sum += score.dice
    n = len(rows)
    payload = {
        "task": "segmentation",
        "mean_iou": iou_sum / n,
        "mean_dice": dice_sum / n,
        "per_image": rows,
    }
    stage.write_json("eval_report.json", payload)
    stage.metrics = {
        "task": "segmentation",
        "samples": n,
        "mean_iou": payload["mean_iou"],
        "mean_dice": payload["mean_dice"],
    }


def _cmd_eval(cfg, stage):
    manifest = load_manifest(cfg["manifest"], check_paths=False)
    if cfg["task"] == "classification":
        _eval_classification(cfg, stage, manifest)
    else:
        _eval_segmentation(cfg, stage, manifest)


_HANDLERS = {
    "synth": _cmd_synth,
    "train-classifier": _cmd_train_classifier,
    "train-mtl": _cmd_train_mtl,
    "segment": _cmd_segment,
    "bbox": _cmd_bbox,
    "classify": _cmd_classify,
    "extract-features": _cmd_extract_features,
    "fit-risk": _cmd_fit_risk,
    "risk": _cmd_risk,
    "eval": _cmd_eval,
}


def run(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise ValidationError("a subcommand is required")
    opts = _SUBCOMMANDS[args.command][1]
    cfg = _resolve_config(args, opts)
    stage = _Stage(args.command, cfg)
    _HANDLERS[args.command](cfg, stage)
    stage.finish()
    return 0


def main(argv=None):
    try:
        return run(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        # argparse --help exits 0; pass that through
        return int(exc.code or 0)
    except Exception as exc:  # unexpected runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
