"""Loaders for COCO-format annotations, detection results, embeddings, mappings.

Loaders are pure functions over file contents; everything they return is
immutable and safe to share across threads.
"""

from __future__ import annotations

import json
import logging
import os

from .errors import (
    EmbeddingError,
    ParseError,
    RangeError,
    ReferentialError,
    VocabularyError,
)
from .model import (
    BoundingBox,
    DatasetAnnotations,
    Detection,
    DetectionSet,
    EmbeddingTable,
    GroundTruthInstance,
    ImageInfo,
    Label,
    LabelMapping,
    LoadReport,
    RegionEmbeddings,
    SettingType,
    Vocabulary,
    normalize_label,
)

log = logging.getLogger("xdet.ingest")

__all__ = [
    "normalize_label",
    "load_ground_truth",
    "load_detections",
    "load_embeddings",
    "load_region_embeddings",
    "load_mapping",
    "ground_truth_to_coco",
    "detections_to_coco",
    "embeddings_to_dict",
    "mapping_to_list",
]


def _read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: malformed JSON ({exc})") from exc
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def load_ground_truth(
    path,
    dataset_id: str | None = None,
    setting: SettingType = SettingType.AGNOSTIC,
) -> DatasetAnnotations:
    """Load a COCO annotation file (images/annotations/categories arrays).

    Category names are normalized; duplicate canonical names are rejected.
    Annotations with degenerate boxes (w<=0 or h<=0) are dropped and counted
    in the load report rather than erroring, since public annotation files
    contain them.
    """
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: expected a JSON object")
    for key in ("images", "annotations", "categories"):
        if key not in doc:
            raise ParseError(f"{path}: missing {key!r} array")
    if dataset_id is None:
        dataset_id = os.path.splitext(os.path.basename(str(path)))[0]

    cat_by_id: dict[int, Label] = {}
    labels: list[Label] = []
    seen_canon: dict[str, str] = {}
    for cat in doc["categories"]:
        try:
            cid = int(cat["id"])
            label = normalize_label(str(cat["name"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: bad category record {cat!r}") from exc
        if label.canonical in seen_canon:
            raise VocabularyError(
                f"{path}: categories {seen_canon[label.canonical]!r} and "
                f"{cat['name']!r} normalize to the same label "
                f"{label.canonical!r}"
            )
        seen_canon[label.canonical] = str(cat["name"])
        cat_by_id[cid] = label
        labels.append(label)
    vocab = Vocabulary(dataset_id=dataset_id, labels=tuple(labels), setting=setting)

    images: dict[int, ImageInfo] = {}
    for img in doc["images"]:
        try:
            iid = int(img["id"])
            images[iid] = ImageInfo(
                image_id=iid,
                width=int(img.get("width", 0)),
                height=int(img.get("height", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: bad image record {img!r}") from exc

    instances: list[GroundTruthInstance] = []
    dropped = 0
    for ann in doc["annotations"]:
        try:
            gt_id = int(ann["id"])
            image_id = int(ann["image_id"])
            cid = int(ann["category_id"])
            x, y, w, h = (float(v) for v in ann["bbox"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: bad annotation record {ann!r}") from exc
        if image_id not in images:
            raise ReferentialError(
                f"{path}: annotation {gt_id} references unknown image {image_id}"
            )
        if cid not in cat_by_id:
            raise ReferentialError(
                f"{path}: annotation {gt_id} references unknown category {cid}"
            )
        if w <= 0 or h <= 0:
            dropped += 1
            log.warning("%s: dropping degenerate gt box id=%s (w=%s, h=%s)",
                        path, gt_id, w, h)
            continue
        area = float(ann["area"]) if ann.get("area", 0) and ann["area"] > 0 else w * h
        ignore = bool(ann.get("iscrowd", 0)) or bool(ann.get("ignore", 0))
        instances.append(
            GroundTruthInstance(
                gt_id=gt_id,
                image_id=image_id,
                label=cat_by_id[cid],
                box=BoundingBox(x, y, w, h),
                area=area,
                ignore=ignore,
            )
        )

    report = LoadReport(
        n_images=len(images),
        n_instances=len(instances),
        n_categories=len(labels),
        dropped_degenerate=dropped,
    )
    return DatasetAnnotations(
        vocabulary=vocab,
        images=images,
        instances=tuple(instances),
        category_ids=cat_by_id,
        load_report=report,
    )


def load_detections(
    path,
    target: DatasetAnnotations,
    source_dataset_id: str = "",
) -> DetectionSet:
    """Load a COCO results-format array of detections against a target dataset.

    det_ids are assigned in file order. Category is matched by name when
    present, else by id joined through the target categories table; name takes
    precedence on conflict. Labels are NOT required to be in the target
    vocabulary.
    """
    doc = _read_json(path)
    if not isinstance(doc, list):
        raise ParseError(f"{path}: expected a JSON array of detections")
    detections: list[Detection] = []
    for i, rec in enumerate(doc):
        if not isinstance(rec, dict):
            raise ParseError(f"{path}: record {i} is not an object")
        try:
            image_id = int(rec["image_id"])
            x, y, w, h = (float(v) for v in rec["bbox"])
            score = float(rec["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: bad detection record {i}: {rec!r}") from exc
        if image_id not in target.images:
            raise ReferentialError(
                f"{path}: detection {i} references unknown image {image_id}"
            )
        if not (0.0 <= score <= 1.0):
            raise RangeError(f"{path}: detection {i} score {score} outside [0, 1]")
        if "category_name" in rec:
            label = normalize_label(str(rec["category_name"]))
        elif "category_id" in rec:
            cid = int(rec["category_id"])
            if cid not in target.category_ids:
                raise ReferentialError(
                    f"{path}: detection {i} references unknown category id {cid}"
                )
            label = target.category_ids[cid]
        else:
            raise ParseError(f"{path}: detection {i} lacks category_name/category_id")
        try:
            box = BoundingBox(x, y, w, h)
        except RangeError as exc:
            raise ParseError(f"{path}: detection {i}: {exc}") from exc
        detections.append(
            Detection(det_id=i, image_id=image_id, label=label, box=box, score=score)
        )
    return DetectionSet(
        source_dataset_id=source_dataset_id,
        target_dataset_id=target.dataset_id,
        detections=tuple(detections),
    )


def _load_embedding_doc(path):
    doc = _read_json(path)
    if not isinstance(doc, dict) or "entries" not in doc:
        raise ParseError(f"{path}: expected object with model_id/dim/entries")
    try:
        model_id = str(doc["model_id"])
        dim = int(doc["dim"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: bad embedding header") from exc
    if dim <= 0:
        raise EmbeddingError(f"{path}: dim must be positive, got {dim}")
    return model_id, dim, doc["entries"]


def load_embeddings(path) -> EmbeddingTable:
    """Load a text-embedding table; vectors renormalized to unit L2 norm."""
    import numpy as np

    model_id, dim, raw_entries = _load_embedding_doc(path)
    entries, prenorms = {}, {}
    for key, vec in raw_entries.items():
        canon = normalize_label(str(key)).canonical
        arr = np.asarray(vec, dtype=np.float64)
        prenorms[canon] = float(np.linalg.norm(arr)) if arr.ndim == 1 else float("nan")
        entries[canon] = vec
    return EmbeddingTable(model_id=model_id, dim=dim, entries=entries, prenorms=prenorms)


def load_region_embeddings(path) -> RegionEmbeddings:
    """Load region (image-crop) embeddings keyed by det_id."""
    import numpy as np

    model_id, dim, raw_entries = _load_embedding_doc(path)
    entries, prenorms = {}, {}
    for key, vec in raw_entries.items():
        try:
            det_id = int(key)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}: region key {key!r} is not a det_id") from exc
        arr = np.asarray(vec, dtype=np.float64)
        prenorms[det_id] = float(np.linalg.norm(arr)) if arr.ndim == 1 else float("nan")
        entries[det_id] = vec
    return RegionEmbeddings(
        model_id=model_id, dim=dim, entries=entries, prenorms=prenorms
    )


def load_mapping(path) -> LabelMapping:
    """Load an explicit label mapping: JSON array of {"source", "target"}."""
    doc = _read_json(path)
    if not isinstance(doc, list):
        raise ParseError(f"{path}: expected a JSON array of mapping pairs")
    pairs = []
    for i, rec in enumerate(doc):
        try:
            src = normalize_label(str(rec["source"])).canonical
            tgt = normalize_label(str(rec["target"])).canonical
        except (KeyError, TypeError) as exc:
            raise ParseError(f"{path}: bad mapping record {i}: {rec!r}") from exc
        pairs.append((src, tgt))
    return LabelMapping(pairs=tuple(pairs))


# --- serializers (round-trip counterparts of the loaders) -------------------


def ground_truth_to_coco(gt: DatasetAnnotations) -> dict:
    cat_ids = {label.canonical: cid for cid, label in gt.category_ids.items()}
    next_id = max(cat_ids.values(), default=0) + 1
    categories = []
    for label in gt.vocabulary:
        cid = cat_ids.get(label.canonical)
        if cid is None:
            cid, next_id = next_id, next_id + 1
        categories.append({"id": cid, "name": label.canonical})
        cat_ids[label.canonical] = cid
    return {
        "images": [
            {"id": im.image_id, "width": im.width, "height": im.height}
            for im in gt.images.values()
        ],
        "annotations": [
            {
                "id": inst.gt_id,
                "image_id": inst.image_id,
                "category_id": cat_ids[inst.label.canonical],
                "bbox": inst.box.to_list(),
                "area": inst.area,
                "iscrowd": int(inst.ignore),
            }
            for inst in gt.instances
        ],
        "categories": categories,
    }


def detections_to_coco(dets: DetectionSet) -> list:
    return [
        {
            "image_id": d.image_id,
            "category_name": d.label.canonical,
            "bbox": d.box.to_list(),
            "score": d.score,
        }
        for d in dets.detections
    ]


def embeddings_to_dict(table) -> dict:
    return {
        "model_id": table.model_id,
        "dim": table.dim,
        "entries": {str(k): [float(v) for v in vec] for k, vec in table.entries.items()},
    }


def mapping_to_list(mapping: LabelMapping) -> list:
    return [{"source": s, "target": t} for s, t in mapping.pairs]
