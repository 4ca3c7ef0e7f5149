import json
import random

import numpy as np
import pytest

from xdet.model import (
    BoundingBox,
    DatasetAnnotations,
    Detection,
    DetectionSet,
    EmbeddingTable,
    GroundTruthInstance,
    ImageInfo,
    Label,
    Vocabulary,
    normalize_label,
)


def lbl(s: str) -> Label:
    return normalize_label(s)


def make_gt(instances, image_ids=None, vocab_labels=None, dataset_id="target"):
    """Build DatasetAnnotations from (gt_id, image_id, label, box, ignore) data."""
    insts = []
    for rec in instances:
        gt_id, image_id, name, box, *rest = rec
        ignore = rest[0] if rest else False
        bb = BoundingBox(*box)
        insts.append(
            GroundTruthInstance(
                gt_id=gt_id, image_id=image_id, label=lbl(name), box=bb,
                area=bb.area, ignore=ignore,
            )
        )
    if image_ids is None:
        image_ids = sorted({i.image_id for i in insts}) or [0]
    images = {i: ImageInfo(i, 1000, 1000) for i in image_ids}
    if vocab_labels is None:
        vocab_labels = sorted({i.label.canonical for i in insts})
    vocab = Vocabulary(dataset_id=dataset_id,
                       labels=tuple(lbl(n) for n in vocab_labels))
    return DatasetAnnotations(vocabulary=vocab, images=images,
                              instances=tuple(insts))


def make_dets(records, source="source", target="target"):
    """Build a DetectionSet from (image_id, label, box, score) tuples."""
    dets = tuple(
        Detection(det_id=i, image_id=img, label=lbl(name),
                  box=BoundingBox(*box), score=score)
        for i, (img, name, box, score) in enumerate(records)
    )
    return DetectionSet(source_dataset_id=source, target_dataset_id=target,
                        detections=dets)


def random_unit(rng: random.Random, dim: int) -> list[float]:
    while True:
        v = np.array([rng.gauss(0, 1) for _ in range(dim)])
        n = np.linalg.norm(v)
        if n > 1e-6:
            return list(v / n)


def make_embeddings(names, rng=None, dim=8, model_id="test-model"):
    rng = rng or random.Random(0)
    entries = {lbl(n).canonical: random_unit(rng, dim) for n in names}
    return EmbeddingTable(model_id=model_id, dim=dim, entries=entries)


def random_scene(rng: random.Random, max_images=4, max_gts=8, max_dets=12,
                 max_classes=3):
    """Random micro-scene for oracle comparisons."""
    classes = [f"class{i}" for i in range(rng.randint(1, max_classes))]
    image_ids = list(range(rng.randint(1, max_images)))
    n_gts = rng.randint(0, max_gts)
    n_dets = rng.randint(0, max_dets)

    def rand_box():
        x = rng.uniform(0, 80)
        y = rng.uniform(0, 80)
        w = rng.uniform(1, 120)  # spans all three size buckets
        h = rng.uniform(1, 120)
        return (round(x, 2), round(y, 2), round(w, 2), round(h, 2))

    gt_rows = [
        (i, rng.choice(image_ids), rng.choice(classes), rand_box(),
         rng.random() < 0.2)
        for i in range(n_gts)
    ]
    det_rows = [
        (rng.choice(image_ids), rng.choice(classes), rand_box(),
         round(rng.random(), 3))
        for _ in range(n_dets)
    ]
    gt = make_gt(gt_rows, image_ids=image_ids, vocab_labels=classes)
    dets = make_dets(det_rows)
    return gt, dets


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture
def coco_gt_doc():
    return {
        "images": [
            {"id": 1, "width": 640, "height": 480},
            {"id": 2, "width": 640, "height": 480},
        ],
        "annotations": [
            {"id": 1, "image_id": 1, "category_id": 1,
             "bbox": [10, 10, 50, 50], "area": 2500, "iscrowd": 0},
            {"id": 2, "image_id": 1, "category_id": 2,
             "bbox": [100, 100, 30, 40], "area": 1200, "iscrowd": 0},
            {"id": 3, "image_id": 2, "category_id": 1,
             "bbox": [5, 5, 200, 100], "area": 20000, "iscrowd": 0},
        ],
        "categories": [
            {"id": 1, "name": "Car"},
            {"id": 2, "name": "Traffic  Light"},
        ],
    }
