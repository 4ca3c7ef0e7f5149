"""Export jobs: label embedding tables and per-detection region embeddings.

Output files follow the harness's embedding schema:
{"model_id": ..., "dim": ..., "entries": {key: [floats]}} with unit-norm
vectors, keys being canonical labels (text) or det_ids (regions).
"""

from __future__ import annotations

import json
import logging
import os

from PIL import Image, UnidentifiedImageError

log = logging.getLogger("xdet_exporter")

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


class ExportError(Exception):
    """Bad inputs to an export job."""


def normalize_label(raw: str) -> str:
    """Lowercase and collapse whitespace; same rule the harness applies."""
    canon = " ".join(raw.lower().split())
    if not canon:
        raise ExportError(f"label {raw!r} is empty after normalization")
    return canon


def _write_table(out_path, model_id, dim, entries):
    doc = {
        "model_id": model_id,
        "dim": dim,
        "entries": {k: [float(v) for v in vec] for k, vec in entries},
    }
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def read_label_file(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def export_label_embeddings(labels, encoder, out_path) -> int:
    """Embed raw label strings (verbatim, no prompt template) and write a table.

    One entry per canonical label; duplicate raws that normalize to the same
    canonical are collapsed with a warning, keeping the first occurrence.
    Returns the number of entries written.
    """
    if not labels:
        raise ExportError("label list is empty")
    by_canon: dict[str, str] = {}
    for raw in labels:
        canon = normalize_label(raw)
        if canon in by_canon:
            log.warning("labels %r and %r normalize to the same entry %r",
                        by_canon[canon], raw, canon)
            continue
        by_canon[canon] = raw
    canons = sorted(by_canon)
    vectors = encoder.encode_texts([by_canon[c] for c in canons])
    _write_table(out_path, encoder.model_id, vectors.shape[1],
                 zip(canons, vectors))
    return len(canons)


def _find_image(images_dir, image_id):
    for ext in IMAGE_EXTENSIONS:
        path = os.path.join(images_dir, f"{image_id}{ext}")
        if os.path.exists(path):
            return path
    return None


def _load_detections(path):
    """Detection records with det_ids assigned in file order, the same rule
    the harness loader uses."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, list):
        raise ExportError(f"{path}: expected a JSON array of detections")
    out = []
    for i, rec in enumerate(doc):
        try:
            out.append((i, int(rec["image_id"]),
                        tuple(float(v) for v in rec["bbox"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ExportError(f"{path}: bad detection record {i}") from exc
    return out


def _clip_box(box, width, height, det_id):
    x, y, w, h = box
    left = min(max(x, 0.0), width)
    top = min(max(y, 0.0), height)
    right = min(max(x + w, 0.0), width)
    bottom = min(max(y + h, 0.0), height)
    if (left, top, right, bottom) != (x, y, x + w, y + h):
        log.warning("det %d: box %s clipped to image bounds %dx%d",
                    det_id, list(box), width, height)
    return left, top, right, bottom


def export_region_embeddings(images_dir, dets_path, encoder, out_path) -> dict:
    """Embed the axis-aligned crop of each detection's box.

    Crops are taken from the predicted box with no padding, clipped to image
    bounds. Unreadable images and zero-area crops are skipped and listed in a
    sidecar report next to the output file. Returns the sidecar document.
    """
    if not os.path.isdir(images_dir):
        raise ExportError(f"{images_dir}: not a directory")
    dets = _load_detections(dets_path)

    crops, keys, skipped = [], [], []
    opened: dict[int, object] = {}
    for det_id, image_id, box in dets:
        if image_id not in opened:
            path = _find_image(images_dir, image_id)
            if path is None:
                opened[image_id] = None
                log.warning("image %d: no file in %s", image_id, images_dir)
            else:
                try:
                    opened[image_id] = Image.open(path).convert("RGB")
                except (OSError, UnidentifiedImageError) as exc:
                    opened[image_id] = None
                    log.warning("image %d: unreadable (%s)", image_id, exc)
        img = opened[image_id]
        if img is None:
            skipped.append({"det_id": det_id, "reason": "unreadable image",
                            "image_id": image_id})
            continue
        left, top, right, bottom = _clip_box(box, img.width, img.height, det_id)
        if right - left <= 0 or bottom - top <= 0:
            skipped.append({"det_id": det_id, "reason": "zero-area crop",
                            "image_id": image_id})
            continue
        crops.append(img.crop((left, top, right, bottom)))
        keys.append(det_id)

    if crops:
        vectors = encoder.encode_images(crops)
        dim = vectors.shape[1]
        entries = zip((str(k) for k in keys), vectors)
    else:
        dim = getattr(encoder, "dim", 1)
        entries = ()
    _write_table(out_path, encoder.model_id, dim, entries)

    sidecar = {"n_exported": len(keys), "skipped": skipped}
    root, _ = os.path.splitext(str(out_path))
    with open(root + ".sidecar.json", "w", encoding="utf-8", newline="") as fh:
        fh.write(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    return sidecar
