"""COCO-style detection metrics: IoU, greedy matching, AP, size buckets, mAP."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .model import (
    BoundingBox,
    DatasetAnnotations,
    Detection,
    DetectionSet,
    GroundTruthInstance,
    Label,
)

__all__ = ["EvalConfig", "MatchRecord", "CellReport", "iou", "match_detections",
           "average_precision", "evaluate_cell"]


def _default_iou_thresholds() -> tuple[float, ...]:
    return tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class EvalConfig:
    """All numeric knobs of the evaluation protocol, with COCO-style defaults.

    Size bucket boundaries follow the 32^2 / 96^2 convention; tau and top_k
    drive the open-label remap and the near-miss criterion.
    """

    iou_thresholds: tuple[float, ...] = field(default_factory=_default_iou_thresholds)
    recall_points: int = 101
    max_dets_per_image: int = 100
    area_small_max: float = 32.0 ** 2
    area_large_min: float = 96.0 ** 2
    tau: float = 0.6
    top_k: int = 5
    diagnostics_iou: float = 0.50
    undefined_as_zero: bool = False
    drop_below_tau: bool = True
    restrict_gt_mode: str = "ignore"

    def __post_init__(self):
        ts = tuple(float(t) for t in self.iou_thresholds)
        object.__setattr__(self, "iou_thresholds", ts)
        if not ts or any(not (0.0 < t <= 1.0) for t in ts):
            raise ValueError("iou_thresholds must lie in (0, 1]")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("iou_thresholds must be strictly increasing")
        if self.recall_points < 2:
            raise ValueError("recall_points must be >= 2")
        if self.max_dets_per_image < 1:
            raise ValueError("max_dets_per_image must be >= 1")
        if not (0.0 < self.tau < 1.0):
            raise ValueError("tau must lie in (0, 1)")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not (0.0 < self.area_small_max < self.area_large_min):
            raise ValueError("size bucket boundaries must be positive and ordered")
        if self.restrict_gt_mode not in ("ignore", "delete"):
            raise ValueError("restrict_gt_mode must be 'ignore' or 'delete'")

    def bucket_range(self, bucket: str | None) -> tuple[float, float]:
        if bucket is None:
            return (0.0, float("inf"))
        return {
            "small": (0.0, self.area_small_max),
            "medium": (self.area_small_max, self.area_large_min),
            "large": (self.area_large_min, float("inf")),
        }[bucket]

    def to_dict(self) -> dict:
        return {
            "iou_thresholds": list(self.iou_thresholds),
            "recall_points": self.recall_points,
            "max_dets_per_image": self.max_dets_per_image,
            "area_small_max": self.area_small_max,
            "area_large_min": self.area_large_min,
            "tau": self.tau,
            "top_k": self.top_k,
            "diagnostics_iou": self.diagnostics_iou,
            "undefined_as_zero": self.undefined_as_zero,
            "drop_below_tau": self.drop_below_tau,
            "restrict_gt_mode": self.restrict_gt_mode,
        }


@dataclass(frozen=True)
class MatchRecord:
    """One considered detection and the GT it was (maybe) assigned to."""

    det_id: int
    image_id: int
    iou: float
    det_label: Label
    score: float
    gt_id: int | None = None
    gt_label: Label | None = None
    gt_ignored: bool = False

    @property
    def matched(self) -> bool:
        return self.gt_id is not None


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; 0 when the union is empty."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def match_detections(
    dets: list[Detection],
    gts: list[GroundTruthInstance],
    iou_threshold: float,
    max_dets: int,
) -> list[MatchRecord]:
    """Greedy per-image matching at one IoU threshold.

    Detections are visited in (-score, det_id) order, at most max_dets of
    them. Each takes the unmatched non-ignored GT of highest IoU >= threshold
    (ties break to the smallest gt_id), else the best ignored GT >= threshold
    (such records are neither TP nor FP; ignored GT may be reused), else it is
    left unmatched (FP). Each non-ignored GT is matched at most once.
    """
    image_ids = {d.image_id for d in dets} | {g.image_id for g in gts}
    if len(image_ids) > 1:
        raise UsageError(f"match_detections over mixed image_ids {sorted(image_ids)}")

    ordered_dets = sorted(dets, key=lambda d: (-d.score, d.det_id))[:max_dets]
    ordered_gts = sorted(gts, key=lambda g: g.gt_id)
    taken: set[int] = set()
    records: list[MatchRecord] = []
    for det in ordered_dets:
        best_iou, best_gt = 0.0, None
        for gt in ordered_gts:
            if gt.ignore or gt.gt_id in taken:
                continue
            v = iou(det.box, gt.box)
            if v >= iou_threshold and v > best_iou:
                best_iou, best_gt = v, gt
        if best_gt is None:
            for gt in ordered_gts:
                if not gt.ignore:
                    continue
                v = iou(det.box, gt.box)
                if v >= iou_threshold and v > best_iou:
                    best_iou, best_gt = v, gt
        if best_gt is None:
            records.append(
                MatchRecord(
                    det_id=det.det_id, image_id=det.image_id, iou=0.0,
                    det_label=det.label, score=det.score,
                )
            )
        else:
            if not best_gt.ignore:
                taken.add(best_gt.gt_id)
            records.append(
                MatchRecord(
                    det_id=det.det_id, image_id=det.image_id, iou=best_iou,
                    det_label=det.label, score=det.score,
                    gt_id=best_gt.gt_id, gt_label=best_gt.label,
                    gt_ignored=best_gt.ignore,
                )
            )
    return records


def average_precision(
    records: list[MatchRecord],
    n_positive: int,
    recall_points: int = 101,
) -> float | None:
    """Interpolated AP over records pooled across images for one class and
    one IoU threshold.

    Records matched to ignored GT are excluded from both TP and FP counts.
    Returns None (undefined) when there is no non-ignored GT.
    """
    if n_positive <= 0:
        return None
    ordered = sorted(records, key=lambda r: (-r.score, r.det_id))
    tp_flags = []
    for rec in ordered:
        if rec.matched and rec.gt_ignored:
            continue
        tp_flags.append(1.0 if rec.matched else 0.0)
    sample = np.linspace(0.0, 1.0, recall_points)
    if not tp_flags:
        return 0.0
    tp = np.asarray(tp_flags)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_positive
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, sample, side="left")
    interp = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(np.mean(interp))


@dataclass(frozen=True)
class CellReport:
    """Metrics for one (source, target) transfer cell."""

    map_5095: float | None
    ap_per_threshold: tuple[float | None, ...]
    ap_small: float | None
    ap_medium: float | None
    ap_large: float | None
    per_class_ap: dict[str, float | None]
    counts: dict[str, int]
    undefined_reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "map_5095": self.map_5095,
            "ap_per_threshold": list(self.ap_per_threshold),
            "ap_small": self.ap_small,
            "ap_medium": self.ap_medium,
            "ap_large": self.ap_large,
            "per_class_ap": dict(sorted(self.per_class_ap.items())),
            "counts": dict(sorted(self.counts.items())),
            "undefined_reason": self.undefined_reason,
        }


def _mean_or_none(values: list[float | None], as_zero: bool) -> float | None:
    defined = [0.0 if v is None and as_zero else v for v in values]
    defined = [v for v in defined if v is not None]
    if not defined:
        return None
    return float(np.mean(defined))


def evaluate_cell(
    gt: DatasetAnnotations,
    dets: DetectionSet,
    config: EvalConfig | None = None,
) -> CellReport:
    """Evaluate one transfer cell: per-class AP over the IoU threshold grid,
    size-bucketed AP, and mAP.

    Detections are expected to be vocabulary-aligned already (closed filter or
    open remap); detections with labels outside the GT vocabulary contribute
    nothing. Size buckets restrict GT to the area range (out-of-range GT is
    treated as ignored) and exclude unmatched detections whose own box area is
    outside the range, per COCO convention.
    """
    if config is None:
        config = EvalConfig()

    classes = [l for l in gt.vocabulary]
    vocab_canons = gt.vocabulary.canonical_set

    # Per-image truncation to max_dets_per_image, by (-score, det_id).
    dets_by_image: dict[int, list[Detection]] = {}
    for det in dets.detections:
        dets_by_image.setdefault(det.image_id, []).append(det)
    for img_id, lst in dets_by_image.items():
        lst.sort(key=lambda d: (-d.score, d.det_id))
        dets_by_image[img_id] = lst[: config.max_dets_per_image]

    gts_by_image: dict[int, list[GroundTruthInstance]] = {}
    for inst in gt.instances:
        gts_by_image.setdefault(inst.image_id, []).append(inst)

    image_ids = sorted(gt.images.keys())
    buckets = (None, "small", "medium", "large")
    # ap[bucket][class_canon] = list of per-threshold AP (or None)
    ap: dict[str | None, dict[str, list[float | None]]] = {
        b: {c.canonical: [] for c in classes} for b in buckets
    }

    for cls in classes:
        canon = cls.canonical
        cls_dets = {
            img: [d for d in dets_by_image.get(img, []) if d.label == cls]
            for img in image_ids
        }
        cls_gts = {
            img: [g for g in gts_by_image.get(img, []) if g.label == cls]
            for img in image_ids
        }
        for bucket in buckets:
            lo, hi = config.bucket_range(bucket)
            from dataclasses import replace

            bucket_gts = {
                img: [
                    replace(g, ignore=True)
                    if not g.ignore and not (lo <= g.area < hi)
                    else g
                    for g in lst
                ]
                for img, lst in cls_gts.items()
            }
            n_positive = sum(
                1 for lst in bucket_gts.values() for g in lst if not g.ignore
            )
            for thr in config.iou_thresholds:
                pooled: list[MatchRecord] = []
                for img in image_ids:
                    recs = match_detections(
                        cls_dets[img], bucket_gts[img], thr,
                        config.max_dets_per_image,
                    )
                    for rec in recs:
                        if not rec.matched:
                            det_area = next(
                                d.box.area for d in cls_dets[img]
                                if d.det_id == rec.det_id
                            )
                            if not (lo <= det_area < hi):
                                continue  # out-of-bucket unmatched det: not an FP
                        pooled.append(rec)
                ap[bucket][canon].append(
                    average_precision(pooled, n_positive, config.recall_points)
                )

    def bucket_mean(bucket):
        vals = [v for canon in ap[bucket] for v in ap[bucket][canon]]
        return _mean_or_none(vals, config.undefined_as_zero)

    ap_per_threshold = []
    for i, _ in enumerate(config.iou_thresholds):
        vals = [ap[None][c.canonical][i] for c in classes]
        ap_per_threshold.append(_mean_or_none(vals, config.undefined_as_zero))
    per_class = {
        c.canonical: _mean_or_none(ap[None][c.canonical], config.undefined_as_zero)
        for c in classes
    }
    map_5095 = bucket_mean(None)

    n_ignored = sum(1 for inst in gt.instances if inst.ignore)
    counts = {
        "images": len(gt.images),
        "gts": len(gt.instances),
        "dets": len(dets.detections),
        "ignored": n_ignored,
        "dets_out_of_vocab": sum(
            1 for d in dets.detections if d.label.canonical not in vocab_canons
        ),
    }
    reason = None
    if map_5095 is None:
        reason = "no class has non-ignored ground truth in this cell"
    return CellReport(
        map_5095=map_5095,
        ap_per_threshold=tuple(ap_per_threshold),
        ap_small=bucket_mean("small"),
        ap_medium=bucket_mean("medium"),
        ap_large=bucket_mean("large"),
        per_class_ap=per_class,
        counts=counts,
        undefined_reason=reason,
    )
