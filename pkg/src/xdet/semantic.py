"""Open-label remapping and semantic near-miss diagnostics over embeddings."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import EmbeddingError
from .metrics import CellReport, EvalConfig, MatchRecord, evaluate_cell
from .model import (
    DatasetAnnotations,
    DetectionSet,
    EmbeddingTable,
    Label,
    RegionEmbeddings,
    Vocabulary,
)

__all__ = [
    "MatchDiagnostics",
    "DiagnosticsSummary",
    "cosine",
    "open_label_remap",
    "rank_gt_given_pred",
    "region_margin",
    "diagnose_mismatches",
    "iou_matches_for_diagnostics",
    "sweep_tau",
]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two unit vectors: dot product clamped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise EmbeddingError(f"dim mismatch: {u.shape} vs {v.shape}")
    return float(np.clip(np.dot(u, v), -1.0, 1.0))


def _target_matrix(tgt_vocab: Vocabulary, tgt_emb: EmbeddingTable):
    """Sorted target labels and their stacked unit vectors."""
    labels = list(tgt_vocab)  # sorted by canonical
    mat = np.stack([tgt_emb.vector(l) for l in labels])
    return labels, mat


def open_label_remap(
    dets: DetectionSet,
    src_emb: EmbeddingTable,
    tgt_vocab: Vocabulary,
    tgt_emb: EmbeddingTable,
    tau: float,
    drop_below_tau: bool = True,
) -> DetectionSet:
    """Rewrite each predicted label to its nearest target label by text cosine.

    A detection is kept with the argmax target label when the best similarity
    is >= tau (ties break to the lexicographically smallest canonical label);
    below tau it is dropped (or kept with its source label when
    drop_below_tau=False). Boxes, scores, and det_ids never change.
    """
    if len(tgt_vocab) == 0:
        raise EmbeddingError("open_label_remap requires a non-empty target vocabulary")
    labels, mat = _target_matrix(tgt_vocab, tgt_emb)
    remap: dict[str, Label | None] = {}
    for canon in sorted({d.label.canonical for d in dets.detections}):
        vec = src_emb.vector(Label(raw=canon, canonical=canon))
        sims = np.clip(mat @ vec, -1.0, 1.0)
        best = float(np.max(sims))
        if best >= tau:
            # argmax with ties to the lexicographically smallest canonical label;
            # labels are already sorted, so the first argmax wins.
            remap[canon] = labels[int(np.argmax(sims))]
        else:
            remap[canon] = None

    kept = []
    for det in dets.detections:
        new_label = remap[det.label.canonical]
        if new_label is None:
            if not drop_below_tau:
                kept.append(det)
            continue
        kept.append(replace(det, label=new_label))
    return DetectionSet(
        source_dataset_id=dets.source_dataset_id,
        target_dataset_id=dets.target_dataset_id,
        detections=tuple(kept),
    )


def rank_gt_given_pred(
    pred: Label,
    gt: Label,
    tgt_vocab: Vocabulary,
    tgt_emb: EmbeddingTable,
    pred_emb: EmbeddingTable | None = None,
) -> int:
    """Rank of the ground-truth label among target labels by similarity to the
    predicted label: 1 + number of target labels strictly more similar.

    The predicted label's vector comes from pred_emb when given (cross-dataset
    case), else from the target table.
    """
    if gt not in tgt_vocab:
        raise EmbeddingError(f"gt label {gt.canonical!r} not in target vocabulary")
    pv = (pred_emb or tgt_emb).vector(pred)
    labels, mat = _target_matrix(tgt_vocab, tgt_emb)
    sims = np.clip(mat @ pv, -1.0, 1.0)
    # take the gt similarity from the same product so rounding cannot
    # perturb the strict comparison
    s_gt = sims[labels.index(gt)]
    return 1 + int(np.sum(sims > s_gt))


def region_margin(
    det_id: int,
    region_emb: RegionEmbeddings,
    gt: Label,
    pred: Label,
    tgt_emb: EmbeddingTable,
    pred_emb: EmbeddingTable | None = None,
) -> float | None:
    """Image-evidence preference margin for the region crop of a detection:
    cos(region, gt text) - cos(region, predicted text).

    Returns None when no region embedding exists for det_id (callers record
    coverage); positive means the image evidence prefers the ground truth.
    """
    rv = region_emb.get(det_id)
    if rv is None:
        return None
    return cosine(rv, tgt_emb.vector(gt)) - cosine(rv, (pred_emb or tgt_emb).vector(pred))


@dataclass(frozen=True)
class MatchDiagnostics:
    """Semantic diagnostics for one IoU-matched, label-mismatched detection."""

    det_id: int
    pred_label: str
    gt_label: str
    s_tt: float
    rank_gt: int
    in_top_k: bool
    is_near_miss: bool
    delta_it: float | None = None

    def to_dict(self) -> dict:
        return {
            "det_id": self.det_id,
            "pred_label": self.pred_label,
            "gt_label": self.gt_label,
            "s_tt": self.s_tt,
            "rank_gt": self.rank_gt,
            "in_top_k": self.in_top_k,
            "is_near_miss": self.is_near_miss,
            "delta_it": self.delta_it,
        }


@dataclass(frozen=True)
class DiagnosticsSummary:
    """Aggregate statistics over label mismatches (Table-style columns)."""

    n_mismatches: int
    near_miss_rate: float | None
    mean_s_tt: float | None
    median_rank: float | None
    top_k_rate: float | None
    mean_delta_it: float | None
    frac_delta_positive: float | None
    region_coverage: float | None

    def to_dict(self) -> dict:
        return {
            "n_mismatches": self.n_mismatches,
            "near_miss_rate": self.near_miss_rate,
            "mean_s_tt": self.mean_s_tt,
            "median_rank": self.median_rank,
            "top_k_rate": self.top_k_rate,
            "mean_delta_it": self.mean_delta_it,
            "frac_delta_positive": self.frac_delta_positive,
            "region_coverage": self.region_coverage,
        }


def diagnose_mismatches(
    matches: list[MatchRecord],
    tgt_vocab: Vocabulary,
    tgt_emb: EmbeddingTable,
    region_emb: RegionEmbeddings | None = None,
    config: EvalConfig | None = None,
    pred_emb: EmbeddingTable | None = None,
) -> tuple[list[MatchDiagnostics], DiagnosticsSummary]:
    """Per-mismatch diagnostics and their summary.

    Only IoU-matched records (gt present, non-ignored) with a label mismatch
    are analyzed. A mismatch is a near-miss when s_tt >= tau and the GT label
    ranks within the top_k most similar target labels. Delta statistics cover
    only records with a region embedding; region_coverage reports the fraction.
    """
    if config is None:
        config = EvalConfig()
    records: list[MatchDiagnostics] = []
    for rec in matches:
        if not rec.matched or rec.gt_ignored or rec.gt_label is None:
            continue
        if rec.det_label == rec.gt_label:
            continue
        pv = (pred_emb or tgt_emb).vector(rec.det_label)
        s_tt = cosine(pv, tgt_emb.vector(rec.gt_label))
        rank = rank_gt_given_pred(
            rec.det_label, rec.gt_label, tgt_vocab, tgt_emb, pred_emb=pred_emb
        )
        in_top_k = rank <= config.top_k
        delta = None
        if region_emb is not None:
            delta = region_margin(
                rec.det_id, region_emb, rec.gt_label, rec.det_label,
                tgt_emb, pred_emb=pred_emb,
            )
        records.append(
            MatchDiagnostics(
                det_id=rec.det_id,
                pred_label=rec.det_label.canonical,
                gt_label=rec.gt_label.canonical,
                s_tt=s_tt,
                rank_gt=rank,
                in_top_k=in_top_k,
                is_near_miss=(s_tt >= config.tau and in_top_k),
                delta_it=delta,
            )
        )

    n = len(records)
    if n == 0:
        summary = DiagnosticsSummary(
            n_mismatches=0, near_miss_rate=None, mean_s_tt=None,
            median_rank=None, top_k_rate=None, mean_delta_it=None,
            frac_delta_positive=None, region_coverage=None,
        )
        return records, summary

    deltas = [r.delta_it for r in records if r.delta_it is not None]
    summary = DiagnosticsSummary(
        n_mismatches=n,
        near_miss_rate=sum(r.is_near_miss for r in records) / n,
        mean_s_tt=float(np.mean([r.s_tt for r in records])),
        median_rank=float(np.median([r.rank_gt for r in records])),
        top_k_rate=sum(r.in_top_k for r in records) / n,
        mean_delta_it=float(np.mean(deltas)) if deltas else None,
        frac_delta_positive=(
            sum(d > 0 for d in deltas) / len(deltas) if deltas else None
        ),
        region_coverage=len(deltas) / n,
    )
    return records, summary


def iou_matches_for_diagnostics(
    gt: DatasetAnnotations,
    dets: DetectionSet,
    config: EvalConfig | None = None,
) -> list[MatchRecord]:
    """Class-agnostic greedy matching at the diagnostics IoU threshold.

    Labels are deliberately not used for grouping here: diagnostics analyze
    detections whose box is correct while the label may differ.
    """
    from .metrics import match_detections

    if config is None:
        config = EvalConfig()
    dets_by_image: dict[int, list] = {}
    for det in dets.detections:
        dets_by_image.setdefault(det.image_id, []).append(det)
    gts_by_image: dict[int, list] = {}
    for inst in gt.instances:
        gts_by_image.setdefault(inst.image_id, []).append(inst)
    pooled: list[MatchRecord] = []
    for img in sorted(gt.images.keys()):
        pooled.extend(
            match_detections(
                dets_by_image.get(img, []),
                gts_by_image.get(img, []),
                config.diagnostics_iou,
                config.max_dets_per_image,
            )
        )
    return pooled


def sweep_tau(
    gt: DatasetAnnotations,
    dets: DetectionSet,
    src_emb: EmbeddingTable,
    tgt_emb: EmbeddingTable,
    taus: list[float],
    config: EvalConfig | None = None,
    closed_report: CellReport | None = None,
) -> dict:
    """Full open-label evaluation per tau, plus the closed-label baseline.

    Returns {"rows": [{"tau", "map_5095", "n_retained"}...], "closed": float}.
    """
    if config is None:
        config = EvalConfig()
    if any(b <= a for a, b in zip(taus, taus[1:])) or not taus:
        raise ValueError("taus must be non-empty and strictly increasing")
    if any(not (0.0 < t < 1.0) for t in taus):
        raise ValueError("taus must lie in (0, 1)")

    rows = []
    for tau in taus:
        remapped = open_label_remap(
            dets, src_emb, gt.vocabulary, tgt_emb, tau,
            drop_below_tau=config.drop_below_tau,
        )
        report = evaluate_cell(gt, remapped, config)
        rows.append(
            {
                "tau": tau,
                "map_5095": report.map_5095,
                "n_retained": len(remapped.detections),
            }
        )
    closed_map = closed_report.map_5095 if closed_report is not None else None
    return {"rows": rows, "closed": closed_map}
