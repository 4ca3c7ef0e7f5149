"""Closed-label alignment: shared vocabulary construction and filtering.

The shared set is the one-to-one intersection of source and target labels,
optionally extended by an explicit mapping file. No semantic merging happens
here; anything fuzzier belongs to the open-label path.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import MappingError, ReferentialError
from .model import (
    DatasetAnnotations,
    DetectionSet,
    GroundTruthInstance,
    Label,
    LabelMapping,
    Vocabulary,
)

__all__ = ["SharedLabelMap", "build_shared_map", "filter_to_shared",
           "restrict_ground_truth"]


@dataclass(frozen=True)
class SharedLabelMap:
    """Bijective source-label -> target-label map for one (source, target) pair."""

    pairs: dict[Label, Label]

    def __post_init__(self):
        targets = list(self.pairs.values())
        if len(set(targets)) != len(targets):
            raise MappingError("shared label map is not bijective")

    @property
    def shared_size(self) -> int:
        return len(self.pairs)

    @property
    def target_side(self) -> frozenset[str]:
        return frozenset(l.canonical for l in self.pairs.values())

    def to_list(self) -> list[dict]:
        return sorted(
            ({"source": s.canonical, "target": t.canonical}
             for s, t in self.pairs.items()),
            key=lambda rec: (rec["source"], rec["target"]),
        )


def build_shared_map(
    src: Vocabulary,
    tgt: Vocabulary,
    explicit: LabelMapping | None = None,
) -> SharedLabelMap:
    """Build the closed-label shared map for a (source, target) pair.

    Explicit pairs are applied first and override string-equality pairs;
    canonical-equal labels not covered by an explicit pair map to themselves.
    """
    src_by_canon = {l.canonical: l for l in src}
    tgt_by_canon = {l.canonical: l for l in tgt}
    pairs: dict[Label, Label] = {}
    used_targets: set[str] = set()

    if explicit is not None:
        for s_canon, t_canon in explicit.pairs:
            if s_canon not in src_by_canon:
                raise ReferentialError(
                    f"explicit mapping source {s_canon!r} not in vocabulary "
                    f"{src.dataset_id!r}"
                )
            if t_canon not in tgt_by_canon:
                raise ReferentialError(
                    f"explicit mapping target {t_canon!r} not in vocabulary "
                    f"{tgt.dataset_id!r}"
                )
            s_label = src_by_canon[s_canon]
            if s_label in pairs or t_canon in used_targets:
                raise MappingError(
                    f"explicit mapping reuses {s_canon!r} or {t_canon!r}"
                )
            pairs[s_label] = tgt_by_canon[t_canon]
            used_targets.add(t_canon)

    for canon in sorted(src_by_canon.keys() & tgt_by_canon.keys()):
        s_label = src_by_canon[canon]
        if s_label in pairs or canon in used_targets:
            continue
        pairs[s_label] = tgt_by_canon[canon]
        used_targets.add(canon)

    return SharedLabelMap(pairs=pairs)


def filter_to_shared(dets: DetectionSet, shared: SharedLabelMap) -> DetectionSet:
    """Keep only detections whose label is in the shared map, rewritten to the
    target side. Boxes, scores, det_ids, and relative order are unchanged."""
    from dataclasses import replace

    kept = []
    for det in dets.detections:
        target_label = shared.pairs.get(det.label)
        if target_label is None:
            continue
        kept.append(replace(det, label=target_label))
    return DetectionSet(
        source_dataset_id=dets.source_dataset_id,
        target_dataset_id=dets.target_dataset_id,
        detections=tuple(kept),
    )


def restrict_ground_truth(
    gt: DatasetAnnotations,
    shared: SharedLabelMap,
    mode: str = "ignore",
) -> DatasetAnnotations:
    """Restrict scoring to the shared target labels.

    mode="ignore" (default) marks off-intersection instances ignore=True so
    detections overlapping them are neither rewarded nor penalized;
    mode="delete" removes them outright (exposed for sensitivity analysis).
    """
    from dataclasses import replace

    if mode not in ("ignore", "delete"):
        raise ValueError(f"unknown restrict mode {mode!r}")
    target_side = shared.target_side
    kept_labels = tuple(l for l in gt.vocabulary if l.canonical in target_side)
    vocab = Vocabulary(
        dataset_id=gt.vocabulary.dataset_id,
        labels=kept_labels,
        setting=gt.vocabulary.setting,
    )
    instances: list[GroundTruthInstance] = []
    for inst in gt.instances:
        if inst.label.canonical in target_side:
            instances.append(inst)
        elif mode == "ignore":
            instances.append(replace(inst, ignore=True))
    return DatasetAnnotations(
        vocabulary=vocab,
        images=gt.images,
        instances=tuple(instances),
        category_ids=gt.category_ids,
        load_report=gt.load_report,
    )
