"""Core data model: labels, vocabularies, annotations, detections, embeddings."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmbeddingError, InvalidLabel, RangeError, VocabularyError


def normalize_label(raw: str) -> "Label":
    """Normalize a raw label string: lowercase, trim, collapse whitespace runs."""
    canonical = " ".join(raw.lower().split())
    if not canonical:
        raise InvalidLabel(f"label {raw!r} is empty after normalization")
    return Label(raw=raw, canonical=canonical)


@dataclass(frozen=True)
class Label:
    """A label with its original spelling and canonical (normalized) form.

    Two labels compare equal iff their canonical forms are equal.
    """

    raw: str
    canonical: str

    def __eq__(self, other):
        if not isinstance(other, Label):
            return NotImplemented
        return self.canonical == other.canonical

    def __hash__(self):
        return hash(self.canonical)

    def __lt__(self, other: "Label"):
        return self.canonical < other.canonical


class SettingType(enum.Enum):
    SPECIFIC = "specific"
    AGNOSTIC = "agnostic"


@dataclass(frozen=True)
class Vocabulary:
    """Ordered label set of one dataset; iteration is sorted by canonical form."""

    dataset_id: str
    labels: tuple[Label, ...]
    setting: SettingType = SettingType.AGNOSTIC

    def __post_init__(self):
        canons = [l.canonical for l in self.labels]
        if len(set(canons)) != len(canons):
            dupes = sorted({c for c in canons if canons.count(c) > 1})
            raise VocabularyError(
                f"duplicate canonical labels in {self.dataset_id!r}: {dupes}"
            )
        object.__setattr__(self, "labels", tuple(sorted(self.labels)))

    def __contains__(self, label: Label) -> bool:
        return label.canonical in self.canonical_set

    def __iter__(self):
        return iter(self.labels)

    def __len__(self):
        return len(self.labels)

    @property
    def canonical_set(self) -> frozenset[str]:
        return frozenset(l.canonical for l in self.labels)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, top-left origin, [x, y, w, h] in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise RangeError(f"non-finite box coordinates {vals}")
        if self.w <= 0 or self.h <= 0:
            raise RangeError(f"degenerate box with w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2) corner form."""
        return (self.x, self.y, self.x + self.w, self.y + self.h)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class GroundTruthInstance:
    gt_id: int
    image_id: int
    label: Label
    box: BoundingBox
    area: float
    ignore: bool = False


@dataclass(frozen=True)
class Detection:
    det_id: int
    image_id: int
    label: Label
    box: BoundingBox
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score) or not (0.0 <= self.score <= 1.0):
            raise RangeError(
                f"detection {self.det_id}: score {self.score} outside [0, 1]"
            )


@dataclass(frozen=True)
class ImageInfo:
    image_id: int
    width: int
    height: int


@dataclass(frozen=True)
class LoadReport:
    """Counts gathered while loading a ground-truth file."""

    n_images: int = 0
    n_instances: int = 0
    n_categories: int = 0
    dropped_degenerate: int = 0


@dataclass(frozen=True)
class DatasetAnnotations:
    """Ground truth for one dataset: images, instances, and vocabulary."""

    vocabulary: Vocabulary
    images: dict[int, ImageInfo]
    instances: tuple[GroundTruthInstance, ...]
    category_ids: dict[int, Label] = field(default_factory=dict)
    load_report: LoadReport | None = None

    def __post_init__(self):
        seen = set()
        for inst in self.instances:
            if inst.gt_id in seen:
                raise RangeError(f"duplicate gt_id {inst.gt_id}")
            seen.add(inst.gt_id)
            if inst.image_id not in self.images:
                raise RangeError(
                    f"gt {inst.gt_id} references unknown image {inst.image_id}"
                )

    @property
    def dataset_id(self) -> str:
        return self.vocabulary.dataset_id


@dataclass(frozen=True)
class DetectionSet:
    """One detector's predictions over a target dataset."""

    source_dataset_id: str
    target_dataset_id: str
    detections: tuple[Detection, ...]


def _as_unit_rows(entries: dict, dim: int, what: str) -> dict:
    out = {}
    for key, vec in entries.items():
        arr = np.asarray(vec, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] != dim:
            raise EmbeddingError(
                f"{what} entry {key!r}: expected dim {dim}, got shape {arr.shape}"
            )
        norm = float(np.linalg.norm(arr))
        if norm == 0.0 or not math.isfinite(norm):
            raise EmbeddingError(f"{what} entry {key!r}: zero or non-finite vector")
        out[key] = arr / norm
    return out


@dataclass(frozen=True)
class EmbeddingTable:
    """Unit-norm text embeddings keyed by canonical label."""

    model_id: str
    dim: int
    entries: dict[str, np.ndarray]
    prenorms: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "entries", _as_unit_rows(self.entries, self.dim, "embedding")
        )

    def vector(self, label: Label) -> np.ndarray:
        try:
            return self.entries[label.canonical]
        except KeyError:
            raise EmbeddingError(
                f"no embedding for label {label.canonical!r} in table "
                f"{self.model_id!r}"
            ) from None

    def __contains__(self, label: Label) -> bool:
        return label.canonical in self.entries


@dataclass(frozen=True)
class RegionEmbeddings:
    """Unit-norm image embeddings of predicted region crops, keyed by det_id."""

    model_id: str
    dim: int
    entries: dict[int, np.ndarray]
    prenorms: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "entries", _as_unit_rows(self.entries, self.dim, "region embedding")
        )

    def get(self, det_id: int) -> np.ndarray | None:
        return self.entries.get(det_id)


@dataclass(frozen=True)
class LabelMapping:
    """Explicit one-to-one (source canonical, target canonical) pairs."""

    pairs: tuple[tuple[str, str], ...]

    def __post_init__(self):
        from .errors import MappingError

        sources = [s for s, _ in self.pairs]
        targets = [t for _, t in self.pairs]
        if len(set(sources)) != len(sources) or len(set(targets)) != len(targets):
            raise MappingError("explicit mapping is not one-to-one")
