"""Cross-dataset object detection evaluation harness."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    EmbeddingError,
    InvalidLabel,
    MappingError,
    ParseError,
    RangeError,
    ReferentialError,
    UsageError,
    VocabularyError,
    XdetError,
)
from .model import (  # noqa: F401
    BoundingBox,
    DatasetAnnotations,
    Detection,
    DetectionSet,
    EmbeddingTable,
    GroundTruthInstance,
    Label,
    LabelMapping,
    RegionEmbeddings,
    SettingType,
    Vocabulary,
    normalize_label,
)
from .metrics import CellReport, EvalConfig, evaluate_cell, iou  # noqa: F401
