"""Transfer-grid orchestration: run all (source, target) cells and report."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import __version__
from .align import build_shared_map, filter_to_shared, restrict_ground_truth
from .errors import ParseError, UsageError, XdetError
from .ingest import (
    load_detections,
    load_embeddings,
    load_ground_truth,
    load_mapping,
    load_region_embeddings,
)
from .metrics import CellReport, EvalConfig, evaluate_cell
from .model import DatasetAnnotations, EmbeddingTable, SettingType
from .semantic import (
    DiagnosticsSummary,
    diagnose_mismatches,
    iou_matches_for_diagnostics,
    open_label_remap,
)

log = logging.getLogger("xdet.grid")

__all__ = ["GridConfig", "CellResult", "TransferGrid", "run_grid",
           "compute_averages", "render_reports"]

MODES = ("closed", "open", "both")


@dataclass(frozen=True)
class DatasetSpec:
    dataset_id: str
    setting: SettingType
    gt_path: str
    embedding_path: str | None = None


@dataclass(frozen=True)
class CellSpec:
    source_id: str
    target_id: str
    detections_path: str
    mapping_path: str | None = None
    region_embeddings_path: str | None = None


@dataclass(frozen=True)
class GridConfig:
    datasets: tuple[DatasetSpec, ...]
    cells: tuple[CellSpec, ...]
    eval: EvalConfig = field(default_factory=EvalConfig)
    mode: str = "closed"

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got {self.mode!r}")
        ids = [d.dataset_id for d in self.datasets]
        if len(set(ids)) != len(ids):
            raise UsageError("duplicate dataset_id in grid config")
        known = set(ids)
        seen_pairs = set()
        for cell in self.cells:
            if cell.source_id not in known or cell.target_id not in known:
                raise UsageError(
                    f"cell {cell.source_id}->{cell.target_id} references an "
                    f"undeclared dataset"
                )
            pair = (cell.source_id, cell.target_id)
            if pair in seen_pairs:
                raise UsageError(f"duplicate cell for pair {pair}")
            seen_pairs.add(pair)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str = "") -> "GridConfig":
        def resolve(p):
            if p is None:
                return None
            return p if os.path.isabs(p) else os.path.join(base_dir, p)

        try:
            datasets = tuple(
                DatasetSpec(
                    dataset_id=str(d["dataset_id"]),
                    setting=SettingType(str(d.get("setting", "agnostic")).lower()),
                    gt_path=resolve(d["gt_path"]),
                    embedding_path=resolve(d.get("embedding_path")),
                )
                for d in doc["datasets"]
            )
            cells = tuple(
                CellSpec(
                    source_id=str(c["source_id"]),
                    target_id=str(c["target_id"]),
                    detections_path=resolve(c["detections_path"]),
                    mapping_path=resolve(c.get("mapping_path")),
                    region_embeddings_path=resolve(c.get("region_embeddings_path")),
                )
                for c in doc["cells"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad grid config: {exc}") from exc
        eval_cfg = EvalConfig(**doc.get("eval", {}))
        return cls(datasets=datasets, cells=cells, eval=eval_cfg,
                   mode=str(doc.get("mode", "closed")))

    @classmethod
    def from_json_file(cls, path) -> "GridConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: malformed JSON ({exc})") from exc
        return cls.from_dict(doc, base_dir=os.path.dirname(os.path.abspath(path)))


@dataclass(frozen=True)
class CellResult:
    source_id: str
    target_id: str
    status: str  # "ok" or "error"
    error: str | None = None
    closed: CellReport | None = None
    open: CellReport | None = None
    diagnostics: DiagnosticsSummary | None = None
    delta: float | None = None

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "target_id": self.target_id,
            "status": self.status,
            "error": self.error,
            "closed": self.closed.to_dict() if self.closed else None,
            "open": self.open.to_dict() if self.open else None,
            "diagnostics": self.diagnostics.to_dict() if self.diagnostics else None,
            "delta": self.delta,
        }


@dataclass(frozen=True)
class TransferGrid:
    mode: str
    dataset_ids: tuple[str, ...]
    cells: dict[tuple[str, str], CellResult]
    row_avgs: dict[str, dict[str, float | None]]  # mode -> target_id -> avg
    col_avgs: dict[str, dict[str, float | None]]  # mode -> source_id -> avg
    eval_config: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "dataset_ids": list(self.dataset_ids),
            "cells": {
                f"{s}->{t}": res.to_dict()
                for (s, t), res in sorted(self.cells.items())
            },
            "row_avgs": self.row_avgs,
            "col_avgs": self.col_avgs,
            "eval_config": self.eval_config.to_dict(),
        }


def compute_averages(values: dict[tuple[str, str], float | None]):
    """Row (per target) and column (per source) arithmetic means over defined
    cell values, diagonal included."""
    rows: dict[str, list[float]] = {}
    cols: dict[str, list[float]] = {}
    for (src, tgt), v in values.items():
        rows.setdefault(tgt, [])
        cols.setdefault(src, [])
        if v is not None:
            rows[tgt].append(v)
            cols[src].append(v)
    row_avgs = {t: (sum(vs) / len(vs) if vs else None) for t, vs in rows.items()}
    col_avgs = {s: (sum(vs) / len(vs) if vs else None) for s, vs in cols.items()}
    return row_avgs, col_avgs


def _evaluate_one_cell(
    spec: CellSpec,
    source_gt: DatasetAnnotations,
    target_gt: DatasetAnnotations,
    src_emb: EmbeddingTable | None,
    tgt_emb: EmbeddingTable | None,
    mode: str,
    eval_cfg: EvalConfig,
) -> CellResult:
    dets = load_detections(
        spec.detections_path, target_gt, source_dataset_id=spec.source_id
    )
    mapping = load_mapping(spec.mapping_path) if spec.mapping_path else None
    region_emb = (
        load_region_embeddings(spec.region_embeddings_path)
        if spec.region_embeddings_path
        else None
    )

    closed = opened = diag = delta = None
    if mode in ("closed", "both"):
        shared = build_shared_map(
            source_gt.vocabulary, target_gt.vocabulary, mapping
        )
        closed = evaluate_cell(
            restrict_ground_truth(target_gt, shared, eval_cfg.restrict_gt_mode),
            filter_to_shared(dets, shared),
            eval_cfg,
        )
    if mode in ("open", "both"):
        if spec.source_id == spec.target_id:
            # diagonal cells never remap
            opened = evaluate_cell(target_gt, dets, eval_cfg)
        else:
            if src_emb is None or tgt_emb is None:
                raise UsageError(
                    f"open mode requires embedding tables for "
                    f"{spec.source_id!r} and {spec.target_id!r}"
                )
            remapped = open_label_remap(
                dets, src_emb, target_gt.vocabulary, tgt_emb,
                eval_cfg.tau, drop_below_tau=eval_cfg.drop_below_tau,
            )
            opened = evaluate_cell(target_gt, remapped, eval_cfg)
        if src_emb is not None and tgt_emb is not None:
            matches = iou_matches_for_diagnostics(target_gt, dets, eval_cfg)
            _, diag = diagnose_mismatches(
                matches, target_gt.vocabulary, tgt_emb,
                region_emb=region_emb, config=eval_cfg, pred_emb=src_emb,
            )
    if (
        closed is not None and opened is not None
        and closed.map_5095 is not None and opened.map_5095 is not None
    ):
        delta = opened.map_5095 - closed.map_5095
    return CellResult(
        source_id=spec.source_id,
        target_id=spec.target_id,
        status="ok",
        closed=closed,
        open=opened,
        diagnostics=diag,
        delta=delta,
    )


def run_grid(config: GridConfig, threads: int | None = None) -> TransferGrid:
    """Evaluate every configured cell and assemble the transfer grid.

    Per-cell failures are recorded in the result without aborting the run.
    Results are independent of thread count and cell order.
    """
    gts: dict[str, DatasetAnnotations] = {}
    embs: dict[str, EmbeddingTable | None] = {}
    for ds in config.datasets:
        gts[ds.dataset_id] = load_ground_truth(
            ds.gt_path, dataset_id=ds.dataset_id, setting=ds.setting
        )
        embs[ds.dataset_id] = (
            load_embeddings(ds.embedding_path) if ds.embedding_path else None
        )

    def work(spec: CellSpec) -> CellResult:
        try:
            return _evaluate_one_cell(
                spec,
                gts[spec.source_id],
                gts[spec.target_id],
                embs[spec.source_id],
                embs[spec.target_id],
                config.mode,
                config.eval,
            )
        except XdetError as exc:
            log.error("cell %s->%s failed: %s", spec.source_id, spec.target_id, exc)
            return CellResult(
                source_id=spec.source_id, target_id=spec.target_id,
                status="error", error=str(exc),
            )

    if threads is None:
        threads = os.cpu_count() or 1
    if threads > 1 and len(config.cells) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, config.cells))
    else:
        results = [work(spec) for spec in config.cells]

    cells = {(r.source_id, r.target_id): r for r in results}
    row_avgs: dict[str, dict] = {}
    col_avgs: dict[str, dict] = {}
    for mode_key in ("closed", "open"):
        values = {
            pair: getattr(res, mode_key).map_5095
            if getattr(res, mode_key) is not None
            else None
            for pair, res in cells.items()
        }
        if any(v is not None for v in values.values()):
            r, c = compute_averages(values)
            row_avgs[mode_key], col_avgs[mode_key] = r, c
    return TransferGrid(
        mode=config.mode,
        dataset_ids=tuple(d.dataset_id for d in config.datasets),
        cells=cells,
        row_avgs=row_avgs,
        col_avgs=col_avgs,
        eval_config=config.eval,
    )


def _fmt(v, nd=3) -> str:
    return "n/a" if v is None else f"{v:.{nd}f}"


def render_markdown(grid: TransferGrid, mode_key: str) -> str:
    """Markdown transfer table: tests as rows, trains as columns, Avg row and
    column; open-mode cells annotated with their delta over closed."""
    ids = list(grid.dataset_ids)
    lines = [
        "| Test \\ Train | " + " | ".join(ids) + " | Avg. |",
        "|" + "---|" * (len(ids) + 2),
    ]
    for tgt in ids:
        row = [tgt]
        for src in ids:
            res = grid.cells.get((src, tgt))
            report = getattr(res, mode_key, None) if res else None
            if res is None or res.status != "ok" or report is None:
                row.append("n/a")
                continue
            cell = _fmt(report.map_5095)
            if mode_key == "open" and res.delta is not None and src != tgt:
                cell += f" ({res.delta:+.3f})"
            row.append(cell)
        row.append(_fmt(grid.row_avgs.get(mode_key, {}).get(tgt)))
        lines.append("| " + " | ".join(row) + " |")
    avg_row = ["**Avg.**"]
    for src in ids:
        avg_row.append(_fmt(grid.col_avgs.get(mode_key, {}).get(src)))
    avg_row.append("--")
    lines.append("| " + " | ".join(avg_row) + " |")
    return "\n".join(lines) + "\n"


def render_csv(grid: TransferGrid) -> str:
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["source", "target", "status", "closed_map", "open_map",
                     "delta"])
    for (src, tgt), res in sorted(grid.cells.items()):
        writer.writerow([
            src, tgt, res.status,
            "" if res.closed is None or res.closed.map_5095 is None
            else repr(res.closed.map_5095),
            "" if res.open is None or res.open.map_5095 is None
            else repr(res.open.map_5095),
            "" if res.delta is None else repr(res.delta),
        ])
    return buf.getvalue()


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def render_reports(
    grid: TransferGrid,
    formats: set[str],
    out_dir: str,
    config_doc: dict | None = None,
) -> list[str]:
    """Write the grid report files plus a run manifest; byte-stable given
    identical inputs. Returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def emit(name, text):
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(path)

    if "json" in formats:
        emit("report.json", canonical_json(grid.to_dict()))
    if "csv" in formats:
        emit("report.csv", render_csv(grid))
    if "markdown" in formats:
        if grid.mode in ("closed", "both"):
            emit("report_closed.md", render_markdown(grid, "closed"))
        if grid.mode in ("open", "both"):
            emit("report_open.md", render_markdown(grid, "open"))

    config_text = canonical_json(config_doc if config_doc is not None else {})
    manifest = {
        "tool_version": __version__,
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "mode": grid.mode,
        "cells": {
            f"{s}->{t}": {"status": res.status, "error": res.error}
            for (s, t), res in sorted(grid.cells.items())
        },
    }
    emit("manifest.json", canonical_json(manifest))
    return written
