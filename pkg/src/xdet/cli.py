"""Command-line surface: eval, grid, diagnose, sweep-tau, validate."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .align import build_shared_map, filter_to_shared, restrict_ground_truth
from .errors import UsageError, XdetError
from .grid import GridConfig, canonical_json, render_reports, run_grid
from .ingest import (
    load_detections,
    load_embeddings,
    load_ground_truth,
    load_mapping,
    load_region_embeddings,
)
from .metrics import EvalConfig, evaluate_cell
from .model import Vocabulary
from .semantic import (
    diagnose_mismatches,
    iou_matches_for_diagnostics,
    open_label_remap,
    sweep_tau,
)


def _setup_logging():
    level = os.environ.get("XDET_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _eval_config(args) -> EvalConfig:
    kwargs = {}
    if getattr(args, "tau", None) is not None:
        kwargs["tau"] = args.tau
    if getattr(args, "top_k", None) is not None:
        kwargs["top_k"] = args.top_k
    if getattr(args, "iou_diagnostics", None) is not None:
        kwargs["diagnostics_iou"] = args.iou_diagnostics
    return EvalConfig(**kwargs)


def _write_out(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _source_vocab(args, dets):
    if getattr(args, "src_gt", None):
        return load_ground_truth(args.src_gt).vocabulary
    labels = tuple({d.label for d in dets.detections})
    return Vocabulary(dataset_id="detections", labels=labels)


def _add_pair_flags(p, need_dets=True):
    p.add_argument("--gt", required=True, help="target ground-truth COCO JSON")
    if need_dets:
        p.add_argument("--dets", required=True, help="detections COCO results JSON")
    p.add_argument("--src-gt", help="source ground-truth JSON (source vocabulary)")
    p.add_argument("--map", dest="mapping", help="explicit label mapping JSON")
    p.add_argument("--src-emb", help="source text-embedding table JSON")
    p.add_argument("--tgt-emb", help="target text-embedding table JSON")
    p.add_argument("--region-emb", help="region embeddings JSON")
    p.add_argument("--tau", type=float, help="semantic threshold (default 0.6)")
    p.add_argument("--top-k", type=int, help="near-miss rank cutoff (default 5)")
    p.add_argument("--iou-diagnostics", type=float,
                   help="IoU threshold for diagnostics matching (default 0.50)")
    p.add_argument("--out", help="output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xdet",
        description="Cross-dataset object detection evaluation harness",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="evaluate one (source, target) cell")
    _add_pair_flags(p_eval)
    p_eval.add_argument("--mode", choices=("closed", "open", "both"),
                        default="closed")
    p_eval.add_argument("--threads", type=int, default=None)

    p_grid = sub.add_parser("grid", help="run a full transfer grid")
    p_grid.add_argument("--config", required=True, help="grid config JSON")
    p_grid.add_argument("--out", required=True, help="run output directory")
    p_grid.add_argument("--format", default="json,csv,markdown",
                        help="comma-separated: json,csv,markdown")
    p_grid.add_argument("--threads", type=int, default=None)

    p_diag = sub.add_parser("diagnose", help="semantic near-miss diagnostics")
    _add_pair_flags(p_diag)

    p_sweep = sub.add_parser("sweep-tau", help="open-label tau sensitivity sweep")
    _add_pair_flags(p_sweep)
    p_sweep.add_argument("--taus", default="0.5,0.6,0.7",
                         help="comma-separated increasing taus")

    p_val = sub.add_parser("validate", help="validate input files")
    p_val.add_argument("--gt", help="ground-truth COCO JSON")
    p_val.add_argument("--dets", help="detections JSON (requires --gt)")
    p_val.add_argument("--src-gt", help="source ground truth (resolves shared map)")
    p_val.add_argument("--map", dest="mapping", help="explicit label mapping JSON")
    p_val.add_argument("--emb", help="text-embedding table JSON")
    p_val.add_argument("--region-emb", help="region embeddings JSON")
    return parser


def _require(parser, args, names):
    for name in names:
        if getattr(args, name.lstrip("-").replace("-", "_"), None) is None:
            parser.error(f"the following argument is required: {name}")


def cmd_eval(parser, args) -> int:
    config = _eval_config(args)
    gt = load_ground_truth(args.gt)
    dets = load_detections(args.dets, gt)
    mapping = load_mapping(args.mapping) if args.mapping else None
    result = {"eval_config": config.to_dict(), "mode": args.mode}

    closed = opened = None
    if args.mode in ("closed", "both"):
        shared = build_shared_map(_source_vocab(args, dets), gt.vocabulary, mapping)
        closed = evaluate_cell(
            restrict_ground_truth(gt, shared, config.restrict_gt_mode),
            filter_to_shared(dets, shared),
            config,
        )
        result["closed"] = closed.to_dict()
    if args.mode in ("open", "both"):
        if args.src_emb is None:
            parser.error("--mode open requires --src-emb")
        if args.tgt_emb is None:
            parser.error("--mode open requires --tgt-emb")
        src_emb = load_embeddings(args.src_emb)
        tgt_emb = load_embeddings(args.tgt_emb)
        remapped = open_label_remap(
            dets, src_emb, gt.vocabulary, tgt_emb, config.tau,
            drop_below_tau=config.drop_below_tau,
        )
        opened = evaluate_cell(gt, remapped, config)
        result["open"] = opened.to_dict()
    if closed and opened and closed.map_5095 is not None \
            and opened.map_5095 is not None:
        result["delta"] = opened.map_5095 - closed.map_5095
    _write_out(canonical_json(result), args.out)
    return 0


def cmd_grid(parser, args) -> int:
    config = GridConfig.from_json_file(args.config)
    with open(args.config, "r", encoding="utf-8") as fh:
        config_doc = json.load(fh)
    formats = {f.strip() for f in args.format.split(",") if f.strip()}
    unknown = formats - {"json", "csv", "markdown"}
    if unknown:
        parser.error(f"unknown format(s): {sorted(unknown)}")
    grid = run_grid(config, threads=args.threads)
    written = render_reports(grid, formats, args.out, config_doc=config_doc)
    for path in written:
        print(path)
    return 0


def cmd_diagnose(parser, args) -> int:
    _require(parser, args, ["--src-emb", "--tgt-emb"])
    config = _eval_config(args)
    gt = load_ground_truth(args.gt)
    dets = load_detections(args.dets, gt)
    src_emb = load_embeddings(args.src_emb)
    tgt_emb = load_embeddings(args.tgt_emb)
    region_emb = load_region_embeddings(args.region_emb) if args.region_emb else None
    matches = iou_matches_for_diagnostics(gt, dets, config)
    records, summary = diagnose_mismatches(
        matches, gt.vocabulary, tgt_emb,
        region_emb=region_emb, config=config, pred_emb=src_emb,
    )
    lines = [json.dumps(rec.to_dict(), sort_keys=True) for rec in records]
    _write_out("\n".join(lines) + ("\n" if lines else ""), args.out)

    def fmt(v, spec="{:.3f}"):
        return "n/a" if v is None else spec.format(v)

    s = summary
    print("mismatches | near-miss | E[s_tt] | med. rank | top-k | "
          "E[delta_it] | %(delta_it>0) | coverage", file=sys.stderr)
    print(" | ".join([
        str(s.n_mismatches),
        fmt(s.near_miss_rate), fmt(s.mean_s_tt), fmt(s.median_rank, "{:.1f}"),
        fmt(s.top_k_rate), fmt(s.mean_delta_it, "{:+.4f}"),
        fmt(s.frac_delta_positive), fmt(s.region_coverage),
    ]), file=sys.stderr)
    return 0


def cmd_sweep_tau(parser, args) -> int:
    _require(parser, args, ["--src-emb", "--tgt-emb"])
    config = _eval_config(args)
    try:
        taus = [float(t) for t in args.taus.split(",") if t.strip()]
    except ValueError:
        parser.error(f"--taus must be comma-separated floats, got {args.taus!r}")
    gt = load_ground_truth(args.gt)
    dets = load_detections(args.dets, gt)
    src_emb = load_embeddings(args.src_emb)
    tgt_emb = load_embeddings(args.tgt_emb)
    mapping = load_mapping(args.mapping) if args.mapping else None
    src_vocab = _source_vocab(args, dets)
    shared = build_shared_map(src_vocab, gt.vocabulary, mapping)
    closed = evaluate_cell(
        restrict_ground_truth(gt, shared, config.restrict_gt_mode),
        filter_to_shared(dets, shared),
        config,
    )
    result = sweep_tau(gt, dets, src_emb, tgt_emb, taus, config,
                       closed_report=closed)

    pair = f"{src_vocab.dataset_id}->{gt.dataset_id}"
    header = ["pair"] + [f"tau={row['tau']:g}" for row in result["rows"]] + ["closed"]
    cells = [pair] + [
        "" if row["map_5095"] is None else f"{row['map_5095']:.3f}"
        for row in result["rows"]
    ] + ["" if result["closed"] is None else f"{result['closed']:.3f}"]
    _write_out(",".join(header) + "\n" + ",".join(cells) + "\n", args.out)
    return 0


def cmd_validate(parser, args) -> int:
    if not any([args.gt, args.mapping, args.emb, args.region_emb]):
        parser.error("validate requires at least one of --gt/--map/--emb/--region-emb")
    if args.dets and not args.gt:
        parser.error("--dets requires --gt")
    gt = None
    if args.gt:
        gt = load_ground_truth(args.gt)
        rep = gt.load_report
        print(f"gt ok: {rep.n_images} images, {rep.n_instances} instances, "
              f"{rep.n_categories} categories, "
              f"{rep.dropped_degenerate} degenerate boxes dropped")
    if args.dets:
        dets = load_detections(args.dets, gt)
        print(f"dets ok: {len(dets.detections)} detections")
        if args.src_gt or args.mapping or gt is not None:
            mapping = load_mapping(args.mapping) if args.mapping else None
            shared = build_shared_map(_source_vocab(args, dets), gt.vocabulary,
                                      mapping)
            print(f"shared map ({shared.shared_size} pairs):")
            for rec in shared.to_list():
                print(f"  {rec['source']} -> {rec['target']}")
    elif args.mapping:
        mapping = load_mapping(args.mapping)
        print(f"mapping ok: {len(mapping.pairs)} pairs")
    if args.emb:
        table = load_embeddings(args.emb)
        print(f"embeddings ok: {len(table.entries)} entries, dim {table.dim}, "
              f"model {table.model_id}")
    if args.region_emb:
        table = load_region_embeddings(args.region_emb)
        print(f"region embeddings ok: {len(table.entries)} entries, "
              f"dim {table.dim}, model {table.model_id}")
    return 0


COMMANDS = {
    "eval": cmd_eval,
    "grid": cmd_grid,
    "diagnose": cmd_diagnose,
    "sweep-tau": cmd_sweep_tau,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](parser, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except XdetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
