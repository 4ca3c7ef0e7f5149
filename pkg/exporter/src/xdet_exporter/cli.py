"""Console entry points: export-text and export-regions."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .encoders import DEFAULT_MODEL, EncoderError, make_encoder
from .export import (
    ExportError,
    export_label_embeddings,
    export_region_embeddings,
    read_label_file,
)


def _setup_logging():
    level = os.environ.get("XDET_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _run(parser, fn) -> int:
    try:
        return fn()
    except ExportError as exc:
        parser.error(str(exc))  # exits 2
        raise AssertionError("unreachable")
    except EncoderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main_text(argv=None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(
        prog="export-text",
        description="Embed label strings into an embedding table JSON file",
    )
    parser.add_argument("--labels", required=True,
                        help="text file, one raw label per line")
    parser.add_argument("--out", required=True, help="output JSON path")
    parser.add_argument("--model", default=DEFAULT_MODEL,
                        help="encoder id, or hash:<dim> for the offline backend")
    args = parser.parse_args(argv)

    def job():
        labels = read_label_file(args.labels)
        n = export_label_embeddings(labels, make_encoder(args.model), args.out)
        print(f"wrote {n} entries to {args.out}")
        return 0

    return _run(parser, job)


def main_regions(argv=None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(
        prog="export-regions",
        description="Embed the predicted-box crop of each detection",
    )
    parser.add_argument("--images", required=True,
                        help="directory of images named <image_id>.<ext>")
    parser.add_argument("--dets", required=True,
                        help="detections COCO results JSON")
    parser.add_argument("--out", required=True, help="output JSON path")
    parser.add_argument("--model", default=DEFAULT_MODEL,
                        help="encoder id, or hash:<dim> for the offline backend")
    args = parser.parse_args(argv)

    def job():
        sidecar = export_region_embeddings(
            args.images, args.dets, make_encoder(args.model), args.out)
        print(f"wrote {sidecar['n_exported']} region vectors to {args.out} "
              f"({len(sidecar['skipped'])} skipped)")
        return 0

    return _run(parser, job)


if __name__ == "__main__":
    sys.exit(main_text())
