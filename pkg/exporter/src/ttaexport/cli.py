"""Command line for the exporter: one job, text and/or image outputs."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backends import load_backend
from .images import export_image_views
from .job import ExportJob, read_class_list
from .text import export_text_bank


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttaexport",
        description="Export TTAP prompt banks and TTAE embedding datasets from a checkpoint",
    )
    parser.add_argument("--checkpoint", required=True,
                        help="hash:<dim> (offline) or hf-clip:<model-id>")
    parser.add_argument("--classes", required=True, help="text file, one class name per line")
    parser.add_argument("--template", help="single prompt template containing {classname}")
    parser.add_argument("--ensemble-file", help="template list file, one per line")
    parser.add_argument("--cupl-dir", help="directory of <class>.txt descriptive prompt lists")
    parser.add_argument("--images", help="image root in <domain>/<class>/<image> layout")
    parser.add_argument("--views", type=int, default=1, help="views per image (view 0 canonical)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-ttap", help="output prompt bank path")
    parser.add_argument("--out-ttae", help="output embedding dataset path")
    parser.add_argument("--manifest", help="sidecar manifest path (default: alongside outputs)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = ExportJob(
            checkpoint=args.checkpoint,
            class_names=read_class_list(args.classes),
            single_template=args.template,
            ensemble_file=Path(args.ensemble_file) if args.ensemble_file else None,
            cupl_dir=Path(args.cupl_dir) if args.cupl_dir else None,
            image_root=Path(args.images) if args.images else None,
            n_views=args.views,
            seed=args.seed,
            out_ttap=Path(args.out_ttap) if args.out_ttap else None,
            out_ttae=Path(args.out_ttae) if args.out_ttae else None,
            manifest_path=Path(args.manifest) if args.manifest else None,
        )
        backend = load_backend(job.checkpoint)
        manifest = {"recipe": job.recipe()}
        if job.out_ttap:
            manifest["text"] = export_text_bank(job, backend)
            print(f"ttap -> {manifest['text']['path']} "
                  f"({manifest['text']['prompts_total']} prompts, dim {manifest['text']['dim']})")
        if job.out_ttae:
            manifest["images"] = export_image_views(job, backend)
            info = manifest["images"]
            print(f"ttae -> {info['path']} ({info['samples']} samples x {info['views']} views, "
                  f"dim {info['dim']}; skipped {len(info['skipped'])})")
        manifest_path = job.manifest_path
        if manifest_path is None:
            base = job.out_ttae or job.out_ttap
            manifest_path = Path(str(base) + ".manifest.json")
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                 encoding="utf-8")
        print(f"manifest -> {manifest_path}")
        return 0
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
