"""Text-side export: prompt templates and per-class prompt lists to a TTAP bank."""

from __future__ import annotations

from pathlib import Path

from .formats import write_ttap
from .job import PLACEHOLDER, ExportJob


def _require_placeholder(template: str) -> None:
    if PLACEHOLDER not in template:
        raise ValueError(f"template is missing the {PLACEHOLDER} placeholder: {template!r}")


def collect_templates(job: ExportJob) -> list[str]:
    templates = []
    if job.single_template:
        templates.append(job.single_template)
    if job.ensemble_file:
        for line in Path(job.ensemble_file).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                templates.append(line)
    for t in templates:
        _require_placeholder(t)
    return templates


def collect_cupl_prompts(job: ExportJob) -> dict[str, list[str]]:
    """One <class>.txt file per class, one descriptive prompt per line."""
    if not job.cupl_dir:
        return {}
    out = {}
    for name in job.class_names:
        path = Path(job.cupl_dir) / f"{name}.txt"
        if not path.exists():
            raise FileNotFoundError(f"cupl prompt file missing for class {name!r}: {path}")
        prompts = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
        prompts = [p for p in prompts if p]
        if not prompts:
            raise ValueError(f"cupl prompt file for class {name!r} is empty")
        out[name] = prompts
    return out


def export_text_bank(job: ExportJob, backend) -> dict:
    """One unit-norm embedding per (class, prompt); returns a summary dict."""
    templates = collect_templates(job)
    cupl = collect_cupl_prompts(job)
    if not templates and not cupl:
        raise ValueError("export_text_bank: no prompt sources configured")

    per_class_prompts = []
    for name in job.class_names:
        prompts = [t.replace(PLACEHOLDER, name) for t in templates]
        prompts += cupl.get(name, [])
        per_class_prompts.append(prompts)

    flat = [p for prompts in per_class_prompts for p in prompts]
    embeddings = backend.embed_texts(flat)
    blocks = []
    cursor = 0
    for prompts in per_class_prompts:
        blocks.append(embeddings[cursor : cursor + len(prompts)])
        cursor += len(prompts)
    write_ttap(job.out_ttap, job.class_names, blocks)
    return {
        "classes": len(job.class_names),
        "prompts_total": len(flat),
        "prompts_per_class": [len(p) for p in per_class_prompts],
        "dim": backend.dim,
        "path": str(job.out_ttap),
    }
