"""Image-side export: folder-per-domain layout to a multi-view TTAE dataset.

View 0 is the canonical preprocessing (resize shorter side, center crop);
views 1..V-1 apply a seeded random-resized-crop plus horizontal-flip recipe.
Unreadable images are skipped with a warning and indices stay contiguous.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .formats import write_ttae
from .job import ExportJob

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


def discover_images(root: Path, class_names: list[str]):
    """(path, domain_index, class_index) triples plus the domain name table."""
    root = Path(root)
    domains = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not domains:
        raise ValueError(f"no domain folders under {root}")
    class_index = {name: i for i, name in enumerate(class_names)}
    entries = []
    for d_idx, domain in enumerate(domains):
        for class_dir in sorted((root / domain).iterdir()):
            if not class_dir.is_dir():
                continue
            if class_dir.name not in class_index:
                raise ValueError(f"unknown class folder {class_dir.name!r} under domain {domain!r}")
            for img in sorted(class_dir.iterdir()):
                if img.suffix.lower() in IMAGE_EXTENSIONS:
                    entries.append((img, d_idx, class_index[class_dir.name]))
    if not entries:
        raise ValueError(f"no images found under {root}")
    return entries, domains


def canonical_view(img: Image.Image, size: int) -> Image.Image:
    w, h = img.size
    scale = size / min(w, h)
    img = img.resize((max(size, round(w * scale)), max(size, round(h * scale))), Image.BILINEAR)
    w, h = img.size
    left, top = (w - size) // 2, (h - size) // 2
    return img.crop((left, top, left + size, top + size))


def augmented_view(img: Image.Image, size: int, rng: np.random.Generator,
                   crop_scale: tuple[float, float], flip_probability: float) -> Image.Image:
    w, h = img.size
    area = w * h
    for _ in range(10):
        target = area * rng.uniform(*crop_scale)
        aspect = rng.uniform(3 / 4, 4 / 3)
        cw = int(round(np.sqrt(target * aspect)))
        ch = int(round(np.sqrt(target / aspect)))
        if cw <= w and ch <= h:
            left = int(rng.integers(0, w - cw + 1))
            top = int(rng.integers(0, h - ch + 1))
            img_c = img.crop((left, top, left + cw, top + ch))
            break
    else:
        img_c = canonical_view(img, size)
    if rng.random() < flip_probability:
        img_c = img_c.transpose(Image.FLIP_LEFT_RIGHT)
    return img_c.resize((size, size), Image.BILINEAR)


def export_image_views(job: ExportJob, backend) -> dict:
    entries, domains = discover_images(job.image_root, job.class_names)
    size = backend.image_size
    blocks, labels, domain_ids, skipped = [], [], [], []
    kept_index = 0
    for path, d_idx, c_idx in entries:
        try:
            with Image.open(path) as raw:
                img = raw.convert("RGB")
        except OSError as exc:
            logger.warning("skipping unreadable image %s (%s)", path, exc)
            skipped.append(str(path))
            continue
        views = [canonical_view(img, size)]
        for v in range(1, job.n_views):
            rng = np.random.default_rng(np.random.SeedSequence([job.seed, kept_index, v]))
            views.append(augmented_view(img, size, rng, job.crop_scale, job.flip_probability))
        blocks.append(backend.embed_images(views))
        labels.append(c_idx)
        domain_ids.append(d_idx)
        kept_index += 1

    if not blocks:
        raise ValueError("export_image_views: every image failed to load")
    data = np.stack(blocks).astype(np.float32)
    write_ttae(job.out_ttae, data, np.asarray(labels, dtype=np.int32),
               np.asarray(domain_ids, dtype=np.int32), job.class_names, domains)
    return {
        "samples": data.shape[0],
        "views": data.shape[1],
        "dim": data.shape[2],
        "domains": domains,
        "skipped": skipped,
        "path": str(job.out_ttae),
    }
