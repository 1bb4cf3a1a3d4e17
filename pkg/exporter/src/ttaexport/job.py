"""Export job description and validation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

PLACEHOLDER = "{classname}"


@dataclass
class ExportJob:
    """Everything one export needs; text and image sides are each optional.

    Prompt sources (any combination, merged per class in this order):
      single_template: one template string containing {classname}
      ensemble_file:   text file, one template per line, each with {classname}
      cupl_dir:        directory of <class>.txt files, one descriptive prompt per line
    Images live in a <root>/<domain>/<class>/<image> folder layout.
    """

    checkpoint: str
    class_names: list[str]
    single_template: str | None = None
    ensemble_file: Path | None = None
    cupl_dir: Path | None = None
    image_root: Path | None = None
    n_views: int = 1
    seed: int = 0
    crop_scale: tuple[float, float] = (0.5, 1.0)
    flip_probability: float = 0.5
    out_ttap: Path | None = None
    out_ttae: Path | None = None
    manifest_path: Path | None = None

    def __post_init__(self):
        if not self.class_names:
            raise ValueError("ExportJob: class list is empty")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError("ExportJob: duplicate class names")
        if self.n_views < 1:
            raise ValueError("ExportJob: n_views must be >= 1")
        wants_text = self.single_template or self.ensemble_file or self.cupl_dir
        if wants_text and not self.out_ttap:
            raise ValueError("ExportJob: text sources given but out_ttap missing")
        if self.image_root and not self.out_ttae:
            raise ValueError("ExportJob: image root given but out_ttae missing")
        if not wants_text and not self.image_root:
            raise ValueError("ExportJob: nothing to export")

    def recipe(self) -> dict:
        return {
            "checkpoint": self.checkpoint,
            "n_views": self.n_views,
            "seed": self.seed,
            "crop_scale": list(self.crop_scale),
            "flip_probability": self.flip_probability,
            "class_names": list(self.class_names),
        }


def read_class_list(path) -> list[str]:
    lines = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines()]
    return [line for line in lines if line and not line.startswith("#")]
