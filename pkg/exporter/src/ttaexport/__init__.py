"""Offline exporter producing TTAP prompt banks and TTAE embedding datasets."""

from .backends import HashEmbedder, load_backend
from .images import export_image_views
from .job import ExportJob, read_class_list
from .text import export_text_bank

__all__ = [
    "ExportJob",
    "HashEmbedder",
    "export_image_views",
    "export_text_bank",
    "load_backend",
    "read_class_list",
]
