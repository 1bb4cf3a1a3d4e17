"""Embedding backends.

A backend maps text strings and preprocessed images to unit-norm vectors in a
shared space. Checkpoint identifiers select the backend:

  hash:<dim>          deterministic offline embedder (testing, CI, dry runs)
  hf-clip:<model-id>  CLIP-family checkpoint via transformers (needs torch)
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


class HashEmbedder:
    """Deterministic content-addressed embeddings; no model weights needed.

    Text maps through its UTF-8 bytes, images through their preprocessed pixel
    bytes, so distinct inputs get independent unit vectors and re-exports are
    byte-identical.
    """

    image_size = 64

    def __init__(self, dim: int = 32):
        if dim < 2:
            raise ValueError("hash backend: dim must be >= 2")
        self.dim = dim

    def _vector(self, blob: bytes) -> np.ndarray:
        digest = hashlib.sha256(blob).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        return rng.normal(size=self.dim)

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        return _unit(np.stack([self._vector(t.encode("utf-8")) for t in texts]))

    def embed_images(self, images: list[Image.Image]) -> np.ndarray:
        vecs = []
        for img in images:
            arr = np.asarray(img, dtype=np.uint8)
            vecs.append(self._vector(arr.tobytes() + str(arr.shape).encode()))
        return _unit(np.stack(vecs))


class HFClipEmbedder:
    """CLIP-family checkpoint through the transformers API.

    Imports lazily so the exporter works without torch installed. Outputs are
    unit-normalized on the way out regardless of the checkpoint's convention.
    """

    image_size = 224

    def __init__(self, model_id: str, device: str = "cpu", batch_size: int = 64):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise RuntimeError(
                "hf-clip backend needs the optional dependencies: pip install 'ttaexport[clip]'"
            ) from exc
        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_id).to(device).eval()
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.device = device
        self.batch_size = batch_size
        self.dim = int(self.model.config.projection_dim)

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        torch = self._torch
        out = []
        with torch.no_grad():
            for lo in range(0, len(texts), self.batch_size):
                chunk = texts[lo : lo + self.batch_size]
                tokens = self.processor(text=chunk, return_tensors="pt", padding=True,
                                        truncation=True).to(self.device)
                feats = self.model.get_text_features(**tokens)
                out.append(feats.cpu().numpy().astype(np.float64))
        return _unit(np.concatenate(out))

    def embed_images(self, images: list[Image.Image]) -> np.ndarray:
        torch = self._torch
        out = []
        with torch.no_grad():
            for lo in range(0, len(images), self.batch_size):
                chunk = images[lo : lo + self.batch_size]
                pixels = self.processor(images=chunk, return_tensors="pt").to(self.device)
                feats = self.model.get_image_features(**pixels)
                out.append(feats.cpu().numpy().astype(np.float64))
        return _unit(np.concatenate(out))


def load_backend(checkpoint: str):
    kind, _, arg = checkpoint.partition(":")
    if kind == "hash":
        return HashEmbedder(int(arg or 32))
    if kind == "hf-clip":
        if not arg:
            raise ValueError("hf-clip backend needs a model id, e.g. hf-clip:openai/clip-vit-base-patch16")
        return HFClipEmbedder(arg)
    raise ValueError(f"unknown checkpoint kind {kind!r} (use hash:<dim> or hf-clip:<model-id>)")
