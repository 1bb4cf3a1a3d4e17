"""Vision-side encoders behind one contract.

Two implementations produce image embeddings for the adaptation engine: a
frozen multi-view embedding table loaded from a TTAE file (real exported
data), and a trainable toy MLP encoder fed raw synthetic inputs. Both expose
the same surface to adapters: canonical-view embedding, multi-view embedding,
parameter access with snapshot/restore, and normalization-parameter scoping.

Input-space test-time augmentation and the block-permutation transform used
for pseudo-label stability checks also live here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .binio import Reader, Writer
from .errors import CompatibilityError, FormatError, NumericalError, TtadaptError
from .numerics import Tensor

TTAE_MAGIC = b"TTAE"
TTAE_VERSION = 1

# mild view perturbations relative to unit-norm inputs: at d_in = 64 the noise
# norm is sigma * 8, so sigma must stay well below the per-coordinate scale
AUG_SIGMA = 0.0125
AUG_MASK_FRACTION = 0.02
AUG_SCALE_RANGE = (0.95, 1.05)


# ---------------------------------------------------------------------------
# frozen embedding datasets (TTAE)


@dataclass
class EmbeddingDataset:
    """Precomputed embeddings: S samples x V views x D dims, view 0 canonical."""

    data: np.ndarray
    labels: np.ndarray
    domain_ids: np.ndarray
    class_names: list[str]
    domain_names: list[str]

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int32)
        self.domain_ids = np.asarray(self.domain_ids, dtype=np.int32)
        if self.data.ndim != 3:
            raise TtadaptError("EmbeddingDataset: data must be (S, V, D)")
        s = self.data.shape[0]
        if self.labels.shape != (s,) or self.domain_ids.shape != (s,):
            raise TtadaptError("EmbeddingDataset: labels/domain_ids must have one entry per sample")
        if np.any(self.labels < 0) or np.any(self.labels >= len(self.class_names)):
            raise TtadaptError("EmbeddingDataset: label out of range")
        if np.any(self.domain_ids < 0) or np.any(self.domain_ids >= len(self.domain_names)):
            raise TtadaptError("EmbeddingDataset: domain id out of range")

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_views(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


def save_embedding_dataset(ds: EmbeddingDataset, path) -> None:
    from pathlib import Path

    w = Writer()
    w.raw(TTAE_MAGIC)
    w.u32(TTAE_VERSION)
    w.u32(ds.n_samples)
    w.u32(ds.n_views)
    w.u32(ds.dim)
    w.u32(len(ds.class_names))
    w.u32(len(ds.domain_names))
    for name in ds.class_names:
        w.string(name)
    for name in ds.domain_names:
        w.string(name)
    w.i32_array(ds.labels)
    w.i32_array(ds.domain_ids)
    w.f32_array(ds.data)
    Path(path).write_bytes(w.blob())


def load_embedding_dataset(path) -> EmbeddingDataset:
    from pathlib import Path

    r = Reader(Path(path).read_bytes(), path)
    r.magic(TTAE_MAGIC)
    version = r.u32("version")
    if version != TTAE_VERSION:
        raise FormatError(path, r.pos - 4, f"unsupported version {version}")
    s = r.u32("sample count")
    v = r.u32("view count")
    d = r.u32("dim")
    k = r.u32("class count")
    nd = r.u32("domain count")
    class_names = [r.string(f"class {i} name") for i in range(k)]
    domain_names = [r.string(f"domain {i} name") for i in range(nd)]
    labels = r.i32_array(s, "labels")
    domain_ids = r.i32_array(s, "domain ids")
    data = r.f32_array(s * v * d, "embedding data").reshape(s, v, d).astype(np.float32)
    r.done()
    return EmbeddingDataset(data, labels, domain_ids, class_names, domain_names)


def frozen_embed(ds: EmbeddingDataset, sample_ids, view_ids) -> Tensor:
    """Stored embedding rows for (sample, view) pairs; purely a table lookup."""
    sample_ids = np.asarray(sample_ids, dtype=np.intp)
    view_ids = np.broadcast_to(np.asarray(view_ids, dtype=np.intp), sample_ids.shape)
    if np.any(sample_ids < 0) or np.any(sample_ids >= ds.n_samples):
        raise TtadaptError(f"frozen_embed: sample id out of range [0, {ds.n_samples})")
    if np.any(view_ids < 0) or np.any(view_ids >= ds.n_views):
        raise TtadaptError(f"frozen_embed: view id out of range [0, {ds.n_views})")
    return Tensor(ds.data[sample_ids, view_ids].astype(np.float64))


# ---------------------------------------------------------------------------
# input-space transforms


def view_seed(base_seed: int, sample_index: int) -> int:
    """Per-sample augmentation seed shared by episodic adapters and exporters."""
    return int(np.random.SeedSequence([base_seed, 0x71E5, int(sample_index)]).generate_state(1)[0])


def augment(inputs: np.ndarray, n_views: int, seed: int,
            sigma: float = AUG_SIGMA, mask_fraction: float = AUG_MASK_FRACTION,
            scale_range: tuple[float, float] = AUG_SCALE_RANGE) -> np.ndarray:
    """Create (B * n_views, d) augmented copies; view 0 is the untouched input.

    Each view v >= 1 draws its own noise, coordinate mask, and per-sample
    positive scale from a generator seeded by (seed, v), so outputs are
    byte-identical for identical (inputs, n_views, seed).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2:
        raise TtadaptError("augment: inputs must be (B, d)")
    if n_views < 1:
        raise TtadaptError("augment: n_views must be >= 1")
    b, d = inputs.shape
    views = [inputs.copy()]
    for v in range(1, n_views):
        rng = np.random.default_rng(np.random.SeedSequence([seed, v]))
        x = inputs + rng.normal(0.0, 1.0, size=(b, d)) * sigma
        if mask_fraction > 0:
            x = np.where(rng.random(size=(b, d)) < mask_fraction, 0.0, x)
        lo, hi = scale_range
        x = x * rng.uniform(lo, hi, size=(b, 1))
        views.append(x)
    return np.stack(views, axis=1).reshape(b * n_views, d)


def shape_destroying_transform(inputs: np.ndarray, block_size: int, seed: int) -> np.ndarray:
    """Permute contiguous coordinate blocks per sample; the value multiset is preserved.

    When block_size does not divide d, the remainder forms a final shorter
    block that joins the permutation, keeping the output length and value
    multiset exactly equal to the input's.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2:
        raise TtadaptError("shape_destroying_transform: inputs must be (B, d)")
    if block_size < 1:
        raise TtadaptError("shape_destroying_transform: block_size must be >= 1")
    b, d = inputs.shape
    n_blocks = -(-d // block_size)
    if n_blocks <= 1:
        return inputs.copy()
    bounds = [(i * block_size, min((i + 1) * block_size, d)) for i in range(n_blocks)]
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    out = np.empty_like(inputs)
    for i in range(b):
        perm = rng.permutation(n_blocks)
        pos = 0
        for j in perm:
            lo, hi = bounds[j]
            out[i, pos : pos + hi - lo] = inputs[i, lo:hi]
            pos += hi - lo
    return out


# ---------------------------------------------------------------------------
# trainable toy encoder


class ToyEncoder:
    """MLP d_in -> hidden -> d_out with an optional normalization layer.

    norm selects what follows the first linear layer: "none", "layer_norm",
    or "batch_norm". Parameters are float64 tensors; batch-norm running
    statistics are plain arrays updated only in train mode.
    """

    def __init__(self, d_in: int, hidden: int, d_out: int, norm: str = "layer_norm", seed: int = 0):
        if norm not in ("none", "layer_norm", "batch_norm"):
            raise TtadaptError(f"ToyEncoder: unknown norm {norm!r}")
        rng = np.random.default_rng(np.random.SeedSequence([seed]))
        self.d_in, self.hidden, self.d_out, self.norm = d_in, hidden, d_out, norm
        self.w1 = Tensor(rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_in, hidden)), requires_grad=True)
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.w2 = Tensor(rng.normal(0.0, np.sqrt(1.0 / hidden), size=(hidden, d_out)), requires_grad=True)
        self.b2 = Tensor(np.zeros(d_out), requires_grad=True)
        if norm != "none":
            self.gamma = Tensor(np.ones(hidden), requires_grad=True)
            self.beta = Tensor(np.zeros(hidden), requires_grad=True)
        self.running_mean = np.zeros(hidden)
        self.running_var = np.ones(hidden)
        self.training = False

    # -- parameter access -------------------------------------------------

    def parameters(self) -> list[Tensor]:
        params = [self.w1, self.b1, self.w2, self.b2]
        if self.norm != "none":
            params += [self.gamma, self.beta]
        return params

    def norm_parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta] if self.norm != "none" else []

    @property
    def has_batch_norm(self) -> bool:
        return self.norm == "batch_norm"

    def snapshot(self) -> dict:
        return {
            "params": [p.data.copy() for p in self.parameters()],
            "running_mean": self.running_mean.copy(),
            "running_var": self.running_var.copy(),
        }

    def restore(self, state: dict) -> None:
        for p, saved in zip(self.parameters(), state["params"]):
            p.data = saved.copy()
        self.running_mean = state["running_mean"].copy()
        self.running_var = state["running_var"].copy()

    def train(self) -> None:
        self.training = True

    def eval(self) -> None:
        self.training = False

    # -- forward -----------------------------------------------------------

    def embed(self, inputs: np.ndarray, with_grad: bool = False) -> Tensor:
        """Forward pass to embeddings (B, d_out); raises on non-finite activations."""
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise TtadaptError(f"ToyEncoder.embed: expected (B, {self.d_in}) inputs, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NumericalError("ToyEncoder.embed: non-finite inputs")
        xt = Tensor(x)
        if not with_grad:
            saved = [(p, p.requires_grad) for p in self.parameters()]
            for p, _ in saved:
                p.requires_grad = False
            try:
                return self._forward(xt)
            finally:
                for p, flag in saved:
                    p.requires_grad = flag
        return self._forward(xt)

    def _forward(self, xt: Tensor) -> Tensor:
        h = nm.add(nm.matmul(xt, self.w1), self.b1)
        if self.norm == "layer_norm":
            h = nm.layer_norm(h, self.gamma, self.beta)
        elif self.norm == "batch_norm":
            h = nm.batch_norm(h, self.gamma, self.beta, self.running_mean, self.running_var,
                              training=self.training)
        h = nm.relu(h)
        return nm.add(nm.matmul(h, self.w2), self.b2)


def bn_recalculate(encoder: ToyEncoder, batch_inputs: np.ndarray) -> None:
    """Overwrite every batch-norm running statistic with the current batch's statistics.

    Affine parameters are untouched; the variance floor applies downstream, so
    degenerate batches stay finite.
    """
    if not encoder.has_batch_norm:
        raise CompatibilityError("bn_recalculate: encoder has no batch-norm layers")
    x = np.asarray(batch_inputs, dtype=np.float64)
    pre = (x @ encoder.w1.data) + encoder.b1.data
    encoder.running_mean = pre.mean(axis=0)
    encoder.running_var = pre.var(axis=0)


# ---------------------------------------------------------------------------
# uniform vision-source contract consumed by adapters


@dataclass
class Batch:
    """One stream step: dataset indices plus the domain they came from."""

    indices: np.ndarray
    domain: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.intp)

    @property
    def size(self) -> int:
        return self.indices.size


class FrozenSource:
    """Read-only embedding table; views come from the file, never from runtime augmentation."""

    trainable = False
    has_batch_norm = False
    supports_raw_inputs = False

    def __init__(self, dataset: EmbeddingDataset):
        self.dataset = dataset

    @property
    def n_views(self) -> int:
        return self.dataset.n_views

    @property
    def dim(self) -> int:
        return self.dataset.dim

    def embed(self, batch: Batch, with_grad: bool = False) -> Tensor:
        return frozen_embed(self.dataset, batch.indices, 0)

    def sample_views(self, index: int, n_views: int, seed: int) -> Tensor:
        if n_views > self.dataset.n_views:
            raise CompatibilityError(
                f"frozen dataset stores {self.dataset.n_views} views, {n_views} requested"
            )
        return frozen_embed(self.dataset, np.full(n_views, index), np.arange(n_views))

    def parameters(self) -> list[Tensor]:
        return []

    def norm_parameters(self) -> list[Tensor]:
        return []

    def snapshot(self) -> dict:
        return {}

    def restore(self, state: dict) -> None:
        pass

    def set_eval(self) -> None:
        pass


class ToySource:
    """Trainable encoder bound to its raw input table; supports runtime augmentation."""

    trainable = True
    supports_raw_inputs = True

    def __init__(self, encoder: ToyEncoder, inputs: np.ndarray,
                 aug_sigma: float = AUG_SIGMA, aug_mask: float = AUG_MASK_FRACTION,
                 aug_scale: tuple[float, float] = AUG_SCALE_RANGE):
        self.encoder = encoder
        self.inputs = np.asarray(inputs, dtype=np.float64)
        self.aug_sigma = aug_sigma
        self.aug_mask = aug_mask
        self.aug_scale = aug_scale

    @property
    def has_batch_norm(self) -> bool:
        return self.encoder.has_batch_norm

    @property
    def dim(self) -> int:
        return self.encoder.d_out

    def raw(self, batch: Batch) -> np.ndarray:
        return self.inputs[batch.indices]

    def embed(self, batch: Batch, with_grad: bool = False) -> Tensor:
        return self.encoder.embed(self.raw(batch), with_grad=with_grad)

    def embed_raw(self, x: np.ndarray, with_grad: bool = False) -> Tensor:
        return self.encoder.embed(x, with_grad=with_grad)

    def sample_views(self, index: int, n_views: int, seed: int) -> Tensor:
        views = augment(self.inputs[index][None, :], n_views, seed,
                        sigma=self.aug_sigma, mask_fraction=self.aug_mask,
                        scale_range=self.aug_scale)
        return self.encoder.embed(views)

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters()

    def norm_parameters(self) -> list[Tensor]:
        return self.encoder.norm_parameters()

    def snapshot(self) -> dict:
        return self.encoder.snapshot()

    def restore(self, state: dict) -> None:
        self.encoder.restore(state)

    def set_eval(self) -> None:
        self.encoder.eval()
