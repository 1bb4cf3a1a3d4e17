"""Test-stream construction and the built-in synthetic multi-domain benchmark.

Streams realize three online evaluation protocols over a labeled, domain-
tagged dataset: continual (domains in sequence, shuffled within each domain),
correlated (class-sorted within each domain), and mixed (all domains pooled
and globally shuffled). Batches never mix domains in the continual and
correlated protocols; domain-boundary batches are truncated instead.

The synthetic benchmark draws unit-norm class means, builds a clean pool plus
corrupted variants of it (noise, masking, rotation toward a random orthogonal
map), trains the toy encoder on a clean source split, and turns a held-out
clean split into text-analog class prototypes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .encoders import Batch, ToyEncoder, ToySource
from .errors import TtadaptError
from .numerics import SGD, Tensor
from .prototypes import PromptBank, PrototypeSet, mean_prototype

# benchmark domains: severities chosen so each corruption leaves correctable
# structure (heavy isotropic noise is irreducible for any adaptation method)
DEFAULT_DOMAINS = ("clean", "gauss:0.15", "mask:0.4", "rotate:0.5", "rotate:0.8")

# source-training recipe; the pilot clean-domain error with these settings is
# well under the 5% gate (see tests/test_streams.py)
TRAIN_EPOCHS = 30
TRAIN_LR = 0.05
TRAIN_MOMENTUM = 0.9
TRAIN_BATCH = 64
TRAIN_LOGIT_SCALE = 10.0


@dataclass(frozen=True)
class StreamSpec:
    scenario: str = "continual"
    domain_order: tuple[int, ...] = ()
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in ("continual", "correlated", "mixed"):
            raise TtadaptError(f"StreamSpec: unknown scenario {self.scenario!r}")
        if self.batch_size < 1:
            raise TtadaptError("StreamSpec: batch_size must be >= 1")


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 10
    d_in: int = 64
    d_embed: int = 32
    hidden: int = 128
    samples_per_domain: int = 2000
    train_samples: int = 2000
    heldout_samples: int = 500
    sigma_cluster: float = 0.25
    domains: tuple[str, ...] = DEFAULT_DOMAINS
    seed: int = 0


@dataclass
class SyntheticDataset:
    """Raw-input dataset over all domains plus the clean train/held-out splits."""

    inputs: np.ndarray
    labels: np.ndarray
    domain_ids: np.ndarray
    class_names: list[str]
    domain_names: list[str]
    train_inputs: np.ndarray
    train_labels: np.ndarray
    heldout_inputs: np.ndarray
    heldout_labels: np.ndarray
    class_means: np.ndarray


@dataclass
class SyntheticBenchmark:
    dataset: SyntheticDataset
    encoder: ToyEncoder
    prompt_bank: PromptBank
    prototypes: PrototypeSet
    spec: SyntheticSpec | None = None
    source_train_error: float = float("nan")


# ---------------------------------------------------------------------------
# stream builders


def _domain_order(dataset, spec: StreamSpec) -> list[int]:
    present = [int(d) for d in np.unique(dataset.domain_ids)]
    order = list(spec.domain_order) if spec.domain_order else present
    for d in order:
        if d not in present:
            raise TtadaptError(f"stream: domain id {d} not present in dataset")
        if not np.any(dataset.domain_ids == d):
            raise TtadaptError(f"stream: domain id {d} is empty")
    return order


def _batched(indices: np.ndarray, domain: int, batch_size: int) -> list[Batch]:
    return [Batch(indices[i : i + batch_size], domain) for i in range(0, indices.size, batch_size)]


def continual_stream(dataset, spec: StreamSpec) -> list[Batch]:
    """Domains in order; samples shuffled within each domain; boundary batches truncated."""
    batches = []
    for d in _domain_order(dataset, spec):
        idx = np.flatnonzero(dataset.domain_ids == d)
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, d]))
        batches.extend(_batched(idx[rng.permutation(idx.size)], d, spec.batch_size))
    return batches


def correlated_stream(dataset, spec: StreamSpec) -> list[Batch]:
    """Within each domain of the continual order, samples sorted by class label (stable)."""
    batches = []
    labels = np.asarray(dataset.labels)
    for d in _domain_order(dataset, spec):
        idx = np.flatnonzero(dataset.domain_ids == d)
        idx = idx[np.argsort(labels[idx], kind="stable")]
        batches.extend(_batched(idx, d, spec.batch_size))
    return batches


def mixed_stream(dataset, spec: StreamSpec) -> list[Batch]:
    """All selected domains pooled and globally shuffled; batches carry domain -1."""
    order = _domain_order(dataset, spec)
    if len(order) < 2:
        raise TtadaptError("mixed_stream: need at least two domains")
    pool = np.flatnonzero(np.isin(dataset.domain_ids, order))
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x51A5]))
    pool = pool[rng.permutation(pool.size)]
    return _batched(pool, -1, spec.batch_size)


def build_stream(dataset, spec: StreamSpec) -> list[Batch]:
    builder = {"continual": continual_stream, "correlated": correlated_stream, "mixed": mixed_stream}
    return builder[spec.scenario](dataset, spec)


# ---------------------------------------------------------------------------
# synthetic data


def _parse_domain(tag: str) -> tuple[str, float]:
    if tag == "clean":
        return "clean", 0.0
    kind, _, arg = tag.partition(":")
    if kind not in ("gauss", "mask", "rotate") or not arg:
        raise TtadaptError(f"synthetic: bad domain tag {tag!r}")
    return kind, float(arg)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _clean_pool(rng, means: np.ndarray, n: int, sigma: float):
    k, d = means.shape
    labels = rng.integers(0, k, size=n)
    noise = rng.normal(size=(n, d)) * sigma
    return _unit(means[labels] + noise) if sigma > 0 else means[labels].copy(), labels.astype(np.int32)


def _random_orthogonal(rng, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def generate_raw(spec: SyntheticSpec) -> SyntheticDataset:
    """Clean pools plus per-domain corrupted copies of the shared test pool."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xDA7A]))
    if spec.n_classes > spec.d_in:
        warnings.warn(
            f"synthetic: {spec.n_classes} classes in {spec.d_in} dims may not separate cleanly",
            stacklevel=2,
        )
    means = _unit(rng.normal(size=(spec.n_classes, spec.d_in)))
    test_x, test_y = _clean_pool(rng, means, spec.samples_per_domain, spec.sigma_cluster)
    train_x, train_y = _clean_pool(rng, means, spec.train_samples, spec.sigma_cluster)
    held_x, held_y = _clean_pool(rng, means, spec.heldout_samples, spec.sigma_cluster)
    rotation = _random_orthogonal(rng, spec.d_in)

    all_x, all_y, all_d = [], [], []
    for d_id, tag in enumerate(spec.domains):
        kind, arg = _parse_domain(tag)
        drng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xC0DE, d_id]))
        if kind == "clean":
            x = test_x.copy()
        elif kind == "gauss":
            x = test_x + drng.normal(size=test_x.shape) * arg
        elif kind == "mask":
            x = np.where(drng.random(size=test_x.shape) < arg, 0.0, test_x)
        else:  # rotate
            x = (1.0 - arg) * test_x + arg * (test_x @ rotation)
        all_x.append(x)
        all_y.append(test_y)
        all_d.append(np.full(test_y.size, d_id, dtype=np.int32))

    return SyntheticDataset(
        inputs=np.concatenate(all_x),
        labels=np.concatenate(all_y),
        domain_ids=np.concatenate(all_d),
        class_names=[f"class_{i:02d}" for i in range(spec.n_classes)],
        domain_names=list(spec.domains),
        train_inputs=train_x,
        train_labels=train_y,
        heldout_inputs=held_x,
        heldout_labels=held_y,
        class_means=means,
    )


# ---------------------------------------------------------------------------
# source training


def train_source_encoder(dataset: SyntheticDataset, spec: SyntheticSpec, norm: str = "layer_norm",
                         epochs: int = TRAIN_EPOCHS, lr: float = TRAIN_LR) -> tuple[ToyEncoder, float]:
    """Fit the toy encoder on the clean train split with a cosine-logit cross-entropy.

    A temporary learnable class-weight matrix provides the training logits and
    is discarded afterwards; prototypes come from held-out embeddings instead.
    Returns the encoder (eval mode) and its final train-split error rate.
    """
    k = spec.n_classes
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x7EA1]))
    encoder = ToyEncoder(spec.d_in, spec.hidden, spec.d_embed, norm=norm, seed=spec.seed + 1)
    class_w = Tensor(rng.normal(size=(k, spec.d_embed)), requires_grad=True)
    params = encoder.parameters() + [class_w]
    opt = SGD(params, lr=lr, momentum=TRAIN_MOMENTUM)
    x, y = dataset.train_inputs, dataset.train_labels
    onehot = np.eye(k)[y]

    encoder.train()
    for epoch in range(epochs):
        perm = rng.permutation(x.shape[0])
        for lo in range(0, x.shape[0], TRAIN_BATCH):
            sel = perm[lo : lo + TRAIN_BATCH]
            emb = encoder.embed(x[sel], with_grad=True)
            logits = nm.scalar_mul(
                nm.matmul(nm.l2_normalize(emb), nm.transpose(nm.l2_normalize(class_w))),
                TRAIN_LOGIT_SCALE,
            )
            loss = nm.cross_entropy(nm.softmax(logits), onehot[sel])
            opt.step(nm.gradients(loss, params))
    encoder.eval()

    emb = encoder.embed(x).data
    logits = _unit(emb) @ _unit(class_w.data).T
    train_error = float(np.mean(np.argmax(logits, axis=1) != y))
    return encoder, train_error


def build_analog_prototypes(encoder: ToyEncoder, dataset: SyntheticDataset) -> tuple[PromptBank, PrototypeSet]:
    """Held-out clean embeddings act as per-class prompt lists; their means are the prototypes."""
    encoder.eval()
    emb = encoder.embed(dataset.heldout_inputs).data
    emb = _unit(emb)
    per_class = []
    for kls in range(len(dataset.class_names)):
        rows = emb[dataset.heldout_labels == kls]
        if rows.shape[0] == 0:
            raise TtadaptError(f"synthetic: held-out split has no samples of class {kls}")
        per_class.append(rows)
    bank = PromptBank(list(dataset.class_names), per_class, source_tag="synthetic-analog")
    return bank, mean_prototype(bank)


def generate_synthetic(spec: SyntheticSpec, norm: str = "layer_norm") -> SyntheticBenchmark:
    """Full pipeline: raw domains, trained source encoder, text-analog prototypes."""
    dataset = generate_raw(spec)
    encoder, train_error = train_source_encoder(dataset, spec, norm=norm)
    bank, protos = build_analog_prototypes(encoder, dataset)
    return SyntheticBenchmark(dataset, encoder, bank, protos, spec, train_error)


def toy_source_for(bench: SyntheticBenchmark) -> ToySource:
    return ToySource(bench.encoder, bench.dataset.inputs)
