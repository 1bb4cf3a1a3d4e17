import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttadapt.errors import FormatError, TtadaptError
from ttadapt.prototypes import (
    PromptBank,
    PrototypeSet,
    load_prompt_bank,
    mean_prototype,
    merge_banks,
    save_prompt_bank,
)


def unit_rows(rng, n, d):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def make_bank(rng, k=3, d=6, counts=None, tag="ensemble"):
    counts = counts or [2] * k
    names = [f"class_{i}" for i in range(k)]
    return PromptBank(names, [unit_rows(rng, j, d) for j in counts], source_tag=tag)


def brute_force_prototypes(bank):
    """Independent oracle: plain per-class mean then normalize."""
    out = []
    for emb in bank.embeddings:
        m = sum(emb[j] for j in range(emb.shape[0])) / emb.shape[0]
        out.append(m / np.linalg.norm(m))
    return np.stack(out)


def test_single_template_prototypes_equal_inputs():
    rng = np.random.default_rng(0)
    bank = make_bank(rng, counts=[1, 1, 1])
    protos = mean_prototype(bank)
    np.testing.assert_allclose(protos.prototypes, np.concatenate(bank.embeddings), atol=1e-12)


def test_two_orthogonal_prompts_average():
    bank = PromptBank(["a", "b"], [np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[0.0, 1.0]])])
    protos = mean_prototype(bank)
    np.testing.assert_allclose(protos.prototypes[0], [0.7071, 0.7071], atol=5e-5)


def test_mean_prototype_matches_brute_force():
    rng = np.random.default_rng(42)
    for _ in range(50):
        bank = make_bank(rng, k=4, d=5, counts=list(rng.integers(1, 6, size=4)))
        got = mean_prototype(bank).prototypes
        np.testing.assert_allclose(got, brute_force_prototypes(bank), atol=1e-9)


def test_empty_class_list_errors():
    with pytest.raises(TtadaptError):
        PromptBank([], [])


def test_non_unit_vectors_rejected():
    with pytest.raises(TtadaptError):
        PromptBank(["a"], [np.array([[3.0, 4.0]])])


def test_class_without_prompts_rejected():
    # a bank with an empty per-class list can never exist, so merging with one is impossible
    with pytest.raises(TtadaptError):
        PromptBank(["a", "b"], [np.eye(2)[:1], np.zeros((0, 2))])


def test_merge_counts_add():
    rng = np.random.default_rng(1)
    a = make_bank(rng, k=2, d=4, counts=[3, 3])
    b = make_bank(rng, k=2, d=4, counts=[5, 5])
    merged = merge_banks(a, b)
    assert merged.prompt_counts() == [8, 8]
    assert merged.source_tag == "all"


def test_merge_class_mismatch_lists_offenders():
    rng = np.random.default_rng(2)
    a = make_bank(rng, k=2, d=4)
    b = PromptBank(["class_0", "other"], [unit_rows(rng, 1, 4), unit_rows(rng, 1, 4)])
    with pytest.raises(TtadaptError) as exc:
        merge_banks(a, b)
    assert "other" in str(exc.value)


def test_merged_mean_is_weighted_mean_of_sums():
    rng = np.random.default_rng(3)
    a = make_bank(rng, k=3, d=6, counts=[2, 4, 1])
    b = make_bank(rng, k=3, d=6, counts=[3, 1, 5])
    merged = mean_prototype(merge_banks(a, b)).prototypes
    for k in range(3):
        total = a.embeddings[k].sum(axis=0) + b.embeddings[k].sum(axis=0)
        expected = total / (a.embeddings[k].shape[0] + b.embeddings[k].shape[0])
        expected /= np.linalg.norm(expected)
        np.testing.assert_allclose(merged[k], expected, atol=1e-9)


def test_scale_invariance_of_prototypes():
    rng = np.random.default_rng(4)
    bank = make_bank(rng, k=3, d=5)
    base = mean_prototype(bank).prototypes
    # scaling any class mean by c > 0 before re-normalization changes nothing
    for c in (0.1, 7.3):
        scaled = np.stack([e.mean(axis=0) * c for e in bank.embeddings])
        scaled /= np.linalg.norm(scaled, axis=1, keepdims=True)
        np.testing.assert_allclose(scaled, base, atol=1e-12)


@given(st.permutations(list(range(5))), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_mean_prototype_permutation_invariant(perm, seed):
    rng = np.random.default_rng(seed)
    emb = unit_rows(rng, 5, 4)
    a = PromptBank(["x", "y"], [emb, unit_rows(rng, 1, 4)])
    b = PromptBank(["x", "y"], [emb[list(perm)], a.embeddings[1]])
    np.testing.assert_allclose(
        mean_prototype(a).prototypes, mean_prototype(b).prototypes, atol=1e-12
    )


def test_ttap_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    bank = make_bank(rng, k=3, d=8, counts=[1, 4, 2])
    path = tmp_path / "bank.ttap"
    save_prompt_bank(bank, path)
    loaded = load_prompt_bank(path)
    assert loaded.class_names == bank.class_names
    assert loaded.prompt_counts() == bank.prompt_counts()
    for a, b in zip(loaded.embeddings, bank.embeddings):
        np.testing.assert_allclose(a, b, atol=1e-6)


def test_ttap_truncation_reports_offset(tmp_path):
    rng = np.random.default_rng(6)
    bank = make_bank(rng, k=2, d=4, counts=[1, 1])
    path = tmp_path / "bank.ttap"
    save_prompt_bank(bank, path)
    blob = path.read_bytes()
    cut = path.with_suffix(".cut")
    cut.write_bytes(blob[: len(blob) - 10])
    with pytest.raises(FormatError) as exc:
        load_prompt_bank(cut)
    assert exc.value.offset <= len(blob) - 10


def test_ttap_bad_magic(tmp_path):
    path = tmp_path / "bad.ttap"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError) as exc:
        load_prompt_bank(path)
    assert exc.value.offset == 0


def test_ttap_imagenet_scale_bank(tmp_path):
    # 1000 classes x 80 templates: the 80,000-prompt hand-crafted ensemble size
    rng = np.random.default_rng(7)
    k, j, d = 1000, 80, 8
    vecs = rng.normal(size=(k, j, d))
    vecs /= np.linalg.norm(vecs, axis=2, keepdims=True)
    bank = PromptBank([f"c{i}" for i in range(k)], list(vecs), source_tag="ensemble")
    assert sum(bank.prompt_counts()) == 80_000
    path = tmp_path / "big.ttap"
    save_prompt_bank(bank, path)
    loaded = load_prompt_bank(path)
    assert loaded.n_classes == 1000
    assert sum(loaded.prompt_counts()) == 80_000


def test_prototype_set_validation():
    with pytest.raises(TtadaptError):
        PrototypeSet(np.array([[1.0, 0.0]]))  # K must be >= 2
    with pytest.raises(TtadaptError):
        PrototypeSet(np.array([[1.0, 0.0], [0.5, 0.5]]))  # non unit
