import json

import numpy as np
import pytest
from PIL import Image

from ttaexport import ExportJob, HashEmbedder, export_image_views, export_text_bank, load_backend
from ttaexport.cli import main
from ttaexport.job import read_class_list
from ttaexport.text import collect_templates

# the primary engine's loaders are the validators for everything we write
from ttadapt.encoders import load_embedding_dataset
from ttadapt.prototypes import load_prompt_bank

CLASSES = ["goldfish", "tractor", "umbrella"]


@pytest.fixture
def backend():
    return HashEmbedder(dim=16)


def write_classes(tmp_path):
    path = tmp_path / "classes.txt"
    path.write_text("\n".join(CLASSES) + "\n", encoding="utf-8")
    return path


def make_image_tree(tmp_path, domains=("photo", "sketch"), per_class=2, size=48, seed=0):
    rng = np.random.default_rng(seed)
    root = tmp_path / "images"
    for domain in domains:
        for cls in CLASSES:
            folder = root / domain / cls
            folder.mkdir(parents=True, exist_ok=True)
            for i in range(per_class):
                arr = rng.integers(0, 255, size=(size + 10, size, 3), dtype=np.uint8)
                Image.fromarray(arr).save(folder / f"img_{i}.png")
    return root


# ---------------------------------------------------------------------------
# text bank


def test_single_template_one_prompt_per_class(tmp_path, backend):
    job = ExportJob("hash:16", CLASSES, single_template="a photo of a {classname}.",
                    out_ttap=tmp_path / "bank.ttap")
    info = export_text_bank(job, backend)
    assert info["prompts_per_class"] == [1, 1, 1]
    bank = load_prompt_bank(job.out_ttap)  # engine validator
    assert bank.class_names == CLASSES
    assert bank.prompt_counts() == [1, 1, 1]


def test_missing_placeholder_names_template(tmp_path, backend):
    job = ExportJob("hash:16", CLASSES, single_template="a photo of a fish.",
                    out_ttap=tmp_path / "bank.ttap")
    with pytest.raises(ValueError) as exc:
        export_text_bank(job, backend)
    assert "a photo of a fish." in str(exc.value)


def test_ensemble_and_cupl_merge(tmp_path, backend):
    ensemble = tmp_path / "templates.txt"
    ensemble.write_text("a photo of a {classname}.\na sketch of a {classname}.\n", encoding="utf-8")
    cupl = tmp_path / "cupl"
    cupl.mkdir()
    for cls in CLASSES:
        (cupl / f"{cls}.txt").write_text(f"Most {cls}s are nice.\nA {cls} outdoors.\nBig {cls}.\n",
                                         encoding="utf-8")
    job = ExportJob("hash:16", CLASSES, ensemble_file=ensemble, cupl_dir=cupl,
                    out_ttap=tmp_path / "bank.ttap")
    info = export_text_bank(job, backend)
    assert info["prompts_per_class"] == [5, 5, 5]
    bank = load_prompt_bank(job.out_ttap)
    assert bank.prompt_counts() == [5, 5, 5]


def test_cupl_missing_class_file_errors(tmp_path, backend):
    cupl = tmp_path / "cupl"
    cupl.mkdir()
    (cupl / f"{CLASSES[0]}.txt").write_text("something\n", encoding="utf-8")
    job = ExportJob("hash:16", CLASSES, cupl_dir=cupl, out_ttap=tmp_path / "bank.ttap")
    with pytest.raises(FileNotFoundError):
        export_text_bank(job, backend)


def test_reexport_is_byte_identical(tmp_path, backend):
    for name in ("a.ttap", "b.ttap"):
        job = ExportJob("hash:16", CLASSES, single_template="a photo of a {classname}.",
                        out_ttap=tmp_path / name)
        export_text_bank(job, backend)
    assert (tmp_path / "a.ttap").read_bytes() == (tmp_path / "b.ttap").read_bytes()


def test_imagenet_scale_prompt_count(tmp_path):
    # 1000 classes x 80 hand-crafted templates = 80k prompt forwards
    classes = [f"class_{i:04d}" for i in range(1000)]
    ensemble = tmp_path / "templates.txt"
    ensemble.write_text("\n".join(f"template {j} of a {{classname}}." for j in range(80)),
                        encoding="utf-8")
    job = ExportJob("hash:4", classes, ensemble_file=ensemble, out_ttap=tmp_path / "big.ttap")
    info = export_text_bank(job, load_backend("hash:4"))
    assert info["prompts_total"] == 80_000
    bank = load_prompt_bank(job.out_ttap)
    assert sum(bank.prompt_counts()) == 80_000


# ---------------------------------------------------------------------------
# image views


def test_single_view_table(tmp_path, backend):
    root = make_image_tree(tmp_path)
    job = ExportJob("hash:16", CLASSES, image_root=root, n_views=1,
                    out_ttae=tmp_path / "data.ttae")
    info = export_image_views(job, backend)
    assert info["views"] == 1
    table = load_embedding_dataset(job.out_ttae)  # engine validator
    assert table.n_samples == 2 * 3 * 2
    assert table.class_names == CLASSES
    assert table.domain_names == ["photo", "sketch"]


def test_64_views_match_batch_size(tmp_path, backend):
    root = make_image_tree(tmp_path, domains=("photo",), per_class=1)
    job = ExportJob("hash:16", CLASSES, image_root=root, n_views=64,
                    out_ttae=tmp_path / "views.ttae")
    info = export_image_views(job, backend)
    assert info["views"] == 64
    table = load_embedding_dataset(job.out_ttae)
    assert table.n_views == 64


def test_unreadable_image_skipped_with_stable_remap(tmp_path, backend, caplog):
    root = make_image_tree(tmp_path, domains=("photo",), per_class=3)
    broken = root / "photo" / CLASSES[0] / "img_1.png"
    broken.write_bytes(b"this is not an image")
    job = ExportJob("hash:16", CLASSES, image_root=root, n_views=2,
                    out_ttae=tmp_path / "data.ttae")
    import logging

    with caplog.at_level(logging.WARNING):
        info = export_image_views(job, backend)
    assert len(info["skipped"]) == 1
    assert str(broken) in info["skipped"][0]
    table = load_embedding_dataset(job.out_ttae)
    assert table.n_samples == 9 - 1  # indices stay contiguous


def test_view_zero_is_canonical(tmp_path, backend):
    root = make_image_tree(tmp_path, domains=("photo",), per_class=1)
    out_a = tmp_path / "one.ttae"
    export_image_views(ExportJob("hash:16", CLASSES, image_root=root, n_views=1, out_ttae=out_a),
                       backend)
    out_b = tmp_path / "many.ttae"
    export_image_views(ExportJob("hash:16", CLASSES, image_root=root, n_views=4, out_ttae=out_b),
                       backend)
    a = load_embedding_dataset(out_a)
    b = load_embedding_dataset(out_b)
    np.testing.assert_array_equal(a.data[:, 0, :], b.data[:, 0, :])


def test_reexport_images_byte_identical(tmp_path, backend):
    root = make_image_tree(tmp_path)
    for name in ("a.ttae", "b.ttae"):
        export_image_views(
            ExportJob("hash:16", CLASSES, image_root=root, n_views=3, seed=7, out_ttae=tmp_path / name),
            backend,
        )
    assert (tmp_path / "a.ttae").read_bytes() == (tmp_path / "b.ttae").read_bytes()


def test_unknown_class_folder_rejected(tmp_path, backend):
    root = make_image_tree(tmp_path, domains=("photo",), per_class=1)
    (root / "photo" / "mystery").mkdir()
    (root / "photo" / "mystery" / "x.png").write_bytes(b"")
    job = ExportJob("hash:16", CLASSES, image_root=root, n_views=1, out_ttae=tmp_path / "d.ttae")
    with pytest.raises(ValueError):
        export_image_views(job, backend)


# ---------------------------------------------------------------------------
# joint job: order consistency and engine consumption


def test_class_order_consistent_between_outputs(tmp_path, backend):
    root = make_image_tree(tmp_path)
    job = ExportJob("hash:16", CLASSES, single_template="a photo of a {classname}.",
                    image_root=root, n_views=2,
                    out_ttap=tmp_path / "bank.ttap", out_ttae=tmp_path / "data.ttae")
    export_text_bank(job, backend)
    export_image_views(job, backend)
    bank = load_prompt_bank(job.out_ttap)
    table = load_embedding_dataset(job.out_ttae)
    assert bank.class_names == table.class_names


def test_engine_runs_on_exported_files(tmp_path, backend):
    from ttadapt.harness.config import ExperimentConfig
    from ttadapt.harness.run import run_experiment

    root = make_image_tree(tmp_path, per_class=24)
    job = ExportJob("hash:16", CLASSES, single_template="a photo of a {classname}.",
                    image_root=root, n_views=2,
                    out_ttap=tmp_path / "bank.ttap", out_ttae=tmp_path / "data.ttae")
    export_text_bank(job, backend)
    export_image_views(job, backend)

    cfg = ExperimentConfig.load(overrides=[
        'dataset.kind="ttae"',
        f'dataset.path="{job.out_ttae}"',
        'encoder.kind="frozen"',
        'prompts.kind="ttap"',
        f'prompts.paths=["{job.out_ttap}"]',
        "stream.batch_size=16",
        'adapter.name="vte"',
        "adapter.n_views=2",
    ], seed=0)
    record, _ = run_experiment(cfg)
    assert record.total_samples == 2 * 3 * 24
    assert 0.0 <= record.overall_error() <= 100.0


# ---------------------------------------------------------------------------
# cli


def test_cli_full_job_and_manifest(tmp_path, capsys):
    root = make_image_tree(tmp_path)
    classes = write_classes(tmp_path)
    rc = main([
        "--checkpoint", "hash:16",
        "--classes", str(classes),
        "--template", "a photo of a {classname}.",
        "--images", str(root),
        "--views", "2",
        "--seed", "3",
        "--out-ttap", str(tmp_path / "bank.ttap"),
        "--out-ttae", str(tmp_path / "data.ttae"),
        "--manifest", str(tmp_path / "manifest.json"),
    ])
    assert rc == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["recipe"]["n_views"] == 2
    assert manifest["recipe"]["seed"] == 3
    assert manifest["text"]["prompts_total"] == 3
    assert manifest["images"]["samples"] == 12
    out = capsys.readouterr().out
    assert "ttap ->" in out and "ttae ->" in out


def test_cli_error_exit_code(tmp_path, capsys):
    classes = write_classes(tmp_path)
    rc = main([
        "--checkpoint", "hash:16",
        "--classes", str(classes),
        "--template", "no placeholder here",
        "--out-ttap", str(tmp_path / "bank.ttap"),
    ])
    assert rc == 2
    assert "export error" in capsys.readouterr().err


def test_class_list_reader(tmp_path):
    path = tmp_path / "classes.txt"
    path.write_text("# comment\ngoldfish\n\ntractor\n", encoding="utf-8")
    assert read_class_list(path) == ["goldfish", "tractor"]


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        load_backend("magic:3")


def test_template_collection_requires_placeholder(tmp_path):
    ensemble = tmp_path / "templates.txt"
    ensemble.write_text("fine {classname}\nbroken template\n", encoding="utf-8")
    job = ExportJob("hash:16", CLASSES, ensemble_file=ensemble, out_ttap=tmp_path / "b.ttap")
    with pytest.raises(ValueError) as exc:
        collect_templates(job)
    assert "broken template" in str(exc.value)
