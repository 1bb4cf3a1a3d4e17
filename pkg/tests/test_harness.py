import json
from pathlib import Path

import numpy as np
import pytest

from ttadapt.encoders import load_embedding_dataset
from ttadapt.errors import ConfigError, TtadaptError
from ttadapt.harness.cli import main
from ttadapt.harness.config import ExperimentConfig, apply_override, load_defaults
from ttadapt.harness.run import (
    build_experiment,
    compare,
    compare_configs,
    dump_embeddings,
    export_synthetic,
    run_experiment,
    sweep_views,
)

SMALL_OVERRIDES = [
    "dataset.synthetic.samples_per_domain=256",
    "dataset.synthetic.train_samples=400",
    "dataset.synthetic.heldout_samples=100",
    "dataset.synthetic.n_classes=5",
    "dataset.synthetic.d_in=16",
    "dataset.synthetic.d_embed=8",
    "dataset.synthetic.hidden=32",
    'dataset.synthetic.domains=["clean","gauss:0.4"]',
    "stream.batch_size=32",
]


def small_config(*extra, seed=0, out=None):
    return ExperimentConfig.load(overrides=list(SMALL_OVERRIDES) + list(extra), seed=seed, out=out)


# ---------------------------------------------------------------------------
# config machinery


def test_defaults_load_and_validate():
    cfg = ExperimentConfig(load_defaults())
    assert cfg.adapter["name"] == "source"
    assert cfg.stream["scenario"] == "continual"


def test_override_parsing_types():
    cfg = load_defaults()
    apply_override(cfg, "adapter.lr=0.5")
    apply_override(cfg, "adapter.full_params=true")
    apply_override(cfg, 'adapter.name="tent"')
    apply_override(cfg, "stream.domain_order=[1,0]")
    apply_override(cfg, "adapter.label=mylabel")
    assert cfg["adapter"]["lr"] == 0.5
    assert cfg["adapter"]["full_params"] is True
    assert cfg["adapter"]["name"] == "tent"
    assert cfg["stream"]["domain_order"] == [1, 0]
    assert cfg["adapter"]["label"] == "mylabel"


def test_override_unknown_key_rejected():
    cfg = load_defaults()
    with pytest.raises(ConfigError):
        apply_override(cfg, "adapter.nope=1")
    with pytest.raises(ConfigError):
        apply_override(cfg, "nonsense")


def test_incompatible_configs_rejected():
    with pytest.raises(ConfigError):
        small_config('adapter.name="bn1"')  # bn1 without batch_norm encoder
    with pytest.raises(ConfigError):
        small_config('encoder.kind="frozen"')  # frozen without ttae dataset
    with pytest.raises(ConfigError):
        small_config('adapter.name="tent"', "adapter.accumulate=4", 'encoder.norm="batch_norm"')
    with pytest.raises(ConfigError):
        small_config("adapter.accumulate=4")  # source is not gradient-based


def test_config_file_merges_over_defaults(tmp_path):
    cfg_file = tmp_path / "exp.toml"
    cfg_file.write_text(
        """
[adapter]
name = "tent"
lr = 0.005

[stream]
batch_size = 16
""",
        encoding="utf-8",
    )
    cfg = ExperimentConfig.load(config_path=cfg_file, overrides=SMALL_OVERRIDES + ["adapter.lr=0.007"])
    assert cfg.adapter["name"] == "tent"
    assert cfg.adapter["lr"] == 0.007  # CLI override beats the file
    assert cfg.stream["batch_size"] == 32  # later override beats the file too
    assert cfg.adapter["momentum"] == 0.9  # untouched default survives


def test_missing_config_file_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.load(config_path="/nonexistent/exp.toml")


def test_mixed_scenario_runs_end_to_end(tmp_path):
    out = tmp_path / "mixed"
    record, _ = run_experiment(small_config('stream.scenario="mixed"', out=str(out)))
    assert record.per_domain_error().keys() == {"mixed"}
    assert (out / "results.csv").read_text().splitlines()[1].split(",")[1] == "-1"


def test_config_hash_is_stable_and_sensitive():
    a = small_config().config_hash()
    b = small_config().config_hash()
    c = small_config("adapter.lr=0.123").config_hash()
    assert a == b
    assert a != c


# ---------------------------------------------------------------------------
# run


def test_run_outputs_are_deterministic(tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    run_experiment(small_config(out=str(out1)))
    run_experiment(small_config(out=str(out2)))
    assert (out1 / "results.csv").read_bytes() == (out2 / "results.csv").read_bytes()
    assert (out1 / "summary.json").read_bytes() == (out2 / "summary.json").read_bytes()
    assert (out1 / "manifest.json").read_bytes() == (out2 / "manifest.json").read_bytes()


def test_source_run_matches_offline_evaluation():
    cfg = small_config()
    record, exp = run_experiment(cfg)
    # offline: evaluate the frozen model on the same ordering
    errors = 0
    for batch in exp.stream:
        probs = exp.head.forward(exp.source.embed(batch)).data
        errors += int(np.sum(np.argmax(probs, 1) != exp.labels[batch.indices]))
    assert errors == record.total_errors


def test_error_accounting_consistency():
    record, _ = run_experiment(small_config('adapter.name="tent"'))
    per_domain = record.per_domain_error()
    # per-domain errors recombine exactly into the overall rate
    sizes, errs = {}, {}
    for b in record.batches:
        name = record.domain_label(b.domain)
        sizes[name] = sizes.get(name, 0) + b.size
        errs[name] = errs.get(name, 0) + b.errors
    recombined = 100.0 * sum(errs.values()) / sum(sizes.values())
    assert abs(recombined - record.overall_error()) < 1e-12
    for name, err in per_domain.items():
        assert abs(err - 100.0 * errs[name] / sizes[name]) < 1e-12
    assert 0.0 <= record.overall_error() <= 100.0


def test_run_seed_changes_outputs(tmp_path):
    r0, _ = run_experiment(small_config(seed=0))
    r1, _ = run_experiment(small_config(seed=1))
    assert r0.config_hash != r1.config_hash or r0.total_errors != r1.total_errors


# ---------------------------------------------------------------------------
# compare


def test_compare_table_and_minima(tmp_path):
    dirs = []
    for name in ("source", "tent"):
        out = tmp_path / name
        run_experiment(small_config(f'adapter.name="{name}"', out=str(out)))
        dirs.append(out)
    table = compare(dirs)
    assert [label for label, _ in table.rows] == ["source", "tent"]
    assert table.columns[-1] == "avg"
    # column minima match brute force
    for i, m in enumerate(table.minima()):
        assert m == min(vals[i] for _, vals in table.rows)
    # avg column equals sample-weighted recomputation
    for (_, vals), d in zip(table.rows, dirs):
        summary = json.loads((Path(d) / "summary.json").read_text())
        assert abs(vals[-1] - summary["overall_error_percent"]) < 1e-9


def test_compare_configs_runs_and_matches_dir_compare(tmp_path):
    dirs = []
    configs = []
    for name in ("source", "tent"):
        out = tmp_path / name
        cfg = small_config(f'adapter.name="{name}"', out=str(out))
        run_experiment(cfg)
        dirs.append(out)
        configs.append(small_config(f'adapter.name="{name}"'))
    from_dirs = compare(dirs)
    from_configs = compare_configs(configs)
    assert from_dirs.columns == from_configs.columns
    for (la, va), (lb, vb) in zip(from_dirs.rows, from_configs.rows):
        assert la == lb
        np.testing.assert_allclose(va, vb, atol=1e-9)


def test_compare_configs_rejects_mismatched_streams():
    with pytest.raises(TtadaptError):
        compare_configs([small_config(), small_config('stream.scenario="correlated"')])


def test_compare_rejects_mismatched_streams(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    run_experiment(small_config(out=str(a)))
    run_experiment(small_config('stream.scenario="correlated"', out=str(b)))
    with pytest.raises(TtadaptError):
        compare([a, b])


def test_single_method_table_equals_record(tmp_path):
    out = tmp_path / "solo"
    record, _ = run_experiment(small_config(out=str(out)))
    table = compare([out])
    label, vals = table.rows[0]
    assert label == "source"
    per = record.per_domain_error()
    np.testing.assert_allclose(vals[:-1], [per[c] for c in table.columns[:-1]], atol=1e-9)
    np.testing.assert_allclose(vals[-1], record.overall_error(), atol=1e-9)


# ---------------------------------------------------------------------------
# sweeps


def test_sweep_views_rows_and_vte_single_view(tmp_path):
    cfg = small_config('adapter.name="vte"', "dataset.synthetic.samples_per_domain=64")
    sweep = sweep_views(cfg, [1, 4])
    assert sweep["view_counts"] == [1, 4]
    assert len(sweep["errors_percent"]) == 2
    # one view means the canonical embedding only: identical to source
    assert abs(sweep["errors_percent"][0] - sweep["source_baseline_percent"]) < 1e-12


def test_sweep_rejects_non_ensembling_adapter():
    with pytest.raises(ConfigError):
        sweep_views(small_config('adapter.name="tent"'), [1, 2])


# ---------------------------------------------------------------------------
# dumps and synthetic export


def test_dump_embeddings_round_trip(tmp_path):
    cfg = small_config('adapter.name="roid"')
    exp = build_experiment(cfg)
    _, exp = run_experiment(cfg, exp)
    path = tmp_path / "post.ttae"
    dump_embeddings(exp, path)
    dumped = load_embedding_dataset(path)
    assert dumped.n_samples == exp.labels.size
    assert dumped.n_views == 1
    np.testing.assert_array_equal(dumped.labels, exp.labels)


def test_dump_differs_from_source_after_adaptation(tmp_path):
    cfg_src = small_config()
    exp_src = build_experiment(cfg_src)
    _, exp_src = run_experiment(cfg_src, exp_src)
    dump_embeddings(exp_src, tmp_path / "src.ttae")

    cfg_ad = small_config('adapter.name="roid"', "adapter.lr=0.01")
    exp_ad = build_experiment(cfg_ad)
    _, exp_ad = run_experiment(cfg_ad, exp_ad)
    dump_embeddings(exp_ad, tmp_path / "roid.ttae")

    a = load_embedding_dataset(tmp_path / "src.ttae").data
    b = load_embedding_dataset(tmp_path / "roid.ttae").data
    assert np.linalg.norm(a - b) > 0


def test_frozen_source_dump_equals_input_embeddings(tmp_path):
    cfg = small_config()
    export = export_synthetic(cfg, tmp_path, n_views=2)
    frozen_cfg = ExperimentConfig.load(overrides=[
        'dataset.kind="ttae"',
        f'dataset.path="{export["ttae"]}"',
        'encoder.kind="frozen"',
        'prompts.kind="ttap"',
        f'prompts.paths=["{export["ttap"]}"]',
    ], seed=0)
    exp = build_experiment(frozen_cfg)
    _, exp = run_experiment(frozen_cfg, exp)
    dump_embeddings(exp, tmp_path / "dump.ttae")
    original = load_embedding_dataset(export["ttae"])
    dumped = load_embedding_dataset(tmp_path / "dump.ttae")
    np.testing.assert_array_equal(dumped.data[:, 0, :], original.data[:, 0, :])


def test_tpt_runs_on_frozen_views(tmp_path):
    cfg = small_config()
    export = export_synthetic(cfg, tmp_path, n_views=8)
    record, _ = run_experiment(ExperimentConfig.load(overrides=[
        'dataset.kind="ttae"',
        f'dataset.path="{export["ttae"]}"',
        'encoder.kind="frozen"',
        'prompts.kind="ttap"',
        f'prompts.paths=["{export["ttap"]}"]',
        'adapter.name="tpt"',
        "adapter.n_views=8",
        "stream.batch_size=64",
        "stream.domain_order=[0]",
    ], seed=0))
    assert 0.0 <= record.overall_error() <= 100.0


def test_frozen_path_cross_checks_toy_path(tmp_path):
    cfg = small_config()
    export = export_synthetic(cfg, tmp_path, n_views=8)

    frozen_overrides = [
        'dataset.kind="ttae"',
        f'dataset.path="{export["ttae"]}"',
        'encoder.kind="frozen"',
        'prompts.kind="ttap"',
        f'prompts.paths=["{export["ttap"]}"]',
        "stream.batch_size=32",
    ]
    f_src, _ = run_experiment(ExperimentConfig.load(overrides=frozen_overrides, seed=0))
    t_src, _ = run_experiment(small_config(seed=0))
    # identical model, identical ordering: same errors up to f32 quantization
    assert f_src.total_errors == t_src.total_errors

    f_vte, _ = run_experiment(
        ExperimentConfig.load(overrides=frozen_overrides + ['adapter.name="vte"', "adapter.n_views=8"], seed=0)
    )
    t_vte, _ = run_experiment(small_config('adapter.name="vte"', "adapter.n_views=8", seed=0))
    assert abs(f_vte.overall_error() - t_vte.overall_error()) < 0.5


# ---------------------------------------------------------------------------
# cli


def test_cli_run_and_exit_codes(tmp_path, capsys):
    rc = main(["run", "--seed", "0", "--out", str(tmp_path / "out")] + sum(
        (["--override", o] for o in SMALL_OVERRIDES), []
    ))
    assert rc == 0
    assert (tmp_path / "out" / "results.csv").exists()
    out = capsys.readouterr().out
    assert "overall error" in out


def test_cli_config_error_exit_code(capsys):
    rc = main(["run", "--override", 'adapter.name="bn1"'])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_cli_compare(tmp_path, capsys):
    for name in ("source", "tent"):
        args = ["run", "--seed", "0", "--out", str(tmp_path / name)]
        for o in SMALL_OVERRIDES + [f'adapter.name="{name}"']:
            args += ["--override", o]
        assert main(args) == 0
    rc = main(["compare", str(tmp_path / "source"), str(tmp_path / "tent"),
               "--out", str(tmp_path / "cmp")])
    assert rc == 0
    assert (tmp_path / "cmp" / "comparison.csv").exists()
    text = (tmp_path / "cmp" / "comparison.txt").read_text()
    assert "source" in text and "tent" in text


def test_cli_gen_synth_and_frozen_run(tmp_path):
    args = ["gen-synth", "--seed", "0", "--out", str(tmp_path / "synth"), "--views", "2"]
    for o in SMALL_OVERRIDES:
        args += ["--override", o]
    assert main(args) == 0
    table = load_embedding_dataset(tmp_path / "synth" / "synthetic.ttae")
    assert table.n_views == 2


def test_cli_sweep_views(tmp_path):
    args = ["sweep-views", "--seed", "0", "--out", str(tmp_path / "sw"), "--views", "1,4"]
    for o in SMALL_OVERRIDES + ['adapter.name="vte"', "dataset.synthetic.samples_per_domain=64"]:
        args += ["--override", o]
    assert main(args) == 0
    lines = (tmp_path / "sw" / "sweep.csv").read_text().strip().splitlines()
    assert lines[0] == "n_views,error_percent"
    assert len(lines) == 3
