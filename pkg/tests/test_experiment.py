import json
from pathlib import Path

import pytest

from conftest import small_config
from pivotsmt.evalmetrics import bleu, lebleu
from pivotsmt.experiment import ConfigError, ExperimentConfig, StageError, run_experiment


def test_report_shape(small_run):
    cfg, report = small_run
    text = (Path(cfg.output_dir) / "report.txt").read_text()
    for label in ("best pivot", "all pivots", "direct", "direct+all pivots"):
        assert label in text
    assert "word tri" in text and "bpe pip" in text
    assert "Triangulated / larger component table size" in text
    systems = {s for _, s, _, _ in report.rows}
    assert {"tri.L1", "pip.L1", "tri.L2", "pip.L2", "direct", "all-pivots", "direct+all-pivots"} <= systems
    for name in ("report.kv", "report.tsv", "bleu.png", "ratio.png", "config.json", "timings.json"):
        assert (Path(cfg.output_dir) / name).exists()


def test_report_scores_match_hypothesis_files(small_run):
    cfg, report = small_run
    root = Path(cfg.output_dir)
    refs = (root / "data" / f"test.{cfg.target}").read_text().splitlines()[: cfg.test_size]
    kv = report.scores()
    for scheme, system, _, _ in report.rows:
        hyps = (root / scheme / "systems" / system / "test.hyp").read_text().splitlines()
        assert len(hyps) == len(refs)
        assert kv[f"bleu.{scheme}.{system}"] == pytest.approx(bleu(hyps, refs), abs=5e-5)
        assert kv[f"lebleu.{scheme}.{system}"] == pytest.approx(lebleu(hyps, refs, cfg.lebleu_threshold), abs=5e-7)


def test_timings_stay_out_of_the_report(small_run):
    cfg, _ = small_run
    root = Path(cfg.output_dir)
    assert "timings" not in (root / "report.kv").read_text()
    assert json.loads((root / "timings.json").read_text())["stages"]


def test_rerun_skips_everything(small_run):
    cfg, report = small_run
    root = Path(cfg.output_dir)
    before = {p: p.read_bytes() for p in root.glob("report.*")}
    again = run_experiment(ExperimentConfig.load(root / "config.json"))
    skipped = json.loads((root / "timings.json").read_text())["skipped"]
    stages = [p.stem.replace("__", "/") for p in (root / "stages").glob("*.json")]
    assert sorted(skipped) == sorted(stages)
    assert {p: p.read_bytes() for p in root.glob("report.*")} == before
    assert again.bleu == report.bleu


def test_identical_runs_are_byte_identical(small_run, tmp_path):
    cfg, _ = small_run
    other = small_config(tmp_path / "again")
    run_experiment(other)
    for name in ("report.txt", "report.kv", "report.tsv", "bleu.png", "ratio.png"):
        assert (Path(cfg.output_dir) / name).read_bytes() == (tmp_path / "again" / name).read_bytes(), name


def test_changed_setting_reruns_only_downstream(tmp_path):
    cfg = small_config(tmp_path / "r", schemes=["word"], methods=["triangulate"], direct=False)
    run_experiment(cfg)
    cfg2 = small_config(tmp_path / "r", schemes=["word"], methods=["triangulate"], direct=False, pop_limit=10)
    run_experiment(cfg2)
    t = json.loads((tmp_path / "r" / "timings.json").read_text())
    assert "data" in t["skipped"] and "word/table.L0-L1" in t["skipped"]
    assert "word/tri.L1/run" not in t["skipped"]


def test_stage_failure_is_reported(tmp_path):
    cfg = small_config(tmp_path / "bad", pivots=["L9"], schemes=["word"])
    with pytest.raises(StageError) as err:
        run_experiment(cfg)
    assert err.value.stage == "data"
    kv = (tmp_path / "bad" / "report.kv").read_text()
    assert "status=failed" in kv and "failed_stage=data" in kv


def test_corpus_dir_input(tmp_path, small_run):
    cfg, _ = small_run
    cfg2 = small_config(
        tmp_path / "c", synth=None, corpus_dir=str(Path(cfg.output_dir) / "data"),
        schemes=["word"], methods=["triangulate"], direct=False,
    )
    rep = run_experiment(cfg2)
    assert rep.bleu[("word", "tri.L1")] == small_run[1].bleu[("word", "tri.L1")]


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        small_config(tmp_path, schemes=["morph"])
    with pytest.raises(ConfigError):
        small_config(tmp_path, methods=["cascade"])
    with pytest.raises(ConfigError):
        small_config(tmp_path, corpus_dir=str(tmp_path))
    with pytest.raises(ConfigError):
        small_config(tmp_path, synth=None, corpus_dir=str(tmp_path / "nowhere"))
    with pytest.raises(ConfigError):
        small_config(tmp_path, schema_version=99)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"output_dir": "x", "synth": {}, "schema_version": 1, "colour": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"output_dir": "x", "synth": {}})


def test_config_roundtrip_applies_defaults_once(tmp_path):
    cfg = small_config(tmp_path, lm_order={"bpe": 7})
    assert cfg.lm_order["bpe"] == 7 and cfg.lm_order["word"] == 5
    cfg.save(tmp_path / "c.json")
    again = ExperimentConfig.load(tmp_path / "c.json")
    assert again == cfg


def test_shipped_configs_load():
    paths = sorted((Path(__file__).parent.parent / "configs").glob("*.json"))
    assert paths
    for path in paths:
        cfg = ExperimentConfig.load(path)
        assert cfg.source not in cfg.pivots and cfg.target not in cfg.pivots
