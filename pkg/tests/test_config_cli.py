import numpy as np
import pytest

from raise_rerank.cli import ABLATE_VARIANTS, main
from raise_rerank.config import RunConfig, parse_config
from raise_rerank.errors import ConfigError

SMALL = ["--users", "30", "--items", "40", "--intents", "2", "--reviews_per_entity", "2",
         "--d", "8", "--n", "6", "--t", "2", "--l", "3", "--epochs", "2", "--base_epochs", "5",
         "--batch_size", "4", "--dropout", "0", "--profile_repeats", "1"]


def run_cli(tmp_path, command, *extra, workdir="w"):
    return main([command, "--workdir", str(tmp_path / workdir), *SMALL, *extra])


def test_empty_config_gives_defaults(tmp_path):
    (tmp_path / "c.cfg").write_text("")
    assert parse_config(tmp_path / "c.cfg", environ={}) == RunConfig().validate()


def test_flag_overrides_file(tmp_path):
    (tmp_path / "c.cfg").write_text("# comment\nt=4\n\nd = 16\n")
    cfg = parse_config(tmp_path / "c.cfg", {"t": "2"}, environ={})
    assert cfg.t == 2 and cfg.d == 16


def test_invalid_values_and_keys(tmp_path):
    (tmp_path / "c.cfg").write_text("dropout=0.9\n")
    with pytest.raises(ConfigError, match=r"\[0\.1, 0\.5\] ∪ \{0\}"):
        parse_config(tmp_path / "c.cfg", environ={})
    (tmp_path / "u.cfg").write_text("d=8\nbogus=1\n")
    with pytest.raises(ConfigError, match=r"u\.cfg:2"):
        parse_config(tmp_path / "u.cfg", environ={})
    with pytest.raises(ConfigError):
        parse_config(None, {"d": "eight"}, environ={})


def test_seed_precedence(tmp_path):
    (tmp_path / "c.cfg").write_text("seed=1\n")
    assert parse_config(tmp_path / "c.cfg", environ={}).seed == 1
    assert parse_config(tmp_path / "c.cfg", environ={"RAISE_SEED": "5"}).seed == 5
    assert parse_config(tmp_path / "c.cfg", {"seed": "9"}, environ={"RAISE_SEED": "5"}).seed == 9


def test_l_sets_both_lengths():
    cfg = parse_config(None, {"l": "7"}, environ={})
    assert cfg.l_u == cfg.l_i == 7


def test_missing_upstream_artifact_names_producer(tmp_path, capsys):
    assert run_cli(tmp_path, "gen-synth") == 0
    assert run_cli(tmp_path, "evaluate") == 2
    assert "train-rerank" in capsys.readouterr().err


def _pipeline(tmp_path, workdir):
    for command in ("gen-synth", "embed-reviews", "train-base", "make-lists", "train-rerank", "evaluate"):
        assert run_cli(tmp_path, command, workdir=workdir) == 0, command
    return tmp_path / workdir


def test_end_to_end_pipeline_is_reproducible(tmp_path):
    a = _pipeline(tmp_path, "a")
    b = _pipeline(tmp_path, "b")
    for name in ("raise.ckpt", "gmf.ckpt", "metrics.tsv", "lists_test.tsv", "raise.cfg", "train_log.tsv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert (a / "raise.ckpt").read_bytes()[:6] == b"RAISE1"
    lines = (a / "metrics.tsv").read_text().splitlines()
    assert lines[0].split("\t")[:2] == ["method", "k"]
    assert {line.split("\t")[0] for line in lines[1:]} == {"gmf_initial", "raise"}

    assert run_cli(tmp_path, "ablate", workdir="a") == 0
    rows = (a / "ablation.tsv").read_text().splitlines()[1:]
    assert {r.split("\t")[0] for r in rows} == set(ABLATE_VARIANTS) | {"gmf_initial"}

    assert run_cli(tmp_path, "profile", workdir="a") == 0
    assert (a / "cost.tsv").read_text().startswith("mechanism\tattn_madds")

    assert run_cli(tmp_path, "explain", workdir="a") == 0
    explain = (a / "explain.tsv").read_text().splitlines()
    assert explain[0] == "user\titem\tk\tj\tscore"
    scores = [float(line.split("\t")[4]) for line in explain[1:]]
    assert scores and scores == sorted(scores, reverse=True)
    assert np.all(np.isfinite(scores))
