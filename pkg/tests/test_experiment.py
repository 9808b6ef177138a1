import json
import os
from dataclasses import replace

import numpy as np
import pytest

from mepconnect.cli import main
from mepconnect.errors import ConfigError
from mepconnect.experiment import (
    ExperimentConfig,
    ExperimentError,
    ExperimentReport,
    emit_connectivity_table,
    emit_path_profile_csv,
    load_config,
    parse_config,
    read_path_file,
    read_profile_csv,
    render_table,
    run_experiment,
    sample_pairs,
)
from mepconnect.pathfind import connect_pair

from conftest import RINGS_CONFIG


@pytest.fixture(scope="module")
def config():
    return load_config(RINGS_CONFIG)


def small(config, **kw):
    return replace(config, pair_count=kw.pop("pairs", 5), **kw)


def test_config_file_round_trip(config):
    assert config.dataset.kind == "rings" and config.dataset.n == 400
    assert config.layer_dims == (2, 32, 32, 2)
    assert config.pair_count == 25 and config.target_class == 1
    assert config.explicit_pairs == (((1.625, 0.0), (-1.625, 0.0)),)
    assert config.neb.N == 20 and config.neb.step_size == 0.05
    assert config.decoder.layers == (0, 2)
    assert config.profile_pair == ((1.625, 0.0), (-1.625, 0.0))


def test_defaults_match_config_file(config):
    base = ExperimentConfig()
    assert base.neb == config.neb and base.train == config.train
    assert base.layer_dims == config.layer_dims


@pytest.mark.parametrize("text", [
    "[bogus]\na = 1\n",
    "[neb]\nwhatever = 3\n",
    "[neb]\nN = zero\n",
    "[neb]\nN = 0\n",
    "[experiment]\npairs = 0\n",
    "[experiment]\nexplicit_pairs = 1 2 3\n",
])
def test_bad_config(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_pairs_share_class_and_are_deterministic(rings_model, rings_data, config):
    a = sample_pairs(rings_model, rings_data, config)
    b = sample_pairs(rings_model, rings_data, config)
    assert len(a) == 25 and a[0].source == "explicit"
    for p, q in zip(a, b):
        assert p.x1.tobytes() == q.x1.tobytes() and p.target == q.target == 1


def test_any_target_rule(rings_model, rings_data, config):
    pairs = sample_pairs(rings_model, rings_data, replace(config, target_class=None, explicit_pairs=()))
    assert {p.target for p in pairs} == {0, 1}


def test_resampling_exhaustion(rings_model, rings_data, config):
    bad = replace(config, explicit_pairs=(((0.0, 0.0), (0.1, 0.0)),) * 200, pair_count=1)
    with pytest.raises(ExperimentError, match="exhausted"):
        sample_pairs(rings_model, rings_data, bad)


def test_report_accounting(tmp_path, rings_model, config):
    report = run_experiment(small(config), str(tmp_path), model=rings_model)
    assert report.layers == (0, 1, 2)
    for l in report.layers:
        assert sum(report.counts[l].values()) == 5
    assert report.recount() == report.counts
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["provenance"]["model_hash"] and doc["provenance"]["config_hash"]
    assert len(doc["pairs"]) == 15
    lines = (tmp_path / "connectivity.csv").read_text().splitlines()
    assert lines[0] == "layer,linear,nonlinear,none" and len(lines) == 4
    text = (tmp_path / "connectivity.txt").read_text()
    for label in ("Linear path exists", "Nonlinear path exists", "No path exists", "Original"):
        assert label in text


def test_invalid_layer(rings_model, config):
    with pytest.raises(ExperimentError, match="layer"):
        run_experiment(small(config, layers=(3,)), model=rings_model)


def test_missing_checkpoint(config, tmp_path):
    with pytest.raises(ExperimentError, match="checkpoint"):
        run_experiment(replace(config, checkpoint=str(tmp_path / "nope.cpth")))


def test_single_layer_table(tmp_path):
    report = ExperimentReport((0,), 5, {0: {"linear": 5, "nonlinear": 0, "none": 0}}, [], {}, {})
    report.recount = lambda: report.counts
    path = tmp_path / "t.csv"
    emit_connectivity_table(report, str(path))
    assert path.read_text() == "layer,linear,nonlinear,none\n0,5,0,0\n"
    report.counts[0]["none"] = 1
    with pytest.raises(ExperimentError):
        emit_connectivity_table(report, str(path))


def test_reference_table_shape():
    # Table-1 shape: three verdict rows, one column per representation space
    counts = {0: {"linear": 19, "nonlinear": 6, "none": 0},
              1: {"linear": 14, "nonlinear": 11, "none": 0},
              2: {"linear": 25, "nonlinear": 0, "none": 0}}
    report = ExperimentReport((0, 2, 1), 25, counts, [], {}, {})
    lines = render_table(report, num_hidden=2).splitlines()
    assert len(lines) == 5
    assert lines[2].split()[-3:] == ["19", "25", "14"]
    assert lines[3].split()[-3:] == ["6", "0", "11"]
    assert lines[4].split()[-3:] == ["0", "0", "0"]


def test_profile_csv(tmp_path, rings_model):
    v = connect_pair(rings_model, 0, np.array([1.625, 0.0]), np.array([-1.625, 0.0]))
    path = tmp_path / "p.csv"
    emit_path_profile_csv(v, str(path))
    blocks = read_profile_csv(str(path))
    assert path.read_text().splitlines()[0] == "block,t,class_0_prob,class_1_prob,argmax,is_target"
    for t, probs, arg, is_t in blocks.values():
        assert np.all(np.diff(t) > 0)
        assert np.all(np.abs(probs.sum(axis=1) - 1.0) < 1e-9)
        assert np.array_equal(arg == 1, is_t)
    assert not blocks["linear"][3].all() and blocks["final"][3].all()


def test_path_file_round_trip(tmp_path, rings_model):
    from mepconnect.experiment import write_path_file
    v = connect_pair(rings_model, 2, np.array([1.625, 0.0]), np.array([-1.625, 0.0]))
    write_path_file(v.final_path, tmp_path / "p.csv")
    back = read_path_file(tmp_path / "p.csv")
    assert back.layer_index == 2 and back.points.tobytes() == v.final_path.points.tobytes()


class TestCli:
    def test_end_to_end(self, tmp_path, capsys):
        out = str(tmp_path)
        assert main(["train", "--config", RINGS_CONFIG, "--out", out]) == 0
        assert os.path.exists(os.path.join(out, "model.cpth"))
        assert os.path.exists(os.path.join(out, "decoder_layer2.cptd"))
        cfg = tmp_path / "run.ini"
        cfg.write_text(open(RINGS_CONFIG).read().replace("# checkpoint = model.cpth", "checkpoint = model.cpth"))
        assert main(["connect", "--config", str(cfg), "--out", out, "--pairs", "4", "--layer", "0"]) == 0
        assert (tmp_path / "connectivity.csv").read_text().splitlines()[1].startswith("0,")
        assert main(["profile", "--config", str(cfg), "--out", out, "--layer", "2"]) == 0
        assert main(["decode", os.path.join(out, "decoder_layer2.cptd"),
                     os.path.join(out, "path_layer2.csv"), "--out", out, "--samples", "3"]) == 0
        rows = (tmp_path / "decoded.csv").read_text().splitlines()
        assert rows[0] == "t,x0,x1" and len(rows) == 1 + 22 + 21 * 3

    def test_profile_explicit_pair(self, tmp_path, capsys):
        rc = main(["profile", "--config", RINGS_CONFIG, "--out", str(tmp_path), "--layer", "0",
                   "--x1", "1.625", "0", "--x2", "-1.625", "0"])
        assert rc == 0 and "NonlinearlyConnectable" in capsys.readouterr().out

    def test_error_is_one_line(self, tmp_path, capsys):
        rc = main(["connect", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path)])
        err = capsys.readouterr().err
        assert rc != 0
        assert err.count("\n") == 1 and err.startswith("mepconnect: error: ConfigError:")

    def test_bad_checkpoint_exit_code(self, tmp_path, capsys):
        (tmp_path / "bad.cpth").write_bytes(b"CPTH\x01\x00")
        cfg = tmp_path / "c.ini"
        cfg.write_text("[classifier]\ncheckpoint = bad.cpth\n")
        assert main(["connect", "--config", str(cfg), "--out", str(tmp_path)]) == 1
        assert "FormatError" in capsys.readouterr().err
