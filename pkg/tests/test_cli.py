import json
import subprocess
import sys

import numpy as np
import pytest

from dmic.cli import build_parser, main
from dmic.features import SampleMeta, save_features, save_meta
from dmic.synth import SynthConfig, generate


@pytest.fixture
def dataset(tmp_path):
    x, meta = generate(SynthConfig(n_identities=6, cams_v=2, cams_r=2, samples_per_id_per_cam=4, dim=12, seed=3))
    save_features(x, tmp_path / "f.mcf")
    save_meta(meta, tmp_path / "m.csv")
    return tmp_path


def test_gen(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps({"n_identities": 3, "dim": 6}))
    code = main(["gen", "--config", str(tmp_path / "s.json"), "--out-features", str(tmp_path / "f.mcf"),
                 "--out-meta", str(tmp_path / "m.csv")])
    assert code == 0
    assert len((tmp_path / "m.csv").read_text().splitlines()) == 1 + 3 * 6 * 6


def test_cluster_happy_path(dataset):
    code = main(["cluster", "--features", str(dataset / "f.mcf"), "--meta", str(dataset / "m.csv"),
                 "--scope", "inter", "--eps", "0.6", "--k1", "40", "--k2", "32", "--min-samples", "4",
                 "--camera-balanced", "--out", str(dataset / "labels.csv")])
    assert code == 0
    lines = (dataset / "labels.csv").read_text().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    assert body[0] == "index,label" and len(body) == 1 + 96


def test_rerank_writes_jaccard(dataset):
    code = main(["rerank", "--features", str(dataset / "f.mcf"), "--meta", str(dataset / "m.csv"),
                 "--scope", "V", "--k1", "10", "--k2", "4", "--out", str(dataset / "j.mcj")])
    assert code == 0
    assert (dataset / "j.mcj").read_bytes()[:4] == b"MCJ1"


def test_missing_features_is_usage_error(dataset, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["cluster", "--meta", str(dataset / "m.csv"), "--out", str(dataset / "l.csv")])
    assert exc.value.code == 2
    assert "usage:" in capsys.readouterr().err


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_eval_disjoint_identities(tmp_path, capsys):
    meta = SampleMeta(np.array(["V", "V", "R", "R"]), np.array([0, 0, 1, 1]), np.array([0, 1, 2, 3]))
    save_features(np.eye(4)[:, :3] + 0.1, tmp_path / "f.mcf")
    save_meta(meta, tmp_path / "m.csv")
    code = main(["eval", "--features", str(tmp_path / "f.mcf"), "--meta", str(tmp_path / "m.csv"),
                 "--out", str(tmp_path / "r.json")])
    assert code == 3
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error code=EmptyEvaluation message=")


def test_missing_file_is_io_error(tmp_path, capsys):
    code = main(["eval", "--features", str(tmp_path / "nope.mcf"), "--meta", str(tmp_path / "m.csv"),
                 "--out", str(tmp_path / "r.json")])
    assert code == 4
    assert capsys.readouterr().err.startswith("error code=IOError")


def test_eval_report(dataset):
    code = main(["eval", "--features", str(dataset / "f.mcf"), "--meta", str(dataset / "m.csv"),
                 "--out", str(dataset / "r.json")])
    assert code == 0
    report = json.loads((dataset / "r.json").read_text())
    assert set(report) == {"rank1", "rank5", "rank10", "rank20", "map", "minp", "n_query", "n_gallery"}


def test_train_and_ablate(dataset):
    cfg = {"intra_epochs": 2, "inter_epochs": 2, "inter_decay_epochs": 1, "k1": 12, "eps1": 2,
           "eps2": 4, "eps3": 6, "P": 2, "Z": 4, "iterations": 1}
    (dataset / "c.json").write_text(json.dumps(cfg))
    io = ["--features", str(dataset / "f.mcf"), "--meta", str(dataset / "m.csv"), "--config", str(dataset / "c.json")]
    assert main(["train", *io, "--out-dir", str(dataset / "run")]) == 0
    for name in ("runlog.csv", "report.json", "embedder.mcw1", "clusters.csv"):
        assert (dataset / "run" / name).exists()
    assert main(["eval", "--features", str(dataset / "f.mcf"), "--meta", str(dataset / "m.csv"),
                 "--embedder", str(dataset / "run" / "embedder.mcw1"), "--out", str(dataset / "r.json")]) == 0
    assert main(["ablate", *io, "--out-dir", str(dataset / "abl"), "--variants", "VC", "MIE+DNC"]) == 0
    rows = (dataset / "abl" / "ablation.csv").read_text().splitlines()
    assert len(rows) == 3 and rows[1].startswith("VC,")
    assert (dataset / "abl" / "MIE_DNC" / "runlog.csv").exists()


def test_bad_config_is_domain_error(dataset, capsys):
    (dataset / "c.json").write_text(json.dumps({"nope": 1}))
    code = main(["train", "--features", str(dataset / "f.mcf"), "--meta", str(dataset / "m.csv"),
                 "--config", str(dataset / "c.json"), "--out-dir", str(dataset / "run")])
    assert code == 3
    assert "code=ConfigError" in capsys.readouterr().err


@pytest.mark.parametrize("command", ["gen", "rerank", "cluster", "train", "eval", "ablate"])
def test_help_per_subcommand(command):
    out = subprocess.run([sys.executable, "-m", "dmic", command, "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.startswith("usage: dmic " + command)


def test_parser_lists_subcommands():
    text = build_parser().format_help()
    for command in ("gen", "rerank", "cluster", "train", "eval", "ablate"):
        assert command in text
