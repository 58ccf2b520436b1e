import csv
import json

import numpy as np
import pytest

from nasgeom.cli import main
from nasgeom.io import read_fmat

ARCH = "|nor_conv_3x3~0|+|none~0|skip_connect~1|+|avg_pool_3x3~0|nor_conv_1x1~1|nor_conv_3x3~2|"
FAST = ["--inits", "2", "--batches", "1", "--batch-size", "24", "--channels", "4"]


def test_synth_cube_shape_and_repeatability(tmp_path, capsys):
    out = tmp_path / "cube.fmat"
    args = ["synth", "cube", "--d", "4", "--n", "2000", "--embed", "64", "--seed", "1", "--out", str(out)]
    assert main(args) == 0
    assert "true_dim=4" in capsys.readouterr().out
    first = out.read_bytes()
    assert read_fmat(out).values.shape == (2000, 64)
    assert main(args) == 0
    assert out.read_bytes() == first


def test_synth_usage_errors(tmp_path):
    assert main(["synth", "cube", "--d", "0", "--out", str(tmp_path / "x.fmat")]) == 2
    assert main(["synth", "cube", "--d", "5", "--embed", "3", "--out", str(tmp_path / "x.fmat")]) == 2
    assert main(["synth", "blob", "--out", str(tmp_path / "x.fmat")]) == 2


def test_measure_cube(tmp_path):
    cube = tmp_path / "cube.fmat"
    main(["synth", "cube", "--d", "4", "--n", "1000", "--embed", "16", "--seed", "1", "--out", str(cube)])
    out = tmp_path / "m.json"
    assert main(["measure", str(cube), "--out", str(out)]) == 0
    rec = json.loads(out.read_text())
    assert 3.0 <= rec["measures"]["mle"]["mean"] <= 5.0
    assert rec["schema"] == 1 and "manifest" in rec


def test_measure_only(tmp_path, capsys):
    cube = tmp_path / "c.fmat"
    main(["synth", "gaussian", "--d", "3", "--n", "300", "--out", str(cube)])
    capsys.readouterr()
    assert main(["measure", str(cube), "--only", "fishers,f_mean"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert set(rec["measures"]) == {"fishers", "f_mean"}


def test_measure_empty_file(tmp_path, capsys):
    (tmp_path / "e.fmat").write_bytes(b"")
    assert main(["measure", str(tmp_path / "e.fmat")]) == 2
    assert "too short" in capsys.readouterr().err


def test_measure_param_override(tmp_path, capsys):
    f = tmp_path / "c.fmat"
    main(["synth", "cube", "--d", "2", "--n", "300", "--out", str(f)])
    assert main(["measure", str(f), "--only", "mle", "--param", "k_mle=5"]) == 0
    assert main(["measure", str(f), "--param", "bogus=1"]) == 2


def test_extract_writes_files_and_manifest(tmp_path):
    out = tmp_path / "feats"
    assert main(["extract", "--arch", ARCH, *FAST, "--out", str(out)]) == 0
    files = sorted(out.glob("init_*.fmat"))
    assert len(files) == 2
    f = read_fmat(files[0])
    assert f.values.shape == (24, 16) and f.labels is not None
    man = json.loads((out / "manifest.json").read_text())
    assert man["arch"] == ARCH and len(man["init_seeds"]) == 2


def test_extract_bad_arch(tmp_path, capsys):
    assert main(["extract", "--arch", "|foo~0|", "--out", str(tmp_path / "x")]) == 2
    assert main(["extract", "--out", str(tmp_path / "x")]) == 2


def test_extract_cifar_wrong_length(tmp_path, capsys):
    bad = tmp_path / "data.bin"
    bad.write_bytes(bytes(100))
    assert main(["extract", "--arch", ARCH, "--cifar", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "3073" in capsys.readouterr().err


@pytest.fixture(scope="module")
def scored(tmp_path_factory):
    out = tmp_path_factory.mktemp("scores")
    assert main(["score", "--random", "3", *FAST, "--seed", "2", "--out", str(out)]) == 0
    return sorted(out.glob("score_*.json"))


def test_score_records(scored):
    assert len(scored) == 3
    rec = json.loads(scored[0].read_text())
    assert rec["schema"] == 1 and rec["manifest"]["config_hash"]


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_rank_sorted_with_columns(scored, tmp_path):
    out = tmp_path / "r.csv"
    assert main(["rank", *map(str, scored), "--key", "f_mean", "--csv", str(out)]) == 0
    rows = _rows(out)
    assert len(rows) == 3
    vals = [float(r["f_mean_mean"]) for r in rows]
    assert vals == sorted(vals)
    assert {"arch", "f_mean_std", "verdict_top-band", "verdict_avoid-low"} <= set(rows[0])


def test_filter_none_keeps_all(scored, tmp_path):
    out = tmp_path / "f.csv"
    js = tmp_path / "f.json"
    assert main(["filter", *map(str, scored), "--rules", "none", "--csv", str(out), "--json", str(js)]) == 0
    assert all(r["verdict_none"] == "keep" for r in _rows(out))
    assert json.loads(js.read_text())["rules"] == "none"


def test_filter_top_band_and_custom_rules(scored, tmp_path):
    assert main(["filter", *map(str, scored), "--rules", "top-band", "--csv", str(tmp_path / "t.csv")]) == 0
    rules = tmp_path / "wide.json"
    rules.write_text(json.dumps([{"measure": "f_mean", "intervals": [[0, 180]]}]))
    assert main(["filter", *map(str, scored), "--rules", str(rules), "--csv", str(tmp_path / "w.csv")]) == 0
    assert all(r["verdict_wide"] == "keep" for r in _rows(tmp_path / "w.csv"))


def test_filter_unknown_rule_set(scored):
    assert main(["filter", *map(str, scored), "--rules", "no-such-set"]) == 2


def test_config_file_and_override(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("inits = 1\nbatches = 1\nbatch-size = 16\nchannels = 4\nno-bias = true\n")
    out = tmp_path / "feats"
    assert main(["--config", str(conf), "extract", "--arch", ARCH, "--out", str(out)]) == 0
    assert len(list(out.glob("init_*.fmat"))) == 1
    assert read_fmat(out / "init_000.fmat").values.shape == (16, 16)
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["bias"] is False
    out2 = tmp_path / "feats2"
    assert main(["--config", str(conf), "extract", "--arch", ARCH, "--inits", "2", "--out", str(out2)]) == 0
    assert len(list(out2.glob("init_*.fmat"))) == 2
    conf.write_text("nonsense = 3\n")
    assert main(["--config", str(conf), "extract", "--arch", ARCH, "--out", str(out)]) == 2


def test_workers_env(monkeypatch, tmp_path):
    monkeypatch.setenv("NASGEOM_WORKERS", "3")
    from nasgeom.cli import build_parser

    assert build_parser().parse_args(["selfcheck"]).workers == 3


def test_selfcheck_passes(capsys):
    assert main(["selfcheck"]) == 0
    out = capsys.readouterr().out
    assert "n=10, a=0.8" in out
    assert out.count("PASS") == 4 and "FAIL" not in out
