from __future__ import annotations

import csv

from test_pipeline import TINY

from r2o.cli import main
from r2o.config import RunConfig
from r2o.formats import decode_label_map
from r2o.optim import tau_at
from r2o.refine import k_at


def _rows(text: str) -> list[list[str]]:
    return list(csv.reader(text.splitlines()))


def test_schedule_defaults_to_stdout(capsys):
    assert main(["schedule"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert rows[0] == ["epoch", "K", "tau"]
    assert len(rows) == 302
    cfg = RunConfig()
    assert rows[1][:2] == ["0", "128"]
    assert float(rows[1][2]) == tau_at(cfg.tau, 0)
    assert rows[-1][:2] == ["300", str(k_at(cfg.curriculum, 300))]
    assert float(rows[-1][2]) == 1.0


def test_schedule_to_file(tmp_path):
    ini = tmp_path / "tiny.ini"
    ini.write_text(TINY)
    out = tmp_path / "schedule.csv"
    assert main(["schedule", "--config", str(ini), "--out", str(out)]) == 0
    rows = _rows(out.read_text())
    assert [r[:2] for r in rows[1:]] == [["0", "4"], ["1", "4"], ["2", "2"]]


def test_gen_synthetic(tmp_path):
    spec = tmp_path / "spec.ini"
    spec.write_text("[synthetic]\nn_images = 2\nside = 16\n")
    out = tmp_path / "corpus"
    assert main(["gen-synthetic", "--spec", str(spec), "--out", str(out)]) == 0
    assert sorted(p.name for p in (out / "images").iterdir()) == ["img_00000.png",
                                                                   "img_00001.png"]
    gt = decode_label_map((out / "masks" / "img_00000.rlm").read_bytes())
    assert gt.shape == (16, 16)
    assert (out / "manifest.json").exists()


def test_pretrain_then_eval_abo(tmp_path):
    ini = tmp_path / "tiny.ini"
    ini.write_text(TINY)
    run = tmp_path / "run"
    assert main(["pretrain", "--config", str(ini), "--output", str(run)]) == 0
    assert (run / "metrics.csv").exists()

    out = tmp_path / "abo.csv"
    checkpoints = [str(run / "checkpoints" / f"epoch_000{e}.r2ock") for e in (1, 2)]
    assert main(["eval-abo", "--config", str(ini), "--checkpoints", *checkpoints,
                 "--out", str(out)]) == 0
    rows = _rows(out.read_text())
    assert rows[0] == ["epoch", "refined_abo", "slic_abo"]
    assert [r[0] for r in rows[1:]] == ["1", "2"]
    assert all(0.0 <= float(r[1]) <= 1.0 for r in rows[1:])


def test_missing_config_is_an_error(tmp_path):
    assert main(["pretrain", "--config", str(tmp_path / "nope.ini")]) == 1
