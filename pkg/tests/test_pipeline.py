from __future__ import annotations

import numpy as np
import pytest

from r2o.checkpoint import CheckpointMismatchError
from r2o.config import override, parse_config
from r2o.dataset import synthetic_corpus
from r2o.imaging import load_label_map
from r2o.optim import tau_at
from r2o.pipeline import (
    METRIC_COLUMNS,
    Trainer,
    abo_trend,
    corpus_abo,
    eval_abo_over_checkpoints,
    eval_seg,
    export_refined,
    pretrain,
    read_metrics,
)
from r2o.refine import k_at

TINY = """
[run]
seed = 7
epochs = 2
batch_size = 2
checkpoint_every = 1

[synthetic]
n_images = 4
side = 16
min_area = 0.02

[prior]
kind = grid
grid_cells = 4

[encoder]
side = 16
stem_channels = 4
stem_stride = 2
widths = 4, 8, 8
strides = 1, 2, 1

[heads]
hidden = 8
out = 4
predictor_hidden = 8

[curriculum]
k0 = 4
k_final = 2

[augment]
blur_kernel = 5
crop_scale = 0.5, 1.0
"""

IDENTITY_VIEWS = """
[augment]
crop_scale = 1.0, 1.0
crop_ratio = 1.0, 1.0
flip_prob = 0
jitter_prob = 0
grayscale_prob = 0
blur_prob = 0, 0
solarize_prob = 0, 0
"""


@pytest.fixture
def cfg():
    return parse_config(TINY)


@pytest.fixture
def corpus(cfg):
    return synthetic_corpus(cfg.synthetic)


def _strip_wall(rows):
    return [{k: v for k, v in r.items() if k != "wall_ms"} for r in rows]


def test_pretrain_writes_metrics_and_checkpoints(cfg, corpus, tmp_path):
    trainer = pretrain(cfg, corpus, output_dir=tmp_path)
    assert trainer.state.epoch == 2 and trainer.state.step == 4
    rows = read_metrics(tmp_path / "metrics.csv")
    assert tuple(rows[0].keys()) == METRIC_COLUMNS
    assert len(rows) == 4
    for r in rows:
        epoch = int(r["epoch"])
        assert int(r["K"]) == k_at(cfg.curriculum, epoch)
        assert float(r["tau"]) == tau_at(cfg.tau, epoch)
        assert 0.0 <= float(r["loss"]) <= 4.0
        assert int(r["n_pairs"]) >= 2
    assert (tmp_path / "checkpoints" / "epoch_0001.r2ock").exists()
    assert (tmp_path / "checkpoints" / "epoch_0002.r2ock").exists()


def test_twin_start_with_single_cluster_has_zero_loss(tmp_path):
    text = TINY.replace("[augment]\nblur_kernel = 5\ncrop_scale = 0.5, 1.0\n", IDENTITY_VIEWS)
    text = text.replace("predictor_hidden = 8", "predictor_hidden = 8\npredictor = identity")
    cfg = parse_config(text)
    cfg = override(cfg, "run", epochs=1)
    cfg = override(cfg, "curriculum", kind="fixed", k0=1, k_final=1, min_k=1)
    trainer = Trainer(cfg, synthetic_corpus(cfg.synthetic), tmp_path)
    trainer.fit()
    assert trainer.history[0].K == 1
    assert trainer.history[0].loss == pytest.approx(0.0, abs=1e-12)


def test_resume_reproduces_uninterrupted_run(cfg, corpus, tmp_path):
    full = Trainer(cfg, corpus, tmp_path / "full")
    full.fit()

    part = Trainer(cfg, corpus, tmp_path / "part")
    part.fit(max_epochs=1)
    resumed = Trainer(cfg, corpus, tmp_path / "part")
    resumed.resume(part.checkpoint_path(1))
    assert resumed.state.step == 2
    resumed.fit()

    a = read_metrics(tmp_path / "full" / "metrics.csv")
    b = read_metrics(tmp_path / "part" / "metrics.csv")
    assert _strip_wall(a) == _strip_wall(b)
    for name, p in full.online.params.items():
        np.testing.assert_array_equal(p, resumed.online.params[name])
    for name, p in full.target.params.items():
        np.testing.assert_array_equal(p, resumed.target.params[name])


def test_resume_with_other_config_needs_force(cfg, corpus, tmp_path):
    trainer = Trainer(cfg, corpus, tmp_path)
    trainer.fit(max_epochs=1)
    other = override(cfg, "run", seed=8)
    with pytest.raises(CheckpointMismatchError):
        Trainer(other, corpus, tmp_path).resume(trainer.checkpoint_path(1))
    forced = Trainer(other, corpus, tmp_path)
    forced.resume(trainer.checkpoint_path(1), force=True)
    assert forced.state.epoch == 1


def test_mask_dumps(cfg, corpus, tmp_path):
    cfg = override(cfg, "run", epochs=1, mask_dump_every=1, mask_dump_images=2)
    Trainer(cfg, corpus, tmp_path).fit()
    dumped = sorted((tmp_path / "masks" / "epoch_0001").glob("*.rlm"))
    assert [p.stem for p in dumped] == corpus.names[:2]
    assert load_label_map(dumped[0]).shape == (4, 4)


def test_evaluations_over_checkpoints(cfg, corpus, tmp_path):
    trainer = pretrain(cfg, corpus, output_dir=tmp_path / "run")
    checkpoints = [trainer.checkpoint_path(1), trainer.checkpoint_path(2)]

    rows = eval_abo_over_checkpoints(cfg, checkpoints, corpus)
    assert [r.epoch for r in rows] == [1, 2]
    assert rows[0].slic_abo == rows[1].slic_abo
    assert all(0.0 <= r.refined_abo <= 1.0 for r in rows)

    seg = eval_seg(cfg, checkpoints[-1], corpus, k=3)
    assert len(seg.rows) == 4
    assert 0.0 <= seg.mean_miou <= 1.0 and 0.0 <= seg.confusion_miou <= 1.0

    out = export_refined(cfg, checkpoints[-1], corpus, 2, tmp_path / "refined",
                         overlay=True, emit_prior=True)
    labels = load_label_map(out / f"{corpus.names[0]}.rlm")
    assert labels.shape == (16, 16)
    assert labels.max() < 2
    assert (out / f"{corpus.names[0]}_overlay.png").exists()
    assert (out / f"{corpus.names[0]}_prior.rlm").exists()


def test_corpus_abo_of_ground_truth_is_one(corpus):
    assert corpus_abo(corpus.masks, corpus.masks) == 1.0
    with pytest.raises(ValueError):
        eval_abo_over_checkpoints(parse_config(TINY), [], corpus.subset([]))


def test_training_with_refinement_disabled(tmp_path):
    cfg = parse_config(TINY + "\n[refine]\nenabled = false\n")
    assert not cfg.refine.enabled
    cfg = override(cfg, "run", epochs=1)
    trainer = Trainer(cfg, synthetic_corpus(cfg.synthetic), tmp_path)
    trainer.fit()
    rows = read_metrics(tmp_path / "metrics.csv")
    assert len(rows) == 2
    assert all(int(r["n_pairs"]) >= 2 for r in rows)


def test_abo_trend_evaluates_refined_masks_when_training_skips_refinement(tmp_path):
    cfg = parse_config(TINY + "\n[refine]\nenabled = false\n")
    corpus = synthetic_corpus(cfg.synthetic)
    rows = abo_trend(cfg, corpus, tmp_path)
    assert [r.epoch for r in rows] == [1, 2]
    checkpoints = sorted((tmp_path / "checkpoints").glob("epoch_*.r2ock"))
    enabled = override(cfg, "refine", enabled=True)
    assert eval_abo_over_checkpoints(enabled, checkpoints, corpus) == rows
