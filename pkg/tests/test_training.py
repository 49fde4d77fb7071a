import numpy as np
import pytest

from m2h.checkpoint import load_model
from m2h.config import ModelConfig, RunConfig
from m2h.data import SceneDataset, generate_scene
from m2h.evaluation import evaluate, read_report, write_report
from m2h.losses import LOSS_TASKS
from m2h.model import M2H
from m2h.training import LOG_COLUMNS, BatchSampler, TrainingDiverged, read_log, train


def micro_run(**kw):
    model = ModelConfig(patch=4, emb_dim=16, encoder_blocks=2, encoder_heads=2, image_size=16, channels=8,
                        window=2, wmca_heads=2, num_classes=4, head_stem=4)
    base = dict(model=model, steps=10, batch_size=2, seed=0, checkpoint_every=5)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def scenes():
    return SceneDataset.from_scenes([generate_scene(s, 16, 16, num_shapes=2) for s in range(3)])


@pytest.fixture(scope="module")
def trained(tmp_path_factory, scenes):
    out = tmp_path_factory.mktemp("run")
    cfg = micro_run()
    return cfg, out, train(cfg, scenes, out)


def test_outputs_written(trained):
    cfg, out, result = trained
    assert (out / "config.txt").read_text().startswith("model.patch = 4")
    assert (out / "step_000005.ckpt").exists() and (out / "step_000010.ckpt").exists()
    assert (out / "final.ckpt").exists()
    rows = read_log(out / "train_log.csv")
    assert len(rows) == cfg.steps
    assert tuple(rows[0]) == LOG_COLUMNS
    for row, mem in zip(rows, result.log):
        assert row["total"] == mem["total"]


def test_schedule_in_log(trained):
    cfg, out, _ = trained
    rows = read_log(out / "train_log.csv")
    for r in rows:
        assert r["lr"] == pytest.approx(cfg.lr * (1 - r["step"] / cfg.steps) ** 0.9, abs=1e-9)
        if r["phase"] == "initial":
            assert r["loss_xdn"] == 0.0 and r["loss_xes"] == 0.0 and r["w_consistency"] == 0.0
            assert (r["alpha"], r["beta"]) == (0.5, 0.75)
        else:
            assert r["w_consistency"] == 0.1
            assert r["loss_xdn"] > 0 and r["loss_xes"] > 0
            assert (r["alpha"], r["beta"]) == (0.75, 1.0)
    assert [r["phase"] for r in rows].count("finetune") == 2


def test_dwa_weights_in_log(trained):
    _, out, _ = trained
    rows = read_log(out / "train_log.csv")
    cols = [f"w_{t}" for t in ("seg", "depth", "normals", "edges")]
    assert len(cols) == len(LOSS_TASKS)
    for i, r in enumerate(rows):
        w = np.array([r[c] for c in cols])
        assert w.sum() == pytest.approx(4.0, abs=1e-6)
        if i < 2:
            np.testing.assert_array_equal(w, 1.0)


def test_final_checkpoint_matches_model(trained, scenes):
    _, out, result = trained
    model, ckpt = load_model(out / "final.ckpt")
    assert ckpt.step == 10
    np.testing.assert_array_equal(ckpt.dwa.weights, result.dwa.weights)
    x = scenes.batch([0, 1])["image"]
    a, b = model(x).numpy(), result.model(x).numpy()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_deterministic_rerun(scenes, trained):
    cfg, _, result = trained
    again = train(cfg, scenes)
    assert [r["total"] for r in again.log] == [r["total"] for r in result.log]
    for k, v in again.model.state_dict().items():
        np.testing.assert_array_equal(v, result.model.state_dict()[k])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_aborts(scenes):
    cfg = micro_run(lr=1e30, steps=20, checkpoint_every=0)
    with pytest.raises(TrainingDiverged) as info:
        train(cfg, scenes)
    assert info.value.step > 0


def test_batch_sampler_epochs():
    s = BatchSampler(5, 2, seed=1)
    seen = [i for _ in range(5) for i in s.next()]
    assert sorted(seen) == sorted(list(range(5)) * 2)
    assert BatchSampler(3, 8, 0).next() == [0, 1, 2]


def test_gt_as_prediction_report(tmp_path, scenes):
    model = M2H(micro_run().model, seed=0)
    rep = evaluate(model, scenes, 4, gt_as_prediction=True)
    assert rep.miou == 1.0 and rep.rmse == 0.0 and rep.merr == 0.0
    assert rep.odsf == 1.0
    write_report(tmp_path / "report.csv", rep)
    rows = read_report(tmp_path / "report.csv")
    assert len(rows) == 1 + 4
    assert rows[0]["row"] == "summary"


def test_evaluate_deterministic_and_writes_maps(tmp_path, scenes):
    model = M2H(micro_run().model, seed=0)
    a = evaluate(model, scenes, 4, batch_size=2, pred_dir=tmp_path / "pred")
    b = evaluate(model, scenes, 4, batch_size=2)
    assert a.summary() == b.summary()
    c = evaluate(model, scenes, 4, batch_size=3)
    for k, v in a.summary().items():
        assert c.summary()[k] == pytest.approx(v, rel=1e-5)
    assert len(list((tmp_path / "pred").iterdir())) > 0
