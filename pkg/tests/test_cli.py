import csv
import subprocess
import sys

import pytest

from m2h.cli import main
from m2h.config import ModelConfig, RunConfig, dump_config
from m2h.training import read_log

MICRO = dict(patch=4, emb_dim=16, encoder_blocks=2, encoder_heads=2, image_size=16, channels=8,
             window=2, wmca_heads=2, num_classes=4, head_stem=4)


def write_cfg(path, steps=4, **model_kw):
    cfg = RunConfig(model=ModelConfig(**{**MICRO, **model_kw}), steps=steps, batch_size=2, checkpoint_every=0)
    path.write_text(dump_config(cfg))
    return path


@pytest.fixture
def dataset(tmp_path):
    root = tmp_path / "data"
    assert main(["gen", "--out", str(root), "--count", "3", "--size", "16", "--shapes", "2", "--seed", "1"]) == 0
    return root


def test_gen_writes_files_and_is_repeatable(tmp_path, dataset):
    rows = list(csv.DictReader(open(dataset / "index.csv")))
    assert len(rows) == 3
    other = tmp_path / "again"
    main(["gen", "--out", str(other), "--count", "3", "--size", "16", "--shapes", "2", "--seed", "1"])
    for f in sorted(p.name for p in dataset.iterdir()):
        assert (dataset / f).read_bytes() == (other / f).read_bytes()


def test_gen_bad_size(tmp_path, capsys):
    assert main(["gen", "--out", str(tmp_path / "x"), "--size", "100"]) == 2
    assert "16" in capsys.readouterr().err


def test_gen_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["gen", "--out", str(blocker / "sub"), "--count", "1", "--size", "16"]) == 2


def test_usage_error():
    assert main(["train"]) == 2
    assert main(["frobnicate"]) == 2


def test_train_then_eval(tmp_path, dataset, capsys):
    cfg = write_cfg(tmp_path / "run.cfg", steps=5)
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--data", str(dataset), "--out", str(out)]) == 0
    rows = read_log(out / "train_log.csv")
    assert len(rows) == 5
    assert rows[-1]["phase"] == "finetune"
    assert (out / "config.txt").exists() and (out / "final.ckpt").exists()

    ev = tmp_path / "eval"
    code = main(["eval", "--checkpoint", str(out / "final.ckpt"), "--data", str(dataset), "--config", str(cfg),
                 "--out", str(ev)])
    assert code == 0
    report = list(csv.DictReader(open(ev / "report.csv")))
    assert len(report) == 1 + 4
    assert (ev / "predictions").is_dir()
    first = (ev / "report.csv").read_text()
    main(["eval", "--checkpoint", str(out / "final.ckpt"), "--data", str(dataset), "--out", str(ev)])
    assert (ev / "report.csv").read_text() == first


def test_eval_gt_harness(tmp_path, dataset, capsys):
    from m2h.checkpoint import save_checkpoint
    from m2h.model import M2H

    ckpt = save_checkpoint(tmp_path / "m.ckpt", M2H(ModelConfig(**MICRO)))
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(dataset), "--gt-as-prediction"]) == 0
    text = capsys.readouterr().out
    assert "miou: 1.0" in text and "rmse: 0.0" in text and "merr: 0.0" in text and "odsf: 1.0" in text


def test_eval_config_mismatch(tmp_path, dataset):
    from m2h.checkpoint import save_checkpoint
    from m2h.model import M2H

    ckpt = save_checkpoint(tmp_path / "m.ckpt", M2H(ModelConfig(**MICRO)))
    other = write_cfg(tmp_path / "other.cfg", channels=16)
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(dataset), "--config", str(other)]) == 4
    toy = save_checkpoint(tmp_path / "toy.ckpt", M2H(ModelConfig.toy()))
    assert main(["eval", "--checkpoint", str(toy), "--data", str(dataset)]) == 4  # 16 px is below the toy stride


def test_train_missing_inputs(tmp_path, dataset):
    assert main(["train", "--config", str(tmp_path / "nope.cfg"), "--data", str(dataset),
                 "--out", str(tmp_path / "o")]) == 2
    cfg = write_cfg(tmp_path / "run.cfg")
    assert main(["train", "--config", str(cfg), "--data", str(tmp_path / "nodata"), "--out", str(tmp_path / "o")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_nan_exit_code(tmp_path, dataset, capsys):
    cfg = RunConfig(model=ModelConfig(**MICRO), steps=20, batch_size=2, checkpoint_every=0, lr=1e30)
    path = tmp_path / "nan.cfg"
    path.write_text(dump_config(cfg))
    assert main(["train", "--config", str(path), "--data", str(dataset), "--out", str(tmp_path / "o")]) == 3
    assert "step" in capsys.readouterr().err


def test_gradcheck_block_and_injected_bug(tmp_path, capsys):
    out = tmp_path / "gc.csv"
    assert main(["gradcheck", "--block", "ggfm", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert rows and all(r["passed"] == "1" for r in rows)
    assert main(["gradcheck", "--block", "ggfm", "--inject-bug"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_gradcheck_unknown_block():
    assert main(["gradcheck", "--block", "nope"]) == 2


def test_bench_csv(tmp_path, capsys):
    out = tmp_path / "b.csv"
    assert main(["bench", "--mode", "wmca", "--sizes", "14,28", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [int(r["size"]) for r in rows] == [14, 28]
    ratio = int(rows[1]["attention_macs"]) / int(rows[0]["attention_macs"])
    assert ratio == pytest.approx(4.0, rel=0.01)
    assert capsys.readouterr().out.startswith("mode,size,p,windows")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "m2h", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "gradcheck" in res.stdout
