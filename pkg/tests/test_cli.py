import json

import numpy as np
import pytest

from specklelab.cli import main
from specklelab.imageio import load_image

TINY = {
    "schema_version": 1,
    "dataset": {"patch_size": 17, "stride": 16, "train_patches": 40, "validation_patches": 20},
    "model": {"num_layers": 2, "hidden_channels": 2},
    "train": {"epochs": 2, "batch_size": 8, "learning_rate": 3e-3, "loss": {"lambda": 0.3}},
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.json").write_text(json.dumps(TINY))
    bad = json.loads(json.dumps(TINY))
    bad["train"]["learning_rate"] = 1e12
    (d / "boom.json").write_text(json.dumps(bad))
    return d


def _last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_full_workflow(work, capsys):
    cfg = str(work / "tiny.json")
    assert main(["simulate", "--out", str(work / "noisy.gimg"), "--seed", "3"]) == 0
    echo = capsys.readouterr().out
    assert '"lambda": 0.3' in echo  # bundled desk profile, every default spelled out
    assert '"soft_bandwidth": 1.0' in echo

    assert main(["build-dataset", "--config", cfg, "--out", str(work / "ds")]) == 0
    assert _last_json(capsys)["splits"] == {"train": 40, "validation": 20}
    saved = json.loads((work / "ds" / "effective_config.json").read_text())
    assert saved["config"]["train"]["loss"]["epsilon_floor"] == 1e-8

    assert main(["train", str(work / "ds"), "--config", cfg, "--out", str(work / "run")]) == 0
    assert (work / "run" / "best.ckpt").exists() and (work / "run" / "train_report.json").exists()
    capsys.readouterr()

    ckpt = str(work / "run" / "best.ckpt")
    assert main(["despeckle", ckpt, str(work / "noisy.gimg"), "--out", str(work / "f.gimg"),
                 "--ratio", str(work / "r.gimg")]) == 0
    summary = _last_json(capsys)
    noisy = load_image(work / "noisy.gimg")
    filtered = load_image(work / "f.gimg")
    assert filtered.shape == noisy.shape and filtered.min() >= 0

    assert main(["ratio", str(work / "noisy.gimg"), str(work / "f.gimg"), "--out", str(work / "r2.gimg")]) == 0
    assert _last_json(capsys)["ratio_kl"] == summary["ratio_kl"]
    assert np.array_equal(load_image(work / "r.gimg"), load_image(work / "r2.gimg"))

    corpus = work / "corpus"
    corpus.mkdir()
    (corpus / "a.gimg").write_bytes((work / "noisy.gimg").read_bytes())
    assert main(["evaluate", ckpt, str(corpus), "--out", str(work / "ev")]) == 0
    assert (work / "ev" / "metrics.csv").read_text().splitlines()[0] == "image,enl,ratio_kl"
    assert main(["evaluate", ckpt, str(corpus), "--clean", str(corpus), "--out", str(work / "ev2")]) == 0
    assert (work / "ev2" / "metrics.csv").read_text().splitlines()[0] == "image,psnr,ssim,snr"


def test_overrides_are_echoed(work, capsys):
    out = work / "o.pgm"
    assert main(["simulate", "--looks", "4", "--lambda", "0", "--seed", "8",
                 "--out", str(out), "--format", "pgm16"]) == 0
    doc = json.loads(capsys.readouterr().out.split("\n{\"output\"")[0])
    assert doc["speckle"] == {"looks": 4, "seed": 8}
    assert doc["config"]["train"]["loss"]["lambda"] == 0.0
    assert out.read_bytes().startswith(b"P5")


def test_validation_errors_exit_2(work, capsys):
    assert main(["train", str(work / "missing"), "--out", str(work / "x")]) == 2
    assert main(["simulate", "--config", str(work / "nope.json"), "--out", str(work / "x.gimg")]) == 2
    assert main(["simulate", "--looks", "0", "--out", str(work / "x.gimg")]) == 2
    (work / "junk.pgm").write_bytes(b"P5\n4 4\n255\n")
    assert main(["simulate", str(work / "junk.pgm"), "--out", str(work / "x.gimg")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2
    assert "error" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_abort_exits_3(work, capsys):
    ds = work / "ds3"
    assert main(["build-dataset", "--config", str(work / "tiny.json"), "--out", str(ds)]) == 0
    assert main(["train", str(ds), "--config", str(work / "boom.json"), "--out", str(work / "boom")]) == 3
    assert "non-finite" in capsys.readouterr().err
