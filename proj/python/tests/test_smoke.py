import json
import math

import numpy as np
import pytest

import icrl

BLOBS = {"synth.classes": "30", "synth.per_class": "25", "synth.size": "16", "seed": "3"}
SMALL = {"blocks": "3", "channels": "8", "n": "5", "k": "5", "m": "5"}


@pytest.fixture(scope="module")
def blobs():
    return icrl.gen_blobs(BLOBS)


def test_dataset_shape_and_roundtrip(blobs, tmp_path):
    assert blobs.class_count == 30
    assert blobs.instance_shape == [3, 16, 16]
    image = blobs.instance(0, 0)
    assert image.shape == (3, 16, 16)
    path = tmp_path / "blobs.fsds"
    blobs.save(path)
    again = icrl.Dataset.load(path)
    np.testing.assert_array_equal(again.instance(7, 3), blobs.instance(7, 3))


def test_outlier_flags():
    data, flags = icrl.gen_outlier_blobs({**BLOBS, "synth.outlier_fraction": "0.2"})
    assert len(flags) == data.class_count
    assert 0 < sum(map(sum, flags)) < 30 * 25


def test_train_evaluate_and_checkpoint(blobs, tmp_path):
    split = icrl.split_classes(blobs, seed=0)
    model = icrl.build_model(blobs, SMALL)
    trained, rows = icrl.meta_train(
        blobs, model, split["train"], {**SMALL, "epochs": "1", "episodes_per_epoch": "4", "augment": "off"}
    )
    assert len(rows) == 4
    for r in rows:
        assert r["l_joint"] == pytest.approx(r["l_cls"] + 0.1 * r["l_intra"] + 0.1 * r["l_inter"], abs=1e-6)
    assert not trained.same_parameters(model)

    report = icrl.evaluate(trained, blobs, split["test"], episodes=10, n=5, k=5, m=5, seed=1)
    assert len(report["accuracies"]) == 10
    assert json.loads(report["json"])["episodes"] == 10

    path = tmp_path / "model.ckpt"
    trained.save(path)
    loaded = icrl.Model.load(path)
    assert loaded.same_parameters(trained)
    np.testing.assert_array_equal(loaded.parameter("airn.w3.weight"), trained.parameter("airn.w3.weight"))


def test_infer_episode_significance(blobs):
    model = icrl.build_model(blobs, SMALL)
    out = icrl.infer_episode(model, blobs, list(range(10)), n=5, k=5, m=5, seed=2)
    assert len(out["predictions"]) == 25
    assert all(0 < a < 1 for row in out["significance"] for a in row)


def test_summarize_accuracies():
    r = icrl.summarize_accuracies([0.6, 0.8] * 300)
    assert r["mean"] == pytest.approx(0.7, abs=1e-12)
    assert r["ci95"] == pytest.approx(1.96 * 0.1 / math.sqrt(599), abs=1e-12)


def test_run_command_and_errors(tmp_path):
    data = str(tmp_path / "d.fsds")
    icrl.run("synth", {**BLOBS, "out": data})
    out = icrl.run(
        "meta-train",
        {**SMALL, "dataset": data, "from_scratch": "on", "epochs": "1", "episodes_per_epoch": "2",
         "out": str(tmp_path / "m.ckpt")},
    )
    assert out
    with pytest.raises(icrl.ConfigError):
        icrl.run("synth", {"no_such_key": "1"})
    with pytest.raises(icrl.IoError):
        icrl.Dataset.load(tmp_path / "missing.fsds")
