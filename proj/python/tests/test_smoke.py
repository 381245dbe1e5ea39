import math

import numpy as np
import pytest

import icssn

icssn.set_log_level(3)

TINY = """
[data]
tile_size = 32
augmentations = 0
[synth]
tile_size = 32
landslide_count = 6
slope_count = 6
min_radius = 5
max_radius = 9
rim_width = 2
[encoder]
backbone_depth = 18
base_width = 8
output_channels = 16
aspp_dilations = 1,2
se_reduction = 4
[classifier]
hidden_units = 8
[socl]
n_pos = 16
n_neg = 16
[training]
epochs_classification = 1
epochs_segmentation = 1
epochs_warmup = 1
max_rounds = 1
workers = 1
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY)
    return path


def test_socl_thresholds():
    for n, want in [(0, 0), (6, 0), (7, 1), (57, 1), (58, 2), (64, 2)]:
        block = np.zeros((8, 8), dtype=np.uint8)
        block.flat[:n] = 1
        assert icssn.socl_labels(block)[0, 0] == want
    assert icssn.socl_labels(np.zeros((512, 512), dtype=np.uint8)).shape == (64, 64)


def test_pixel_metrics_hand_case():
    truth = np.zeros((4, 4), dtype=np.uint8)
    pred = np.zeros((4, 4), dtype=np.uint8)
    truth[0, 0] = truth[0, 1] = truth[1, 1] = 1
    pred[0, 0] = pred[0, 1] = pred[2, 2] = 1
    out = icssn.pixel_metrics(pred, truth)
    assert out["counts"] == {"tp": 2, "tn": 12, "fp": 1, "fn": 1}
    assert out["metrics"]["landslide_iou"] == pytest.approx(0.5)
    with pytest.raises(icssn.ShapeError):
        icssn.pixel_metrics(pred, np.zeros((4, 5), dtype=np.uint8))


def test_contrastive_hand_case():
    a = np.array([[1.0, 0.0]])
    v = icssn.contrastive_loss(a, a, -a, np.ones((1, 1), dtype=bool), 1.0)
    assert v == pytest.approx(math.log1p(math.exp(-2.0)), abs=1e-12)
    with pytest.raises(icssn.ContractError):
        icssn.contrastive_loss(2 * a, a, -a, np.ones((1, 1), dtype=bool), 1.0)


def test_synth_is_deterministic(tiny_config):
    a = icssn.synth(str(tiny_config), 3)
    b = icssn.synth(str(tiny_config), 3)
    assert len(a) == 12
    ident, tile, mask, label = a[0]
    assert tile.shape == (32, 32, 3) and mask.shape == (32, 32)
    assert label == "landslide" and mask.any()
    assert all(np.array_equal(x[1], y[1]) for x, y in zip(a, b))
    assert not a[-1][2].any()


def test_complexity_band():
    report = icssn.complexity()
    assert 40.0 <= report["segmentation"]["parameters_m"] <= 90.0


def test_train_and_evaluate(tiny_config, tmp_path):
    data = tmp_path / "data"
    icssn.write_synthetic_dataset(str(tiny_config), 1, str(data))
    out = tmp_path / "run"
    log = icssn.train(tiny_config, data, out)
    names = [s["name"] for s in log["rounds"][0]["steps"]]
    assert names == list(log["steps"])
    assert names[0] == "classification/joint" and names[-1] == "classification/warmup"
    seg = icssn.evaluate(out / "segmentation.pt", data)
    assert 0.0 <= seg["pixel"]["landslide_iou"] <= 1.0
    cls = icssn.evaluate(out / "classification.pt", data)
    assert 0.0 <= cls["accuracy"] <= 1.0


def test_bad_config(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[nonsense]\nx = 1\n")
    with pytest.raises(icssn.ConfigError):
        icssn.load_config_ini(str(bad))
