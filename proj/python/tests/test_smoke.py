import numpy as np
import pytest

import mvfcn


def write_pnm(path, array):
    array = np.asarray(array, dtype=np.uint8)
    magic = b"P6" if array.ndim == 3 else b"P5"
    h, w = array.shape[:2]
    path.write_bytes(magic + b"\n%d %d\n255\n" % (w, h) + array.tobytes())


def make_sequence(root, count=6, size=32, seed=0):
    rng = np.random.default_rng(seed)
    (root / "input").mkdir(parents=True)
    (root / "groundtruth").mkdir()
    for i in range(1, count + 1):
        image = rng.integers(40, 120, size=(size, size, 3))
        mask = np.zeros((size, size), dtype=np.uint8)
        y, x = rng.integers(0, size // 2, size=2)
        image[y : y + size // 3, x : x + size // 3] = 220
        mask[y : y + size // 3, x : x + size // 3] = 255
        write_pnm(root / "input" / f"in{i:06d}.ppm", image)
        write_pnm(root / "groundtruth" / f"gt{i:06d}.pgm", mask)


def test_structure():
    assert mvfcn.parameter_count() == 494337
    shapes = mvfcn.layer_shapes()
    assert len(shapes) == 32
    assert shapes[-1] == (32, 240, 320, 1)
    assert "494,337" in mvfcn.summary()
    with pytest.raises(mvfcn.ShapeError):
        mvfcn.layer_shapes(241, 320)


def test_thresholds_and_metrics():
    scores = np.array([[0.2, 0.6]], dtype=np.float32)
    assert mvfcn.threshold_global(scores, 0.5).tolist() == [[0, 1]]
    with pytest.raises(mvfcn.ConfigError):
        mvfcn.threshold_global(scores, 1.5)

    bimodal = np.where(np.arange(64).reshape(8, 8) < 40, 0.1, 0.9).astype(np.float32)
    otsu = mvfcn.otsu_threshold(bimodal)
    assert 0.1 < otsu["tau"] < 0.9
    assert otsu["sigma_w2"] == pytest.approx(0.0)
    with pytest.raises(mvfcn.DataError):
        mvfcn.otsu_threshold(np.full((4, 4), 0.3, dtype=np.float32))
    mask, tau, fallback = mvfcn.binarize(bimodal, "otsu", min_area=0)
    assert mask.sum() == 24 and not fallback

    blob = np.zeros((20, 20), dtype=np.uint8)
    blob[2:9, 2:9] = 1
    assert mvfcn.remove_small_regions(blob, 50).sum() == 0
    assert mvfcn.remove_small_regions(blob, 49).sum() == 49

    pred = np.zeros((4, 4), dtype=np.uint8)
    gt = np.zeros((4, 4), dtype=np.uint8)
    pred[0, 0] = pred[0, 1] = pred[1, 0] = pred[3, 3] = 1
    gt[0, 0] = gt[0, 1] = gt[1, 0] = gt[2, 2] = gt[2, 3] = 1
    assert mvfcn.confusion(pred, gt) == {"tp": 3, "fp": 1, "fn": 2, "tn": 10}
    assert mvfcn.fom(3, 1, 2) == pytest.approx(0.6667, abs=1e-4)
    assert mvfcn.fom_soft(pred.astype(np.float32), gt) == pytest.approx(2 / 3, abs=1e-6)
    report = mvfcn.evaluate_sequence([pred, gt], [gt, gt])
    assert report["fom"] == pytest.approx(16 / 19)


def test_train_and_predict(tmp_path):
    make_sequence(tmp_path / "seq")
    config = tmp_path / "run.cfg"
    config.write_text("seed = 3\nmax_epochs = 1\nbatch_size = 2\ninput_height = 32\ninput_width = 32\n")
    ckpt = str(tmp_path / "model.mvfc")
    code, out, err = mvfcn.run_cli(["train", "--config", str(config), "--data", str(tmp_path / "seq"), "--out", ckpt])
    assert code == 0, err
    assert "final train FoM" in out

    model = mvfcn.Model(ckpt)
    image = np.random.default_rng(1).integers(0, 256, size=(64, 48, 3), dtype=np.uint8)
    a = model.predict(image, 32, 32)
    b = model.predict(image.astype(np.float32) / 255.0, 32, 32)
    assert a.shape == (32, 32) and a.dtype == np.float32
    assert ((a >= 0) & (a <= 1)).all()
    np.testing.assert_array_equal(a, model.predict(image, 32, 32))
    np.testing.assert_allclose(a, b, atol=1e-6)
    with pytest.raises(mvfcn.ShapeError):
        model.predict(image[..., :2], 32, 32)
    with pytest.raises(mvfcn.CheckpointError):
        mvfcn.Model(str(tmp_path / "missing.mvfc"))

    code, _, err = mvfcn.run_cli(["summary", "--input-size", "241x320"])
    assert code == 2 and "divisible by 16" in err
