import json

import numpy as np
import pytest

import illuminorm


def test_ssim_identity_and_constant_closed_form():
    rng = np.random.default_rng(0)
    a = rng.random((16, 16))
    assert illuminorm.ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    p, q, c1 = 0.3, 0.7, 0.01**2
    expected = (2 * p * q + c1) / (p * p + q * q + c1)
    assert illuminorm.ssim(np.full((16, 16), p), np.full((16, 16), q)) == pytest.approx(expected, abs=1e-9)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    a, b = rng.random((20, 20)), rng.random((20, 20))
    r, grad = illuminorm.recon_distance_with_gradient(a, b, window_size=7)
    assert grad.shape == a.shape
    assert r == pytest.approx(1.0 - illuminorm.ssim(a, b, window_size=7))
    h = 1e-4
    for i, j in [(3, 4), (10, 10), (0, 19)]:
        up, down = a.copy(), a.copy()
        up[i, j] += h
        down[i, j] -= h
        fd = (illuminorm.ssim(down, b, window_size=7) - illuminorm.ssim(up, b, window_size=7)) / (2 * h)
        assert grad[i, j] == pytest.approx(fd, rel=1e-3, abs=1e-9)


def test_bad_inputs_raise():
    with pytest.raises(ValueError):
        illuminorm.ssim(np.zeros((8, 8)), np.zeros((9, 9)))
    with pytest.raises(ValueError):
        illuminorm.ssim(np.zeros((16, 16)), np.zeros((16, 16)), window_size=4)
    with pytest.raises(ValueError):
        illuminorm.ssim(np.zeros(16), np.zeros(16))


def test_train_index_and_predict(tmp_path):
    root = tmp_path / "ds"
    illuminorm.generate_dataset(root, train_scenes=72, test_scenes=8, variants=3, seed=2, size=32)
    scenes = illuminorm.load_split(root, "train")
    assert len(scenes) == 72
    assert scenes[0]["variants"][0].shape == (32, 32)
    with pytest.raises(OSError):
        illuminorm.load_split(tmp_path / "missing")

    model, history = illuminorm.train(root, epochs=2, learning_rate=1e-3, batch_size=8, latent_dim=4,
                                      widths=[4, 8], beta=0.0)
    assert len(history["epochs"]) == 2
    for step in history["steps"]:
        assert abs(step["total"] - (step["recon"] + step["triplet"])) <= 1e-9
    assert model.variant == "tae"
    assert json.loads(model.training)["config"]["learning_rate"] == 1e-3

    ckpt = tmp_path / "m.ckpt"
    model.save(ckpt)
    loaded = illuminorm.Model.load(ckpt)
    assert loaded.fingerprint == model.fingerprint

    index = illuminorm.LatentIndex.build(loaded, root)
    assert len(index) == 72 * 3
    assert index.fingerprint == model.fingerprint
    image = scenes[5]["variants"][2]
    assert index.predict(loaded, image) == scenes[5]["label"]
    scene_id, variant_id, label, distance = index.knn(loaded.embed(image), 1)[0]
    assert (scene_id, variant_id, distance) == (scenes[5]["scene_id"], 2, 0.0)
    nn = index.nn_reconstruct(loaded, image)
    assert np.array_equal(nn, loaded.decode(loaded.embed(image)))
    assert loaded.reconstruct(image).shape == (32, 32)

    index.save(tmp_path / "index.csv")
    assert len(illuminorm.LatentIndex.load(tmp_path / "index.csv")) == len(index)

    scores = illuminorm.evaluate(loaded, root)
    assert 0.0 <= scores["accuracy"] <= 1.0
    assert scores["recon_score"] <= 1.0
    with pytest.raises(ValueError):
        illuminorm.train(root, variant="gan", epochs=1)
