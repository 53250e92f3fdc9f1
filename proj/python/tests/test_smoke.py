import math

import numpy as np
import pytest

import segmil


def small_spec(seed=0):
    spec = segmil.SynthSpec()
    spec.n_train = 80
    spec.n_test = 80
    spec.seed = seed
    return spec


def test_bagpack_round_trip(tmp_path):
    manifest = segmil.DatasetManifest(2, 3, 2, ["a", "b"], "test")
    inst = segmil.Instance([0.1, 0.2, 0.3], [0.4, 0.6], [1], segmil.BBox(0, 0, 4, 4), 16)
    bags = [segmil.Bag("img", 1, 0, [inst])]
    path = tmp_path / "x.bagpack"
    segmil.write_bagpack(manifest, bags, path)
    ds = segmil.read_bagpack(path)
    assert ds.manifest == manifest
    assert ds.bags == bags


def test_invalid_bag_raises_schema_error(tmp_path):
    manifest = segmil.DatasetManifest(2, 3, 2, ["a", "b"])
    bad = segmil.Bag("img", 0, None, [segmil.Instance([0.0, 0.0, 0.0], [1.0], [0])])
    with pytest.raises(segmil.SchemaError, match="clip_scores length mismatch"):
        segmil.write_bagpack(manifest, [bad], tmp_path / "bad.bagpack")
    with pytest.raises(segmil.IoError):
        segmil.read_bagpack(tmp_path / "missing.bagpack")


def test_bag_construction_primitives():
    assert segmil.select_top_concepts([3, 1, 2, 2], 3) == [0, 2, 3]
    a = segmil.BinaryMask.from_rle(1, 3, [0, 2, 1])
    b = segmil.BinaryMask.from_rle(1, 3, [1, 2])
    assert segmil.mask_iou(a, b) == pytest.approx(1 / 3)
    merged = segmil.merge_masks([a, a, b], 0.5)
    assert [members for _, members in merged] == [[0, 1], [2]]


def test_forward_and_gradients():
    params = segmil.init_params(4, 3, 2, segmil.ModelConfig("linear"), seed=1)
    H = np.random.default_rng(0).normal(size=(5, 4))
    trace = segmil.forward(params, H)
    assert trace["alpha"].sum() == pytest.approx(1.0, abs=1e-12)
    perm = trace["logits"] - segmil.forward(params, H[::-1].copy())["logits"]
    assert np.abs(perm).max() < 1e-12

    bag = segmil.Bag("b", 1, None, [segmil.Instance(list(h), [0.2, 0.3, 0.5], [0]) for h in H])
    loss, grads = segmil.backward(params, [bag], 0.1)
    assert math.isfinite(loss)
    assert set(grads) == {"W_c", "w", "W_cls", "b_cls"}
    assert grads["W_c"].shape == (3, 4)


def test_train_evaluate_and_checkpoint(tmp_path):
    train, test = segmil.generate(small_spec())
    cfg = segmil.TrainConfig(lr=1e-2, epochs=5, model=segmil.ModelConfig("linear"))
    params, log = segmil.train(train.manifest, train.bags, cfg)
    assert len(log) == 5
    report = segmil.evaluate(params, test.bags)
    assert set(report["per_group_acc"]) == {0, 1, 2, 3}
    assert report["worst_group_acc"] <= report["avg_acc"]

    again, log2 = segmil.train(train.manifest, train.bags, cfg)
    assert log == log2

    path = tmp_path / "m.ckpt"
    segmil.save_checkpoint(params, train.manifest.concept_names, path)
    loaded, names = segmil.load_checkpoint(path)
    assert names == train.manifest.concept_names
    for key, value in params.tensors().items():
        np.testing.assert_array_equal(loaded.tensors()[key], value)


def test_corruption_and_metrics():
    _, test = segmil.generate(small_spec())
    noisy = segmil.corrupt(test.bags, "gauss_noise", 3, seed=2)
    assert len(noisy) == len(test.bags)
    assert noisy[0].instances[0].clip_scores == test.bags[0].instances[0].clip_scores
    with pytest.raises(segmil.ConfigError):
        segmil.corrupt(test.bags, "gauss_noise", 0)

    ce = segmil.corruption_report({"k": {1: 0.9, 2: 0.8, 3: 0.7, 4: 0.6, 5: 0.5}})
    assert ce["ce"]["k"] == pytest.approx(0.3)
    stats = segmil.seed_aggregate([0.7, 0.8, 0.9])
    assert stats["ci95"] == pytest.approx(1.96 * 0.1 / math.sqrt(3))
    assert segmil.seed_aggregate([0.5])["std"] is None
