"""Smoke tests for the python bindings: shapes, contracts, and fixtures."""

import os
import sys
import tempfile

import numpy as np

import lmbisnet


def test_parameter_count():
    assert lmbisnet.count_parameters() == 168943
    net = lmbisnet.Network(width1=2, width2=4, width3=8, multipath_width=4, seed=7)
    assert net.parameter_count == lmbisnet.count_parameters(
        width1=2, width2=4, width3=8, multipath_width=4
    )
    # ablations strictly shrink the budget
    full = lmbisnet.count_parameters()
    assert lmbisnet.count_parameters(passes=1) < full
    assert lmbisnet.count_parameters(passes=1, multipath=False) < lmbisnet.count_parameters(passes=1)


def test_forward_probability_map():
    net = lmbisnet.Network(width1=2, width2=4, width3=8, multipath_width=4, seed=3)
    rng = np.random.default_rng(1)
    image = rng.random((1, 3, 32, 32), dtype=np.float32)
    prob = net.forward(image, training=True)
    assert prob.shape == (1, 2, 32, 32)
    sums = prob.sum(axis=1)
    assert np.allclose(sums, 1.0, atol=1e-6)
    assert prob.min() >= 0.0 and prob.max() <= 1.0
    # same seed, same input: deterministic
    net2 = lmbisnet.Network(width1=2, width2=4, width3=8, multipath_width=4, seed=3)
    assert np.array_equal(prob, net2.forward(image, training=True))


def test_softmax():
    logits = np.zeros((1, 2, 4, 4), dtype=np.float32)
    logits[0, 1] = np.log(3.0)
    out = lmbisnet.softmax_channels(logits)
    assert np.allclose(out[0, 0], 0.25, atol=1e-6)
    assert np.allclose(out[0, 1], 0.75, atol=1e-6)


def test_dice_fixture():
    # uniform 0.5 prediction over a half-vessel ground truth scores dice 0.5
    hw = 8
    prob = np.full((1, 2, hw, hw), 0.5, dtype=np.float32)
    gt = np.zeros((1, 2, hw, hw), dtype=np.float32)
    gt[0, 1, : hw // 2, :] = 1.0
    gt[0, 0, hw // 2 :, :] = 1.0
    fov = np.ones((1, 1, hw, hw), dtype=np.float32)
    loss, grad = lmbisnet.dice_loss(prob, gt, fov, eps=1e-9)
    assert abs(loss - 0.5) < 1e-6
    assert grad.shape == prob.shape


def test_metrics_fixture():
    # tp=8, fn=2, fp=1, tn=9 arranged on a 4x5 grid
    pred = np.zeros((4, 5), dtype=np.uint8)
    gt = np.zeros((4, 5), dtype=np.uint8)
    fov = np.ones((4, 5), dtype=np.uint8)
    flat_pred = pred.reshape(-1)
    flat_gt = gt.reshape(-1)
    flat_pred[:8] = 1
    flat_gt[:8] = 1  # tp
    flat_gt[8:10] = 1  # fn
    flat_pred[10] = 1  # fp
    m = lmbisnet.metrics(pred, gt, fov)
    assert abs(m["se"] - 0.8) < 1e-12
    assert abs(m["sp"] - 0.9) < 1e-12
    assert abs(m["acc"] - 0.85) < 1e-12
    assert abs(m["f1"] - 16.0 / 19.0) < 1e-12
    assert abs(m["auc_eq7"] - 0.85) < 1e-12
    assert m["tp"] == 8 and m["tn"] == 9 and m["fp"] == 1 and m["fn"] == 2


def test_binarize():
    prob = np.zeros((1, 2, 2, 2), dtype=np.float32)
    prob[0, 1] = [[0.4, 0.5], [0.6, 0.5]]
    mask = lmbisnet.binarize(prob, threshold=0.5)
    assert mask.tolist() == [[0, 1], [1, 1]]


def test_save_load_round_trip():
    net = lmbisnet.Network(width1=2, width2=4, width3=8, multipath_width=4, seed=11)
    rng = np.random.default_rng(2)
    image = rng.random((1, 3, 16, 16), dtype=np.float32)
    before = net.forward(image, training=True)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "net.lmbs")
        net.save(path)
        loaded = lmbisnet.Network.load(path)
        after = loaded.forward(image, training=True)
    assert np.array_equal(before, after)


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for test in tests:
        test()
        print(f"ok  {test.__name__}")
    print(f"{len(tests)} python smoke tests passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
