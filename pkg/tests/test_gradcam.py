import numpy as np
import pytest

import importlib

gc = importlib.import_module("ctproj.gradcam")
from ctproj.errors import InvalidArgumentError
from ctproj.projection import ProjectionImage


def make_image(seed=0, h=8, w=8):
    rng = np.random.default_rng(seed)
    return ProjectionImage(w, h, 3, rng.random((h, w, 3)).astype(np.float32))


def zero_net():
    return gc.MicroCnn(
        conv1_w=np.zeros((8, 3, 3, 3)), conv1_b=np.zeros(8),
        conv2_w=np.zeros((16, 8, 3, 3)), conv2_b=np.zeros(16),
        dense_w=np.zeros((2, 16)), dense_b=np.zeros(2))


def scalar_forward(net, img):
    """Independent nested-loop reimplementation of the forward pass."""
    h, w = img.height, img.width
    x = [[[float(img.samples[i, j, c]) for j in range(w)] for i in range(h)]
         for c in range(3)]

    def conv(inp, weights, biases, cin, cout):
        out = []
        for o in range(cout):
            plane = []
            for i in range(h):
                row = []
                for j in range(w):
                    acc = biases[o]
                    for ci in range(cin):
                        for ky in range(3):
                            for kx in range(3):
                                ii, jj = i + ky - 1, j + kx - 1
                                if 0 <= ii < h and 0 <= jj < w:
                                    acc += weights[o][ci][ky][kx] * inp[ci][ii][jj]
                    row.append(max(acc, 0.0))
                plane.append(row)
            out.append(plane)
        return out

    a1 = conv(x, net.conv1_w.tolist(), net.conv1_b.tolist(), 3, 8)
    a2 = conv(a1, net.conv2_w.tolist(), net.conv2_b.tolist(), 8, 16)
    gap = [sum(sum(row) for row in plane) / (h * w) for plane in a2]
    logits = [sum(net.dense_w[o][k] * gap[k] for k in range(16)) + net.dense_b[o]
              for o in range(2)]
    return logits


# -- forward ----------------------------------------------------------------

def test_forward_zero_net_symmetric():
    cache = gc.forward(zero_net(), make_image())
    assert cache["logits"].tolist() == [0.0, 0.0]
    assert cache["probs"].tolist() == [0.5, 0.5]


def test_forward_probs_sum_to_one():
    net = gc.init_micro_cnn(3)
    cache = gc.forward(net, make_image(1))
    assert abs(cache["probs"].sum() - 1.0) <= 1e-12


def test_forward_matches_scalar_loop_oracle():
    net = gc.init_micro_cnn(7)
    img = make_image(2)
    cache = gc.forward(net, img)
    oracle = scalar_forward(net, img)
    assert abs(cache["logits"][0] - oracle[0]) <= 1e-12
    assert abs(cache["logits"][1] - oracle[1]) <= 1e-12


def test_forward_rejects_single_channel():
    img = ProjectionImage(4, 4, 1, np.zeros((4, 4), dtype=np.float32))
    with pytest.raises(InvalidArgumentError):
        gc.forward(gc.init_micro_cnn(0), img)


def test_init_deterministic():
    a, b = gc.init_micro_cnn(5), gc.init_micro_cnn(5)
    assert (a.conv1_w == b.conv1_w).all() and (a.dense_w == b.dense_w).all()


# -- backward_to_features ---------------------------------------------------

def fd_gradient(net, cache, c, step=1e-5):
    """Central finite differences of the logit w.r.t. the cached features,
    re-running only the layers above them (pool + dense)."""
    features = cache["features"]
    n, u, v = features.shape
    grads = np.zeros_like(features)
    for k in range(n):
        for i in range(u):
            for j in range(v):
                for sgn in (+1, -1):
                    f = features.copy()
                    f[k, i, j] += sgn * step
                    gap = f.mean(axis=(1, 2))
                    logit = float(net.dense_w[c] @ gap + net.dense_b[c])
                    grads[k, i, j] += sgn * logit
    return grads / (2 * step)


def test_backward_zero_dense_weights():
    net = zero_net()
    img = make_image(3)
    cache = gc.forward(net, img)
    assert (gc.backward_to_features(net, cache, 0) == 0).all()


def test_backward_analytic_form():
    net = gc.init_micro_cnn(9)
    cache = gc.forward(net, make_image(4))
    n, u, v = cache["features"].shape
    for c in range(2):
        grads = gc.backward_to_features(net, cache, c)
        for k in range(n):
            assert np.allclose(grads[k], net.dense_w[c, k] / (u * v))


def test_backward_matches_finite_differences():
    net = gc.init_micro_cnn(11)
    cache = gc.forward(net, make_image(5, h=6, w=6))
    grads = gc.backward_to_features(net, cache, 1)
    fd = fd_gradient(net, cache, 1)
    denom = np.maximum(np.abs(fd), 1e-8)
    assert (np.abs(grads - fd) / denom).max() <= 1e-4


def test_backward_softmax_variant():
    net = gc.init_micro_cnn(13)
    cache = gc.forward(net, make_image(6))
    p = cache["probs"]
    g_logit = gc.backward_to_features(net, cache, 0)
    g_soft = gc.backward_to_features(net, cache, 0, score="softmax")
    # d p0 / d gap = p0 * (W0 - (p0 W0 + p1 W1)); check one entry.
    n, u, v = cache["features"].shape
    expect = p[0] * (net.dense_w[0] - (p[0] * net.dense_w[0] + p[1] * net.dense_w[1]))
    assert np.allclose(g_soft[:, 0, 0], expect / (u * v))
    assert not np.allclose(g_soft, g_logit)


def test_backward_class_index_validation():
    net = gc.init_micro_cnn(1)
    cache = gc.forward(net, make_image(7))
    with pytest.raises(InvalidArgumentError):
        gc.backward_to_features(net, cache, 2)


# -- gradcam ----------------------------------------------------------------

def brute_force_cam(features, grads):
    n, u, v = features.shape
    out = np.zeros((u, v))
    for i in range(u):
        for j in range(v):
            acc = 0.0
            for k in range(n):
                alpha = 0.0
                for ii in range(u):
                    for jj in range(v):
                        alpha += grads[k, ii, jj]
                alpha /= u * v
                acc += alpha * features[k, i, j]
            out[i, j] = max(acc, 0.0)
    return out


def test_gradcam_direct_example():
    A = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    G = np.full((1, 2, 2), 0.5)
    assert gc.gradcam(A, G).tolist() == [[0.5, 1.0], [1.5, 2.0]]


def test_gradcam_rectifies_negative():
    A = np.abs(np.random.default_rng(2).normal(size=(1, 3, 3)))
    G = np.full((1, 3, 3), -1.0)
    assert (gc.gradcam(A, G) == 0).all()


def test_gradcam_matches_double_loop():
    rng = np.random.default_rng(17)
    A = rng.normal(size=(4, 3, 3))
    G = rng.normal(size=(4, 3, 3))
    assert np.abs(gc.gradcam(A, G) - brute_force_cam(A, G)).max() <= 1e-12


def test_gradcam_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        gc.gradcam(np.zeros((2, 3, 3)), np.zeros((2, 3, 4)))


def test_gradcam_scale_covariance():
    rng = np.random.default_rng(19)
    A = rng.normal(size=(5, 4, 4))
    G = rng.normal(size=(5, 4, 4))
    base = gc.gradcam(A, G)
    for s in (0.1, 10.0):
        assert np.abs(gc.gradcam(s * A, G / s) - base).max() <= 1e-12


def test_gradcam_linear_in_features_when_positive():
    rng = np.random.default_rng(23)
    A1 = np.abs(rng.normal(size=(3, 4, 4)))
    A2 = np.abs(rng.normal(size=(3, 4, 4)))
    G = np.abs(rng.normal(size=(3, 4, 4)))   # positive alphas, positive sums
    lhs = gc.gradcam(A1 + A2, G)
    rhs = gc.gradcam(A1, G) + gc.gradcam(A2, G)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_localization_single_channel_readout():
    # Dense weights hand-set so class 1 reads feature channel k0 only:
    # the CAM argmax must coincide with that channel's argmax.
    net = gc.init_micro_cnn(29)
    k0 = 5
    dense_w = np.zeros((2, 16))
    dense_w[1, k0] = 1.0
    net = gc.MicroCnn(net.conv1_w, net.conv1_b, net.conv2_w, net.conv2_b,
                      dense_w, np.zeros(2))
    cache = gc.forward(net, make_image(31, h=10, w=10))
    grads = gc.backward_to_features(net, cache, 1)
    cam = gc.gradcam(cache["features"], grads)
    assert np.unravel_index(cam.argmax(), cam.shape) == \
        np.unravel_index(cache["features"][k0].argmax(),
                         cache["features"][k0].shape)


# -- cam_overlay ------------------------------------------------------------

def test_overlay_constant_map_zeros():
    out = gc.cam_overlay(np.full((3, 3), 2.5), 6, 6)
    assert (out.samples == 0).all()


def test_overlay_identity_size_then_normalize():
    cam = np.array([[0.0, 1.0], [2.0, 3.0]])
    out = gc.cam_overlay(cam, 2, 2)
    assert np.allclose(out.samples, cam / 3.0)


def test_overlay_bilinear_oracle():
    # Hand bilinear computation with the half-pixel mapping
    # src = (i + 0.5) * (2 / 4) - 0.5, clipped to [0, 1].
    cam = np.array([[0.0, 0.0], [0.0, 1.0]])
    out = gc.cam_overlay(cam, 4, 4)
    src = np.clip((np.arange(4) + 0.5) * 0.5 - 0.5, 0, 1)
    expect = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            y, x = src[i], src[j]
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, 1), min(x0 + 1, 1)
            fy, fx = y - y0, x - x0
            val = (cam[y0, x0] * (1 - fy) * (1 - fx) + cam[y0, x1] * (1 - fy) * fx
                   + cam[y1, x0] * fy * (1 - fx) + cam[y1, x1] * fy * fx)
            expect[i, j] = val
    expect = expect / expect.max()
    assert np.allclose(out.samples, expect)
    assert np.unravel_index(out.samples.argmax(), (4, 4)) == (3, 3)


def test_overlay_validation():
    with pytest.raises(InvalidArgumentError):
        gc.cam_overlay(np.zeros((2, 2)), 0, 4)


# -- weights I/O ------------------------------------------------------------

def test_weights_roundtrip(tmp_path):
    net = gc.init_micro_cnn(37)
    gc.save_weights(net, tmp_path / "weights.json")
    back = gc.load_weights(tmp_path / "weights.json")
    for name in ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense_w", "dense_b"):
        assert (getattr(net, name) == getattr(back, name)).all()


def test_weights_bad_manifest(tmp_path):
    (tmp_path / "w.json").write_text("{}")
    with pytest.raises(InvalidArgumentError):
        gc.load_weights(tmp_path / "w.json")
