"""Gradient-weighted class activation maps over a small, exactly specified CNN.

The network is deliberately tiny so its backward pass can be checked by
finite differences:

    input  H x W x 3 in [0, 1]
    conv1  3x3, 3 -> 8,  stride 1, zero pad 1, ReLU
    conv2  3x3, 8 -> 16, stride 1, zero pad 1, ReLU   (feature maps, n=16)
    global average pool -> 16
    dense  16 -> 2 logits, softmax probabilities

The activation map for class c is ReLU(sum_k alpha_k A^k) with
alpha_k = mean over (i, j) of d y_c / d A^k_{i,j}, where y_c is the
pre-softmax logit by default (a softmax-score variant is available via
``score="softmax"``) and Z, the alpha normalizer, is u*v.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError
from .projection import ProjectionImage

CONV1_OUT = 8
CONV2_OUT = 16
N_CLASSES = 2

# Shape aliases: FeatureMaps and ClassGradients are float arrays (n, u, v),
# AlphaWeights is (n,), CamMap is (u, v).
FeatureMaps = np.ndarray
ClassGradients = np.ndarray
CamMap = np.ndarray


@dataclass(frozen=True)
class MicroCnn:
    conv1_w: np.ndarray  # (8, 3, 3, 3)   [out][in][ky][kx]
    conv1_b: np.ndarray  # (8,)
    conv2_w: np.ndarray  # (16, 8, 3, 3)
    conv2_b: np.ndarray  # (16,)
    dense_w: np.ndarray  # (2, 16)        [out][in]
    dense_b: np.ndarray  # (2,)

    def __post_init__(self):
        shapes = {
            "conv1_w": (CONV1_OUT, 3, 3, 3), "conv1_b": (CONV1_OUT,),
            "conv2_w": (CONV2_OUT, CONV1_OUT, 3, 3), "conv2_b": (CONV2_OUT,),
            "dense_w": (N_CLASSES, CONV2_OUT), "dense_b": (N_CLASSES,),
        }
        for name, shape in shapes.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise InvalidArgumentError(f"{name} must have shape {shape}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def init_micro_cnn(seed: int) -> MicroCnn:
    """Seeded uniform +/- 1/sqrt(fan_in) initialization, zero biases."""
    rng = np.random.default_rng(seed)

    def uni(shape, fan_in):
        b = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-b, b, size=shape)

    return MicroCnn(
        conv1_w=uni((CONV1_OUT, 3, 3, 3), 3 * 9),
        conv1_b=np.zeros(CONV1_OUT),
        conv2_w=uni((CONV2_OUT, CONV1_OUT, 3, 3), CONV1_OUT * 9),
        conv2_b=np.zeros(CONV2_OUT),
        dense_w=uni((N_CLASSES, CONV2_OUT), CONV2_OUT),
        dense_b=np.zeros(N_CLASSES),
    )


def _conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 convolution (cross-correlation), stride 1, zero padding 1.

    x: (cin, h, w) -> (cout, h, w)
    """
    cin, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((w.shape[0], h, wd))
    for ky in range(3):
        for kx in range(3):
            patch = xp[:, ky:ky + h, kx:kx + wd]
            out += np.einsum("oi,ihw->ohw", w[:, :, ky, kx], patch)
    return out + b[:, None, None]


def forward(net: MicroCnn, img: ProjectionImage) -> dict:
    """Exact forward pass; returns a cache of all activations.

    Cache keys: x, pre1, a1, pre2, features (post-ReLU conv2), gap,
    logits, probs.
    """
    if img.channels != 3:
        raise InvalidArgumentError("micro CNN input must have 3 channels")
    x = img.samples.astype(np.float64).transpose(2, 0, 1)  # (3, h, w)
    pre1 = _conv3x3(x, net.conv1_w, net.conv1_b)
    a1 = np.maximum(pre1, 0.0)
    pre2 = _conv3x3(a1, net.conv2_w, net.conv2_b)
    features = np.maximum(pre2, 0.0)
    gap = features.mean(axis=(1, 2))
    logits = net.dense_w @ gap + net.dense_b
    shifted = logits - logits.max()
    e = np.exp(shifted)
    probs = e / e.sum()
    return {"x": x, "pre1": pre1, "a1": a1, "pre2": pre2,
            "features": features, "gap": gap, "logits": logits, "probs": probs}


def backward_to_features(net: MicroCnn, cache: dict, class_index: int,
                         score: str = "logit") -> ClassGradients:
    """Gradient of the class score w.r.t. the post-ReLU conv2 feature maps.

    ``score="logit"`` (default, standard grad-CAM practice) differentiates
    the pre-softmax logit; ``score="softmax"`` differentiates the softmax
    probability instead.
    """
    if class_index not in range(N_CLASSES):
        raise InvalidArgumentError(f"class_index must be in 0..{N_CLASSES - 1}")
    if score not in ("logit", "softmax"):
        raise InvalidArgumentError("score must be 'logit' or 'softmax'")
    features = cache["features"]
    n, u, v = features.shape
    if score == "logit":
        dgap = net.dense_w[class_index]
    else:
        p = cache["probs"]
        dlogits = -p[class_index] * p
        dlogits[class_index] += p[class_index]
        dgap = net.dense_w.T @ dlogits
    grads = np.broadcast_to(dgap[:, None, None] / (u * v), (n, u, v))
    return np.ascontiguousarray(grads)


def gradcam(features: FeatureMaps, grads: ClassGradients) -> CamMap:
    """ReLU-rectified weighted sum of feature maps (the activation-map formula).

    alpha_k = mean over (i, j) of the gradients of map k (Z = u*v);
    the output is elementwise ReLU(sum_k alpha_k A^k).
    """
    features = np.asarray(features, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if features.ndim != 3 or features.shape != grads.shape:
        raise InvalidArgumentError(
            f"feature/gradient shapes differ: {features.shape} vs {grads.shape}")
    alpha = grads.mean(axis=(1, 2))
    cam = np.tensordot(alpha, features, axes=1)
    return np.maximum(cam, 0.0)


def cam_overlay(cam: CamMap, target_w: int, target_h: int) -> ProjectionImage:
    """Bilinear upsample of a CAM to the target size, min-max normalized.

    Constant maps normalize to all zeros.  Coordinates follow the same
    half-pixel voxel-center mapping used by volume resampling.
    """
    if target_w <= 0 or target_h <= 0:
        raise InvalidArgumentError("target dims must be positive")
    cam = np.asarray(cam, dtype=np.float64)
    u, v = cam.shape
    ys = np.clip((np.arange(target_h) + 0.5) * (u / target_h) - 0.5, 0, u - 1)
    xs = np.clip((np.arange(target_w) + 0.5) * (v / target_w) - 0.5, 0, v - 1)
    grid = np.meshgrid(ys, xs, indexing="ij")
    up = ndimage.map_coordinates(cam, np.stack(grid), order=1, mode="nearest")
    lo, hi = float(up.min()), float(up.max())
    out = np.zeros_like(up) if hi == lo else (up - lo) / (hi - lo)
    prov = {"mode": "cam_overlay", "normalized": True,
            "norm_min": [lo], "norm_max": [hi]}
    return ProjectionImage(target_w, target_h, 1, out, prov)


# ---------------------------------------------------------------------------
# Weight file: JSON manifest + raw little-endian float64 tensors.

_TENSOR_ORDER = ["conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense_w", "dense_b"]


def save_weights(net: MicroCnn, manifest_path: str | Path) -> None:
    manifest_path = Path(manifest_path)
    data_name = manifest_path.stem + ".bin"
    manifest = {
        "format": "microcnn-weights",
        "version": 1,
        "dtype": "f64le",
        "data": data_name,
        "tensors": [{"name": n, "shape": list(getattr(net, n).shape)}
                    for n in _TENSOR_ORDER],
    }
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    blob = b"".join(getattr(net, n).astype("<f8").tobytes() for n in _TENSOR_ORDER)
    (manifest_path.parent / data_name).write_bytes(blob)


def load_weights(manifest_path: str | Path) -> MicroCnn:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "microcnn-weights":
        raise InvalidArgumentError("not a microcnn weight manifest")
    raw = (manifest_path.parent / manifest["data"]).read_bytes()
    arrays = {}
    offset = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        arrays[entry["name"]] = np.frombuffer(
            raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += count * 8
    return MicroCnn(**arrays)
