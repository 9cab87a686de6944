"""Scikit-learn style wrappers so the pipeline composes with the ecosystem.

These transformers are stateless (``fit`` just validates and returns self)
and operate on lists of toolkit objects: volumes, (volume, mask) pairs, or
projection images.  Parameters follow the sklearn convention so
``get_params`` / ``set_params`` / ``clone`` work as usual.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin

from . import augmentation, projection, segmentation
from .gradcam import (backward_to_features, cam_overlay, forward, gradcam,
                      init_micro_cnn)
from .errors import InvalidArgumentError
from .volume import Axis, BinaryMask, HuVolume


class _Stateless:
    """Mixin for transformers with no fitted state.

    ``fit`` only validates, so these are usable straight after
    construction; telling sklearn so silences its fitted-state checks.
    """

    def __sklearn_is_fitted__(self):
        return True


def _as_list(X):
    if isinstance(X, (HuVolume, BinaryMask, projection.ProjectionImage, tuple)):
        return [X], True
    return list(X), False


def check_volume(v) -> HuVolume:
    if not isinstance(v, HuVolume):
        raise InvalidArgumentError(f"expected HuVolume, got {type(v).__name__}")
    return v


def check_pair(item) -> tuple[HuVolume, BinaryMask]:
    v, m = item
    if not isinstance(m, BinaryMask):
        raise InvalidArgumentError(f"expected BinaryMask, got {type(m).__name__}")
    check_volume(v)
    if v.dims != m.dims:
        raise InvalidArgumentError("volume and mask dims differ")
    return v, m


class LungSegmenter(_Stateless, BaseEstimator, TransformerMixin):
    """Transforms HU volumes into lung masks via the watershed pipeline."""

    def __init__(self, threshold_hu=segmentation.DEFAULT_THRESHOLD_HU,
                 min_voxels=segmentation.DEFAULT_MIN_VOXELS, connectivity=26,
                 r_intermediate=segmentation.DEFAULT_R_INTERMEDIATE,
                 r_external=segmentation.DEFAULT_R_EXTERNAL,
                 r_close=segmentation.DEFAULT_R_CLOSE):
        self.threshold_hu = threshold_hu
        self.min_voxels = min_voxels
        self.connectivity = connectivity
        self.r_intermediate = r_intermediate
        self.r_external = r_external
        self.r_close = r_close

    def fit(self, X, y=None):
        items, _ = _as_list(X)
        for v in items:
            check_volume(v)
        return self

    def transform(self, X):
        items, single = _as_list(X)
        out = [segmentation.segment_lungs(
            check_volume(v), self.threshold_hu, self.min_voxels,
            self.connectivity, self.r_intermediate, self.r_external,
            self.r_close) for v in items]
        return out[0] if single else out


class AipProjector(_Stateless, BaseEstimator, TransformerMixin):
    """Projects (volume, mask) pairs into 2D images.

    mode="grayscale" gives the whole-scan single-channel projection,
    mode="bands" the three HU-band channels.
    """

    def __init__(self, axis="z", mode="grayscale", normalize=True):
        self.axis = axis
        self.mode = mode
        self.normalize = normalize

    def fit(self, X, y=None):
        self._validate()
        return self

    def _validate(self):
        if self.mode not in ("grayscale", "bands"):
            raise InvalidArgumentError("mode must be 'grayscale' or 'bands'")
        Axis(self.axis)

    def transform(self, X):
        self._validate()
        items, single = _as_list(X)
        axis = Axis(self.axis)
        out = []
        for item in items:
            v, m = check_pair(item)
            img = (projection.aip(v, m, axis) if self.mode == "grayscale"
                   else projection.aip_channels(v, m, axis))
            if self.normalize:
                img = projection.normalize01(img)
            out.append(img)
        return out[0] if single else out


class Projection2DAugmenter(_Stateless, BaseEstimator, TransformerMixin):
    """Applies the seeded random rotate/scale augmentation to projections.

    The i-th image in the input list uses draw index ``draw_offset + i``.
    """

    def __init__(self, max_rotation_deg=20.0, scale_range=(0.8, 1.2),
                 seed=0, draw_offset=0):
        self.max_rotation_deg = max_rotation_deg
        self.scale_range = scale_range
        self.seed = seed
        self.draw_offset = draw_offset

    def fit(self, X, y=None):
        self._spec()
        return self

    def _spec(self):
        return augmentation.Augment2Spec(
            self.max_rotation_deg, tuple(self.scale_range), self.seed)

    def transform(self, X):
        spec = self._spec()
        items, single = _as_list(X)
        out = [augmentation.augment2d(img, spec, self.draw_offset + i)
               for i, img in enumerate(items)]
        return out[0] if single else out


class CamExtractor(_Stateless, BaseEstimator, TransformerMixin):
    """Computes class activation overlays for 3-channel projection images."""

    def __init__(self, net=None, class_index=1, score="logit", seed=0):
        self.net = net
        self.class_index = class_index
        self.score = score
        self.seed = seed

    def fit(self, X, y=None):
        return self

    def _net(self):
        return self.net if self.net is not None else init_micro_cnn(self.seed)

    def transform(self, X):
        net = self._net()
        items, single = _as_list(X)
        out = []
        for img in items:
            cache = forward(net, img)
            grads = backward_to_features(net, cache, self.class_index,
                                         self.score)
            cam = gradcam(cache["features"], grads)
            out.append(cam_overlay(cam, img.width, img.height))
        return out[0] if single else out
