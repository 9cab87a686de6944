"""ctproj: volumetric CT processing toolkit.

Lung segmentation, HU-banded average-intensity projections, sub-region
labeling infrastructure, augmentation, dataset splitting and grad-CAM
localization, all verifiable on synthetic phantoms.
"""

from .volume import (Axis, BinaryMask, HuVolume, downsample2, load_mask,
                     load_volume, resample, rotate3d, save_mask, save_volume)
from .phantom import PhantomSpec, generate_phantom
from .segmentation import dice, segment_lungs, threshold_mask
from .projection import (HuRangeSet, ProjectionImage, aip, aip_channels,
                         normalize01)
from .regions import (DatasetSplit, RegionId, RegionLabels, ScanRecord,
                      assign_survival_labels, balance, partition_regions,
                      split_by_patient)
from .augmentation import Augment2Spec, augment2d, rotations27
from .gradcam import (MicroCnn, backward_to_features, cam_overlay, forward,
                      init_micro_cnn)
from .estimators import (AipProjector, CamExtractor, LungSegmenter,
                         Projection2DAugmenter)
# The gradcam function itself stays at ctproj.gradcam.gradcam so the
# submodule name is not shadowed by the function.
from . import gradcam

__version__ = "0.1.0"
