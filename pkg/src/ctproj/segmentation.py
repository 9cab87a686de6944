"""Four-stage lung segmentation: threshold, markers, watershed, refinement.

Per axial slice the pipeline is

    threshold (<= -570 HU)  ->  3D component filtering  ->  markers
    ->  Sobel edge map  ->  marker-seeded priority-flood watershed
    ->  top-hat fill (morphological closing)  ->  hole closing

Marker semantics: label 1 (internal) is the thresholded lung tissue and
label 3 (external) is the annulus between the 10- and 35-pixel dilations.
Both seed the watershed.  Label 2 (intermediate, the 0..10-pixel annulus)
is the corridor the flood competes over: it marks where lung tissue may be
added to the threshold-based segmentation, with the Sobel edge map deciding
where the boundary settles.  The segmentation result is everything the
internal basins capture.

All structuring elements are Euclidean-distance discs; dilations and
erosions by a disc are computed exactly via the Euclidean distance
transform (squared distances are integers, so the comparisons are exact).
"""

from __future__ import annotations

import heapq
import warnings

import numpy as np
from scipy import ndimage

from .errors import EmptyMarkerError, InvalidArgumentError, MissingMarkerError
from .volume import BinaryMask, HuVolume

DEFAULT_THRESHOLD_HU = -570
DEFAULT_MIN_VOXELS = 1000
DEFAULT_R_INTERMEDIATE = 10
DEFAULT_R_EXTERNAL = 35
DEFAULT_R_CLOSE = 6

MARKER_INTERNAL = 1
MARKER_INTERMEDIATE = 2
MARKER_EXTERNAL = 3


def threshold_mask(v: HuVolume, threshold_hu: int = DEFAULT_THRESHOLD_HU) -> BinaryMask:
    """Voxel set iff HU <= threshold (air is more negative, so <= selects air-like)."""
    return BinaryMask(v.dims, v.data <= threshold_hu)


def filter_components(m: BinaryMask, min_voxels: int,
                      connectivity: int = 26) -> BinaryMask:
    """Keep components of size >= min_voxels that do not touch the XY border.

    Border-touching components are background air around the body.
    """
    if min_voxels < 1:
        raise InvalidArgumentError("min_voxels must be >= 1")
    if connectivity not in (6, 26):
        raise InvalidArgumentError("connectivity must be 6 or 26")
    structure = ndimage.generate_binary_structure(3, 1 if connectivity == 6 else 3)
    labels, n = ndimage.label(m.data, structure=structure)
    if n == 0:
        return m
    sizes = np.bincount(labels.ravel())
    border = np.unique(np.concatenate([
        labels[0, :, :].ravel(), labels[-1, :, :].ravel(),
        labels[:, 0, :].ravel(), labels[:, -1, :].ravel()]))
    keep = sizes >= min_voxels
    keep[0] = False
    keep[border] = False
    return BinaryMask(m.dims, keep[labels])


def _dist2(background_of: np.ndarray) -> np.ndarray:
    """Integer squared Euclidean distance to the True set of ``background_of``."""
    d = ndimage.distance_transform_edt(~background_of)
    return np.rint(d * d).astype(np.int64)


def dilate_disc(m: np.ndarray, r: int) -> np.ndarray:
    """Dilation by the Euclidean disc {dx^2 + dy^2 <= r^2}."""
    if not m.any():
        return m.copy()
    return _dist2(m) <= r * r


def erode_disc(m: np.ndarray, r: int) -> np.ndarray:
    """Erosion by the Euclidean disc, treating outside the image as foreground."""
    inv = ~m
    if not inv.any():
        return m.copy()
    return _dist2(inv) > r * r


def make_markers(internal: np.ndarray, r_intermediate: int = DEFAULT_R_INTERMEDIATE,
                 r_external: int = DEFAULT_R_EXTERNAL) -> np.ndarray:
    """Build the 2D marker map from an internal (thresholded) slice mask.

    label 1: internal pixels
    label 2: dilate(internal, r_intermediate) minus internal
    label 3: dilate(internal, r_external) minus dilate(internal, r_intermediate)
    label 0: elsewhere
    """
    if not (0 < r_intermediate < r_external):
        raise InvalidArgumentError(
            f"need 0 < r_intermediate < r_external, got {r_intermediate}, {r_external}")
    internal = np.asarray(internal, dtype=bool)
    if not internal.any():
        raise EmptyMarkerError("internal mask is empty")
    d2 = _dist2(internal)
    markers = np.zeros(internal.shape, dtype=np.uint8)
    markers[d2 <= r_external * r_external] = MARKER_EXTERNAL
    markers[d2 <= r_intermediate * r_intermediate] = MARKER_INTERMEDIATE
    markers[internal] = MARKER_INTERNAL
    return markers


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)


def sobel_edges(slice_hu: np.ndarray) -> np.ndarray:
    """Sobel gradient magnitude sqrt(Gx^2 + Gy^2), borders edge-replicated."""
    img = np.asarray(slice_hu, dtype=np.float64)
    gx = ndimage.correlate(img, _SOBEL_X, mode="nearest")
    gy = ndimage.correlate(img, _SOBEL_X.T, mode="nearest")
    return np.hypot(gx, gy)


def flood_basins(edges: np.ndarray, markers: np.ndarray,
                 domain: np.ndarray | None = None) -> np.ndarray:
    """Priority-flood watershed; returns per-pixel basin seed label (1 or 3).

    Seeds are the label-1 (internal) and label-3 (external) marker pixels,
    pushed in that order, raster-scan within each label.  Remaining pixels
    (label 2 and label 0) are flooded 4-connected; the heap orders pops by
    (edge value, insertion order, linear index), so results are fully
    deterministic.  ``domain`` optionally restricts flooding to a pixel
    subset; seeds outside the domain are ignored.
    """
    edges = np.asarray(edges, dtype=np.float64)
    markers = np.asarray(markers)
    if edges.shape != markers.shape:
        raise InvalidArgumentError("edge map and marker map shapes differ")
    h, w = edges.shape
    flat_edges = edges.ravel()
    flat_markers = markers.ravel()
    if domain is None:
        flat_domain = None
    else:
        flat_domain = np.asarray(domain, dtype=bool).ravel()

    basins = np.zeros(h * w, dtype=np.uint8)
    heap: list[tuple[float, int, int, int]] = []
    counter = 0
    for seed_label in (MARKER_INTERNAL, MARKER_EXTERNAL):
        for p in np.flatnonzero(flat_markers == seed_label):
            p = int(p)
            if flat_domain is not None and not flat_domain[p]:
                continue
            heap.append((flat_edges[p], counter, p, seed_label))
            counter += 1
    if not any(lab == MARKER_INTERNAL for _, _, _, lab in heap):
        raise MissingMarkerError("no internal (label 1) marker pixels")
    if not any(lab == MARKER_EXTERNAL for _, _, _, lab in heap):
        raise MissingMarkerError("no external (label 3) marker pixels")
    heapq.heapify(heap)

    push = heapq.heappush
    pop = heapq.heappop
    is_seed = (flat_markers == MARKER_INTERNAL) | (flat_markers == MARKER_EXTERNAL)
    while heap:
        _, _, p, lab = pop(heap)
        if basins[p]:
            continue
        basins[p] = lab
        py, px = divmod(p, w)
        for q in (p - w if py > 0 else -1,
                  p + w if py < h - 1 else -1,
                  p - 1 if px > 0 else -1,
                  p + 1 if px < w - 1 else -1):
            if q < 0 or basins[q] or is_seed[q]:
                continue
            if flat_domain is not None and not flat_domain[q]:
                continue
            push(heap, (flat_edges[q], counter, q, lab))
            counter += 1
    return basins.reshape(h, w)


def watershed(edges: np.ndarray, markers: np.ndarray) -> np.ndarray:
    """2D watershed result: pixels belonging to the internal catchment."""
    return flood_basins(edges, markers) == MARKER_INTERNAL


def tophat_fill(mask2d: np.ndarray, r_close: int) -> np.ndarray:
    """Union of the mask with the black-top-hat of its closing.

    Since closing is extensive this equals the morphological closing with a
    Euclidean disc of radius ``r_close``; it recovers pleura-adjacent
    soft-tissue notches excluded by thresholding.
    """
    if r_close < 1:
        raise InvalidArgumentError("r_close must be >= 1")
    mask2d = np.asarray(mask2d, dtype=bool)
    closed = erode_disc(dilate_disc(mask2d, r_close), r_close)
    return mask2d | closed


def close_holes(mask2d: np.ndarray) -> np.ndarray:
    """Fill background components not 4-connected to the slice border."""
    mask2d = np.asarray(mask2d, dtype=bool)
    structure = ndimage.generate_binary_structure(2, 1)
    return ndimage.binary_fill_holes(mask2d, structure=structure)


def _fill_z_gaps(mask: np.ndarray, max_gap: int = 3) -> np.ndarray:
    """Per-(x, y)-column fill along Z.

    For every column, an unset voxel is filled exactly when it has a set
    voxel both below and above it along Z and the bounded unset run it
    belongs to is at most ``max_gap`` voxels long.  Columns with no set
    voxel on one side are left untouched.
    """
    nz = mask.shape[2]
    big = nz + 1
    down = np.full(mask.shape, big, dtype=np.int32)   # distance to set voxel at lower z
    up = np.full(mask.shape, big, dtype=np.int32)     # distance to set voxel at higher z
    run = np.full(mask.shape[:2], big, dtype=np.int32)
    for z in range(nz):
        run = np.where(mask[:, :, z], 0, np.minimum(run + 1, big))
        down[:, :, z] = run
    run = np.full(mask.shape[:2], big, dtype=np.int32)
    for z in range(nz - 1, -1, -1):
        run = np.where(mask[:, :, z], 0, np.minimum(run + 1, big))
        up[:, :, z] = run
    gap_len = down + up - 1
    fill = (~mask) & (down <= max_gap) & (up <= max_gap) & (gap_len <= max_gap)
    return mask | fill


def segment_lungs(v: HuVolume, threshold_hu: int = DEFAULT_THRESHOLD_HU,
                  min_voxels: int = DEFAULT_MIN_VOXELS, connectivity: int = 26,
                  r_intermediate: int = DEFAULT_R_INTERMEDIATE,
                  r_external: int = DEFAULT_R_EXTERNAL,
                  r_close: int = DEFAULT_R_CLOSE) -> BinaryMask:
    """Full segmentation pipeline; see module docstring.

    Slices with an empty internal marker yield empty mask slices.  The
    per-slice result is clipped to the external-marker dilation (the flood
    cannot escape the external ring) and finally z-gaps of up to 3 slices
    per (x, y) column are closed (see :func:`_fill_z_gaps`).
    """
    thr = threshold_mask(v, threshold_hu)
    if not thr.data.any():
        warnings.warn("no voxel at or below the threshold; returning empty mask")
        return BinaryMask(v.dims, np.zeros(v.dims, dtype=bool))
    filtered = filter_components(thr, min_voxels, connectivity)

    out = np.zeros(v.dims, dtype=bool)
    nz = v.dims[2]
    for z in range(nz):
        internal = filtered.data[:, :, z]
        if not internal.any():
            continue
        markers = make_markers(internal, r_intermediate, r_external)
        allowed = markers > 0  # == dilate(internal, r_external)
        if not (markers == MARKER_EXTERNAL).any():
            sl = internal
        else:
            edges = sobel_edges(v.data[:, :, z])
            # Restricting the flood to the marker-covered region is exact:
            # the external annulus fully encloses the intermediate corridor,
            # so no flood path from outside can reach a label-2 pixel.
            basins = flood_basins(edges, markers, domain=allowed)
            sl = basins == MARKER_INTERNAL
        sl = tophat_fill(sl, r_close)
        sl = close_holes(sl)
        out[:, :, z] = (sl & allowed) | internal
    out = _fill_z_gaps(out, max_gap=3)
    return BinaryMask(v.dims, out)


def dice(a: BinaryMask, b: BinaryMask) -> float:
    """Dice overlap 2|A n B| / (|A| + |B|); 1.0 when both masks are empty."""
    if a.dims != b.dims:
        raise InvalidArgumentError("mask dims differ")
    na, nb = a.count(), b.count()
    if na + nb == 0:
        return 1.0
    inter = int((a.data & b.data).sum())
    return 2.0 * inter / (na + nb)
