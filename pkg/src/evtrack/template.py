"""Dynamic template: event accumulation, binarization and morphological skeleton."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

CROSS = ndimage.generate_binary_structure(2, 1)


class TemplateEmpty(ValueError):
    """No accumulated cell reaches the binarization threshold."""


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Morphological skeleton with a 3x3 cross.

    Repeats erode, dilate the erosion, subtract it from the current image
    and add the difference to the skeleton until the erosion is empty.
    """
    img = np.asarray(mask, dtype=bool).copy()
    skel = np.zeros_like(img)
    while img.any():
        eroded = ndimage.binary_erosion(img, CROSS, border_value=0)
        opened = ndimage.binary_dilation(eroded, CROSS)
        skel |= img & ~opened
        img = eroded
    return skel


@dataclass
class DynamicTemplate:
    """Accumulation grid of ``shape`` 1-px cells; cell ``(row, col)`` is centered at ``origin + (col, row)``."""

    origin: np.ndarray
    counts: np.ndarray
    threshold: int = 2
    t_ref: float = 0.0
    mask: np.ndarray = field(init=False, repr=False)
    skeleton: np.ndarray = field(init=False, repr=False)
    points: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        self.refresh()

    def refresh(self) -> None:
        self.mask = self.counts >= self.threshold
        self.skeleton = skeletonize(self.mask)
        rows, cols = np.nonzero(self.skeleton)
        self.points = self.origin + np.column_stack([cols, rows]).astype(float)

    @property
    def empty(self) -> bool:
        return self.points.shape[0] == 0

    def accumulate(self, points) -> None:
        """Add points (template frame) to the histogram and recompute the skeleton."""
        self.counts += histogram(points, self.origin, self.counts.shape)
        self.refresh()


def histogram(points, origin, shape) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    idx = np.rint(pts - np.asarray(origin)).astype(np.int64)
    h, w = shape
    ok = (idx[:, 0] >= 0) & (idx[:, 0] < w) & (idx[:, 1] >= 0) & (idx[:, 1] < h)
    counts = np.zeros(shape, dtype=np.int64)
    np.add.at(counts, (idx[ok, 1], idx[ok, 0]), 1)
    return counts


def build_template(point_sets, center, radius: float, threshold: int = 2, t_ref: float = 0.0) -> DynamicTemplate:
    """Template over the square window of ``radius`` around ``center``.

    Raises
    ------
    TemplateEmpty
        If the binarized accumulation is empty.
    """
    r = int(np.ceil(radius))
    origin = np.asarray(center, dtype=float).reshape(2) - r
    shape = (2 * r + 1, 2 * r + 1)
    counts = np.zeros(shape, dtype=np.int64)
    for pts in point_sets:
        counts += histogram(pts, origin, shape)
    tpl = DynamicTemplate(origin, counts, threshold, t_ref)
    if not tpl.mask.any():
        raise TemplateEmpty("no cell reaches the template threshold")
    return tpl
