"""Dense-grid flow types, event container, flow metrics and color rendering.

Flow vectors are expressed in pixels per frame interval throughout; both the
event and frame pipelines emit their output in this common unit so the fusion
stage can compare them directly.
"""

from dataclasses import dataclass, field
import warnings

import numpy as np

from .validation import check_2d, check_binary, check_positive, check_same_shape

# Sentinel magnitude used for unknown flow in .flo files; |u| above
# INVALID_CUTOFF decodes back into the validity mask.
FLOW_SENTINEL = 1e10
INVALID_CUTOFF = 1e9


class NoOverlapError(ValueError):
    """Raised when a metric's evaluation set is empty."""


@dataclass(frozen=True)
class GridShape:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError(f"grid must be at least 8x8, got {self.width}x{self.height}")

    @property
    def hw(self):
        return (self.height, self.width)

    @property
    def npixels(self):
        return self.height * self.width


@dataclass
class FlowField:
    """Dense per-pixel 2-vector flow with a validity mask.

    u is horizontal flow (columns, +x right), v vertical (rows, +y down),
    both in pixels per frame interval.
    """

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.u = check_2d(self.u, "u", dtype=np.float64)
        self.v = check_2d(self.v, "v", shape=self.u.shape, dtype=np.float64)
        self.valid = check_binary(check_2d(self.valid, "valid", shape=self.u.shape), "valid")
        if not np.isfinite(self.u[self.valid]).all() or not np.isfinite(self.v[self.valid]).all():
            raise ValueError("flow values must be finite at valid pixels")

    @property
    def shape(self):
        h, w = self.u.shape
        return GridShape(width=w, height=h)

    @classmethod
    def zeros(cls, shape, valid=False):
        h, w = shape.hw
        return cls(np.zeros((h, w)), np.zeros((h, w)), np.full((h, w), bool(valid)))

    @classmethod
    def invalid(cls, shape):
        return cls.zeros(shape, valid=False)

    def copy(self):
        return FlowField(self.u.copy(), self.v.copy(), self.valid.copy())

    def magnitude(self):
        return np.hypot(self.u, self.v)


@dataclass
class Events:
    """Column-oriented asynchronous event stream (timestamps in microseconds)."""

    shape: GridShape
    t: np.ndarray  # uint64, non-decreasing
    x: np.ndarray  # uint16 columns
    y: np.ndarray  # uint16 rows
    p: np.ndarray  # int8 polarity in {+1, -1}

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.uint64)
        self.x = np.asarray(self.x, dtype=np.uint16)
        self.y = np.asarray(self.y, dtype=np.uint16)
        self.p = np.asarray(self.p, dtype=np.int8)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns must have equal length")

    def __len__(self):
        return len(self.t)

    def validate(self):
        """Reject out-of-range coordinates, bad polarity or non-monotone times."""
        if len(self) == 0:
            return self
        bad = np.flatnonzero(self.t[1:].astype(np.int64) - self.t[:-1].astype(np.int64) < 0)
        if bad.size:
            raise ValueError(f"non-monotone timestamp at record {bad[0] + 1}")
        oob = np.flatnonzero((self.x >= self.shape.width) | (self.y >= self.shape.height))
        if oob.size:
            raise ValueError(
                f"out-of-range coordinate at record {oob[0]}: "
                f"({self.x[oob[0]]},{self.y[oob[0]]}) for {self.shape.width}x{self.shape.height}"
            )
        badp = np.flatnonzero(~np.isin(self.p, (1, -1)))
        if badp.size:
            raise ValueError(f"invalid polarity {self.p[badp[0]]} at record {badp[0]}")
        return self

    def slice_time(self, t0, t1):
        """Events with t in the half-open window [t0, t1)."""
        i0 = np.searchsorted(self.t, t0, side="left")
        i1 = np.searchsorted(self.t, t1, side="left")
        return Events(self.shape, self.t[i0:i1], self.x[i0:i1], self.y[i0:i1], self.p[i0:i1])

    @classmethod
    def empty(cls, shape):
        return cls(shape, np.empty(0, np.uint64), np.empty(0, np.uint16),
                   np.empty(0, np.uint16), np.empty(0, np.int8))


def _sequential_sum(values):
    # Left-to-right accumulation; bit-identical to an explicit Python loop.
    if values.size == 0:
        return 0.0
    return float(np.cumsum(values.astype(np.float64))[-1])


def aee(flow, gt):
    """Average endpoint error between a flow field and ground truth.

    Evaluates over pixels valid in both fields, summed in row-major order for
    run-to-run reproducibility. Returns (mean_aee, ee_map); ee_map is zero
    outside the evaluation set.
    """
    check_same_shape(flow.u, gt.u, "flow", "gt")
    mask = flow.valid & gt.valid
    if not mask.any():
        raise NoOverlapError("no pixels valid in both flow and ground truth")
    ee = np.zeros_like(flow.u)
    ee[mask] = np.hypot(flow.u[mask] - gt.u[mask], flow.v[mask] - gt.v[mask])
    mean = _sequential_sum(ee[mask]) / int(mask.sum())
    return mean, ee


def flow_distance_map(a, b):
    """Per-pixel Euclidean distance between two flow fields.

    Pixels invalid in either input get distance 0 and a 0 in the companion
    mask, so thresholding downstream never fires on missing data.
    Returns (distance, both_valid_mask).
    """
    check_same_shape(a.u, b.u, "a", "b")
    mask = a.valid & b.valid
    dist = np.zeros_like(a.u)
    dist[mask] = np.hypot(a.u[mask] - b.u[mask], a.v[mask] - b.v[mask])
    return dist, mask


def event_percent(source_mask, fused_valid):
    """Percentage of fused-valid pixels sourced from the event pipeline."""
    source_mask = check_binary(source_mask, "source_mask")
    fused_valid = check_binary(fused_valid, "fused_valid")
    check_same_shape(source_mask, fused_valid, "source_mask", "fused_valid")
    denom = int(fused_valid.sum())
    if denom == 0:
        warnings.warn("event_percent: fused validity mask is empty", RuntimeWarning)
        return 0.0
    return 100.0 * int((source_mask & fused_valid).sum()) / denom


def flow_to_color(flow, max_mag):
    """Render a flow field as an 8-bit RGB image.

    Hue encodes direction (atan2(v, u) around the wheel, angle 0 = red),
    saturation encodes magnitude clamped at max_mag, value is full. Zero flow
    renders white; invalid pixels render black.
    """
    check_positive(max_mag, "max_mag")
    h = (np.arctan2(flow.v, flow.u) / (2.0 * np.pi)) % 1.0
    s = np.clip(flow.magnitude() / max_mag, 0.0, 1.0)
    v = np.ones_like(h)
    rgb = _hsv_to_rgb(h, s, v)
    rgb[~flow.valid] = 0.0
    return (rgb * 255.0 + 0.5).astype(np.uint8)


def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)
