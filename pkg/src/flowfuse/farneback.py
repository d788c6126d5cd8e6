"""Dense two-frame optical flow via quadratic polynomial expansion.

Each pixel's neighborhood is fit with f(x) ~ x^T A x + b^T x + c under
Gaussian applicability weights, computed with separable correlations. The
displacement between two expansions is solved per pixel from
Abar * d = dbar, averaged over a uniform window, coarse-to-fine over an
image pyramid.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator

from .core import FlowField
from .validation import check_2d, check_odd_window, check_positive, check_same_shape


@dataclass
class FarnebackParams:
    pyramid_levels: int = 3
    pyr_scale: float = 0.5
    poly_n: int = 7
    poly_sigma: float = 1.5
    avg_window: int = 15
    iterations: int = 3
    det_eps: float = 1e-12

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if not 0.0 < self.pyr_scale < 1.0:
            raise ValueError("pyr_scale must be in (0, 1)")
        check_odd_window(self.poly_n, "poly_n")
        check_positive(self.poly_sigma, "poly_sigma")
        check_odd_window(self.avg_window, "avg_window", minimum=1)
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        check_positive(self.det_eps, "det_eps")


@dataclass
class PolyExpField:
    """Per-pixel quadratic expansion coefficients.

    f(x, y) ~ c + b1*x + b2*y + a11*x^2 + a22*y^2 + 2*a12*x*y in local
    coordinates centered at the pixel (x along columns, y along rows).
    A one-sided border of width poly_n//2 is unreliable.
    """

    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    c: np.ndarray
    border: int

    @property
    def hw(self):
        return self.c.shape


def _basis_inverse(n, sigma):
    """Inverse Gram matrix of the weighted basis {1, x, y, x^2, y^2, xy}."""
    r = n // 2
    coords = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    xs, ys = np.meshgrid(coords, coords)  # xs varies along columns
    w = np.outer(g, g)
    basis = np.stack([np.ones_like(xs), xs, ys, xs ** 2, ys ** 2, xs * ys])
    G = np.einsum("ihw,jhw,hw->ij", basis, basis, w)
    return np.linalg.inv(G), g, coords


def poly_expansion(frame, params):
    """Weighted least-squares quadratic expansion at every pixel.

    Separable implementation: correlate rows with {g, g*x, g*x^2}, columns
    with {g, g*y, g*y^2}, then map the six raw moments through the
    precomputed inverse Gram matrix. Edges use replicate padding.
    """
    frame = check_2d(frame, "frame", dtype=np.float64)
    n = params.poly_n
    Ginv, g, coords = _basis_inverse(n, params.poly_sigma)
    k0, k1, k2 = g, g * coords, g * coords ** 2

    def corr(a, weights, axis):
        return ndimage.correlate1d(a, weights, axis=axis, mode="nearest")

    # x-pass along columns (axis 1), y-pass along rows (axis 0)
    fx0 = corr(frame, k0, 1)
    fx1 = corr(frame, k1, 1)
    fx2 = corr(frame, k2, 1)
    m00 = corr(fx0, k0, 0)
    m10 = corr(fx1, k0, 0)
    m01 = corr(fx0, k1, 0)
    m20 = corr(fx2, k0, 0)
    m02 = corr(fx0, k2, 0)
    m11 = corr(fx1, k1, 0)

    moments = np.stack([m00, m10, m01, m20, m02, m11])
    r = np.einsum("ij,jhw->ihw", Ginv, moments)
    return PolyExpField(a11=r[3], a12=r[5] * 0.5, a22=r[4],
                        b1=r[1], b2=r[2], c=r[0], border=n // 2)


def _sample_shifted(arr, di, dj):
    """arr sampled at (y + dj, x + di) per pixel, indices clipped to bounds."""
    h, w = arr.shape
    ys, xs = np.indices((h, w))
    yy = np.clip(ys + dj, 0, h - 1)
    xx = np.clip(xs + di, 0, w - 1)
    return arr[yy, xx]


def displacement_step(p1, p2, prior, avg_window, det_eps=1e-12):
    """One windowed least-squares displacement solve between two expansions.

    p2 is sampled at the integer-rounded prior displacement; the constraint
    Abar * d = -(b2 - b1)/2 + Abar * prior is averaged over a uniform
    avg_window before the per-pixel 2x2 solve. Pixels whose normal matrix
    determinant falls below det_eps are marked invalid.
    """
    if p1.hw != p2.hw:
        raise ValueError("expansion fields must share a shape")
    check_same_shape(prior.u, p1.c, "prior", "expansion")
    h, w = p1.hw

    pu = np.where(np.isfinite(prior.u) & prior.valid, prior.u, 0.0)
    pv = np.where(np.isfinite(prior.v) & prior.valid, prior.v, 0.0)
    di = np.rint(pu).astype(np.intp)
    dj = np.rint(pv).astype(np.intp)

    a11 = 0.5 * (p1.a11 + _sample_shifted(p2.a11, di, dj))
    a12 = 0.5 * (p1.a12 + _sample_shifted(p2.a12, di, dj))
    a22 = 0.5 * (p1.a22 + _sample_shifted(p2.a22, di, dj))
    db1 = -0.5 * (_sample_shifted(p2.b1, di, dj) - p1.b1) + a11 * di + a12 * dj
    db2 = -0.5 * (_sample_shifted(p2.b2, di, dj) - p1.b2) + a12 * di + a22 * dj

    # Normal equations of Abar*d = db per pixel (Abar symmetric, so
    # Abar^T Abar = Abar^2), averaged over the window.
    g11 = a11 * a11 + a12 * a12
    g12 = a12 * (a11 + a22)
    g22 = a12 * a12 + a22 * a22
    h1 = a11 * db1 + a12 * db2
    h2 = a12 * db1 + a22 * db2

    def box(a):
        return ndimage.uniform_filter(a, size=avg_window, mode="nearest")

    g11, g12, g22, h1, h2 = box(g11), box(g12), box(g22), box(h1), box(h2)
    det = g11 * g22 - g12 * g12
    valid = det > det_eps
    safe = np.where(valid, det, 1.0)
    u = np.where(valid, (g22 * h1 - g12 * h2) / safe, 0.0)
    v = np.where(valid, (g11 * h2 - g12 * h1) / safe, 0.0)
    return FlowField(u, v, valid)


def _downsample(frame, scale):
    blurred = ndimage.gaussian_filter(frame, sigma=0.6 / scale, mode="nearest")
    h, w = frame.shape
    nh, nw = max(int(round(h * scale)), 1), max(int(round(w * scale)), 1)
    ys = np.clip(np.rint(np.arange(nh) / scale).astype(int), 0, h - 1)
    xs = np.clip(np.rint(np.arange(nw) / scale).astype(int), 0, w - 1)
    return blurred[np.ix_(ys, xs)]


def _upscale_flow(flow, hw, pyr_scale):
    zoom_y = hw[0] / flow.u.shape[0]
    zoom_x = hw[1] / flow.u.shape[1]
    u = ndimage.zoom(flow.u, (zoom_y, zoom_x), order=1, mode="nearest") / pyr_scale
    v = ndimage.zoom(flow.v, (zoom_y, zoom_x), order=1, mode="nearest") / pyr_scale
    valid = ndimage.zoom(flow.valid.astype(np.float64), (zoom_y, zoom_x),
                         order=0, mode="nearest") > 0.5
    return FlowField(u, v, valid)


def farneback_flow(f1, f2, params):
    """Coarse-to-fine dense flow between two frames, px per frame interval."""
    import warnings

    f1 = check_2d(f1, "f1", dtype=np.float64)
    f2 = check_2d(f2, "f2", shape=f1.shape, dtype=np.float64)

    levels = params.pyramid_levels
    h, w = f1.shape
    while levels > 1 and (min(h, w) * params.pyr_scale ** (levels - 1)) < 8:
        levels -= 1
    if levels < params.pyramid_levels:
        warnings.warn(f"reducing pyramid levels to {levels} for {w}x{h} input",
                      RuntimeWarning)

    pyr1, pyr2 = [f1], [f2]
    for _ in range(levels - 1):
        pyr1.append(_downsample(pyr1[-1], params.pyr_scale))
        pyr2.append(_downsample(pyr2[-1], params.pyr_scale))

    flow = None
    for lvl in range(levels - 1, -1, -1):
        a, b = pyr1[lvl], pyr2[lvl]
        if flow is None:
            flow = FlowField(np.zeros_like(a), np.zeros_like(a),
                             np.ones(a.shape, bool))
        else:
            flow = _upscale_flow(flow, a.shape, params.pyr_scale)
        p1 = poly_expansion(a, params)
        p2 = poly_expansion(b, params)
        for _ in range(params.iterations):
            flow = displacement_step(p1, p2, flow, params.avg_window, params.det_eps)
    return flow


class FarnebackFlowEstimator(BaseEstimator):
    """Stateless estimator computing dense flow between two frames."""

    def __init__(self, pyramid_levels=3, pyr_scale=0.5, poly_n=7,
                 poly_sigma=1.5, avg_window=15, iterations=3, det_eps=1e-12):
        self.pyramid_levels = pyramid_levels
        self.pyr_scale = pyr_scale
        self.poly_n = poly_n
        self.poly_sigma = poly_sigma
        self.avg_window = avg_window
        self.iterations = iterations
        self.det_eps = det_eps

    def _params(self):
        return FarnebackParams(self.pyramid_levels, self.pyr_scale, self.poly_n,
                               self.poly_sigma, self.avg_window, self.iterations,
                               self.det_eps)

    def fit(self, X=None, y=None):
        self._params()
        return self

    def predict(self, f1, f2):
        return farneback_flow(f1, f2, self._params())
