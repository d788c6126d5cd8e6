import numpy as np
import pytest

from flowfuse import (FarnebackFlowEstimator, FarnebackParams, FlowField,
                      GridShape, displacement_step, farneback_flow,
                      poly_expansion)
from flowfuse.synth import _Texture

from conftest import const_flow


def dense_lsq_oracle(frame, x0, y0, n, sigma):
    """Direct weighted least-squares fit at one pixel (independent oracle)."""
    r = n // 2
    coords = np.arange(-r, r + 1, dtype=float)
    xs, ys = np.meshgrid(coords, coords)
    g = np.exp(-coords ** 2 / (2 * sigma ** 2))
    w = np.outer(g, g).ravel()
    patch = frame[y0 - r : y0 + r + 1, x0 - r : x0 + r + 1].ravel()
    B = np.stack([np.ones(xs.size), xs.ravel(), ys.ravel(),
                  xs.ravel() ** 2, ys.ravel() ** 2, (xs * ys).ravel()], axis=1)
    sw = np.sqrt(w)
    r_fit, *_ = np.linalg.lstsq(B * sw[:, None], patch * sw, rcond=None)
    return r_fit  # (c, b1, b2, a11_coef, a22_coef, 2*a12)


class TestPolyExpansion:
    def test_constant_frame(self):
        p = poly_expansion(np.full((16, 16), 0.5), FarnebackParams())
        i = np.s_[4:-4, 4:-4]
        assert np.allclose(p.c[i], 0.5, atol=1e-12)
        for coef in (p.a11, p.a12, p.a22, p.b1, p.b2):
            assert np.allclose(coef[i], 0.0, atol=1e-12)

    def test_linear_ramp(self):
        xs = np.tile(np.arange(16.0), (16, 1))
        p = poly_expansion(0.01 * xs, FarnebackParams())
        i = np.s_[4:-4, 4:-4]
        assert np.allclose(p.b1[i], 0.01, atol=1e-10)
        assert np.allclose(p.a11[i], 0.0, atol=1e-10)

    @pytest.mark.parametrize("sigma", [1.0, 1.5, 2.5])
    def test_quadratic_exact_vs_oracle(self, sigma):
        ys, xs = np.mgrid[0:24, 0:24].astype(float)
        alpha, beta, gamma = 2e-3, 1e-3, 5e-3
        frame = alpha * xs ** 2 + beta * xs * ys + gamma * ys
        params = FarnebackParams(poly_sigma=sigma)
        p = poly_expansion(frame, params)
        for (x0, y0) in [(8, 8), (12, 15), (15, 9)]:
            oracle = dense_lsq_oracle(frame, x0, y0, params.poly_n, sigma)
            assert p.c[y0, x0] == pytest.approx(oracle[0], abs=1e-6)
            assert p.b1[y0, x0] == pytest.approx(oracle[1], abs=1e-6)
            assert p.b2[y0, x0] == pytest.approx(oracle[2], abs=1e-6)
            assert p.a11[y0, x0] == pytest.approx(oracle[3], abs=1e-6)
            assert p.a22[y0, x0] == pytest.approx(oracle[4], abs=1e-6)
            assert p.a12[y0, x0] == pytest.approx(oracle[5] / 2, abs=1e-6)
        # analytic values, independent of sigma
        x0, y0 = 12, 15
        assert p.a11[y0, x0] == pytest.approx(alpha, abs=1e-6)
        assert p.a12[y0, x0] == pytest.approx(beta / 2, abs=1e-6)
        assert p.b2[y0, x0] == pytest.approx(gamma + beta * x0, abs=1e-6)


def texture_pair(seed, shape, d):
    tex = _Texture(seed, shape)
    ys, xs = np.mgrid[0 : shape.height, 0 : shape.width].astype(float)
    return tex(xs, ys), tex(xs - d[0], ys - d[1])


class TestDisplacementStep:
    def test_identical_expansions_zero_prior(self):
        f, _ = texture_pair(0, GridShape(32, 32), (0, 0))
        p = poly_expansion(f, FarnebackParams())
        flow = displacement_step(p, p, const_flow(GridShape(32, 32), 0, 0), 15)
        assert flow.valid.any()
        assert np.allclose(flow.u[flow.valid], 0.0, atol=1e-9)
        assert np.allclose(flow.v[flow.valid], 0.0, atol=1e-9)

    def test_textureless_invalid(self):
        p = poly_expansion(np.zeros((32, 32)), FarnebackParams())
        flow = displacement_step(p, p, const_flow(GridShape(32, 32), 0, 0), 15)
        assert not flow.valid.any()


class TestFarnebackFlow:
    def test_identical_frames_zero_flow(self):
        f, _ = texture_pair(1, GridShape(64, 64), (0, 0))
        flow = farneback_flow(f, f, FarnebackParams())
        assert flow.valid.any()
        assert np.abs(flow.u[flow.valid]).max() < 1e-6

    def test_uniform_black_pair_empty_mask(self):
        z = np.zeros((32, 32))
        flow = farneback_flow(z, z, FarnebackParams(pyramid_levels=1))
        assert not flow.valid.any()

    def test_shift_recovery(self):
        d = (1.25, -0.75)
        f1, f2 = texture_pair(3, GridShape(96, 96), d)
        flow = farneback_flow(f1, f2, FarnebackParams())
        inner = np.zeros((96, 96), bool)
        inner[12:-12, 12:-12] = True
        m = inner & flow.valid
        ee = np.hypot(flow.u[m] - d[0], flow.v[m] - d[1])
        assert m.any()
        assert ee.mean() < 0.15

    def test_swap_antisymmetry(self):
        d = (1.0, 0.5)
        f1, f2 = texture_pair(4, GridShape(96, 96), d)
        params = FarnebackParams()
        fwd = farneback_flow(f1, f2, params)
        bwd = farneback_flow(f2, f1, params)
        inner = np.zeros((96, 96), bool)
        inner[12:-12, 12:-12] = True
        m = inner & fwd.valid & bwd.valid
        assert np.abs(fwd.u[m] + bwd.u[m]).mean() < 0.1
        assert np.abs(fwd.v[m] + bwd.v[m]).mean() < 0.1

    def test_shift_equivariance(self):
        # texture wraps, so np.roll realizes an exact integer translation
        d = (1.25, -0.75)
        f1, f2 = texture_pair(5, GridShape(96, 96), d)
        params = FarnebackParams()
        base = farneback_flow(f1, f2, params)
        rolled = farneback_flow(np.roll(f1, (3, 5), (0, 1)),
                                np.roll(f2, (3, 5), (0, 1)), params)
        inner = np.zeros((96, 96), bool)
        inner[20:-20, 20:-20] = True
        m = inner & base.valid & np.roll(rolled.valid, (-3, -5), (0, 1))
        du = np.roll(rolled.u, (-3, -5), (0, 1))[m] - base.u[m]
        assert np.abs(du).mean() < 0.05

    def test_determinism(self):
        f1, f2 = texture_pair(6, GridShape(64, 64), (0.5, 0.5))
        a = farneback_flow(f1, f2, FarnebackParams())
        b = farneback_flow(f1, f2, FarnebackParams())
        assert np.array_equal(a.u, b.u)
        assert np.array_equal(a.v, b.v)
        assert np.array_equal(a.valid, b.valid)

    def test_level_reduction_warns(self):
        f = np.random.default_rng(0).random((16, 16))
        with pytest.warns(RuntimeWarning, match="pyramid"):
            farneback_flow(f, f, FarnebackParams(pyramid_levels=4))


class TestEstimator:
    def test_params_roundtrip_and_predict(self):
        est = FarnebackFlowEstimator(iterations=2)
        assert est.get_params()["iterations"] == 2
        f1, f2 = texture_pair(7, GridShape(64, 64), (1.0, 0.0))
        flow = est.fit().predict(f1, f2)
        m = flow.valid.copy()
        m[:8] = m[-8:] = False
        m[:, :8] = m[:, -8:] = False
        assert np.median(flow.u[m]) == pytest.approx(1.0, abs=0.1)
