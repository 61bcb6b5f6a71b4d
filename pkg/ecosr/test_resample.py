import tempfile
import unittest
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .resample import (ResizeSpec, cubic_kernel, output_extent, read_png, resize, rgb_to_y, to_uint8,
                       write_png)


def keys(t, a=-0.5):
    t = abs(t)
    if t <= 1:
        return (a + 2) * t ** 3 - (a + 3) * t ** 2 + 1
    if t < 2:
        return a * t ** 3 - 5 * a * t ** 2 + 8 * a * t - 4 * a
    return 0.0


def brute_force_resize(img, scale, antialias):
    """Explicit double sum over the (possibly stretched) 2D kernel with clamped sources."""
    h, w, c = img.shape
    scale = float(scale)
    stretch = scale if (scale < 1 and antialias) else 1.0
    oh, ow = int(np.floor(h * scale + 0.5)), int(np.floor(w * scale + 0.5))
    out = np.zeros((oh, ow, c))
    reach = int(np.ceil(2 / stretch)) + 2
    for i in range(oh):
        cy = (i + 0.5) / scale - 0.5
        for j in range(ow):
            cx = (j + 0.5) / scale - 0.5
            acc, norm = np.zeros(c), 0.0
            for p in range(int(np.floor(cy)) - reach, int(np.floor(cy)) + reach + 1):
                wy = keys((cy - p) * stretch)
                if wy == 0:
                    continue
                for q in range(int(np.floor(cx)) - reach, int(np.floor(cx)) + reach + 1):
                    wgt = wy * keys((cx - q) * stretch)
                    if wgt == 0:
                        continue
                    acc += wgt * img[min(max(p, 0), h - 1), min(max(q, 0), w - 1)]
                    norm += wgt
            out[i, j] = acc / norm
    return out


class TestCubicKernel(unittest.TestCase):
    def test_knots(self):
        self.assertEqual(cubic_kernel(0.0), 1.0)
        self.assertEqual(cubic_kernel(1.0), 0.0)
        self.assertEqual(cubic_kernel(2.0), 0.0)
        self.assertEqual(cubic_kernel(-2.5), 0.0)

    def test_half_offset(self):
        self.assertAlmostEqual(cubic_kernel(0.5, -0.5), 0.5625)

    def test_vectorized(self):
        np.testing.assert_allclose(cubic_kernel(np.array([0.0, 0.5, 1.5])), [1.0, 0.5625, -0.0625])


class TestResize(unittest.TestCase):
    def test_constant_is_preserved(self):
        img = np.full((12, 10, 3), 0.37, dtype=np.float32)
        for scale in (Fraction(1, 2), Fraction(1, 3), Fraction(2), Fraction(3, 4)):
            for antialias in (True, False):
                out = resize(img, ResizeSpec(scale, antialias=antialias))
                np.testing.assert_allclose(out, 0.37, atol=1e-6)

    def test_unit_scale_is_identity(self):
        img = np.random.default_rng(0).uniform(size=(7, 9, 3)).astype(np.float32)
        np.testing.assert_array_equal(resize(img, ResizeSpec(Fraction(1))), img)

    def test_output_extent(self):
        self.assertEqual(output_extent(49, Fraction(1, 2)), 25)
        self.assertEqual(output_extent(48, Fraction(1, 2)), 24)
        self.assertEqual(output_extent(10, Fraction(1, 3)), 3)
        self.assertEqual(output_extent(5, 2), 10)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        scales = (Fraction(1, 2), Fraction(1, 3), Fraction(2))
        for trial in range(50):
            h, w = (int(v) for v in rng.integers(4, 17, size=2))
            img = rng.uniform(size=(h, w, int(rng.choice([1, 3]))))
            scale = scales[trial % 3]
            antialias = bool(trial % 2)
            out = resize(img, ResizeSpec(scale, antialias=antialias), clamp=False)
            np.testing.assert_allclose(out, brute_force_resize(img, scale, antialias), atol=1e-5)

    def test_two_dimensional_input(self):
        img = np.random.default_rng(2).uniform(size=(8, 8)).astype(np.float32)
        self.assertEqual(resize(img, ResizeSpec.down(2)).shape, (4, 4))

    def test_zero_size_output(self):
        with self.assertRaises(ShapeError):
            resize(np.zeros((1, 1, 3), dtype=np.float32), ResizeSpec(Fraction(1, 3)))

    def test_clamps_by_default(self):
        img = np.zeros((8, 8, 1), dtype=np.float32)
        img[::2] = 1.0
        out = resize(img, ResizeSpec(Fraction(2)))
        self.assertGreaterEqual(out.min(), 0.0)
        self.assertLessEqual(out.max(), 1.0)

    def test_spec_round_trip(self):
        spec = ResizeSpec.down(3, antialias=False)
        self.assertEqual(spec.factor, 3)
        self.assertEqual(ResizeSpec.from_dict(spec.to_dict()), spec)
        with self.assertRaises(ValueError):
            ResizeSpec(0)


class TestLuminance(unittest.TestCase):
    def test_reference_colors(self):
        img = np.array([[[0, 0, 0], [1, 1, 1], [0, 1, 0]]], dtype=np.float32)
        y = rgb_to_y(img)[0, :, 0]
        self.assertAlmostEqual(float(y[0]), 16 / 255, places=6)
        self.assertAlmostEqual(float(y[1]), 235 / 255, places=5)
        self.assertAlmostEqual(float(y[2]), (16 + 128.553) / 255, places=5)

    def test_affine(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            p, q = rng.uniform(size=(2, 4, 5, 3))
            alpha = float(rng.uniform())
            mixed = rgb_to_y(alpha * p + (1 - alpha) * q)
            np.testing.assert_allclose(mixed, alpha * rgb_to_y(p) + (1 - alpha) * rgb_to_y(q), atol=1e-6)

    def test_needs_three_channels(self):
        with self.assertRaises(ShapeError):
            rgb_to_y(np.zeros((2, 2, 1), dtype=np.float32))


class TestPng(unittest.TestCase):
    def test_round_trip_quantizes(self):
        img = np.random.default_rng(3).uniform(size=(5, 6, 3)).astype(np.float32)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "a.png"
            write_png(path, img)
            back = read_png(path)
        np.testing.assert_array_equal(back, to_uint8(img) / np.float32(255))
        self.assertEqual(back.dtype, np.float32)


if __name__ == "__main__":
    unittest.main()
