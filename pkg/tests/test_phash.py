"""Perceptual hash tests.

The invariance and discrimination thresholds below are the contract this
hash must satisfy to be useful for near-duplicate confirmation.
"""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neardup.imaging import flip_horizontal, raster_from_array, resize_bilinear, to_grayscale
from neardup.phash import dct_matrix, from_hex, hamming64, phash, to_hex

from conftest import synth_rgb


class TestConstruction:
    def test_black_image_hashes_to_zero(self):
        # all coefficients 0: nothing exceeds the 0 median
        r = raster_from_array(np.zeros((32, 32, 3), np.uint8))
        assert to_hex(phash(r)) == "0000000000000000"

    def test_constant_images_hash_identically_at_any_size(self):
        # every constant image resizes to the same 32x32 input
        hashes = {
            phash(raster_from_array(np.full((h, w, 3), 200, np.uint8)))
            for w, h in [(32, 32), (40, 56), (100, 100)]
        }
        assert len(hashes) == 1

    def test_dct_matrix_orthonormal(self):
        c = dct_matrix(32)
        assert np.allclose(c @ c.T, np.eye(32), atol=1e-12)

    def test_deterministic(self):
        r = synth_rgb(11)
        assert phash(r) == phash(r)

    def test_grayscale_version_hashes_identically(self):
        r = synth_rgb(12)
        g = to_grayscale(r)
        gray3 = raster_from_array(np.repeat(g.pixels, 3, axis=2))
        assert phash(r) == phash(gray3)


class TestHamming:
    def test_trivials(self):
        assert hamming64(0x0, 0x0) == 0
        assert hamming64(0x0, 0xFFFFFFFFFFFFFFFF) == 64
        assert hamming64(0x0, 0xF) == 4

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1))
    def test_metric_properties(self, a, b, c):
        assert hamming64(a, b) == hamming64(b, a)
        assert hamming64(a, a) == 0
        assert hamming64(a, c) <= hamming64(a, b) + hamming64(b, c)

    def test_hex_round_trip(self):
        for h in (0, 1, 0x8000000000000000, 0xDEADBEEFCAFEF00D):
            assert from_hex(to_hex(h)) == h
        with pytest.raises(ValueError):
            from_hex("abc")


class TestInvariance:
    SAMPLE_SEEDS = range(100, 120)

    def test_resize_80pct_stays_close(self):
        for seed in self.SAMPLE_SEEDS:
            r = synth_rgb(seed)
            shrunk = resize_bilinear(r, int(r.width * 0.8), int(r.height * 0.8))
            d = hamming64(phash(r), phash(shrunk))
            assert d <= 10, f"seed {seed}: distance {d}"

    def test_upscale_2x_stays_very_close(self):
        for seed in self.SAMPLE_SEEDS:
            r = synth_rgb(seed, w=120, h=96)
            up = resize_bilinear(r, 2 * r.width, 2 * r.height)
            d = hamming64(phash(r), phash(up))
            assert d <= 6, f"seed {seed}: distance {d}"

    def test_unrelated_pairs_are_far(self):
        hashes = [phash(synth_rgb(s)) for s in range(200, 225)]
        rng = np.random.default_rng(0)
        hits = 0
        pairs = set()
        while len(pairs) < 100:
            i, j = rng.integers(0, len(hashes), 2)
            if i != j and (min(i, j), max(i, j)) not in pairs:
                pairs.add((min(i, j), max(i, j)))
        for i, j in sorted(pairs):
            if hamming64(hashes[i], hashes[j]) > 16:
                hits += 1
        assert hits >= 95, f"only {hits}/100 unrelated pairs beyond 16 bits"

    def test_flip_changes_hash(self):
        r = synth_rgb(42)
        assert hamming64(phash(r), phash(flip_horizontal(r))) > 0
