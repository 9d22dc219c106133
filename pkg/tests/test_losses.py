import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slidepair.errors import DimensionMismatch
from slidepair.imaging import DisplacementField, RasterImage
from slidepair.losses import (DiscriminatorLossComponents, GeneratorLossComponents, LossWeights, adjacency_loss,
                              discriminator_loss, field_gradient_sq, generator_loss)

from conftest import texture


def brute_smoothness(v):
    h, w, _ = v.shape
    total = 0.0
    for y in range(h):
        for x in range(w):
            for k in range(2):
                dx = v[y, x + 1, k] - v[y, x, k] if x + 1 < w else 0.0
                dy = v[y + 1, x, k] - v[y, x, k] if y + 1 < h else 0.0
                total += dx * dx + dy * dy
    return total / (h * w)


class TestAdjacency:
    def test_zero(self):
        img = texture(0, 32, channels=3)
        assert adjacency_loss(img, img, DisplacementField.zeros(32, 32)) == (0.0, 0.0, 0.0)

    def test_constant_field_is_smooth(self):
        a, b = texture(1, 32), texture(2, 32)
        res = adjacency_loss(a, b, DisplacementField.constant(32, 32, 1.5, -0.25))
        assert res.smoothness == 0.0 and res.total == res.l1 > 0

    def test_shift_with_crop(self):
        adj = texture(3, 40, channels=3)
        gen = np.ones_like(adj.data)
        gen[:, 2:] = adj.data[:, :-2]  # gen(x) = adj(x - 2)
        res = adjacency_loss(RasterImage(gen), adj, DisplacementField.constant(40, 40, 2.0, 0.0), crop_border=2)
        assert res.l1 < 1e-9 and res.total < 1e-9

    @pytest.mark.parametrize("shift", [(1, 0), (0, 3), (-2, 1)])
    def test_integer_shift_consistency(self, shift):
        sx, sy = shift
        adj = texture(4, 48)
        gen = np.roll(adj.data, (sy, sx), axis=(0, 1))  # gen(p) = adj(p - s)
        res = adjacency_loss(RasterImage(gen), adj, DisplacementField.constant(48, 48, sx, sy), crop_border=4)
        assert res.l1 < 1e-9

    @pytest.mark.parametrize("seed", range(5))
    def test_smoothness_brute_force(self, seed):
        v = np.random.default_rng(seed).normal(size=(16, 16, 2))
        fld = DisplacementField(v)
        img = texture(seed, 16)
        res = adjacency_loss(img, img, fld)
        assert res.smoothness == pytest.approx(brute_smoothness(v), abs=1e-12)
        assert field_gradient_sq(fld).mean() == res.smoothness

    def test_l1_is_mean_over_channels(self):
        a = RasterImage(np.zeros((4, 4, 3)))
        d = np.zeros((4, 4, 3))
        d[..., 0] = 0.3
        res = adjacency_loss(a, RasterImage(d), DisplacementField.zeros(4, 4))
        assert res.l1 == pytest.approx(0.1, abs=1e-15)

    def test_total_non_negative(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            a, b = RasterImage(rng.random((12, 12, 1))), RasterImage(rng.random((12, 12, 1)))
            res = adjacency_loss(a, b, DisplacementField(rng.normal(size=(12, 12, 2))))
            assert res.total >= 0 and res.total == res.smoothness + res.l1

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            adjacency_loss(texture(0, 16), texture(0, 16), DisplacementField.zeros(8, 16))
        with pytest.raises(DimensionMismatch):
            adjacency_loss(texture(0, 16), texture(0, 16, channels=3), DisplacementField.zeros(16, 16))


class TestCombiners:
    def test_generator_examples(self):
        ones = dict(adv=1, cls=1, eta_adv=1, eta_cls=1, cyc=1, idt=1)
        assert generator_loss(GeneratorLossComponents(**ones, adj=1), LossWeights(1, 1, 1)) == 7
        assert generator_loss(GeneratorLossComponents(**ones), LossWeights(1, 1, 1)) == 6
        c = GeneratorLossComponents(adv=2, cls=0, eta_adv=0, eta_cls=0, cyc=0, idt=0, adj=3)
        assert generator_loss(c, LossWeights(0.5, 1, 2)) == 7

    def test_discriminator_examples(self):
        assert discriminator_loss(DiscriminatorLossComponents(1, 1, 1, 1, 1), LossWeights()) == 5
        assert discriminator_loss(DiscriminatorLossComponents(0, 0, 0, 0, 0)) == 0
        c = DiscriminatorLossComponents(adv=1, cls=1, eta_adv=2, eta_cls=2, frz=4)
        assert discriminator_loss(c, LossWeights(1, 0.5, 0.25)) == 5

    def test_lambda3_zero_matches_unpaired(self):
        base = dict(adv=0.3, cls=1.2, eta_adv=0.7, eta_cls=0.1, cyc=2.0, idt=0.4)
        w = LossWeights(0.9, 1.7, 0.0)
        assert generator_loss(GeneratorLossComponents(**base, adj=5.0), w) == \
            generator_loss(GeneratorLossComponents(**base), w)

    @given(st.lists(st.floats(-100, 100), min_size=7, max_size=7), st.lists(st.floats(0, 10), min_size=3, max_size=3),
           st.integers(0, 6), st.floats(-5, 5))
    def test_generator_linear_in_component(self, comp, wts, k, delta):
        names = ["adv", "cls", "eta_adv", "eta_cls", "cyc", "idt", "adj"]
        w = LossWeights(*wts)
        c0 = dict(zip(names, comp))
        c1 = dict(c0)
        c1[names[k]] += delta
        slope = [w.lambda1, w.lambda1, w.lambda2, w.lambda2, w.lambda1, w.lambda1, w.lambda3]
        diff = generator_loss(GeneratorLossComponents(**c1), w) - generator_loss(GeneratorLossComponents(**c0), w)
        assert diff == pytest.approx(slope[k] * delta, abs=1e-9)

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            LossWeights(-1, 1, 1)
        with pytest.raises(ValueError):
            GeneratorLossComponents(float("nan"), 0, 0, 0, 0, 0)
