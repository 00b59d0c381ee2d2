import math
from fractions import Fraction

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from layered_jscc.channel import (ChannelConfig, DegenerateInputError, LayerPlan, PlanError,
                                  apply_channel, average_power, awgn, complex_to_real,
                                  concat_layers, make_generator, power_normalize, rayleigh_slow,
                                  real_to_complex, snr_to_noise_power, split_layers)


class TestSnr:
    def test_noise_power(self):
        assert snr_to_noise_power(0.0) == 1.0
        assert snr_to_noise_power(10.0) == pytest.approx(0.1)
        assert snr_to_noise_power(20.0, power=2.0) == pytest.approx(0.02)

    def test_infinite_snr_is_noiseless(self):
        cfg = ChannelConfig("awgn", math.inf)
        assert cfg.noise_power == 0.0
        z = power_normalize(torch.randn(3, 64, dtype=torch.cfloat))
        assert torch.equal(awgn(z, cfg, make_generator(1)), z)

    def test_config_roundtrip(self):
        for cfg in (ChannelConfig("rayleigh_slow", 5.0, 2.0), ChannelConfig("awgn", math.inf)):
            assert ChannelConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ChannelConfig("bsc")


class TestPowerNormalization:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 300), st.floats(0.1, 10.0))
    def test_unit_average_power(self, batch, k, power):
        raw = torch.randn(batch, k, dtype=torch.cdouble) * 7.3
        z = power_normalize(raw, power)
        np.testing.assert_allclose(average_power(z).numpy(), power, rtol=1e-10)

    def test_real_interleaved_input(self):
        raw = torch.tensor([[3.0, 4.0, 0.0, 0.0]])
        z = power_normalize(raw)
        # ||[3+4j, 0]|| = 5, k = 2
        np.testing.assert_allclose(z.numpy(), [[(3 + 4j) * math.sqrt(2) / 5, 0]], rtol=1e-6)

    def test_zero_vector_rejected(self):
        with pytest.raises(DegenerateInputError):
            power_normalize(torch.zeros(2, 5, dtype=torch.cfloat))

    def test_odd_real_length(self):
        with pytest.raises(PlanError):
            power_normalize(torch.ones(1, 5))


class TestNoise:
    def test_awgn_variance(self):
        g = make_generator(7)
        z = torch.zeros(1, 1_000_000, dtype=torch.cfloat)
        n = awgn(z, 0.25, g)
        emp = float((n.abs() ** 2).mean())
        assert abs(emp - 0.25) / 0.25 < 0.02
        # half the power in each real component
        assert float(n.real.var()) == pytest.approx(0.125, rel=0.02)
        assert float(n.imag.var()) == pytest.approx(0.125, rel=0.02)

    def test_rayleigh_gain_and_slow_fading(self):
        cfg = ChannelConfig("rayleigh_slow", math.inf, fading_variance=2.0)
        z = torch.ones(200_000, 3, dtype=torch.cfloat)
        y = rayleigh_slow(z, cfg, make_generator(3))
        # noiseless: y = h * 1, one h per row
        assert torch.equal(y[:, 0], y[:, 1]) and torch.equal(y[:, 1], y[:, 2])
        assert float((y[:, 0].abs() ** 2).mean()) == pytest.approx(2.0, rel=0.01)

    def test_independent_layers(self):
        cfg = ChannelConfig("rayleigh_slow", 10.0)
        z = [torch.ones(4000, 8, dtype=torch.cfloat)] * 2
        y1, y2 = apply_channel(z, cfg, make_generator(0))
        assert not torch.allclose(y1, y2)

    def test_seeded(self):
        z = torch.ones(2, 16, dtype=torch.cfloat)
        cfg = ChannelConfig("awgn", 3.0)
        a = apply_channel([z], cfg, make_generator(1, 2, 3))[0]
        b = apply_channel([z], cfg, make_generator(1, 2, 3))[0]
        c = apply_channel([z], cfg, make_generator(1, 2, 4))[0]
        assert torch.equal(a, b) and not torch.equal(a, c)


class TestLayerPlan:
    def test_cifar_ratios(self):
        plan = LayerPlan((4, 4))
        assert plan.symbols == (128, 128)  # complex symbols: depth/2 maps of 8x8
        assert plan.bandwidth_ratios == (Fraction(1, 12), Fraction(1, 12))
        assert plan.bandwidth_ratio == Fraction(1, 6)
        assert plan.channel_uses == (256, 256)

    def test_uniform(self):
        assert LayerPlan.uniform(12, 3).depths == (4, 4, 4)
        with pytest.raises(PlanError):
            LayerPlan.uniform(8, 3)

    @pytest.mark.parametrize("depths", [(), (3,), (4, 0), (4, -2)])
    def test_invalid(self, depths):
        with pytest.raises(PlanError):
            LayerPlan(depths)

    def test_size_multiple_of_four(self):
        with pytest.raises(PlanError):
            LayerPlan((4,), 30, 32)

    def test_dict_roundtrip(self):
        p = LayerPlan((2, 6), 64, 48)
        assert LayerPlan.from_dict(p.to_dict()) == p


@settings(max_examples=30)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=6))
def test_split_concat_roundtrip(sizes):
    z = torch.randn(2, sum(sizes), dtype=torch.cfloat)
    parts = split_layers(z, sizes)
    assert [p.shape[-1] for p in parts] == sizes
    assert torch.equal(concat_layers(parts), z)


def test_split_mismatch():
    with pytest.raises(PlanError):
        split_layers(torch.zeros(1, 10, dtype=torch.cfloat), [4, 4])


def test_complex_pairing():
    f = torch.arange(2 * 4 * 3 * 3, dtype=torch.float32).reshape(2, 4, 3, 3)
    z = real_to_complex(f)
    assert z.shape == (2, 2, 3, 3)
    assert z[0, 1, 0, 0] == complex(f[0, 2, 0, 0], f[0, 3, 0, 0])
    assert torch.equal(complex_to_real(z), f)
