"""Waveform synthesis and noise injection."""

import math

import numpy as np
import pytest

from fibertwin.signals import (
    ComplexSignal,
    InvalidConstellationError,
    NoiseConfig,
    add_awgn,
    dbm_to_watts,
    generate_qam_symbols,
    load_signal,
    pulse_shape,
    qam_constellation,
    rrc_taps,
    save_signal,
)


class TestQamSymbols:
    def test_qpsk_points(self):
        seq = generate_qam_symbols(4, order=4, seed=5)
        expected = {
            (1 / math.sqrt(2)) * (sr + 1j * si)
            for sr in (-1, 1)
            for si in (-1, 1)
        }
        for sym in seq.symbols:
            assert min(abs(sym - e) for e in expected) < 1e-15

    @pytest.mark.parametrize("order", [4, 16, 64, 256])
    def test_constellation_unit_power(self, order):
        points = qam_constellation(order)
        assert points.size == order
        assert abs(np.mean(np.abs(points) ** 2) - 1.0) < 1e-14

    def test_sample_mean_power_large_draw(self):
        seq = generate_qam_symbols(10**5, order=16, seed=7)
        assert abs(np.mean(np.abs(seq.symbols) ** 2) - 1.0) < 0.01

    @pytest.mark.parametrize("order", [8, 32, 5, 2])
    def test_non_square_order_rejected(self, order):
        with pytest.raises(InvalidConstellationError):
            generate_qam_symbols(10, order=order, seed=0)

    def test_deterministic_for_seed(self):
        a = generate_qam_symbols(500, order=16, seed=123)
        b = generate_qam_symbols(500, order=16, seed=123)
        assert np.array_equal(a.symbols, b.symbols)


class TestRrcTaps:
    def test_zero_rolloff_is_sinc(self):
        taps = rrc_taps(0.0, span_symbols=8, oversampling=4)
        tau = (np.arange(taps.size) - (taps.size - 1) / 2) / 4
        ref = np.sinc(tau)
        ref /= np.sqrt(np.sum(ref**2))
        np.testing.assert_allclose(taps, ref, atol=1e-12)

    def test_even_symmetry(self):
        taps = rrc_taps(0.1, span_symbols=16, oversampling=2)
        np.testing.assert_allclose(taps, taps[::-1], atol=0)

    @pytest.mark.parametrize("rolloff,os", [(0.1, 2), (0.25, 4), (1.0, 3), (0.5, 2)])
    def test_unit_energy(self, rolloff, os):
        taps = rrc_taps(rolloff, span_symbols=16, oversampling=os)
        assert abs(np.sum(taps**2) - 1.0) < 1e-12
        assert np.all(np.isfinite(taps))

    def test_singular_instants_are_finite(self):
        # rolloff 0.25 at oversampling 1 puts taps exactly on |4 b tau| = 1
        taps = rrc_taps(0.25, span_symbols=16, oversampling=1)
        assert np.all(np.isfinite(taps))

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            rrc_taps(-0.1, 16, 2)
        with pytest.raises(ValueError):
            rrc_taps(0.1, 15, 2)
        with pytest.raises(ValueError):
            rrc_taps(0.1, 16, 0)


class TestPulseShape:
    def test_zero_symbols_stay_zero(self):
        seq = generate_qam_symbols(16, 4, seed=0)
        zeroed = type(seq)(symbols=np.zeros(16, complex), order=4, seed=0)
        sig = pulse_shape(zeroed, 0.1, 2, launch_power_dbm=0.0)
        assert np.all(sig.samples == 0)

    def test_output_length(self):
        seq = generate_qam_symbols(32, 16, seed=1)
        sig = pulse_shape(seq, 0.1, 2, launch_power_dbm=0.0)
        assert sig.n == 64

    def test_launch_power_exact(self):
        seq = generate_qam_symbols(32, 16, seed=2)
        sig = pulse_shape(seq, 0.1, 2, launch_power_dbm=0.0)
        assert abs(sig.power_w - 1e-3) / 1e-3 < 1e-12

    def test_sampling_period(self):
        seq = generate_qam_symbols(8, 16, seed=3)
        sig = pulse_shape(seq, 0.1, 2, launch_power_dbm=0.0, symbol_rate_gbd=14.0)
        assert abs(sig.dt_ps - 1e3 / 28.0) < 1e-12


class TestAwgn:
    def test_minus_twenty_dbm_noise_at_twenty_db_snr(self):
        # 0 dBm launch and 20 dB SNR give 0.01 mW of noise
        rng = np.random.default_rng(0)
        field = np.sqrt(1e-3) * np.exp(1j * rng.uniform(0, 2 * np.pi, 200_000))
        sig = ComplexSignal(samples=field, dt_ps=1.0)
        out = add_awgn(sig, NoiseConfig(20.0, seed=4))
        noise_power = np.mean(np.abs(out.samples - sig.samples) ** 2)
        assert abs(noise_power - dbm_to_watts(-20.0)) / dbm_to_watts(-20.0) < 0.01

    def test_infinite_snr_sentinel(self):
        sig = ComplexSignal(samples=np.ones(64, complex), dt_ps=1.0)
        out = add_awgn(sig, NoiseConfig(float("inf"), seed=1))
        assert np.array_equal(out.samples, sig.samples)

    def test_empirical_noise_power_one_percent(self):
        n = 10**6
        sig = ComplexSignal(samples=np.full(n, 0.5 + 0.2j), dt_ps=1.0)
        out = add_awgn(sig, NoiseConfig(10.0, seed=2))
        measured = np.mean(np.abs(out.samples - sig.samples) ** 2)
        expected = sig.power_w / 10.0
        assert abs(measured - expected) / expected < 0.01

    def test_empirical_snr_within_tenth_db(self):
        n = 10**5
        rng = np.random.default_rng(3)
        field = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        sig = ComplexSignal(samples=field, dt_ps=1.0)
        out = add_awgn(sig, NoiseConfig(15.0, seed=5))
        noise = out.samples - sig.samples
        snr = 10 * np.log10(sig.power_w / np.mean(np.abs(noise) ** 2))
        assert abs(snr - 15.0) < 0.1

    def test_stream_advances_between_calls(self):
        sig = ComplexSignal(samples=np.ones(64, complex), dt_ps=1.0)
        cfg = NoiseConfig(10.0, seed=6)
        a = add_awgn(sig, cfg)
        b = add_awgn(sig, cfg)
        assert not np.array_equal(a.samples, b.samples)

    def test_fresh_config_reproduces_stream(self):
        sig = ComplexSignal(samples=np.ones(64, complex), dt_ps=1.0)
        a = add_awgn(sig, NoiseConfig(10.0, seed=7))
        b = add_awgn(sig, NoiseConfig(10.0, seed=7))
        assert np.array_equal(a.samples, b.samples)


def test_signal_roundtrip(tmp_path):
    seq = generate_qam_symbols(16, 16, seed=11)
    sig = pulse_shape(seq, 0.1, 2, launch_power_dbm=0.0)
    path = tmp_path / "sig.csv"
    save_signal(sig, path, meta={"launch_power_dbm": 0.0, "n_sym": 16,
                                 "oversampling": 2, "seed": 11})
    loaded, meta = load_signal(path)
    np.testing.assert_allclose(loaded.samples, sig.samples, rtol=0, atol=0)
    assert meta["n_sym"] == 16
    assert loaded.dt_ps == sig.dt_ps
