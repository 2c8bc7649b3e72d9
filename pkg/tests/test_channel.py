import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thzray.channel import (MPC, capacity, channel_matrix, cir, coherent_sum,
                            direction_angles, mean_angles, path_loss,
                            power_delay_profile, received_power,
                            rms_delay_spread)
from thzray.errors import UndefinedValueError
from thzray.propagation import FREE_SPACE_IMPEDANCE, PolarizedField


def field(e_theta, e_phi=0.0):
    return PolarizedField(e_theta=e_theta, e_phi=e_phi, direction=(1.0, 0.0, 0.0))


def mpc(amplitude, delay, phase=0.0, aod=(0.0, 0.0), aoa=(0.0, 0.0)):
    return MPC(amplitude=amplitude, delay=delay, phase=phase, aod=aod, aoa=aoa)


class TestCoherentSum:
    def test_constructive(self):
        assert coherent_sum([field(1.0), field(1.0)]) == pytest.approx(2.0)

    def test_destructive(self):
        assert coherent_sum([field(1.0), field(-1.0)]) == 0.0

    def test_empty(self):
        assert coherent_sum([]) == 0.0

    @given(phases=st.lists(st.floats(0, 2 * math.pi), min_size=1, max_size=20))
    @settings(max_examples=100, deadline=None)
    def test_triangle_inequality(self, phases):
        fields = [field(cmath.exp(1j * p)) for p in phases]
        assert coherent_sum(fields) <= len(fields) + 1e-9


class TestReceivedPower:
    def test_zero_field(self):
        assert received_power(0.0, 0.1) == 0.0

    def test_quadratic(self):
        p1 = received_power(1.0, 0.1)
        p2 = received_power(2.0, 0.1)
        assert p2 == pytest.approx(4 * p1, rel=1e-12)

    def test_formula(self):
        p = received_power(3.0, 0.125, beta=2.0)
        assert p == pytest.approx(0.125**2 * 2 / (8 * math.pi * FREE_SPACE_IMPEDANCE) * 9)

    def test_validation(self):
        with pytest.raises(ValueError):
            received_power(-1.0, 0.1)
        with pytest.raises(ValueError):
            received_power(1.0, 0.1, beta=0.0)


class TestCir:
    def test_single_path(self):
        taps = cir([mpc(2.0, 5e-9, 0.3)])
        assert len(taps) == 1
        assert taps[0].delay == 5e-9
        assert taps[0].value == pytest.approx(2.0 * cmath.exp(-0.3j))

    def test_opposite_phase_cancellation_flagged(self):
        taps = cir([mpc(1.0, 5e-9, 0.0), mpc(1.0, 5e-9 + 0.4e-12, math.pi)])
        assert len(taps) == 1
        assert abs(taps[0].value) < 1e-12
        assert taps[0].cancelled

    def test_sorted_and_not_merged_beyond_tolerance(self):
        taps = cir([mpc(1.0, 9e-9), mpc(1.0, 2e-9), mpc(1.0, 2.5e-9)])
        assert [t.delay for t in taps] == [2e-9, 2.5e-9, 9e-9]

    def test_empty(self):
        assert cir([]) == []


class TestRmsDelaySpread:
    def test_single_path_zero(self):
        assert rms_delay_spread([mpc(1.0, 7e-9)]) == 0.0

    def test_two_equal_taps(self):
        spread = rms_delay_spread([mpc(1.0, 0.0), mpc(1.0, 100e-9)])
        assert spread == pytest.approx(50e-9, rel=1e-12)

    def test_weighted_case(self):
        # powers (1, 4) at (0, 50 ns): mean 40 ns, spread 20 ns
        spread = rms_delay_spread([mpc(1.0, 0.0), mpc(2.0, 50e-9)])
        assert spread == pytest.approx(20e-9, rel=1e-12)

    def test_undefined_for_empty(self):
        with pytest.raises(UndefinedValueError):
            rms_delay_spread([])
        with pytest.raises(UndefinedValueError):
            rms_delay_spread([mpc(0.0, 1e-9)])

    @given(scale=st.floats(0.1, 1000.0))
    @settings(max_examples=50, deadline=None)
    def test_invariant_under_power_scaling(self, scale):
        base = [mpc(1.0, 0.0), mpc(2.0, 30e-9), mpc(0.5, 80e-9)]
        scaled = [mpc(m.amplitude * scale, m.delay) for m in base]
        assert rms_delay_spread(scaled) == pytest.approx(rms_delay_spread(base),
                                                         rel=1e-9)

    @given(delays=st.lists(st.floats(0, 1e-6), min_size=2, max_size=10))
    @settings(max_examples=100, deadline=None)
    def test_bounded_by_span(self, delays):
        mpcs = [mpc(1.0, d) for d in delays]
        spread = rms_delay_spread(mpcs)
        assert 0.0 <= spread <= (max(delays) - min(delays)) + 1e-15


class TestMeanAngles:
    def test_single_path(self):
        aod, aoa = mean_angles([mpc(1.0, 1e-9, aod=(35.0, -16.0), aoa=(37.0, 15.0))])
        assert aod == pytest.approx((35.0, -16.0))
        assert aoa == pytest.approx((37.0, 15.0))

    def test_symmetric_pair(self):
        aod, _ = mean_angles([mpc(1.0, 0, aod=(10.0, 0.0)),
                              mpc(1.0, 0, aod=(-10.0, 0.0))])
        assert aod[0] == pytest.approx(0.0, abs=1e-9)

    def test_circular_wraparound(self):
        aod, _ = mean_angles([mpc(1.0, 0, aod=(179.0, 0.0)),
                              mpc(1.0, 0, aod=(-179.0, 0.0))])
        assert abs(aod[0]) == pytest.approx(180.0, abs=1e-9)

    def test_zero_power_undefined(self):
        with pytest.raises(UndefinedValueError):
            mean_angles([])

    def test_direction_angles(self):
        az, el = direction_angles([0.0, 1.0, 0.0])
        assert (az, el) == (90.0, 0.0)
        az, el = direction_angles([0.0, 0.0, 1.0])
        assert el == 90.0


class TestChannelMatrix:
    def test_siso_entry(self):
        m = channel_matrix(np.array([[4.0]]), np.array([[0.0]]), 1e9)
        assert m.entries[0, 0] == pytest.approx(2.0)

    def test_blocked_pair_zero(self):
        m = channel_matrix(np.array([[0.0, 1.0]]), np.array([[0.0, 0.5]]), 1e9)
        assert m.entries[0, 0] == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            channel_matrix(np.zeros((2, 2)), np.zeros((2, 3)), 1e9)


class TestCapacity:
    def test_siso_collapse(self):
        for h in (1.0, 0.01, 5 - 3j):
            c = capacity(np.array([[h]]), 10.0)
            assert c == pytest.approx(math.log2(11.0), rel=1e-12)

    def test_zero_snr(self):
        assert capacity(np.array([[1.0, 0.2], [0.1, 0.9]]), 0.0) == 0.0

    @pytest.mark.parametrize("n", [1, 2, 4])
    def test_identity_matrix_determinant_oracle(self, n):
        snr = 10 ** (10 / 10)
        h = np.eye(n, dtype=complex)
        # direct determinant evaluation of log2 det(I + snr/n * W~)
        q = n
        h_norm = h * math.sqrt(n * n / q)
        w = h_norm @ h_norm.conj().T
        expect = math.log2(abs(np.linalg.det(np.eye(n) + snr / n * w)))
        assert capacity(h, snr) == pytest.approx(expect, rel=1e-12)
        assert capacity(h, snr) == pytest.approx(n * math.log2(1 + snr), rel=1e-12)

    def test_scale_and_phase_invariance(self, rng):
        h = rng.normal(size=(4, 3)) + 1j * rng.normal(size=(4, 3))
        c = capacity(h, 5.0)
        assert capacity(7.3 * h, 5.0) == pytest.approx(c, rel=1e-12)
        assert capacity(h * cmath.exp(0.7j), 5.0) == pytest.approx(c, rel=1e-12)

    def test_hermitian_branch_consistency(self, rng):
        h = rng.normal(size=(3, 5)) + 1j * rng.normal(size=(3, 5))
        c_wide = capacity(h, 2.0)
        # transposing swaps the branch; nonzero eigenvalues coincide but the
        # snr/Nt scaling changes, so compare the two branches directly
        q = float(np.sum(np.abs(h) ** 2))
        hn = h * math.sqrt(h.shape[0] * h.shape[1] / q)
        lam1 = np.linalg.eigvalsh(hn @ hn.conj().T)
        lam2 = np.linalg.eigvalsh(hn.conj().T @ hn)
        c1 = float(np.log2(1 + 2.0 / 5 * np.clip(lam1, 0, None)).sum())
        c2 = float(np.log2(1 + 2.0 / 5 * np.clip(lam2, 0, None)).sum())
        assert c1 == pytest.approx(c2, rel=1e-9)
        assert c_wide == pytest.approx(c1, rel=1e-9)

    def test_monotone_in_snr(self, rng):
        h = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        caps = [capacity(h, s) for s in (0.0, 1.0, 5.0, 20.0)]
        assert all(a < b for a, b in zip(caps, caps[1:]))

    def test_grows_with_array_size_random_phase(self, rng):
        # unit-magnitude random-phase entries: capacity climbs with scale
        caps = []
        for n in (2, 4, 8, 16):
            h = np.exp(1j * rng.uniform(0, 2 * math.pi, (n, n)))
            caps.append(capacity(h, 10.0))
        assert all(a < b for a, b in zip(caps, caps[1:]))

    def test_zero_matrix_undefined(self):
        with pytest.raises(UndefinedValueError):
            capacity(np.zeros((2, 2)), 1.0)


class TestPathLoss:
    def test_equal_powers(self):
        assert path_loss(1.0, 1.0) == 0.0

    def test_inverse_square(self):
        assert path_loss(1.0, 1e-4) - path_loss(1.0, 1e-2) == pytest.approx(20.0)

    def test_blocked(self):
        assert path_loss(1.0, 0.0) == math.inf


class TestPdp:
    def test_binning(self):
        mpcs = [mpc(1.0, 0.4e-9), mpc(1.0, 0.6e-9), mpc(2.0, 5.2e-9)]
        pdp = power_delay_profile(mpcs, 1e-9)
        assert pdp == [(0.0, 2.0), (5e-9, 4.0)]

    def test_delays_nondecreasing_powers_nonnegative(self):
        mpcs = [mpc(0.5, 9e-9), mpc(1.0, 3e-9), mpc(0.1, 3.4e-9)]
        pdp = power_delay_profile(mpcs, 1e-9)
        delays = [d for d, _ in pdp]
        assert delays == sorted(delays)
        assert all(p >= 0 for _, p in pdp)
