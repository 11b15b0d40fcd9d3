import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heraldsim import ionphysics as ip
from heraldsim.errors import InvalidParam, InvalidState, InvalidTransition
from heraldsim.ionphysics import IonParams, IonState, Outcome

S, D_PREP, D_AUX, P, SHELF = (
    IonState.S12_m_minus_half,
    IonState.D52_m_minus_5half,
    IonState.D52_m_plus_3half,
    IonState.P32_m_minus_3half,
    IonState.D32_shelf,
)
PARAMS = IonParams()


def binom_3sigma(p, n):
    return 3 * math.sqrt(p * (1 - p) / n)


def test_defaults():
    assert PARAMS.tau_P == 7.2e-9
    assert PARAMS.tau_D == 1.17
    assert PARAMS.branch_to_S == 0.935
    assert PARAMS.p_prep_fail == 0.01
    assert PARAMS.p_pulse_error == 0.0


@pytest.mark.parametrize(
    "kw", [{"branch_to_S": 1.2}, {"p_prep_fail": -0.1}, {"tau_P": 0.0}, {"tau_D": -1.0}]
)
def test_param_validation(kw):
    with pytest.raises(InvalidParam):
        IonParams(**kw)


class TestAbsorb:
    def test_not_prepared(self, rng):
        assert ip.absorb_photon(S, PARAMS, rng) == (S, None)
        assert ip.absorb_photon(SHELF, PARAMS, rng) == (SHELF, None)

    def test_branching_and_lifetime(self, rng):
        n = 10**6
        delays = []
        for _ in range(n):
            state, d = ip.absorb_photon(D_PREP, PARAMS, rng)
            if d is not None:
                assert state == S
                delays.append(d)
            else:
                assert state == D_PREP
        frac = len(delays) / n
        assert abs(frac - 0.935) < binom_3sigma(0.935, n)
        delays = np.array(delays, float)
        tau = 7200.0
        assert abs(delays.mean() - tau) < 3 * tau / math.sqrt(len(delays))
        # exponential MLE of the rate within 5%
        assert 1 / delays.mean() == pytest.approx(1 / tau, rel=0.05)
        # the histogram is a single exponential: log-counts linear in delay
        counts, edges = np.histogram(delays, bins=30, range=(0, 5 * tau))
        centers = 0.5 * (edges[1:] + edges[:-1])
        slope = np.polyfit(centers, np.log(counts), 1, w=np.sqrt(counts))[0]
        assert -1 / slope == pytest.approx(tau, rel=0.05)


class TestSpontaneousDecay:
    def test_closed_form(self):
        p = ip.decay_probability(0.002, PARAMS)
        assert p == pytest.approx(1.709e-3, rel=1e-3)
        assert round(p * 100, 2) == 0.17

    @pytest.mark.parametrize("window", [0.5e-3, 1e-3, 2e-3])
    def test_rate_matches(self, rng, window):
        n = 10**6
        t = ip.sample_decay_times(n, window, PARAMS, rng)
        p = -math.expm1(-window / 1.17)
        assert abs((t >= 0).mean() - p) < binom_3sigma(p, n)
        assert t.max() < window * 1e12

    def test_zero_window(self, rng):
        for _ in range(1000):
            assert ip.spontaneous_decay(D_PREP, 0.0, PARAMS, rng) == (D_PREP, None)

    def test_ground_state_unchanged(self, rng):
        for _ in range(100):
            assert ip.spontaneous_decay(S, 1.0, PARAMS, rng) == (S, None)

    def test_decay_lands_in_ground_state(self, rng):
        fast = IonParams(tau_D=1e-6)
        state, t = ip.spontaneous_decay(D_AUX, 1.0, fast, rng)
        assert state == S and 0 <= t < 1e12

    def test_decay_times_follow_hazard(self, rng):
        # with window >> tau the truncated distribution is the plain exponential
        fast = IonParams(tau_D=1e-6)
        t = ip.sample_decay_times(200_000, 1e-3, fast, rng)
        assert (t >= 0).all()
        assert t.mean() == pytest.approx(1e6, rel=0.01)

    def test_negative_window(self, rng):
        with pytest.raises(InvalidParam):
            ip.sample_decay_times(1, -1.0, PARAMS, rng)


class TestPiPulse:
    def test_non_addressed_level(self, rng):
        assert ip.pi_pulse(D_PREP, S, D_AUX, PARAMS, rng) == D_PREP

    def test_transfer(self, rng):
        assert ip.pi_pulse(S, S, D_AUX, PARAMS, rng) == D_AUX

    @pytest.mark.parametrize("pair", sorted(ip.ALLOWED_729))
    def test_shelf_untouched(self, rng, pair):
        assert ip.pi_pulse(SHELF, *pair, PARAMS, rng) == SHELF

    def test_disallowed(self, rng):
        with pytest.raises(InvalidTransition):
            ip.pi_pulse(S, D_PREP, D_AUX, PARAMS, rng)
        with pytest.raises(InvalidTransition):
            ip.pi_pulse_array(np.array([0], np.int8), S, SHELF, PARAMS, rng)

    def test_pulse_error(self, rng):
        bad = IonParams(p_pulse_error=0.25)
        levels = np.full(100_000, S, np.int8)
        out = ip.pi_pulse_array(levels, S, D_AUX, bad, rng)
        assert (out == S).mean() == pytest.approx(0.25, abs=0.01)

    def test_pulse_is_a_swap(self, rng):
        assert ip.pi_pulse(D_AUX, S, D_AUX, PARAMS, rng) == S
        assert ip.pi_pulse(S, D_PREP, S, PARAMS, rng) == D_PREP

    @given(st.sampled_from([S, D_PREP, D_AUX, SHELF]), st.sampled_from(sorted(ip.ALLOWED_729)))
    def test_pulse_twice_is_identity(self, level, pair):
        rng = np.random.default_rng(0)
        once = ip.pi_pulse(level, *pair, PARAMS, rng)
        assert ip.pi_pulse(once, *pair, PARAMS, rng) == level

    def test_discrimination_pair_is_a_permutation(self, rng):
        def pair(x):
            x = ip.pi_pulse(x, S, D_AUX, PARAMS, rng)
            return ip.pi_pulse(x, D_PREP, S, PARAMS, rng)

        levels = [S, D_PREP, D_AUX]
        image = {x: pair(x) for x in levels}
        assert image[S] == D_AUX and image[D_PREP] == S
        assert sorted(image.values()) == sorted(levels)
        # two transpositions sharing S compose to a 3-cycle
        for x in levels:
            assert pair(pair(x)) != x
            assert pair(pair(pair(x))) == x
        assert pair(SHELF) == SHELF

    def test_array_matches_scalar(self, rng):
        levels = np.array([S, D_PREP, D_AUX, SHELF], np.int8)
        out = ip.pi_pulse_array(levels, S, D_AUX, PARAMS, rng)
        out = ip.pi_pulse_array(out, D_PREP, S, PARAMS, rng)
        scalar = [
            ip.pi_pulse(ip.pi_pulse(IonState(x), S, D_AUX, PARAMS, rng), D_PREP, S, PARAMS, rng)
            for x in levels
        ]
        assert out.tolist() == [int(x) for x in scalar]


class TestShelve:
    def test_cases(self):
        assert ip.shelve_397(S) == SHELF
        assert ip.shelve_397(D_PREP) == D_PREP
        assert ip.shelve_397(SHELF) == SHELF

    def test_array(self):
        levels = np.array([S, D_PREP, SHELF, D_AUX], np.int8)
        assert ip.shelve_397_array(levels).tolist() == [SHELF, D_PREP, SHELF, D_AUX]


class TestMeasure:
    def test_outcomes(self):
        assert ip.fluorescence_measure(D_AUX) == Outcome.DARK
        assert ip.fluorescence_measure(D_PREP) == Outcome.DARK
        assert ip.fluorescence_measure(S) == Outcome.BRIGHT
        assert ip.fluorescence_measure(SHELF) == Outcome.BRIGHT

    def test_p_state_invalid(self):
        with pytest.raises(InvalidState):
            ip.fluorescence_measure(P)
        with pytest.raises(InvalidState):
            ip.fluorescence_measure_array(np.array([P], np.int8))

    def test_array(self):
        levels = np.array([S, D_PREP, D_AUX, SHELF], np.int8)
        assert ip.fluorescence_measure_array(levels).tolist() == [False, True, True, False]
