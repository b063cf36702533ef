"""Windowed ladder states, shifts and moments."""

import json
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from catcoh.ladder import (HALF_INFINITE, BoundaryError, CyclicLadderState, TruncationWarning,
                           WindowedLadderState, binomial_weights, cyclic_moment,
                           cyclic_shift_matrix, delta_moment, embed_cyclic, energy_expectation,
                           energy_state, eta_moment, eta_state, grow_window, moments, pure_state,
                           same_state, shift, state_from_dict, state_to_dict, trim)
from catcoh.qmat import NotDensityError, random_density

from conftest import seeds


def random_window(seed, width=None, offset=None):
    rng = np.random.default_rng(seed)
    W = width or int(rng.integers(1, 12))
    off = int(rng.integers(-20, 20)) if offset is None else offset
    return WindowedLadderState(off, random_density(W, rng))


class TestEta:
    def test_single_level(self):
        s = eta_state(1, 7)
        assert s.offset == 7 and s.width == 1
        assert delta_moment(s, 1) == 0

    def test_fifty(self):
        m = delta_moment(eta_state(50), 1)
        assert abs(m - 0.98) < 1e-15
        assert abs((1 + abs(m)) / 2 - 0.99) < 1e-15

    @pytest.mark.parametrize("L", [1, 2, 5, 50, 500])
    def test_overlap_law(self, L):
        s = eta_state(L, -3)
        got = np.array([delta_moment(s, a) for a in range(-L - 2, L + 3)])
        want = np.array([max(0.0, 1 - abs(a) / L) for a in range(-L - 2, L + 3)])
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_closed_form_helper(self):
        assert eta_moment(4, 2) == 0.5
        assert delta_moment(eta_state(4), 2) == pytest.approx(0.5)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            eta_state(0)


class TestMoments:
    def test_trace(self):
        assert delta_moment(random_window(3), 0) == pytest.approx(1.0)

    @given(seeds, st.integers(-11, 11))
    def test_hermitian_symmetry(self, seed, a):
        s = random_window(seed)
        assert abs(delta_moment(s, -a) - np.conj(delta_moment(s, a))) < 1e-14

    def test_outside_window(self):
        assert delta_moment(eta_state(3), 5) == 0

    def test_outside_window_truncated_warns(self):
        s = WindowedLadderState(0, np.eye(2) * 0.45, tail_mass=0.1)
        with pytest.warns(TruncationWarning):
            delta_moment(s, 4)

    def test_pure_uniform_phase(self):
        s = pure_state(np.ones(6), 2)
        assert_allclose(moments(s, 2), [4 / 6, 5 / 6, 1, 5 / 6, 4 / 6])


class TestShift:
    def test_eta(self):
        assert same_state(shift(eta_state(5, 2), 3), eta_state(5, 5)) == 0.0
        assert shift(eta_state(5, 2), 3).offset == 5

    @given(seeds, st.integers(-30, 30))
    def test_moments_invariant(self, seed, b):
        s = random_window(seed)
        t = shift(s, b)
        for a in range(-s.width + 1, s.width):
            assert abs(delta_moment(t, a) - delta_moment(s, a)) <= 1e-12

    @given(seeds, st.integers(-5, 5))
    def test_energy_moves_by_spacing(self, seed, a):
        s = random_window(seed).replace(spacing=0.5)
        assert energy_expectation(shift(s, a)) == pytest.approx(energy_expectation(s) + 0.5 * a)

    def test_floor(self):
        s = eta_state(3, 1, kind=HALF_INFINITE)
        with pytest.raises(BoundaryError):
            shift(s, -2)


class TestEnergy:
    def test_eigenstate(self):
        assert energy_expectation(energy_state(4, spacing=0.25)) == 1.0

    @pytest.mark.parametrize("L,l0,s", [(1, 0, 1.0), (10, 3, 0.5), (50, -20, 2.0)])
    def test_eta_mean(self, L, l0, s):
        assert energy_expectation(eta_state(L, l0, s)) == pytest.approx(s * (l0 + (L - 1) / 2))


class TestGrowWindow:
    def test_zero_pad(self):
        s = eta_state(4)
        assert grow_window(s, 0) is s

    @given(seeds, st.integers(0, 6))
    def test_moments_and_energy_unchanged(self, seed, pad):
        s = random_window(seed)
        g = grow_window(s, pad)
        assert g.width == s.width + 2 * pad
        assert abs(np.trace(g.block) - 1) < 1e-14
        assert energy_expectation(g) == pytest.approx(energy_expectation(s), abs=1e-12)
        for a in range(-s.width + 1, s.width):
            assert abs(delta_moment(g, a) - delta_moment(s, a)) < 1e-15

    def test_half_infinite_floor(self):
        g = grow_window(eta_state(2, 1, kind=HALF_INFINITE), 3)
        assert g.offset == 0 and g.width == 2 + 1 + 3

    def test_trim_is_inverse(self):
        s = eta_state(4, 2)
        t = trim(grow_window(s, 5))
        assert t.offset == 2 and np.array_equal(t.block, s.block) and t.tail_mass == 0


def test_invalid_trace():
    with pytest.raises(NotDensityError):
        WindowedLadderState(0, np.eye(2))


def test_half_infinite_negative_offset():
    with pytest.raises(BoundaryError):
        WindowedLadderState(-1, np.ones((1, 1)), kind=HALF_INFINITE)


def test_json_round_trip():
    s = pure_state([1, 1j, -1], 4, spacing=0.3)
    back = state_from_dict(json.loads(json.dumps(state_to_dict(s))))
    assert back.offset == 4 and back.spacing == 0.3
    assert_allclose(back.block, s.block)
    assert_allclose(WindowedLadderState.from_json(s.to_json()).block, s.block)


class TestCyclic:
    def test_identity_power(self):
        s = embed_cyclic(eta_state(3), 8, 2)
        assert cyclic_moment(s, 8) == pytest.approx(1.0)
        assert cyclic_moment(s, -16) == pytest.approx(1.0)

    @pytest.mark.parametrize("a", [1, 2, 5])
    def test_maximally_mixed(self, a):
        assert abs(cyclic_moment(CyclicLadderState(6, np.eye(6) / 6), a)) < 1e-15

    @pytest.mark.parametrize("a", range(-7, 8))
    def test_uniform_phase(self, a):
        n = 7
        psi = np.ones(n) / np.sqrt(n)
        assert cyclic_moment(CyclicLadderState(n, np.outer(psi, psi)), a) == pytest.approx(1.0)

    def test_shift_matrix(self):
        C = cyclic_shift_matrix(5, 2)
        e = np.zeros(5)
        e[4] = 1
        assert np.argmax(C @ e) == 1

    @given(seeds)
    def test_embedding_keeps_moments(self, seed):
        s = random_window(seed, width=5)
        c = embed_cyclic(s, 20, 7)
        for a in range(-4, 5):
            assert abs(cyclic_moment(c, a) - delta_moment(s, a)) < 1e-14


def test_binomial_weights_sum():
    for k in range(15):
        w = binomial_weights(k)
        assert len(w) == k + 1 and abs(w.sum() - 1) < 1e-15
