"""Work extraction: paths, dephasing channel, optimal yield, ancilla and convergence."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from catcoh.catalytic import lambda_channel
from catcoh.ladder import WindowedLadderState, eta_state, pure_state
from catcoh.qmat import (ContractError, SizeError, entropy, haar_unitary, kl_divergence,
                         random_density, rel_entropy)
from catcoh.systems import SystemHamiltonian, ThermalContext, diag_hamiltonian, gibbs, passive_yield
from catcoh.workext import (AncillaPlan, DiagonalAncilla, LevelConfig, ProbVector, build_ancilla,
                            convergence_experiment, cyclic_rotate, entropy_loss_bound, gap_bound,
                            grid_indices, grid_perturbation_bound, isothermal_bound,
                            isothermal_path, limit_protocol, min_pairing, optimal_yield, path_sum,
                            path_yield, pinched_state, product_vector, r_channel, snap_to_grid,
                            sorted_divergence, xi)

from conftest import seeds

CTX = ThermalContext(1.0)

# Frozen reference values (computed once from the closed forms and kept fixed).
ENTROPY_LOSS_N2_L100 = 0.0629330061604468      # ln2/100 + Ξ(0.01)
PATH_SUM_K100 = 0.004388012039680401           # q=(0.9,0.1) -> p=(0.5,0.5)
ANCILLA_SORTED_K8_J64 = 0.004842693037051595   # q=(0.8,0.2), p=(2/3,1/3), δ=β=1
ANCILLA_ROTATED_K8_J64 = 0.005657928741915598
ANCILLA_BOUND_K8_J64 = 0.35316218529866794


def rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


class TestPrimitives:
    def test_prob_vector(self):
        v = ProbVector([0.25, 0.75])
        assert v.full_support
        assert not ProbVector([1.0, 0.0]).full_support
        with pytest.raises(ValueError):
            ProbVector([0.5, 0.6])

    def test_level_config_gibbs(self):
        g = LevelConfig(np.array([0.0, math.log(2)])).gibbs(1.0)
        assert_allclose(g, [2 / 3, 1 / 3])

    def test_xi(self):
        assert xi(0.0) == 0.0 and xi(1.0) == 0.0
        assert xi(0.5) == pytest.approx(math.log(2))
        with pytest.raises(ValueError):
            xi(1.5)


class TestPathYield:
    def test_constant_sequence(self, rng):
        H = SystemHamiltonian((0, 1, 2), haar_unitary(3, rng)).matrix()
        assert path_yield([H] * 5, random_density(3, rng), CTX) == 0.0

    def test_three_step_cycle_below_divergence(self, rng):
        H = diag_hamiltonian((0, 1))
        rho = np.diag([0.3, 0.7])
        H1 = np.diag([0.0, 0.2])
        W = path_yield([H.matrix(), H1, H.matrix()], rho, CTX)
        assert W <= CTX.kT * rel_entropy(rho, gibbs(H, CTX)) + 1e-12

    @given(seeds, st.integers(2, 20))
    @settings(max_examples=15)
    def test_cyclic_paths_never_beat_divergence(self, seed, K):
        rng = np.random.default_rng(seed)
        H = SystemHamiltonian((0, 1, 3), haar_unitary(3, rng))
        rho = random_density(3, rng)
        seq = [H.matrix()] + [SystemHamiltonian((0, 1, 2), haar_unitary(3, rng)).matrix()
                              for _ in range(K)] + [H.matrix()]
        assert path_yield(seq, rho, CTX) <= CTX.kT * rel_entropy(rho, gibbs(H, CTX)) + 1e-10

    def test_limit_protocol_diagonal(self):
        H = diag_hamiltonian((0, 1))
        rho = np.diag([0.7, 0.3])
        target = rel_entropy(rho, gibbs(H, CTX))
        W = path_yield(limit_protocol(rho, H, CTX, 200), rho, CTX)
        assert 0.95 * target <= W <= target + 1e-12

    def test_limit_protocol_converges(self):
        H = diag_hamiltonian((0, 2))
        rho = np.diag([0.2, 0.8])
        target = rel_entropy(rho, gibbs(H, CTX))
        gaps = [target - path_yield(limit_protocol(rho, H, CTX, K), rho, CTX) for K in (5, 20, 80)]
        assert gaps[0] > gaps[1] > gaps[2] >= 0

    def test_limit_protocol_requires_full_rank(self):
        with pytest.raises(ContractError):
            limit_protocol(np.diag([1.0, 0.0]), diag_hamiltonian((0, 1)), CTX, 10)


class TestMinPairing:
    def test_projectors(self):
        value, U = min_pairing(np.diag([1.0, 0.0]), np.diag([1.0, 0.0]))
        assert value == 0.0
        assert abs(np.trace(U.conj().T @ np.diag([1.0, 0.0]) @ U @ np.diag([1.0, 0.0]))) < 1e-15

    def test_rearrangement_lower_end(self):
        a, b = np.array([3.0, -1.0, 2.0]), np.array([0.5, 4.0, 1.0])
        value, _ = min_pairing(np.diag(a), np.diag(b))
        assert value == pytest.approx(np.dot(np.sort(a)[::-1], np.sort(b)))

    def test_monte_carlo_domination(self, rng):
        A = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        B = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        A, B = A + A.conj().T, B + B.conj().T
        value, U = min_pairing(A, B)
        assert np.trace(U.conj().T @ A @ U @ B).real == pytest.approx(value, abs=1e-10)
        for _ in range(1000):
            V = haar_unitary(4, rng)
            assert np.trace(V.conj().T @ A @ V @ B).real >= value - 1e-9


class TestRChannel:
    def test_pinched_input_unchanged(self, rng):
        H = SystemHamiltonian((0, 1, 1), haar_unitary(3, rng))
        from catcoh.systems import pinching
        rho = pinching(random_density(3, rng), H)
        assert_allclose(r_channel(rho, pure_state(rng.standard_normal(5), 0), H), rho, atol=1e-14)

    @pytest.mark.parametrize("L", [1, 4, 50])
    def test_eta_scaling(self, L, rng):
        rho = random_density(2, rng)
        out = r_channel(rho, eta_state(L), diag_hamiltonian((0, 1)))
        assert out[0, 1] == pytest.approx(rho[0, 1] * (1 - 1 / L))
        assert out[0, 0] == pytest.approx(rho[0, 0])

    def test_unital(self, rng):
        H = SystemHamiltonian((0, 2, 3), haar_unitary(3, rng))
        assert_allclose(r_channel(np.eye(3) / 3, eta_state(7), H), np.eye(3) / 3, atol=1e-15)

    def test_diagonal_reservoir_is_pinching(self, rng):
        H = SystemHamiltonian((0, 1, 2), haar_unitary(3, rng))
        rho = random_density(3, rng)
        sigma = WindowedLadderState(0, np.diag([0.5, 0.25, 0.25]))
        assert_allclose(r_channel(rho, sigma, H), pinched_state(rho, H), atol=1e-14)

    def test_finer_reservoir_grid(self, rng):
        H = diag_hamiltonian((0, 1), 1.0)
        rho = random_density(2, rng)
        out = r_channel(rho, eta_state(10, spacing=0.25), H)
        assert out[0, 1] == pytest.approx(rho[0, 1] * (1 - 4 / 10))

    def test_incommensurate_grid(self):
        with pytest.raises(ContractError):
            r_channel(np.eye(2) / 2, eta_state(3, spacing=0.3), diag_hamiltonian((0, 1)))

    @given(seeds)
    def test_same_moments_same_output(self, seed):
        rng = np.random.default_rng(seed)
        H = SystemHamiltonian((0, 1, 3), haar_unitary(3, rng))
        sigma = pure_state(rng.standard_normal(8) + 1j * rng.standard_normal(8), 0)
        used = lambda_channel(sigma, random_density(2, rng), haar_unitary(2, rng),
                              diag_hamiltonian((0, 2)))
        rho = random_density(3, rng)
        assert np.max(np.abs(r_channel(rho, sigma, H) - r_channel(rho, used, H))) <= 1e-12

    @given(seeds)
    def test_more_mixed(self, seed):
        rng = np.random.default_rng(seed)
        H = SystemHamiltonian((0, 1, 2), haar_unitary(3, rng))
        rho = random_density(3, rng)
        out = r_channel(rho, eta_state(int(rng.integers(1, 10))), H)
        assert np.linalg.eigvalsh(out).min() >= np.linalg.eigvalsh(rho).min() - 1e-12


class TestOptimalYield:
    def test_gibbs_gives_zero(self, rng):
        H = SystemHamiltonian((0, 1, 2), haar_unitary(3, rng))
        res = optimal_yield(gibbs(H, CTX), eta_state(5), H, None, CTX)
        assert abs(res.W) <= 1e-10

    def test_diagonal_state_matches_passive_yield(self, rng):
        H = diag_hamiltonian((0, 1, 3))
        rho = np.diag(rng.dirichlet(np.ones(3)))
        res = optimal_yield(rho, eta_state(6), H, None, CTX)
        assert res.W == pytest.approx(passive_yield(rho, H, CTX), abs=1e-12)

    def test_diagonal_reservoir_ignores_coherence(self, rng):
        H = diag_hamiltonian((0, 1))
        sigma = WindowedLadderState(0, np.diag([0.5, 0.5]))
        rho1 = np.array([[0.7, 0.3], [0.3, 0.3]])
        rho2 = np.array([[0.7, -0.2j], [0.2j, 0.3]])
        w1 = optimal_yield(rho1, sigma, H, None, CTX).W
        w2 = optimal_yield(rho2, sigma, H, None, CTX).W
        assert w1 == pytest.approx(w2, abs=1e-12)

    @given(seeds)
    @settings(max_examples=20)
    def test_decomposition_and_channel_path(self, seed):
        rng = np.random.default_rng(seed)
        H = SystemHamiltonian((0, 1, 2), haar_unitary(3, rng))
        anc = SystemHamiltonian((0, int(rng.integers(1, 4))))
        rho = random_density(3, rng)
        sigma = eta_state(int(rng.integers(2, 12)))
        spectral = optimal_yield(rho, sigma, H, anc, CTX)
        chan = optimal_yield(rho, sigma, H, anc, CTX, method="channel")
        d = spectral.decomposition
        assert abs(spectral.W + d.coherence_loss_term + d.mismatch_term - d.D_term) <= 1e-9
        assert abs(chan.W - spectral.W) <= 1e-10
        assert spectral.gap >= -1e-12

    def test_catalytic_reuse(self, rng):
        H = SystemHamiltonian((0, 1, 2), haar_unitary(3, rng))
        rho = random_density(3, rng)
        sigma = eta_state(8)
        used = lambda_channel(sigma, random_density(2, rng), haar_unitary(2, rng),
                              diag_hamiltonian((0, 1)))
        a = optimal_yield(rho, sigma, H, None, CTX).W
        b = optimal_yield(rho, used, H, None, CTX).W
        assert abs(a - b) <= 1e-12

    def test_channel_cap(self, rng):
        H = diag_hamiltonian((0, 1))
        with pytest.raises(SizeError):
            optimal_yield(np.eye(2) / 2, eta_state(3), H, DiagonalAncilla(np.arange(600), 1.0), CTX,
                          method="channel", max_dim=1024)

    def test_ancilla_spacing_mismatch(self):
        with pytest.raises(ContractError):
            optimal_yield(np.eye(2) / 2, eta_state(3), diag_hamiltonian((0, 1)),
                          DiagonalAncilla(np.arange(2), 0.5), CTX)


class TestEntropyLossBound:
    def test_reference_value(self):
        assert entropy_loss_bound(2, 1, 0, 100) == pytest.approx(ENTROPY_LOSS_N2_L100, abs=1e-15)
        direct = math.log(2) / 100 - 0.01 * math.log(0.01) - 0.99 * math.log(0.99)
        assert ENTROPY_LOSS_N2_L100 == pytest.approx(direct, abs=1e-15)

    def test_vanishes(self):
        vals = [entropy_loss_bound(3, 2, 0, L) for L in (10, 100, 10**4, 10**7)]
        assert all(a > b for a, b in zip(vals, vals[1:])) and vals[-1] < 1e-5

    def test_precondition(self):
        with pytest.raises(ValueError):
            entropy_loss_bound(3, 2, 0, 5)

    @given(seeds, st.integers(2, 4), st.sampled_from([1, 10, 100]))
    def test_measured_loss_below_bound(self, seed, N, mult):
        rng = np.random.default_rng(seed)
        z = tuple(int(v) for v in rng.integers(0, 3, N))
        H = SystemHamiltonian(z, haar_unitary(N, rng))
        L = max(1, N * H.z_range * mult)
        rho = random_density(N, rng)
        loss = entropy(r_channel(rho, eta_state(L), H)) - entropy(rho)
        assert loss <= entropy_loss_bound(N, H.z_max, H.z_min, L) + 1e-12


class TestIsothermalPath:
    def test_endpoints(self):
        P = isothermal_path([0.6, 0.3, 0.1], [0.2, 0.3, 0.5], 7, CTX)
        assert len(P) == 8
        assert_allclose(P[0].gibbs(1.0), [0.6, 0.3, 0.1])
        assert_allclose(P[-1].gibbs(1.0), [0.2, 0.3, 0.5])

    def test_equal_endpoints(self):
        assert path_sum(isothermal_path([0.4, 0.6], [0.4, 0.6], 5, CTX), CTX) == 0.0

    def test_reference_sum(self):
        s = path_sum(isothermal_path([0.9, 0.1], [0.5, 0.5], 100, CTX), CTX)
        assert s == pytest.approx(PATH_SUM_K100, rel=1e-12)
        assert 0 < s <= math.log(9) ** 2 / 100
        assert s <= isothermal_bound([0.9, 0.1], [0.5, 0.5], 100)

    @given(seeds, st.integers(2, 60))
    def test_doubling(self, seed, K):
        rng = np.random.default_rng(seed)
        q, p = rng.dirichlet(np.ones(3)) + 1e-3, rng.dirichlet(np.ones(3)) + 1e-3
        q, p = q / q.sum(), p / p.sum()
        s1 = path_sum(isothermal_path(q, p, K, CTX), CTX)
        s2 = path_sum(isothermal_path(q, p, 2 * K, CTX), CTX)
        assert s1 <= isothermal_bound(q, p, K) + 1e-14
        assert isothermal_bound(q, p, 2 * K) <= isothermal_bound(q, p, K) / 2 + 1e-15
        assert s2 <= s1 + 1e-15

    def test_support_required(self):
        with pytest.raises(ValueError):
            isothermal_path([1.0, 0.0], [0.5, 0.5], 4, CTX)

    def test_needs_two_steps(self):
        with pytest.raises(ValueError):
            isothermal_path([0.5, 0.5], [0.5, 0.5], 1, CTX)


class TestGrid:
    def test_on_grid_fixed(self):
        h = LevelConfig(np.array([0.0, 0.3, -0.7]))
        assert_allclose(snap_to_grid(h, 0.1).h, h.h)

    def test_floor(self):
        assert list(grid_indices(np.array([0.25, -0.25, 0.99999999999]), 0.5)) == [0, -1, 2]

    @given(seeds)
    def test_snap_divergences(self, seed):
        rng = np.random.default_rng(seed)
        h = LevelConfig(rng.normal(0, 2, 4))
        t = snap_to_grid(h, 0.1)
        assert np.all(np.abs(t.h - h.h) <= 0.1 + 1e-15)
        assert np.all(np.isclose(t.h / 0.1, np.round(t.h / 0.1)))
        g, gt = h.gibbs(1.0), t.gibbs(1.0)
        assert kl_divergence(g, gt) <= 0.1 + 1e-14 and kl_divergence(gt, g) <= 0.1 + 1e-14

    @pytest.mark.parametrize("K", [2, 10, 100])
    @pytest.mark.parametrize("J", [8, 64])
    def test_path_perturbation(self, K, J):
        P = isothermal_path([0.7, 0.2, 0.1], [0.3, 0.3, 0.4], K, CTX)
        s = 1.0 / J
        snapped = [snap_to_grid(c, s) for c in P]
        assert abs(path_sum(snapped, CTX) - path_sum(P, CTX)) <= grid_perturbation_bound(P, s, CTX)


class TestAncilla:
    def setup_method(self):
        self.plan = build_ancilla([0.8, 0.2], [2 / 3, 1 / 3], 8, 64, 1.0, CTX)

    def test_reference_values(self):
        p = self.plan
        assert p.dim == 2**9
        assert p.sorted_divergence() == pytest.approx(ANCILLA_SORTED_K8_J64, rel=1e-10)
        assert p.rotated_divergence() == pytest.approx(ANCILLA_ROTATED_K8_J64, rel=1e-10)
        assert p.bound() == pytest.approx(ANCILLA_BOUND_K8_J64, rel=1e-12)
        assert p.sorted_divergence() <= p.rotated_divergence() <= p.bound()

    def test_rotation_identity(self):
        assert self.plan.rotated_divergence() == pytest.approx(self.plan.factor_sum(), rel=1e-10)

    def test_levels_on_grid(self):
        for f in self.plan.factors:
            assert f.dtype.kind == "i"
        z = self.plan.z_values()
        assert z.shape == (512,) and z.dtype.kind == "i"

    def test_gibbs_vector_factorises(self):
        G = self.plan.gibbs_vector()
        anc = self.plan.ancilla()
        assert_allclose(G, anc.gibbs_weights(1.0), atol=1e-15)

    def test_equal_endpoints(self):
        plan = build_ancilla([0.6, 0.4], [0.6, 0.4], 4, 16, 1.0, CTX)
        assert all(np.array_equal(plan.factors[0], f) for f in plan.factors)
        assert plan.bound() == pytest.approx(4 / 16 + 2 * 4 / 16)

    def test_size_cap(self):
        with pytest.raises(SizeError):
            build_ancilla([0.5, 0.5], [0.4, 0.6], 30, 8, 1.0, CTX, cap=2**20)
        big = build_ancilla([0.5, 0.5], [0.4, 0.6], 30, 8, 1.0, CTX)
        with pytest.raises(SizeError):
            big.sorted_divergence()

    def test_serialisable(self):
        import json
        d = json.loads(json.dumps(self.plan.to_dict()))
        assert d["K"] == 8 and len(d["factors"]) == 9

    @given(seeds)
    def test_sorting_beats_any_permutation(self, seed):
        rng = np.random.default_rng(seed)
        fa = [rng.dirichlet(np.ones(2)) for _ in range(4)]
        fb = [rng.dirichlet(np.ones(2)) for _ in range(4)]
        a, b = product_vector(fa), product_vector(fb)
        assert sorted_divergence(a, b) <= kl_divergence(cyclic_rotate(a).ravel(), b.ravel()) + 1e-12
        assert sorted_divergence(a, b) <= kl_divergence(a.ravel(), b.ravel()) + 1e-12


class TestConvergence:
    def test_schedule(self):
        H = diag_hamiltonian((0, 1))
        R = rotation(0.4)
        rho = R @ np.diag([0.8, 0.2]) @ R.T
        pts = convergence_experiment(rho, H, CTX, [(K, K * K, K**4) for K in (2, 4, 6)])
        gaps = [p.gap for p in pts]
        assert all(g >= 0 for g in gaps)
        assert gaps[0] > gaps[1] > gaps[2]
        assert all(p.gap <= p.bound_rhs for p in pts)
        assert set(pts[0].row()) == {"K", "J", "L", "W", "D_target", "gap", "bound_rhs",
                                     "S_loss", "mismatch"}

    def test_gibbs_state_yields_nothing(self):
        H = diag_hamiltonian((0, 1))
        pts = convergence_experiment(gibbs(H, CTX), H, CTX, [(2, 4, 16), (3, 9, 81)])
        assert all(abs(p.W) <= 1e-10 for p in pts)

    def test_diagonal_reservoir_control(self):
        H = diag_hamiltonian((0, 1))
        R = rotation(0.4)
        rho = R @ np.diag([0.8, 0.2]) @ R.T
        (pt,) = convergence_experiment(rho, H, CTX, [(10, 100, 10**4)], control=True)
        loss = entropy(pinched_state(rho, H)) - entropy(rho)
        assert pt.W - pt.W_pinched == pytest.approx(CTX.kT * loss, abs=0.02)

    def test_precondition(self):
        H = diag_hamiltonian((0, 1))
        with pytest.raises(ValueError):
            gap_bound(np.eye(2) / 2, H, CTX, 2, 4, 4)
        with pytest.raises(ContractError):
            convergence_experiment(np.diag([1.0, 0.0]), H, CTX, [(2, 4, 16)])
