"""Energy-conserving unitaries built from a system unitary and the channels they induce.

A system unitary ``U`` on ``H_S`` is lifted to the joint unitary

    V(U) = Σ_{n,n'} |ψ_n><ψ_n| U |ψ_n'><ψ_n'| ⊗ Δ^{z_n' - z_n}

on system plus ladder reservoir.  Tracing out either side gives a channel
on the system (``Φ``) or on the reservoir (``Λ``).  Both are evaluated here
from their closed forms, working in the eigenbasis of ``H_S``, so the joint
space is never built.  Explicit joint unitaries on the cyclic ladder exist only
for small-dimension cross checks (:func:`cyclic_joint_unitary`).

The half-infinite ladder variant ``V₊`` acts as ``V`` on total-energy
sectors that fit above the floor.  On the border sectors it acts as the
identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .ladder import (DOUBLY_INFINITE, HALF_INFINITE, CyclicLadderState, LadderKind,
                     WindowedLadderState, binomial_weights, cyclic_moment, cyclic_shift_matrix,
                     delta_moment, energy_expectation, moments, pad_window, trim, window_slice)
from .qmat import (ContractError, SizeError, as_matrix, check_density, entropy, expand_operator, is_unitary,
                   norms, partial_trace)
from .systems import SystemHamiltonian

CHANNEL_TOL = 1e-10


class BorderZoneError(ValueError):
    """The reservoir support reaches the border zone of the half-infinite ladder."""


class ProtocolError(ValueError):
    """A precondition of the regenerative cycle is violated."""


@dataclass(frozen=True)
class CoherentMachine:
    """A system Hamiltonian paired with a reservoir ladder of the same spacing."""

    system: SystemHamiltonian
    kind: LadderKind = field(default=DOUBLY_INFINITE)

    @property
    def spacing(self) -> float:
        return self.system.spacing

    @property
    def z_max(self) -> int:
        return self.system.z_max

    @property
    def z_min(self) -> int:
        return self.system.z_min

    @property
    def border(self) -> int:
        """Size ``z_max - z_min`` of the border zone (and of any jump on the ladder)."""
        return self.system.z_range

    @property
    def dim(self) -> int:
        return self.system.dim


def _machine(m: CoherentMachine | SystemHamiltonian) -> CoherentMachine:
    return m if isinstance(m, CoherentMachine) else CoherentMachine(m)


def _check_spacing(sigma, m: CoherentMachine) -> None:
    if not math.isclose(sigma.spacing, m.spacing, rel_tol=1e-12):
        raise ContractError(f"reservoir spacing {sigma.spacing} does not match system "
                            f"spacing {m.spacing}")


def _check_unitary(U, n: int) -> np.ndarray:
    u = as_matrix(U)
    if u.shape != (n, n):
        raise ContractError(f"unitary has shape {u.shape}, system dimension is {n}")
    if not is_unitary(u):
        raise ContractError("U is not unitary")
    return u


def _moment_table(moment: Callable[[int], complex], a_max: int) -> np.ndarray:
    return np.array([moment(a) for a in range(-a_max, a_max + 1)], dtype=complex)


def _phi_eig(q: np.ndarray, u: np.ndarray, z: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Closed form of Φ in the eigenbasis.

    ``out[n, m] = Σ U[n,n'] q[n',m'] conj(U[m,m']) c(z_n' - z_n - z_m' + z_m)``
    where ``c(a) = table[a + a_max]``.
    """
    a_max = (len(table) - 1) // 2
    idx = (z[None, :, None, None] - z[:, None, None, None]
           - z[None, None, None, :] + z[None, None, :, None])
    c = table[idx + a_max]
    return np.einsum("ab,bd,cd,abcd->ac", u, q, u.conj(), c)


def _lambda_weights(q: np.ndarray, u: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Coefficients of ``Δ^a σ Δ^{b†}`` in Λ, as a ``(2D+1, 2D+1)`` grid indexed by ``(a, b)``."""
    D = int(z.max() - z.min())
    coef = u[:, :, None] * q[None, :, :] * u.conj()[:, None, :]
    a = np.broadcast_to(z[None, :, None] - z[:, None, None], coef.shape)
    b = np.broadcast_to(z[None, None, :] - z[:, None, None], coef.shape)
    grid = np.zeros((2 * D + 1, 2 * D + 1), dtype=complex)
    np.add.at(grid, ((a + D).ravel(), (b + D).ravel()), coef.ravel())
    return grid


def _phi_linear(Q, sigma: WindowedLadderState, u_eig: np.ndarray, m: CoherentMachine) -> np.ndarray:
    H = m.system
    table = _moment_table(lambda a: delta_moment(sigma, a), 2 * m.border)
    out = _phi_eig(H.to_eigenbasis(Q), u_eig, H.z_array, table)
    return H.from_eigenbasis(out)


def phi_channel(rho, sigma: WindowedLadderState, U, m: CoherentMachine | SystemHamiltonian) -> np.ndarray:
    """Channel induced on the system: ``Tr_E[V(U) (ρ⊗σ) V(U)†]``."""
    m = _machine(m)
    _check_spacing(sigma, m)
    r = check_density(rho)
    u = _check_unitary(U, m.dim)
    return _phi_linear(r, sigma, m.system.to_eigenbasis(u), m)


def phi_process_matrix(sigma: WindowedLadderState, U, m: CoherentMachine | SystemHamiltonian) -> np.ndarray:
    """Matrix of Φ on the basis ``|i><j|``: column ``i*N + j`` is ``vec Φ(|i><j|)``."""
    m = _machine(m)
    _check_spacing(sigma, m)
    u_eig = m.system.to_eigenbasis(_check_unitary(U, m.dim))
    return _process_matrix(lambda Q: _phi_linear(Q, sigma, u_eig, m), m.dim)


def _process_matrix(channel: Callable[[np.ndarray], np.ndarray], n: int) -> np.ndarray:
    cols = []
    for i in range(n):
        for j in range(n):
            e = np.zeros((n, n), dtype=complex)
            e[i, j] = 1.0
            cols.append(channel(e).reshape(-1))
    return np.array(cols).T


def lambda_channel(sigma: WindowedLadderState, rho, U,
                   m: CoherentMachine | SystemHamiltonian) -> WindowedLadderState:
    """Channel induced on the reservoir: ``Tr_S[V(U) (ρ⊗σ) V(U)†]``.

    The output window is the input window grown by ``z_max - z_min`` on
    each side, so the result is exact.
    """
    m = _machine(m)
    _check_spacing(sigma, m)
    if sigma.kind.is_half:
        raise ContractError("lambda_channel is the doubly-infinite channel; use lambda_plus")
    H = m.system
    q = H.to_eigenbasis(check_density(rho))
    u = H.to_eigenbasis(_check_unitary(U, m.dim))
    D = m.border
    W = sigma.width
    grid = _lambda_weights(q, u, H.z_array)
    out = np.zeros((W + 2 * D, W + 2 * D), dtype=complex)
    for ia, ib in zip(*np.nonzero(grid)):
        out[ia:ia + W, ib:ib + W] += grid[ia, ib] * sigma.block
    return sigma.replace(offset=sigma.offset - D, block=out)


def unitary_channel(rho, U) -> np.ndarray:
    u = as_matrix(U)
    return u @ as_matrix(rho) @ u.conj().T


def coherence_epsilon_bound(sigma: WindowedLadderState, m: CoherentMachine | SystemHamiltonian) -> float:
    """``ε = max_{|a| ≤ 2(z_max - z_min)} |1 - Tr(Δ^a σ)|``.

    The trace-norm distance between Φ and the unitary channel is at most
    ``N² ε`` and the diamond-norm distance at most ``N³ ε``.
    """
    m = _machine(m)
    A = 2 * m.border
    return float(max(abs(1.0 - delta_moment(sigma, a)) for a in range(-A, A + 1)))


def trace_distance_bound(sigma, m) -> float:
    m = _machine(m)
    return m.dim**2 * coherence_epsilon_bound(sigma, m)


def diamond_distance_bound(sigma, m) -> float:
    m = _machine(m)
    return m.dim**3 * coherence_epsilon_bound(sigma, m)


def eta_distance_bound(L: int, m) -> float:
    """``2 N² (z_max - z_min) / L``, valid for ``η_L`` with ``L ≥ 2(z_max - z_min)``."""
    m = _machine(m)
    return 2.0 * m.dim**2 * m.border / L


def estimate_channel_distance(sigma: WindowedLadderState, U, m, rng: np.random.Generator | None = None,
                              samples: int = 64) -> float:
    """Lower estimate of ``sup_{||Q||₁ ≤ 1} ||Φ(Q) - U Q U†||₁``.

    The supremum of a convex function over the trace-norm ball is attained on
    rank-one operators ``|x><y|``.  We evaluate matrix units, pairwise
    superpositions of basis vectors and ``samples`` random rank-one operators.
    """
    m = _machine(m)
    u = _check_unitary(U, m.dim)
    u_eig = m.system.to_eigenbasis(u)
    n = m.dim

    def diff(Q: np.ndarray) -> float:
        return norms(_phi_linear(Q, sigma, u_eig, m) - u @ Q @ u.conj().T).trace_norm

    vecs = [np.eye(n)[i] for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            for ph in (1, -1, 1j, -1j):
                v = np.zeros(n, dtype=complex)
                v[i], v[j] = 1 / math.sqrt(2), ph / math.sqrt(2)
                vecs.append(v)
    best = 0.0
    for x in vecs:
        for y in vecs:
            best = max(best, diff(np.outer(x, y.conj())))
    if rng is not None:
        for _ in range(samples):
            x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            y = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            x /= np.linalg.norm(x)
            y /= np.linalg.norm(y)
            best = max(best, diff(np.outer(x, y.conj())), diff(np.outer(x, x.conj())))
    return best


@dataclass
class ChannelReport:
    output_system: np.ndarray
    output_reservoir: WindowedLadderState
    moments_before: np.ndarray
    moments_after: np.ndarray
    distance_to_unitary: float

    @property
    def moment_error(self) -> float:
        return float(np.max(np.abs(self.moments_after - self.moments_before)))


def channel_report(sigma: WindowedLadderState, rho, U, m, a_max: int = 6) -> ChannelReport:
    """Apply both induced channels once and collect the bookkeeping."""
    m = _machine(m)
    out_s = phi_channel(rho, sigma, U, m)
    out_e = lambda_channel(sigma, rho, U, m)
    dist = norms(out_s - unitary_channel(rho, U)).trace_norm
    return ChannelReport(out_s, out_e, moments(sigma, a_max), moments(out_e, a_max), dist)


@dataclass
class CatalyticReport:
    passed: bool
    distance: float
    tolerance: float
    final_state: WindowedLadderState
    moments_before: np.ndarray = field(default_factory=lambda: np.zeros(0))
    moments_after: np.ndarray = field(default_factory=lambda: np.zeros(0))


def weak_catalytic_check(sigma: WindowedLadderState,
                         uses: Sequence[tuple[np.ndarray, np.ndarray, SystemHamiltonian]],
                         probe_U, probe_H: SystemHamiltonian, tol: float = CHANNEL_TOL,
                         a_max: int = 6) -> CatalyticReport:
    """Use the reservoir on each ``(ρ_i, U_i, H_i)`` in turn, then compare probe channels.

    The probe channel ``Φ_{σ_final, U*}`` is compared with ``Φ_{σ, U*}`` on
    the full operator basis.
    """
    state = sigma
    for rho_i, U_i, H_i in uses:
        state = lambda_channel(state, rho_i, U_i, H_i)
    before = phi_process_matrix(sigma, probe_U, probe_H)
    after = phi_process_matrix(state, probe_U, probe_H)
    dist = float(np.max(np.abs(after - before)))
    return CatalyticReport(dist <= tol, dist, tol, state, moments(sigma, a_max), moments(state, a_max))


def cyclic_joint_unitary(U, H: SystemHamiltonian, n: int) -> np.ndarray:
    """``V(U)`` on ``H_S ⊗ Z_n`` with the cyclic shift in place of Δ.

    This is exactly unitary and equals the doubly-infinite ``V(U)`` on any
    state whose reservoir support stays clear of the wrap-around.
    """
    u_eig = H.to_eigenbasis(_check_unitary(U, H.dim))
    z = H.z_array
    N = H.dim
    V = np.zeros((N * n, N * n), dtype=complex)
    for a in range(N):
        for b in range(N):
            if u_eig[a, b] != 0:
                V[a * n:(a + 1) * n, b * n:(b + 1) * n] = u_eig[a, b] * cyclic_shift_matrix(n, z[b] - z[a])
    B = np.kron(H.basis, np.eye(n))
    return V if H.is_diagonal else B @ V @ B.conj().T


def embed_window(W: int, n: int, position: int) -> np.ndarray:
    """Isometry placing a window of width ``W`` at levels ``position..`` of ``Z_n``."""
    iso = np.zeros((n, W), dtype=complex)
    iso[np.arange(W) + position, np.arange(W)] = 1.0
    return iso


@dataclass
class StrongCatalyticReport:
    passed: bool
    distance: float
    commutator_norm: float
    tolerance: float
    two_step: np.ndarray
    one_step: np.ndarray


def strong_catalytic_check(eta: np.ndarray, dims: tuple[int, int, int], window: int,
                           U1, H1: SystemHamiltonian, U2, H2: SystemHamiltonian,
                           tol: float = CHANNEL_TOL, max_dim: int = 2**12) -> StrongCatalyticReport:
    """Check ``Tr_{E S1}(V2 V1 η V1† V2†) = Tr_E(V2 Tr_{S1}(η) V2†)``.

    ``eta`` lives on ``S2 ⊗ S1 ⊗ C ⊗ E`` with ``dims = (d2, d1, dc)`` and a
    reservoir window of ``window`` levels.  The window is padded by the
    largest possible total jump and embedded into a cyclic ladder, where the
    joint unitaries are built explicitly.
    """
    d2, d1, dc = dims
    if not math.isclose(H1.spacing, H2.spacing, rel_tol=1e-12):
        raise ContractError("systems must share the reservoir spacing")
    pad = H1.z_range + H2.z_range
    n = window + 2 * pad
    total = d2 * d1 * dc * n
    if total > max_dim:
        raise SizeError(f"joint dimension {total} exceeds cap {max_dim}")
    eta = as_matrix(eta)
    if eta.shape[0] != d2 * d1 * dc * window:
        raise ContractError("eta dimension does not match dims and window")
    iso = np.kron(np.eye(d2 * d1 * dc), embed_window(window, n, pad))
    big = iso @ eta @ iso.conj().T
    full = [d2, d1, dc, n]
    V1 = expand_operator(cyclic_joint_unitary(U1, H1, n), full, [1, 3])
    V2 = expand_operator(cyclic_joint_unitary(U2, H2, n), full, [0, 3])
    out = V2 @ V1 @ big @ V1.conj().T @ V2.conj().T
    two_step = partial_trace(out, full, [0, 2])
    reduced = partial_trace(big, full, [0, 2, 3])
    V2r = expand_operator(cyclic_joint_unitary(U2, H2, n), [d2, dc, n], [0, 2])
    one_step = partial_trace(V2r @ reduced @ V2r.conj().T, [d2, dc, n], [0, 1])
    dist = float(np.max(np.abs(two_step - one_step)))
    comm = float(np.max(np.abs(V1 @ V2 - V2 @ V1)))
    return StrongCatalyticReport(dist <= tol and comm <= tol, dist, comm, tol, two_step, one_step)


# -- sequential preparation -------------------------------------------------

TARGET_PHASE_STATE = np.array([1.0, -1j]) / math.sqrt(2.0)


def optimal_prep_unitary(sigma: WindowedLadderState) -> np.ndarray:
    """Unitary maximising overlap with ``(|ψ0> - i|ψ1>)/√2`` from the ground state.

    ``U10 = 1/√2`` and ``U00 = i e^{-i arg Tr(Δσ)}/√2``; ``arg 0`` is taken as 0.
    """
    c = delta_moment(sigma, 1)
    phase = 0.0 if c == 0 else math.atan2(c.imag, c.real)
    u00 = 1j * np.exp(-1j * phase) / math.sqrt(2.0)
    u10 = 1.0 / math.sqrt(2.0)
    return np.array([[u00, -np.conj(u10)], [u10, np.conj(u00)]], dtype=complex)


@dataclass
class SequentialPrepResult:
    fidelities: np.ndarray
    energies: np.ndarray
    entropies: np.ndarray
    states: list[WindowedLadderState]
    moment_series: dict[int, np.ndarray]


def sequential_prep(sigma0: WindowedLadderState, k_max: int, moment_set: Sequence[int] = (1,),
                    keep_states: bool = True, with_entropy: bool = True) -> SequentialPrepResult:
    """Prepare ``k_max`` qubits in turn from their ground state with one reservoir.

    Each step uses :func:`optimal_prep_unitary` for the current reservoir
    state and records the fidelity of the produced qubit with the target.
    The series has ``k_max + 1`` entries, for ``k = 0 .. k_max``.
    """
    H = SystemHamiltonian((0, 1), None, sigma0.spacing)
    ground = np.diag([1.0, 0.0]).astype(complex)
    target = TARGET_PHASE_STATE
    sigma = sigma0
    fids, ens, ents, states = [], [], [], []
    mom = {a: [] for a in moment_set}
    for k in range(k_max + 1):
        U = optimal_prep_unitary(sigma)
        out = phi_channel(ground, sigma, U, H)
        fids.append(float(np.real(target.conj() @ out @ target)))
        ens.append(energy_expectation(sigma))
        ents.append(entropy(sigma.block) if with_entropy else float("nan"))
        for a in moment_set:
            mom[a].append(delta_moment(sigma, a))
        if keep_states:
            states.append(sigma)
        if k < k_max:
            sigma = trim(lambda_channel(sigma, ground, U, H))
    return SequentialPrepResult(np.array(fids), np.array(ens), np.array(ents), states,
                                {a: np.array(v) for a, v in mom.items()})


def binomial_spread(sigma0: WindowedLadderState, k: int) -> WindowedLadderState:
    """Closed form after ``k`` preparations: ``2^{-k} Σ_l C(k,l) Δ^{l†} σ0 Δ^l``."""
    w = binomial_weights(k)
    W = sigma0.width
    out = np.zeros((W + k, W + k), dtype=complex)
    for l, wl in enumerate(w):
        # shifting down by l puts the block at rows k-l .. k-l+W-1 of the output window
        out[k - l:k - l + W, k - l:k - l + W] += wl * sigma0.block
    return sigma0.replace(offset=sigma0.offset - k, block=out)


# -- half-infinite ladder ---------------------------------------------------

def _require_half(sigma: WindowedLadderState) -> WindowedLadderState:
    if sigma.offset < 0:
        raise ContractError("half-infinite channels need offset >= 0")
    return sigma if sigma.kind.is_half else sigma.replace(kind=HALF_INFINITE)


def _check_border(sigma: WindowedLadderState, D: int, tol: float = 1e-14) -> None:
    if D == 0:
        return
    lo, _ = sigma.support(tol)
    if lo < D:
        raise BorderZoneError(f"reservoir support starts at level {lo}, inside the border zone "
                              f"of size {D}")


def _plus_operators(u_eig: np.ndarray, z: np.ndarray, lo: int, W: int, out_lo: int,
                    out_w: int) -> np.ndarray:
    """Reservoir parts ``K[n, n']`` of ``V₊(U) = Σ |ψ_n><ψ_n'| ⊗ K[n, n']``.

    ``K[n,n'] = U[n,n'] Δ^{z_n' - z_n} P_{≥ z_max - z_n'} + δ_{nn'} P_{< z_max - z_n}``,
    mapping input levels ``lo .. lo+W-1`` to output levels ``out_lo ..``.
    """
    N = len(z)
    zmax = int(z.max())
    K = np.zeros((N, N, out_w, W), dtype=complex)
    levels = np.arange(lo, lo + W)
    cols = np.arange(W)
    for n in range(N):
        for n2 in range(N):
            bulk = levels + z[n2] >= zmax
            rows = levels + z[n2] - z[n] - out_lo
            if u_eig[n, n2] != 0:
                K[n, n2, rows[bulk], cols[bulk]] = u_eig[n, n2]
            if n == n2:
                K[n, n, levels[~bulk] - out_lo, cols[~bulk]] += 1.0
    return K


def _plus_setup(sigma, U, m):
    m = _machine(m)
    _check_spacing(sigma, m)
    sigma = _require_half(sigma)
    H = m.system
    u_eig = H.to_eigenbasis(_check_unitary(U, m.dim))
    D = m.border
    out_lo = max(0, sigma.offset - D)
    out_w = sigma.top + D - out_lo
    K = _plus_operators(u_eig, H.z_array, sigma.offset, sigma.width, out_lo, out_w)
    return m, sigma, K, out_lo


def lambda_plus(sigma: WindowedLadderState, rho, U, m: CoherentMachine | SystemHamiltonian,
                strict: bool = True) -> WindowedLadderState:
    """Reservoir channel of ``V₊(U)`` on the half-infinite ladder.

    With ``strict=True`` a :class:`BorderZoneError` is raised if ``σ`` has
    support in the border zone, where ``V₊`` deviates from ``V``.
    """
    m, sigma, K, out_lo = _plus_setup(sigma, U, m)
    if strict:
        _check_border(sigma, m.border)
    q = m.system.to_eigenbasis(check_density(rho))
    T = np.einsum("nbij,jk->nbik", K, sigma.block)
    out = np.einsum("nbij,bc,nckj->ik", T, q, K.conj())
    return WindowedLadderState(out_lo, out, sigma.tail_mass, sigma.spacing, HALF_INFINITE)


def _phi_plus_linear(Q, sigma, K, m) -> np.ndarray:
    q = m.system.to_eigenbasis(Q)
    T = np.einsum("nbij,jk->nbik", K, sigma.block)
    out = np.einsum("nbij,bc,mcij->nm", T, q, K.conj())
    return m.system.from_eigenbasis(out)


def phi_plus(rho, sigma: WindowedLadderState, U, m: CoherentMachine | SystemHamiltonian,
             strict: bool = True) -> np.ndarray:
    """System channel of ``V₊(U)`` on the half-infinite ladder."""
    m, sigma, K, _ = _plus_setup(sigma, U, m)
    if strict:
        _check_border(sigma, m.border)
    return _phi_plus_linear(check_density(rho), sigma, K, m)


def phi_plus_process_matrix(sigma: WindowedLadderState, U, m, strict: bool = True) -> np.ndarray:
    m, sigma, K, _ = _plus_setup(sigma, U, m)
    if strict:
        _check_border(sigma, m.border)
    return _process_matrix(lambda Q: _phi_plus_linear(Q, sigma, K, m), m.dim)


def pump(sigma: WindowedLadderState, d: int, method: str = "ancilla") -> WindowedLadderState:
    """Translate a half-infinite state up by ``d`` rungs.

    ``method="ancilla"`` uses a two-level ancilla with gap ``d·s`` in its
    excited state and the swap unitary, through :func:`lambda_plus`.
    ``method="shift"`` moves the offset directly.  The two agree exactly.
    """
    if d < 1:
        raise ValueError("pump distance must be positive")
    sigma = _require_half(sigma)
    if method == "shift":
        return sigma.replace(offset=sigma.offset + d)
    if method != "ancilla":
        raise ValueError(f"unknown pump method {method!r}")
    H_A = SystemHamiltonian((0, d), None, sigma.spacing)
    excited = np.diag([0.0, 1.0]).astype(complex)
    swap = np.array([[0, 1], [1, 0]], dtype=complex)
    return trim(lambda_plus(sigma, excited, swap, H_A, strict=False))


@dataclass
class CycleReport:
    sigma_out: WindowedLadderState
    probe_distance: float
    support_in: int
    support_out: int
    support_ok: bool
    energy_in: float
    energy_after_use: float
    energy_out: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.support_ok and self.probe_distance <= self.tolerance


def catalytic_cycle(sigma_in: WindowedLadderState, rho1, U1, H1: SystemHamiltonian, D: int,
                    probe_U, probe_H: SystemHamiltonian, tol: float = 1e-12) -> CycleReport:
    """One regenerative cycle: use the reservoir on ``(ρ1, U1)``, then pump by ``D``.

    Requires ``σ_in`` supported on levels ``≥ 2D`` and both systems to have
    spectral range at most ``D``.
    """
    if H1.z_range > D or probe_H.z_range > D:
        raise ProtocolError("system spectral range exceeds D")
    sigma_in = _require_half(sigma_in)
    lo_in, _ = sigma_in.support()
    if lo_in < 2 * D:
        raise ProtocolError(f"support starts at {lo_in}, need >= {2 * D}")
    used = trim(lambda_plus(sigma_in, rho1, U1, H1))
    out = pump(used, D)
    lo_out, _ = out.support()
    before = phi_plus_process_matrix(sigma_in, probe_U, probe_H)
    after = phi_plus_process_matrix(out, probe_U, probe_H)
    dist = float(np.max(np.abs(after - before)))
    return CycleReport(out, dist, lo_in, lo_out, lo_out >= 2 * D, energy_expectation(sigma_in),
                       energy_expectation(used), energy_expectation(out), tol)


def run_cycles(sigma: WindowedLadderState, uses: Sequence[tuple[np.ndarray, np.ndarray, SystemHamiltonian]],
               D: int, probe_U, probe_H: SystemHamiltonian, tol: float = 1e-12) -> list[CycleReport]:
    """Iterate :func:`catalytic_cycle`; each report compares with the original state."""
    reports = []
    reference = phi_plus_process_matrix(_require_half(sigma), probe_U, probe_H)
    state = sigma
    for rho, U, H in uses:
        rep = catalytic_cycle(state, rho, U, H, D, probe_U, probe_H, tol)
        rep.probe_distance = max(rep.probe_distance, float(np.max(np.abs(
            phi_plus_process_matrix(rep.sigma_out, probe_U, probe_H) - reference))))
        reports.append(rep)
        state = rep.sigma_out
    return reports


# -- cyclic group ladder ----------------------------------------------------

def cyclic_group_channels(sigma: CyclicLadderState, rho, U,
                          H: SystemHamiltonian) -> tuple[np.ndarray, CyclicLadderState]:
    """Φ and Λ with ``Δ`` replaced by the cyclic shift on ``Z_n``; no truncation anywhere."""
    if not math.isclose(sigma.spacing, H.spacing, rel_tol=1e-12):
        raise ContractError("reservoir spacing does not match system spacing")
    r = check_density(rho)
    u = _check_unitary(U, H.dim)
    q, u_eig = H.to_eigenbasis(r), H.to_eigenbasis(u)
    z = H.z_array
    D = H.z_range
    table = _moment_table(lambda a: cyclic_moment(sigma, a), 2 * D)
    phi = H.from_eigenbasis(_phi_eig(q, u_eig, z, table))
    grid = _lambda_weights(q, u_eig, z)
    out = np.zeros_like(sigma.block)
    for ia, ib in zip(*np.nonzero(grid)):
        out += grid[ia, ib] * np.roll(sigma.block, (ia - D, ib - D), axis=(0, 1))
    return phi, CyclicLadderState(sigma.n, out, sigma.spacing)


def windowed_on_cyclic(sigma: WindowedLadderState, n: int, position: int, lo: int, hi: int) -> np.ndarray:
    """Entries of a windowed state for levels ``lo..hi-1`` placed as they sit on ``Z_n``."""
    blk = np.zeros((n, n), dtype=complex)
    idx = (np.arange(hi - lo) + position) % n
    blk[np.ix_(idx, idx)] = window_slice(sigma, lo, hi)
    return blk
