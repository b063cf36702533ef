"""Coherence expressed as correlations with a reference ladder ``R``.

A state ``ρ`` on ``Q`` is represented by ``Θ_ξ(ρ) = Y (ρ ⊗ ξ) Y†`` on
``Q ⊗ R`` with ``Y = Σ_j P_j ⊗ Δ^{-z_j}``.  Measurements are restricted to
``Θ_1(A)``, so two states on ``Q ⊗ R`` are equivalent when every such
measurement gives the same statistics.

The reference is held in a finite window of levels.  Inside the window
``Δ`` is replaced by the cyclic shift, which keeps ``Y`` exactly unitary; as
long as the reference states stay clear of the window edges by the energy
range of ``Q``, the cyclic and the true shift act identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ladder import WindowedLadderState, cyclic_shift_matrix
from .qmat import ContractError, as_matrix, expand_operator, haar_unitary, partial_trace
from .systems import SystemHamiltonian, is_block_diagonal, joint_hamiltonian

EQUIV_TOL = 1e-10


class WindowOverflowError(ValueError):
    """A reference operator sits too close to the window edge for an exact embedding."""


@dataclass(frozen=True)
class ReferenceEmbedding:
    """``Y`` for the system ``Q`` with ``R`` held on levels ``ref_offset .. ref_offset + ref_width - 1``."""

    system: SystemHamiltonian
    ref_offset: int
    ref_width: int

    def __post_init__(self) -> None:
        if self.ref_width <= self.system.z_range:
            raise ValueError("reference window narrower than the energy range of Q")

    @classmethod
    def auto(cls, system: SystemHamiltonian, lo: int, hi: int, pad: int | None = None) -> "ReferenceEmbedding":
        """Window holding ``[lo, hi)`` and its shifts by ``-z_j``, padded by ``z_max - z_min``."""
        pad = system.z_range if pad is None else pad
        off = min(lo, lo - system.z_max) - pad
        return cls(system, off, max(hi, hi - system.z_min) + pad - off)

    @property
    def dim(self) -> int:
        return self.system.dim * self.ref_width

    @property
    def Y(self) -> np.ndarray:
        H, W = self.system, self.ref_width
        blocks = np.zeros((H.dim * W, H.dim * W), dtype=complex)
        for n, z in enumerate(H.z):
            blocks[n * W:(n + 1) * W, n * W:(n + 1) * W] = cyclic_shift_matrix(W, -z)
        if H.is_diagonal:
            return blocks
        B = np.kron(H.basis, np.eye(W))
        return B @ blocks @ B.conj().T

    def ref_operator(self, B) -> np.ndarray:
        """Reference operator as a window matrix; a ladder state is placed at its offset."""
        if isinstance(B, WindowedLadderState):
            lo = B.offset - self.ref_offset
            if lo < 0 or lo + B.width > self.ref_width:
                raise WindowOverflowError("ladder state does not fit the reference window")
            m = np.zeros((self.ref_width, self.ref_width), dtype=complex)
            m[lo:lo + B.width, lo:lo + B.width] = B.block
            return m
        m = as_matrix(B)
        if m.shape != (self.ref_width, self.ref_width):
            raise ContractError("reference operator does not match the window")
        return m

    def check_clearance(self, B: np.ndarray) -> None:
        """``B`` must be supported where every shift by ``-z_j`` stays inside the window."""
        rows = np.nonzero(np.any(B != 0, axis=1) | np.any(B != 0, axis=0))[0]
        if rows.size == 0:
            return
        lo_ok, hi_ok = self.system.z_max, self.ref_width + self.system.z_min
        if rows.min() < lo_ok or rows.max() >= hi_ok:
            raise WindowOverflowError("reference support would wrap around the window")


def _shift_ref(B: np.ndarray, a: int, b: int) -> np.ndarray:
    """``C^a B C^{-b}`` with ``C`` the cyclic shift on the window."""
    return np.roll(np.roll(B, a, axis=0), b, axis=1)


def theta(A, B, emb: ReferenceEmbedding, check: bool = True) -> np.ndarray:
    """``Θ_B(A) = Y (A ⊗ B) Y†`` on ``Q ⊗ R``.

    Evaluated block by block in the eigenbasis of ``H_Q``: block ``(n, m)``
    is ``A[n, m] Δ^{-z_n} B Δ^{z_m}``.
    """
    a = as_matrix(A)
    b = emb.ref_operator(B)
    H, W = emb.system, emb.ref_width
    if a.shape != (H.dim, H.dim):
        raise ContractError("operator does not match the system dimension")
    if check:
        emb.check_clearance(b)
    ae = H.to_eigenbasis(a)
    z = H.z_array
    out = np.empty((H.dim, W, H.dim, W), dtype=complex)
    for n in range(H.dim):
        for m in range(H.dim):
            out[n, :, m, :] = ae[n, m] * _shift_ref(b, -int(z[n]), -int(z[m]))
    out = out.reshape(H.dim * W, H.dim * W)
    return out if H.is_diagonal else apply_on_q(H.basis, out, emb)


def apply_on_q(V, X: np.ndarray, emb: ReferenceEmbedding) -> np.ndarray:
    """``(V ⊗ 1_R) X (V ⊗ 1_R)†`` without forming the enlarged operator."""
    v = as_matrix(V)
    d, W = emb.system.dim, emb.ref_width
    t = X.reshape(d, W, d, W)
    t = np.einsum("ab,bjcl,dc->ajdl", v, t, v.conj(), optimize=True)
    return t.reshape(d * W, d * W)


def theta_identity(A, emb: ReferenceEmbedding) -> np.ndarray:
    """Measurement representation ``Θ_1(A)``."""
    return theta(A, np.eye(emb.ref_width), emb, check=False)


def ref_hamiltonian(emb: ReferenceEmbedding) -> SystemHamiltonian:
    """``H_R`` restricted to the window, as integer levels in the same spacing as ``Q``."""
    return SystemHamiltonian(tuple(range(emb.ref_offset, emb.ref_offset + emb.ref_width)),
                             None, emb.system.spacing)


def total_hamiltonian(emb: ReferenceEmbedding) -> SystemHamiltonian:
    return joint_hamiltonian(emb.system, ref_hamiltonian(emb))


def reduced_operator(eta, emb: ReferenceEmbedding) -> np.ndarray:
    """``Σ_{j,j'} P_j' Tr_R(Δ^{z_j' - z_j} η) P_j``, which fixes every ``Tr(Θ_1(A) η)``."""
    H, W = emb.system, emb.ref_width
    e = as_matrix(eta)
    if e.shape != (emb.dim, emb.dim):
        raise ContractError("state does not match the embedding")
    if not H.is_diagonal:
        e = apply_on_q(H.basis.conj().T, e, emb)
    t = e.reshape(H.dim, W, H.dim, W)
    z = H.z_array
    out = np.zeros((H.dim, H.dim), dtype=complex)
    for a in range(H.dim):
        for b in range(H.dim):
            c = int(z[a] - z[b])
            k = np.arange(max(0, -c), min(W, W - c))
            out[a, b] = t[a, k, b, k + c].sum()
    return H.from_eigenbasis(out)


def equivalence_distance(eta1, eta2, emb: ReferenceEmbedding) -> float:
    return float(np.max(np.abs(reduced_operator(eta1, emb) - reduced_operator(eta2, emb))))


def equiv_check(eta1, eta2, emb: ReferenceEmbedding, tol: float = EQUIV_TOL) -> bool:
    """``η ∼ η'``: no measurement of the form ``Θ_1(A)`` tells them apart."""
    return equivalence_distance(eta1, eta2, emb) <= tol


@dataclass
class CommutationReport:
    passed: bool
    distance: float
    tolerance: float


def conserving_commutation_check(V, rho, xi, emb: ReferenceEmbedding,
                                 tol: float = EQUIV_TOL) -> CommutationReport:
    """``(V⊗1) Θ_ξ(ρ) (V⊗1)† = Θ_ξ(V ρ V†)`` for energy-conserving ``V``."""
    v = as_matrix(V)
    if not is_block_diagonal(v, emb.system, tol):
        raise ContractError("V does not conserve energy on Q")
    lhs = apply_on_q(v, theta(rho, xi, emb), emb)
    rhs = theta(v @ as_matrix(rho) @ v.conj().T, xi, emb)
    d = float(np.max(np.abs(lhs - rhs)))
    return CommutationReport(d <= tol, d, tol)


# ---------------------------------------------------------------------------
# helpers for random tests and the replay pipeline


def random_povm(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """``k`` positive operators summing to the identity."""
    gs = []
    for _ in range(k):
        g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        gs.append(g @ g.conj().T)
    w, v = np.linalg.eigh(sum(gs))
    s = (v / np.sqrt(w)) @ v.conj().T
    return [s @ g @ s for g in gs]


def random_conserving_unitary(H: SystemHamiltonian, rng: np.random.Generator) -> np.ndarray:
    """Haar unitary inside each eigenspace of ``H``."""
    z = H.z_array
    u = np.zeros((H.dim, H.dim), dtype=complex)
    for level in np.unique(z):
        idx = np.nonzero(z == level)[0]
        u[np.ix_(idx, idx)] = haar_unitary(len(idx), rng)
    return H.from_eigenbasis(u)


def truncated_joint_operator(U, H: SystemHamiltonian, n: int) -> np.ndarray:
    """``V(U)`` on ``S ⊗ {levels 0..n-1}`` with jumps that leave the window dropped.

    The result is exactly block diagonal with respect to ``H_S + H_E`` and acts
    as the true ``V(U)`` on states supported at least ``z_max - z_min`` levels
    from both window edges.
    """
    u = H.to_eigenbasis(as_matrix(U))
    z = H.z_array
    N = H.dim
    V = np.zeros((N * n, N * n), dtype=complex)
    for a in range(N):
        for b in range(N):
            d = int(z[b] - z[a])
            V[a * n:(a + 1) * n, b * n:(b + 1) * n] = u[a, b] * np.eye(n, k=-d)
    if H.is_diagonal:
        return V
    B = np.kron(H.basis, np.eye(n))
    return B @ V @ B.conj().T


@dataclass
class ReplayReport:
    passed: bool
    two_vs_one: float
    two_vs_theta: float
    one_vs_theta: float
    tolerance: float
    two_step: np.ndarray
    one_step: np.ndarray


def replay_two_vs_one(eta, dims: tuple[int, int, int], window: int,
                      H2: SystemHamiltonian, H1: SystemHamiltonian, HC: SystemHamiltonian,
                      U1, U2, xi: WindowedLadderState, tol: float = EQUIV_TOL) -> ReplayReport:
    """Replay the two-system strong-catalysis comparison inside the reference picture.

    ``eta`` lives on ``S2 ⊗ S1 ⊗ C ⊗ E`` with an ``E`` window of ``window``
    levels.  The window is padded by the total jump range of both uses.

    * two-step: ``Tr_{S1 E}(V2 V1 Θ^{S2 S1 C E:R}_ξ(η) V1† V2†)``;
    * one-step: ``Tr_E(V2 Θ^{S2 C E:R}_ξ(Tr_{S1} η) V2†)``.

    Both are compared under ``∼`` on ``S2 C : R``, and each is compared with
    ``Θ^{S2 C:R}_ξ`` of the corresponding reduced state on ``S2 C``.
    """
    d2, d1, dc = dims
    s = H1.spacing
    pad = H1.z_range + H2.z_range
    n = window + 2 * pad
    e = as_matrix(eta)
    if e.shape[0] != d2 * d1 * dc * window:
        raise ContractError("eta dimension does not match dims and window")
    iso = np.zeros((n, window))
    iso[np.arange(window) + pad, np.arange(window)] = 1.0
    iso = np.kron(np.eye(d2 * d1 * dc), iso)
    big = iso @ e @ iso.T
    HE = SystemHamiltonian(tuple(range(n)), None, s)
    HQ = joint_hamiltonian(H2, H1, HC, HE)
    H_sce = joint_hamiltonian(H2, HC, HE)
    H_sc = joint_hamiltonian(H2, HC)
    # one reference window serves every embedding
    probe = ReferenceEmbedding.auto(HQ, xi.offset, xi.top)
    embQ = ReferenceEmbedding(HQ, probe.ref_offset, probe.ref_width)
    emb3 = ReferenceEmbedding(H_sce, probe.ref_offset, probe.ref_width)
    emb2 = ReferenceEmbedding(H_sc, probe.ref_offset, probe.ref_width)
    W = probe.ref_width
    V1 = truncated_joint_operator(U1, H1, n)
    V2 = truncated_joint_operator(U2, H2, n)
    fq = [d2, d1, dc, n]
    V1q = expand_operator(V1, fq, [1, 3])
    V2q = expand_operator(V2, fq, [0, 3])
    out = apply_on_q(V2q @ V1q, theta(big, xi, embQ), embQ)
    two = partial_trace(out, fq + [W], [0, 2, 4])

    red = partial_trace(big, fq, [0, 2, 3])
    f3 = [d2, dc, n]
    V2r = expand_operator(V2, f3, [0, 2])
    one = partial_trace(apply_on_q(V2r, theta(red, xi, emb3), emb3), f3 + [W], [0, 1, 3])

    evolved = V2q @ V1q @ big @ V1q.conj().T @ V2q.conj().T
    target_two = theta(partial_trace(evolved, fq, [0, 2]), xi, emb2)
    target_one = theta(partial_trace(V2r @ red @ V2r.conj().T, f3, [0, 1]), xi, emb2)

    d_21 = equivalence_distance(two, one, emb2)
    d_2t = equivalence_distance(two, target_two, emb2)
    d_1t = equivalence_distance(one, target_one, emb2)
    ok = max(d_21, d_2t, d_1t) <= tol
    return ReplayReport(ok, d_21, d_2t, d_1t, tol, two, one)
