"""System Hamiltonians with spectra on an integer grid, Gibbs states, passivity."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .qmat import (ContractError, OperatorLike, as_matrix, check_density, is_unitary,
                   kl_divergence, rel_entropy)

BLOCK_TOL = 1e-10


@dataclass(frozen=True)
class SystemHamiltonian:
    """``H = Σ_n s z_n |ψ_n><ψ_n|`` with integer ``z_n`` and eigenbasis ``basis``.

    Columns of ``basis`` are the eigenvectors ``|ψ_n>``; by default the
    computational basis is used.
    """

    z: tuple[int, ...]
    basis: np.ndarray | None = None
    spacing: float = 1.0

    def __post_init__(self) -> None:
        z = tuple(int(v) for v in self.z)
        if not z:
            raise ValueError("empty spectrum")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        basis = np.eye(len(z), dtype=complex) if self.basis is None else np.array(self.basis, dtype=complex)
        if basis.shape != (len(z), len(z)):
            raise ValueError("basis shape does not match number of levels")
        if not is_unitary(basis):
            raise ContractError("eigenbasis is not unitary")
        basis.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "basis", basis)

    @property
    def dim(self) -> int:
        return len(self.z)

    @property
    def z_array(self) -> np.ndarray:
        return np.array(self.z, dtype=int)

    @property
    def z_max(self) -> int:
        return max(self.z)

    @property
    def z_min(self) -> int:
        return min(self.z)

    @property
    def z_range(self) -> int:
        return self.z_max - self.z_min

    @property
    def energies(self) -> np.ndarray:
        return self.spacing * self.z_array

    @property
    def is_diagonal(self) -> bool:
        return bool(np.array_equal(self.basis, np.eye(self.dim)))

    def matrix(self) -> np.ndarray:
        v = self.basis
        return (v * self.energies) @ v.conj().T

    def to_eigenbasis(self, q: OperatorLike) -> np.ndarray:
        m = as_matrix(q)
        if self.is_diagonal:
            return m
        return self.basis.conj().T @ m @ self.basis

    def from_eigenbasis(self, q: np.ndarray) -> np.ndarray:
        if self.is_diagonal:
            return q
        return self.basis @ q @ self.basis.conj().T

    def with_spacing(self, spacing: float, factor: int = 1) -> "SystemHamiltonian":
        """Same operator expressed on a finer grid: ``z -> factor*z``, ``s -> spacing``."""
        return SystemHamiltonian(tuple(factor * v for v in self.z), self.basis, spacing)

    def to_json(self) -> str:
        return json.dumps({
            "spacing": self.spacing,
            "z": list(self.z),
            "basis": [[[float(c.real), float(c.imag)] for c in row] for row in self.basis],
        })

    @classmethod
    def from_json(cls, text: str) -> "SystemHamiltonian":
        data = json.loads(text)
        b = np.array(data["basis"], dtype=float)
        return cls(tuple(data["z"]), b[..., 0] + 1j * b[..., 1], float(data["spacing"]))


def joint_hamiltonian(*systems: SystemHamiltonian) -> SystemHamiltonian:
    """Non-interacting sum ``H_1 + H_2 + ...`` on the tensor product, leftmost slowest."""
    s = systems[0].spacing
    if any(not math.isclose(h.spacing, s, rel_tol=1e-12) for h in systems):
        raise ContractError("joint Hamiltonian needs a common spacing")
    z = np.zeros(1, dtype=int)
    basis = np.ones((1, 1), dtype=complex)
    for h in systems:
        z = (z[:, None] + h.z_array[None, :]).reshape(-1)
        basis = np.kron(basis, h.basis)
    return SystemHamiltonian(tuple(int(v) for v in z), basis, s)


@dataclass(frozen=True)
class ThermalContext:
    """Inverse temperature ``beta`` (in 1/J)."""

    beta: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ValueError("beta must be finite and positive")

    @property
    def kT(self) -> float:
        return 1.0 / self.beta


def gibbs_weights(energies: np.ndarray, beta: float) -> np.ndarray:
    """``exp(-beta E) / Z`` computed stably."""
    e = np.asarray(energies, dtype=float)
    w = np.exp(-beta * (e - e.min()))
    return w / w.sum()


def gibbs(H: SystemHamiltonian, ctx: ThermalContext) -> np.ndarray:
    """Gibbs state ``exp(-beta H) / Z``, built diagonally in the eigenbasis."""
    return H.from_eigenbasis(np.diag(gibbs_weights(H.energies, ctx.beta)).astype(complex))


def energy_blocks(H: SystemHamiltonian) -> np.ndarray:
    """Boolean mask ``M[n, m] = (z_n == z_m)``; degeneracy is exact on integers."""
    z = H.z_array
    return z[:, None] == z[None, :]


def pinching(Q: OperatorLike, H: SystemHamiltonian) -> np.ndarray:
    """``[Q]_H = Σ_l P_l Q P_l`` over the eigenspaces of ``H``."""
    q = H.to_eigenbasis(Q)
    return H.from_eigenbasis(np.where(energy_blocks(H), q, 0.0))


def is_block_diagonal(Q: OperatorLike, H: SystemHamiltonian, tol: float = BLOCK_TOL) -> bool:
    q = H.to_eigenbasis(Q)
    return bool(np.max(np.abs(np.where(energy_blocks(H), 0.0, q)), initial=0.0) <= tol)


def is_passive(rho: OperatorLike, H: SystemHamiltonian, tol: float = BLOCK_TOL) -> bool:
    """True iff ``rho`` commutes with ``H`` and its weights do not increase with energy."""
    r = check_density(rho)
    if not is_block_diagonal(r, H, tol):
        return False
    q = H.to_eigenbasis(r)
    levels = sorted(set(H.z))
    lo_max = []
    for lvl in levels:
        idx = [i for i, v in enumerate(H.z) if v == lvl]
        w = np.linalg.eigvalsh(q[np.ix_(idx, idx)])
        lo_max.append((w[0], w[-1]))
    return all(lo_max[i][0] >= lo_max[i + 1][1] - tol for i in range(len(levels) - 1))


def passive_energy(rho: OperatorLike, H: SystemHamiltonian) -> float:
    """``Σ λ↑(H) λ↓(ρ)``: the lowest energy reachable from ``rho`` by unitaries."""
    lam = np.sort(np.linalg.eigvalsh(as_matrix(rho)))[::-1]
    return float(np.dot(np.sort(H.energies), lam))


def passive_yield(rho: OperatorLike, H: SystemHamiltonian, ctx: ThermalContext,
                  method: str = "entropy") -> float:
    """Maximal energy extractable from ``rho`` by a unitary on the system alone.

    ``method="entropy"`` uses ``kT D(ρ||G) - kT D(λ↓ρ || λ↓G)``; ``"pairing"``
    uses ``Tr(Hρ) - Σ λ↑(H) λ↓(ρ)``.  The two agree.
    """
    r = check_density(rho)
    if method == "pairing":
        return float(np.real(np.trace(H.matrix() @ r))) - passive_energy(r, H)
    if method != "entropy":
        raise ValueError(f"unknown method {method!r}")
    G = gibbs(H, ctx)
    lam_r = np.clip(np.sort(np.linalg.eigvalsh(r))[::-1], 0.0, None)
    lam_g = np.sort(gibbs_weights(H.energies, ctx.beta))[::-1]
    return ctx.kT * (rel_entropy(r, G) - kl_divergence(lam_r, lam_g))


@dataclass(frozen=True)
class ConservationDemo:
    hamiltonian: np.ndarray
    unitary: np.ndarray
    rho_in: np.ndarray
    rho_out: np.ndarray
    energy_before: float
    energy_after: float

    @property
    def coherence(self) -> complex:
        """Output element between the levels with energy -1 and +1."""
        return complex(self.rho_out[0, 2])


def avg_conservation_demo() -> ConservationDemo:
    """A unitary that conserves mean energy without being energy conserving.

    On ``H = diag(-1, 0, 1)`` the unitary sends ``|ψ_0>`` to the
    superposition ``(|ψ_-1> + |ψ_1>)/√2``.  The mean energy stays zero but
    the output mixes distinct energies.
    """
    H = np.diag([-1.0, 0.0, 1.0]).astype(complex)
    r = 1.0 / math.sqrt(2.0)
    # columns: images of |ψ_-1>, |ψ_0>, |ψ_1>
    U = np.array([[r, r, 0.0], [0.0, 0.0, 1.0], [-r, r, 0.0]], dtype=complex)
    rho = np.zeros((3, 3), dtype=complex)
    rho[1, 1] = 1.0
    out = U @ rho @ U.conj().T
    return ConservationDemo(H, U, rho, out, float(np.trace(H @ rho).real),
                            float(np.trace(H @ out).real))


def diag_hamiltonian(z: Sequence[int], spacing: float = 1.0) -> SystemHamiltonian:
    return SystemHamiltonian(tuple(z), None, spacing)
