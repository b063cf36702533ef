"""Expected work extraction with an explicit coherent energy reservoir.

The module has three layers:

* classical path machinery: level configurations, Gibbs vectors, isothermal
  paths, snapping to an energy grid, and the factorised ancilla built from a
  snapped path;
* the dephasing channel ``R_σ`` that encodes how much reservoir coherence
  is available, and the optimal yield with its three-term decomposition;
* the convergence experiment, which drives the gap to the standard value
  ``kT D(ρ||G)`` towards zero along a schedule of ``(K, J, L)``.

All energies are in units of J, entropies in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm, logm
from scipy.special import entr

from .catalytic import lambda_channel
from .ladder import WindowedLadderState, delta_moment, energy_expectation, eta_state
from .qmat import (ContractError, SizeError, as_matrix, check_density, entropy,
                   kl_divergence, rel_entropy)
from .systems import SystemHamiltonian, ThermalContext, gibbs, gibbs_weights, pinching

PROB_TOL = 1e-12
FULL_SUPPORT_TOL = 1e-15
FULL_RANK_TOL = 1e-12
ANCILLA_CAP = 2**20
GRID_SNAP_TOL = 1e-9


# ---------------------------------------------------------------------------
# level configurations and probability vectors


@dataclass(frozen=True)
class ProbVector:
    p: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.p, dtype=float).reshape(-1)
        if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
            raise ValueError("not a probability vector")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return len(self.p)

    @property
    def full_support(self) -> bool:
        return bool(self.p.min() > FULL_SUPPORT_TOL)


@dataclass(frozen=True)
class LevelConfig:
    """Energy levels ``h`` (in J) of an ``n``-level classical system."""

    h: np.ndarray

    def __post_init__(self) -> None:
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if not np.all(np.isfinite(h)):
            raise ValueError("level configuration has non-finite entries")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def n(self) -> int:
        return len(self.h)

    def gibbs(self, beta: float) -> np.ndarray:
        return gibbs_weights(self.h, beta)


def _prob(v) -> np.ndarray:
    return v.p if isinstance(v, ProbVector) else ProbVector(v).p


def _full_support(v, name: str) -> np.ndarray:
    p = _prob(v)
    if p.min() <= FULL_SUPPORT_TOL:
        raise ValueError(f"{name} must have full support")
    return p


def xi(x: float) -> float:
    """Binary entropy ``Ξ(x) = -x ln x - (1-x) ln(1-x)`` in nats."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("Ξ is defined on [0, 1]")
    return float(entr(x) + entr(1.0 - x))


# ---------------------------------------------------------------------------
# Hamiltonian paths without a reservoir


def _gibbs_matrix(H: np.ndarray, beta: float) -> np.ndarray:
    w, v = np.linalg.eigh(H)
    return (v * gibbs_weights(w, beta)) @ v.conj().T


def path_yield(H_seq: Sequence[np.ndarray], rho0, ctx: ThermalContext,
               thermalize: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None) -> float:
    """Total yield ``Σ_l Tr[(H^(l) - H^(l+1)) ρ_l]`` of a shift/thermalise process.

    ``ρ_0 = rho0`` and ``ρ_{l+1} = thermalize(H^(l+1), ρ_l)``.  The default
    thermalisation replaces the state by ``G(H^(l+1))``.
    """
    therm = thermalize or (lambda H, _rho: _gibbs_matrix(H, ctx.beta))
    hs = [as_matrix(H) for H in H_seq]
    rho = check_density(rho0)
    total = 0.0
    for l in range(len(hs) - 1):
        total += float(np.real(np.trace((hs[l] - hs[l + 1]) @ rho)))
        rho = therm(hs[l + 1], rho)
    return total


def limit_protocol(rho, H: SystemHamiltonian, ctx: ThermalContext, K: int) -> list[np.ndarray]:
    """Cyclic Hamiltonian sequence whose yield tends to ``kT D(ρ||G(H))`` as ``K`` grows.

    Quench to ``H' = -kT ln ρ``, move the eigenvalues linearly (``K`` steps,
    fixed eigenbasis) onto the spectrum of ``H``, then rotate the eigenbasis
    back onto that of ``H`` (``K`` steps).  Requires full-rank ``rho``.
    """
    r = check_density(rho)
    lam, vecs = np.linalg.eigh(r)
    lam, vecs = lam[::-1], vecs[:, ::-1]
    if lam.min() <= FULL_RANK_TOL:
        raise ContractError("limit protocol needs a full-rank state")
    h_start = -ctx.kT * np.log(lam)
    h_end = np.sort(H.energies)  # largest weight paired with lowest energy
    seq = [H.matrix()]
    for k in range(K + 1):
        h = (1 - k / K) * h_start + (k / K) * h_end
        seq.append((vecs * h) @ vecs.conj().T)
    order = np.argsort(H.energies, kind="stable")
    target = H.basis[:, order]
    U = target @ vecs.conj().T
    A = 1j * logm(U)
    A = 0.5 * (A + A.conj().T)
    H2 = seq[-1]
    for l in range(1, K + 1):
        step = expm(-1j * A * l / K)
        seq.append(step @ H2 @ step.conj().T)
    seq.append(H.matrix())
    return seq


# ---------------------------------------------------------------------------
# rearrangement


def min_pairing(A, B) -> tuple[float, np.ndarray]:
    """``min_U Tr(U† A U B) = Σ λ↓(A) λ↑(B)`` and a unitary achieving it.

    The unitary sends the ascending eigenvectors of ``B`` onto the
    descending eigenvectors of ``A``.
    """
    a, b = as_matrix(A), as_matrix(B)
    if a.shape != b.shape:
        raise ContractError("operands must have equal shape")
    wa, va = np.linalg.eigh(a)
    wb, vb = np.linalg.eigh(b)
    value = float(np.dot(wa[::-1], wb))
    U = va[:, ::-1] @ vb.conj().T
    return value, U


# ---------------------------------------------------------------------------
# reservoir-limited dephasing and optimal yield


def _on_grid(H: SystemHamiltonian, s: float) -> SystemHamiltonian:
    """Express ``H`` on the reservoir grid ``s·ℤ``; the spacings must be commensurate."""
    if math.isclose(H.spacing, s, rel_tol=1e-12):
        return H
    ratio = H.spacing / s
    factor = round(ratio)
    if factor < 1 or abs(ratio - factor) > 1e-9:
        raise ContractError(f"system spacing {H.spacing} is not a multiple of reservoir spacing {s}")
    return H.with_spacing(s, factor)


def r_channel(rho, sigma: WindowedLadderState, H: SystemHamiltonian) -> np.ndarray:
    """``R_σ(ρ)``: eigenbasis element ``(n, n')`` scaled by ``Tr(Δ^{z_n - z_n'} σ)``."""
    Hg = _on_grid(H, sigma.spacing)
    q = Hg.to_eigenbasis(as_matrix(rho))
    z = Hg.z_array
    diff = z[:, None] - z[None, :]
    table = {int(a): delta_moment(sigma, int(a)) for a in np.unique(diff)}
    weights = np.vectorize(table.__getitem__, otypes=[complex])(diff)
    return Hg.from_eigenbasis(q * weights)


@dataclass(frozen=True)
class DiagonalAncilla:
    """Ancilla with a diagonal Hamiltonian ``s Σ z_i |i><i|``; only its spectrum is stored."""

    z: np.ndarray
    spacing: float

    @property
    def dim(self) -> int:
        return len(self.z)

    @property
    def energies(self) -> np.ndarray:
        return self.spacing * self.z

    def gibbs_weights(self, beta: float) -> np.ndarray:
        return gibbs_weights(self.energies, beta)


@dataclass
class YieldDecomposition:
    D_term: float
    coherence_loss_term: float
    mismatch_term: float

    @property
    def predicted(self) -> float:
        return self.D_term - self.coherence_loss_term - self.mismatch_term


@dataclass
class YieldResult:
    W: float
    decomposition: YieldDecomposition
    achieving_U: np.ndarray | None
    method: str
    r_state: np.ndarray

    @property
    def gap(self) -> float:
        return self.decomposition.D_term - self.W


def _ancilla_spectrum(H_A, s: float) -> DiagonalAncilla:
    if H_A is None:
        return DiagonalAncilla(np.zeros(1, dtype=int), s)
    if isinstance(H_A, AncillaPlan):
        H_A = H_A.ancilla(FULL_ENUM_CAP)
    if isinstance(H_A, DiagonalAncilla):
        if not math.isclose(H_A.spacing, s, rel_tol=1e-12):
            raise ContractError("ancilla spacing does not match reservoir spacing")
        return H_A
    if isinstance(H_A, SystemHamiltonian):
        g = _on_grid(H_A, s)
        if not g.is_diagonal:
            raise ContractError("ancilla Hamiltonian must be given in its eigenbasis")
        return DiagonalAncilla(g.z_array, s)
    raise TypeError(f"unsupported ancilla type {type(H_A).__name__}")


def optimal_yield(rho, sigma: WindowedLadderState, H_S: SystemHamiltonian, H_A,
                  ctx: ThermalContext, method: str = "spectral",
                  max_dim: int = 2**10) -> YieldResult:
    """Maximal reservoir energy gain over unitaries on system plus Gibbs ancilla.

    ``method="spectral"`` evaluates ``Tr(H R̃) - Σ λ↑(H) λ↓(R̃)`` with
    ``R̃ = R_σ(ρ) ⊗ G(H_A)``.  ``method="channel"`` builds the achieving
    unitary, applies the reservoir channel to ``σ`` and reads off the energy
    change; ``max_dim`` caps the joint dimension for that path.  The
    decomposition terms are computed from entropies, independently of both.
    """
    Hs = _on_grid(H_S, sigma.spacing)
    anc = _ancilla_spectrum(H_A, sigma.spacing)
    r = check_density(rho)
    R = r_channel(r, sigma, Hs)
    g_a = anc.gibbs_weights(ctx.beta)
    lam_R = np.clip(np.linalg.eigvalsh(R), 0.0, None)

    # decomposition
    D_term = ctx.kT * rel_entropy(r, gibbs(Hs, ctx))
    loss = ctx.kT * (entropy(R) - entropy(r))
    lhs = np.sort(np.multiply.outer(lam_R, g_a).ravel())[::-1]
    rhs = np.sort(np.multiply.outer(gibbs_weights(Hs.energies, ctx.beta), g_a).ravel())[::-1]
    mismatch = ctx.kT * kl_divergence(lhs, rhs)
    deco = YieldDecomposition(D_term, loss, mismatch)

    if method == "spectral":
        h_sa = np.add.outer(Hs.energies, anc.energies).ravel()
        before = float(np.real(np.trace(Hs.matrix() @ R))) + float(np.dot(anc.energies, g_a))
        W = before - float(np.dot(np.sort(h_sa), lhs))
        return YieldResult(W, deco, None, method, R)
    if method != "channel":
        raise ValueError(f"unknown method {method!r}")
    dim = Hs.dim * anc.dim
    if dim > max_dim:
        raise SizeError(f"joint dimension {dim} exceeds channel-path cap {max_dim}")
    H_joint = SystemHamiltonian(tuple(int(v) for v in np.add.outer(Hs.z_array, anc.z).ravel()),
                                np.kron(Hs.basis, np.eye(anc.dim)), sigma.spacing)
    rho_joint = np.kron(r, np.diag(g_a))
    R_joint = np.kron(R, np.diag(g_a))
    _, U = min_pairing(H_joint.matrix(), R_joint)
    out = lambda_channel(sigma, rho_joint, U, H_joint)
    W = energy_expectation(out) - energy_expectation(sigma)
    return YieldResult(W, deco, U, method, R)


def entropy_loss_bound(N: int, z_max: int, z_min: int, L: int) -> float:
    """Upper bound on ``S(R_η(ρ)) - S(ρ)`` for ``σ = η_L``; needs ``L ≥ N (z_max - z_min)``."""
    dz = z_max - z_min
    if N < 1 or dz < 0:
        raise ValueError("invalid spectrum data")
    if L < N * dz:
        raise ValueError(f"bound needs L >= N*(z_max - z_min) = {N * dz}, got L={L}")
    x = N * dz / (2 * L)
    return dz / (2 * L) * N * math.log(N) + xi(x)


# ---------------------------------------------------------------------------
# isothermal paths and the grid


def isothermal_path(q, p, K: int, ctx: ThermalContext) -> list[LevelConfig]:
    """``K + 1`` linearly interpolated configurations from ``G = q`` to ``G = p``."""
    if K < 2:
        raise ValueError("K must be at least 2")
    qv = _full_support(q, "q")
    pv = _full_support(p, "p")
    if qv.shape != pv.shape:
        raise ValueError("q and p must have equal length")
    hi = -np.log(qv) / ctx.beta
    hf = -np.log(pv) / ctx.beta
    return [LevelConfig((1 - k / K) * hi + (k / K) * hf) for k in range(K + 1)]


def path_sum(configs: Sequence[LevelConfig], ctx: ThermalContext) -> float:
    """``Σ_k D(G(h_k) || G(h_{k+1}))``."""
    gs = [c.gibbs(ctx.beta) for c in configs]
    return float(sum(kl_divergence(gs[k], gs[k + 1]) for k in range(len(gs) - 1)))


def isothermal_bound(q, p, K: int) -> float:
    """``(1/K) max_n |ln(q_n/p_n)|²``."""
    d = np.abs(np.log(_prob(q) / _prob(p)))
    return float(d.max() ** 2 / K)


def grid_indices(h: LevelConfig | np.ndarray, s: float) -> np.ndarray:
    """Integers ``floor(h/s)``; values within ``1e-9`` of an integer snap to it."""
    if s <= 0:
        raise ValueError("grid spacing must be positive")
    x = np.asarray(h.h if isinstance(h, LevelConfig) else h, dtype=float) / s
    near = np.rint(x)
    x = np.where(np.abs(x - near) <= GRID_SNAP_TOL, near, np.floor(x))
    return x.astype(np.int64)


def snap_to_grid(h: LevelConfig, s: float) -> LevelConfig:
    """``h̃_n = s floor(h_n / s)``."""
    return LevelConfig(s * grid_indices(h, s))


def grid_perturbation_bound(configs: Sequence[LevelConfig], s: float, ctx: ThermalContext) -> float:
    """``2βs(K+1) + β(e^{sβ}-1) K max|h^{k+1} - h^k|`` for a path of ``K + 1`` configs."""
    K = len(configs) - 1
    step = max(float(np.max(np.abs(configs[k + 1].h - configs[k].h))) for k in range(K))
    b = ctx.beta
    return 2 * b * s * (K + 1) + b * math.expm1(s * b) * K * step


# ---------------------------------------------------------------------------
# ancilla


FULL_ENUM_CAP = ANCILLA_CAP


def sorted_divergence(a: np.ndarray, b: np.ndarray) -> float:
    """``D(a↓ || b↓)``."""
    return kl_divergence(np.sort(np.ravel(a))[::-1], np.sort(np.ravel(b))[::-1])


def cyclic_rotate(a: np.ndarray) -> np.ndarray:
    """``(Π a)_{n_s, n_0, ..., n_K} = a_{n_0, ..., n_K, n_s}``: move the last index to the front."""
    return np.moveaxis(a, -1, 0)


def product_vector(factors: Sequence[np.ndarray], cap: int = FULL_ENUM_CAP) -> np.ndarray:
    size = math.prod(len(f) for f in factors)
    if size > cap:
        raise SizeError(f"product of {len(factors)} factors has {size} entries (cap {cap})")
    out = np.ones(())
    for f in factors:
        out = np.multiply.outer(out, f)
    return out


@dataclass(frozen=True)
class AncillaPlan:
    """Factorised ancilla spectrum ``h^K_{n_0..n_K} = Σ_k h̃^{k:K}_{n_k}``.

    Each factor is stored as integers on the grid ``s·ℤ`` with
    ``s = δ/J``, so every level of the ancilla lies exactly on the grid.
    """

    K: int
    J: int
    delta: float
    factors: tuple[np.ndarray, ...]
    q: np.ndarray
    p: np.ndarray
    beta: float
    path: tuple[LevelConfig, ...] = field(repr=False, default=())

    @property
    def spacing(self) -> float:
        return self.delta / self.J

    @property
    def N(self) -> int:
        return len(self.q)

    @property
    def dim(self) -> int:
        return self.N ** (self.K + 1)

    def factor_gibbs(self) -> list[np.ndarray]:
        return [gibbs_weights(self.spacing * z, self.beta) for z in self.factors]

    def z_values(self, cap: int = FULL_ENUM_CAP) -> np.ndarray:
        if self.dim > cap:
            raise SizeError(f"ancilla dimension {self.dim} exceeds cap {cap}")
        z = np.zeros(1, dtype=np.int64)
        for f in self.factors:
            z = np.add.outer(z, f).ravel()
        return z

    def ancilla(self, cap: int = FULL_ENUM_CAP) -> DiagonalAncilla:
        return DiagonalAncilla(self.z_values(cap), self.spacing)

    def gibbs_vector(self, cap: int = FULL_ENUM_CAP) -> np.ndarray:
        """``G(h^K)`` as a flat vector; equals the outer product of the factor Gibbs vectors."""
        return product_vector(self.factor_gibbs(), cap).ravel()

    def factor_sum(self) -> float:
        """``D(G(h̃^K)||p) + D(q||G(h̃^0)) + Σ_k D(G(h̃^k)||G(h̃^{k+1}))``."""
        g = self.factor_gibbs()
        total = kl_divergence(g[-1], self.p) + kl_divergence(self.q, g[0])
        total += sum(kl_divergence(g[k], g[k + 1]) for k in range(self.K))
        return float(total)

    def rotated_divergence(self, cap: int = FULL_ENUM_CAP) -> float:
        """``D(Π(q⊗G(h^K)) || p⊗G(h^K))`` by explicit enumeration."""
        g = self.factor_gibbs()
        a = product_vector([self.q, *g], cap)
        b = product_vector([self.p, *g], cap)
        return kl_divergence(cyclic_rotate(a).ravel(), b.ravel())

    def sorted_divergence(self, cap: int = FULL_ENUM_CAP) -> float:
        """``D((q⊗G(h^K))↓ || (p⊗G(h^K))↓)`` by explicit enumeration."""
        if self.N * self.dim > cap:
            raise SizeError(f"spectrum has {self.N * self.dim} entries (cap {cap})")
        G = self.gibbs_vector(cap)
        return sorted_divergence(np.multiply.outer(self.q, G), np.multiply.outer(self.p, G))

    def bound(self) -> float:
        """``4βδ/J + 2βδK/J + (e^{βδ/J}-1) max|ln q/p| + (1/K) max|ln q/p|²``."""
        b, d, J, K = self.beta, self.delta, self.J, self.K
        m = float(np.max(np.abs(np.log(self.q / self.p))))
        return 4 * b * d / J + 2 * b * d * K / J + math.expm1(b * d / J) * m + m * m / K

    def to_dict(self) -> dict:
        return {"K": self.K, "J": self.J, "delta": self.delta, "beta": self.beta,
                "q": self.q.tolist(), "p": self.p.tolist(),
                "factors": [f.tolist() for f in self.factors]}


def build_ancilla(q, p, K: int, J: int, delta: float, ctx: ThermalContext,
                  cap: int | None = None) -> AncillaPlan:
    """Snap the isothermal path ``q -> p`` onto ``(δ/J)·ℤ`` and store it as ancilla factors.

    ``cap`` (if given) bounds ``N^{K+1}``; exceeding it raises :class:`SizeError`.
    The plan itself is always stored in factorised form.
    """
    qv = _full_support(q, "q")
    pv = _full_support(p, "p")
    if J < 1 or delta <= 0:
        raise ValueError("J must be positive and delta > 0")
    if cap is not None and len(qv) ** (K + 1) > cap:
        raise SizeError(f"ancilla dimension {len(qv)}^{K + 1} exceeds cap {cap}")
    path = isothermal_path(qv, pv, K, ctx)
    s = delta / J
    factors = tuple(grid_indices(c, s) for c in path)
    for f in factors:
        f.setflags(write=False)
    return AncillaPlan(K, J, float(delta), factors, qv.copy(), pv.copy(), ctx.beta, tuple(path))


# ---------------------------------------------------------------------------
# convergence


def gap_bound(rho, H_S: SystemHamiltonian, ctx: ThermalContext, K: int, J: int, L: int) -> float:
    """Right-hand side of the gap bound for ``H_S`` on ``δ·ℤ`` with ``δ = H_S.spacing``.

    Requires ``L ≥ N J (x_max - x_min)``.
    """
    N = H_S.dim
    dx = H_S.z_range
    if L < N * J * dx:
        raise ValueError(f"gap bound needs L >= N*J*(x_max-x_min) = {N * J * dx}, got L={L}")
    b, d = ctx.beta, H_S.spacing
    lam = float(np.linalg.eigvalsh(check_density(rho)).min())
    if lam <= FULL_RANK_TOL:
        raise ContractError("gap bound needs a full-rank state")
    lg = abs(math.log(lam * gibbs_weights(H_S.energies, b).min()))
    x = J * N * dx / (2 * L)
    return (J / (b * L) * dx / 2 * N * math.log(N) + xi(x) / b + 4 * d / J + 2 * d * K / J
            + math.expm1(d * b / J) * lg / b + lg * lg / (K * b))


@dataclass
class ConvergencePoint:
    K: int
    J: int
    L: int
    W: float
    D_target: float
    gap: float
    bound_rhs: float
    S_loss: float
    mismatch: float
    W_pinched: float | None = None

    def row(self) -> dict:
        return {k: getattr(self, k) for k in ("K", "J", "L", "W", "D_target", "gap",
                                              "bound_rhs", "S_loss", "mismatch")}


def _point(rho, H_S: SystemHamiltonian, ctx: ThermalContext, K: int, J: int, L: int,
           l0: int, control: bool) -> ConvergencePoint:
    s = H_S.spacing / J
    Hg = H_S.with_spacing(s, J)
    sigma = eta_state(L, l0, spacing=s)
    R = r_channel(rho, sigma, Hg)
    q = np.sort(np.clip(np.linalg.eigvalsh(R), 0.0, None))[::-1]
    p = np.sort(gibbs_weights(H_S.energies, ctx.beta))[::-1]
    q = q / q.sum()
    plan = build_ancilla(q, p, K, J, H_S.spacing, ctx)
    anc = plan.ancilla()
    res = optimal_yield(rho, sigma, Hg, anc, ctx)
    rhs = gap_bound(rho, H_S, ctx, K, J, L)
    W_pin = None
    if control:
        diag = WindowedLadderState(sigma.offset, np.diag(np.diag(sigma.block)), 0.0, s)
        W_pin = optimal_yield(rho, diag, Hg, anc, ctx).W
    d = res.decomposition
    return ConvergencePoint(K, J, L, res.W, d.D_term, d.D_term - res.W, rhs,
                            d.coherence_loss_term, d.mismatch_term, W_pin)


def convergence_experiment(rho, H_S: SystemHamiltonian, ctx: ThermalContext,
                           schedule: Sequence[tuple[int, int, int]], l0: int = 0,
                           control: bool = False) -> list[ConvergencePoint]:
    """Yield and gap along a schedule of ``(K, J, L)``.

    ``H_S`` lives on ``δ·ℤ`` with ``δ = H_S.spacing``.  The reservoir at each
    point is ``η_L`` with spacing ``δ/J``; the ancilla is built from the
    isothermal path between the spectra of ``R_η(ρ)`` and ``G(H_S)``, both
    sorted descending.  With ``control=True`` the yield for the pinched
    reservoir is also recorded.
    """
    r = check_density(rho)
    if np.linalg.eigvalsh(r).min() <= FULL_RANK_TOL:
        raise ContractError("convergence experiment needs a full-rank state")
    return [_point(r, H_S, ctx, K, J, L, l0, control) for K, J, L in schedule]


def pinched_state(rho, H: SystemHamiltonian) -> np.ndarray:
    return pinching(rho, H)
