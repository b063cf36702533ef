"""Dense complex linear algebra used throughout the package.

All operators are dense ``numpy`` arrays.  :class:`DenseOperator` is a thin
validating wrapper that carries a ``kind`` tag; every function here accepts
either a wrapper or a plain array.  Functions that build new operators
(:func:`tensor`, :func:`partial_trace`) return the same flavour they were
given: a wrapper in, a wrapper out.

Subsystem ordering is little-endian in the Kronecker sense: the leftmost
factor of a tensor product is the slowest-varying index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np

MAX_DIM = 2**20
HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10
DENSITY_TOL = 1e-10
SUPPORT_TOL = 1e-12

KINDS = ("general", "hermitian", "unitary", "density")


class SizeError(ValueError):
    """Raised when an operator would exceed the configured dimension cap."""


class ShapeError(ValueError):
    """Raised when operator shapes and declared subsystem dims disagree."""


class ContractError(ValueError):
    """Raised when an input violates a declared precondition."""


class NotDensityError(ContractError):
    """Raised when an operator expected to be a density matrix is not one."""


@dataclass(frozen=True)
class DenseOperator:
    """A square complex matrix with a declared kind.

    The constructor checks the invariant implied by ``kind``.
    """

    entries: np.ndarray
    kind: str = "general"

    def __post_init__(self) -> None:
        arr = np.array(self.entries, dtype=complex)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ShapeError(f"operator must be square, got shape {arr.shape}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)
        if self.kind == "hermitian" and not is_hermitian(arr):
            raise ContractError("operator declared hermitian is not")
        if self.kind == "unitary" and not is_unitary(arr):
            raise ContractError("operator declared unitary is not")
        if self.kind == "density" and not is_density(arr):
            raise NotDensityError("operator declared density is not")

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


OperatorLike = Union[DenseOperator, np.ndarray, Sequence[Sequence[complex]]]


def as_matrix(a: OperatorLike) -> np.ndarray:
    """Return ``a`` as a square complex ndarray."""
    if isinstance(a, DenseOperator):
        return a.entries
    arr = np.asarray(a, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"operator must be square, got shape {arr.shape}")
    return arr


def dag(a: OperatorLike) -> np.ndarray:
    m = as_matrix(a)
    return m.conj().T


def is_hermitian(a: OperatorLike, tol: float = HERMITIAN_TOL) -> bool:
    m = as_matrix(a)
    scale = max(1.0, float(np.max(np.abs(m), initial=0.0)))
    return bool(np.max(np.abs(m - m.conj().T), initial=0.0) <= tol * scale)


def is_unitary(a: OperatorLike, tol: float = UNITARY_TOL) -> bool:
    m = as_matrix(a)
    err = m.conj().T @ m - np.eye(m.shape[0])
    return bool(np.max(np.abs(err), initial=0.0) <= tol)


def is_density(a: OperatorLike, tol: float = DENSITY_TOL) -> bool:
    m = as_matrix(a)
    if not is_hermitian(m):
        return False
    if abs(np.trace(m).real - 1.0) > tol:
        return False
    return bool(np.linalg.eigvalsh(_hermitize(m))[0] >= -tol)


def check_density(a: OperatorLike, name: str = "rho") -> np.ndarray:
    """Return ``a`` as an array, raising :class:`NotDensityError` if invalid."""
    m = as_matrix(a)
    if not is_density(m):
        raise NotDensityError(f"{name} is not a density operator")
    return m


def _hermitize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


def _rewrap(template: OperatorLike, result: np.ndarray, kind: str):
    if isinstance(template, DenseOperator):
        return DenseOperator(result, kind)
    return result


def _product_kind(ka: str, kb: str) -> str:
    if ka == kb:
        return ka
    if {ka, kb} <= {"hermitian", "density"}:
        return "hermitian"
    return "general"


def tensor(a: OperatorLike, b: OperatorLike, *, max_dim: int = MAX_DIM):
    """Kronecker product ``a ⊗ b``.

    Raises
    ------
    SizeError
        If the joint dimension exceeds ``max_dim``.
    """
    ma, mb = as_matrix(a), as_matrix(b)
    dim = ma.shape[0] * mb.shape[0]
    if dim > max_dim:
        raise SizeError(f"tensor dimension {dim} exceeds cap {max_dim}")
    out = np.kron(ma, mb)
    if isinstance(a, DenseOperator) or isinstance(b, DenseOperator):
        ka = a.kind if isinstance(a, DenseOperator) else "general"
        kb = b.kind if isinstance(b, DenseOperator) else "general"
        return DenseOperator(out, _product_kind(ka, kb))
    return out


def tensor_all(*ops: OperatorLike, max_dim: int = MAX_DIM):
    """Kronecker product of several operators, leftmost slowest."""
    if not ops:
        raise ValueError("need at least one operator")
    out = ops[0]
    for op in ops[1:]:
        out = tensor(out, op, max_dim=max_dim)
    return out


def partial_trace(joint: OperatorLike, dims: Sequence[int], keep: Union[int, Sequence[int]]):
    """Reduce ``joint`` to the subsystems listed in ``keep``.

    Parameters
    ----------
    joint : operator
        Operator on the space ``dims[0] ⊗ dims[1] ⊗ ...``.
    dims : sequence of int
        Subsystem dimensions, leftmost slowest.
    keep : int or sequence of int
        Indices of subsystems to keep; order in the result follows ``dims``.

    Returns
    -------
    operator
        The reduced operator.  If ``keep`` is empty this is the 1x1 matrix
        holding the full trace.
    """
    m = as_matrix(joint)
    dims = [int(d) for d in dims]
    if any(d <= 0 for d in dims) or math.prod(dims) != m.shape[0]:
        raise ShapeError(f"dims {dims} do not match operator dimension {m.shape[0]}")
    if isinstance(keep, (int, np.integer)):
        keep = [int(keep)]
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise ShapeError(f"keep indices {keep} out of range for {len(dims)} subsystems")

    n = len(dims)
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    if 2 * n > len(letters):
        raise ShapeError("too many subsystems for partial_trace")
    row = list(letters[:n])
    col = [letters[n + i] if i in keep else row[i] for i in range(n)]
    out_idx = "".join(row[i] for i in keep) + "".join(col[i] for i in keep)
    subscripts = "".join(row) + "".join(col) + "->" + out_idx
    reduced = np.einsum(subscripts, m.reshape(dims + dims))
    d_keep = math.prod(dims[i] for i in keep) if keep else 1
    result = np.asarray(reduced).reshape(d_keep, d_keep)
    kind = joint.kind if isinstance(joint, DenseOperator) and joint.kind != "unitary" else "general"
    return _rewrap(joint, result, kind)


class Spectrum(NamedTuple):
    """Eigen-decomposition with eigenvalues sorted in descending order."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


def herm_eig(a: OperatorLike) -> Spectrum:
    """Eigen-decomposition of a Hermitian operator, eigenvalues descending."""
    m = as_matrix(a)
    if not is_hermitian(m):
        raise ContractError("herm_eig requires a Hermitian operator")
    w, v = np.linalg.eigh(_hermitize(m))
    return Spectrum(w[::-1].copy(), v[:, ::-1].copy())


def _density_eigenvalues(rho: np.ndarray) -> np.ndarray:
    w = np.linalg.eigvalsh(_hermitize(rho))
    if w[0] < -DENSITY_TOL:
        raise NotDensityError(f"eigenvalue {w[0]:.3e} below -{DENSITY_TOL:g}")
    return np.clip(w, 0.0, None)


def shannon(p: np.ndarray) -> float:
    """Shannon entropy in nats with the convention 0 ln 0 = 0."""
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def entropy(rho: OperatorLike) -> float:
    """Von Neumann entropy in nats.

    Eigenvalues in ``[-1e-10, 0)`` are treated as round-off and clipped to
    zero; anything more negative raises :class:`NotDensityError`.
    """
    return shannon(_density_eigenvalues(as_matrix(rho)))


def rel_entropy(rho: OperatorLike, eta: OperatorLike, *, with_flag: bool = False):
    """Quantum relative entropy ``D(rho || eta) = Tr rho ln rho - Tr rho ln eta``.

    If the support of ``rho`` is not contained in that of ``eta`` the result
    is ``math.inf``.  With ``with_flag=True`` a pair ``(value, finite)`` is
    returned so callers can distinguish the sentinel explicitly.
    """
    r, e = as_matrix(rho), as_matrix(eta)
    if r.shape != e.shape:
        raise ShapeError("rel_entropy arguments must have equal shape")
    wr = _density_eigenvalues(r)
    we, ve = np.linalg.eigh(_hermitize(e))
    if we[0] < -DENSITY_TOL:
        raise NotDensityError("second argument of rel_entropy is not a density")
    # Populations of rho in the eigenbasis of eta.
    pops = np.real(np.einsum("ij,jk,ki->i", ve.conj().T, r, ve))
    support = we > SUPPORT_TOL
    if np.any(pops[~support] > SUPPORT_TOL):
        value = math.inf
    else:
        value = -shannon(wr) - float(np.sum(pops[support] * np.log(we[support])))
        value = max(value, 0.0) if value > -1e-12 else value
    return (value, math.isfinite(value)) if with_flag else value


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Classical relative entropy ``D(p || q)`` in nats (``inf`` off support)."""
    from scipy.special import rel_entr

    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ShapeError("kl_divergence arguments must have equal shape")
    return float(np.sum(rel_entr(p, q)))


class Norms(NamedTuple):
    trace_norm: float
    spectral_norm: float
    max_abs: float


def norms(a: OperatorLike) -> Norms:
    """Trace norm, spectral norm and largest absolute entry."""
    m = as_matrix(a)
    sv = np.linalg.svd(m, compute_uv=False)
    return Norms(float(np.sum(sv)), float(sv[0]) if sv.size else 0.0,
                 float(np.max(np.abs(m), initial=0.0)))


def trace_norm(a: OperatorLike) -> float:
    return norms(a).trace_norm


def haar_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary from the QR decomposition of a Ginibre matrix.

    The diagonal of R is made positive by absorbing its phases into Q,
    which is what makes the distribution exactly Haar.
    """
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    phases = d / np.abs(d)
    return q * phases


def random_density(n: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random density matrix ``G G† / Tr`` with ``G`` an n x rank Ginibre matrix."""
    k = n if rank is None else rank
    g = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_hermitian(n: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (g + g.conj().T)


def ket_to_density(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    return np.outer(psi, psi.conj())


def matrix_unit(n: int, i: int, j: int) -> np.ndarray:
    e = np.zeros((n, n), dtype=complex)
    e[i, j] = 1.0
    return e


def expand_operator(op: OperatorLike, dims: Sequence[int], targets: Sequence[int],
                    *, max_dim: int = MAX_DIM) -> np.ndarray:
    """Lift ``op`` acting on subsystems ``targets`` (in that order) to the full space.

    The identity acts on every subsystem not listed in ``targets``.
    """
    m = as_matrix(op)
    dims = [int(d) for d in dims]
    targets = [int(t) for t in targets]
    total = math.prod(dims)
    if total > max_dim:
        raise SizeError(f"dimension {total} exceeds cap {max_dim}")
    if m.shape[0] != math.prod(dims[t] for t in targets):
        raise ShapeError("operator size does not match target subsystems")
    rest = [i for i in range(len(dims)) if i not in targets]
    d_rest = math.prod(dims[i] for i in rest) if rest else 1
    big = np.kron(m, np.eye(d_rest, dtype=complex))
    order = targets + rest
    n = len(dims)
    shaped = big.reshape([dims[i] for i in order] * 2)
    inv = np.argsort(order)
    perm = list(inv) + [n + i for i in inv]
    return shaped.transpose(perm).reshape(total, total)
