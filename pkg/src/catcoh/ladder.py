"""Reservoir states on an equally spaced energy ladder.

A reservoir state is stored as a finite density block on a contiguous
window of levels ``offset, offset+1, ..., offset+W-1``.  Because the shift
operator only changes the offset, translations and moments
``Tr(Δ^a σ)`` are exact.  The cyclic ladder ``Z_n`` is provided as a
finite testbed where nothing needs to be truncated at all.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .qmat import NotDensityError

TRACE_TOL = 1e-12


class BoundaryError(ValueError):
    """A half-infinite state would be pushed below the ground level."""


class TruncationWarning(UserWarning):
    """A moment was requested beyond the window of a truncated state."""


@dataclass(frozen=True)
class LadderKind:
    """Which ladder a state lives on: ``doubly_infinite``, ``half_infinite`` or ``cyclic``."""

    tag: str = "doubly_infinite"
    n: int | None = None

    def __post_init__(self) -> None:
        if self.tag not in ("doubly_infinite", "half_infinite", "cyclic"):
            raise ValueError(f"unknown ladder kind {self.tag!r}")
        if self.tag == "cyclic" and (self.n is None or self.n < 1):
            raise ValueError("cyclic ladder needs a positive modulus n")

    @classmethod
    def doubly_infinite(cls) -> "LadderKind":
        return cls("doubly_infinite")

    @classmethod
    def half_infinite(cls) -> "LadderKind":
        return cls("half_infinite")

    @classmethod
    def cyclic(cls, n: int) -> "LadderKind":
        return cls("cyclic", int(n))

    @property
    def is_half(self) -> bool:
        return self.tag == "half_infinite"


DOUBLY_INFINITE = LadderKind.doubly_infinite()
HALF_INFINITE = LadderKind.half_infinite()


@dataclass(frozen=True)
class WindowedLadderState:
    """Density block ``block`` on ladder levels ``offset .. offset+width-1``.

    ``tail_mass`` declares how much probability was discarded by truncation
    (zero for exact states).  ``spacing`` is the energy of one rung.
    """

    offset: int
    block: np.ndarray
    tail_mass: float = 0.0
    spacing: float = 1.0
    kind: LadderKind = field(default=DOUBLY_INFINITE)

    def __post_init__(self) -> None:
        blk = np.array(self.block, dtype=complex)
        if blk.ndim != 2 or blk.shape[0] != blk.shape[1] or blk.shape[0] == 0:
            raise ValueError(f"block must be a non-empty square matrix, got {blk.shape}")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if self.tail_mass < 0:
            raise ValueError("tail_mass must be non-negative")
        if self.kind.tag == "cyclic":
            raise ValueError("use CyclicLadderState for the cyclic ladder")
        if self.kind.is_half and self.offset < 0:
            raise BoundaryError(f"half-infinite state with offset {self.offset} < 0")
        tr = np.trace(blk).real
        if not (1.0 - self.tail_mass - TRACE_TOL <= tr <= 1.0 + TRACE_TOL):
            raise NotDensityError(f"block trace {tr!r} inconsistent with tail_mass {self.tail_mass}")
        blk.setflags(write=False)
        object.__setattr__(self, "block", blk)
        object.__setattr__(self, "offset", int(self.offset))

    @property
    def width(self) -> int:
        return self.block.shape[0]

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.width)

    @property
    def top(self) -> int:
        """One past the highest level of the window."""
        return self.offset + self.width

    @property
    def exact(self) -> bool:
        return self.tail_mass == 0.0

    def populations(self) -> np.ndarray:
        return np.real(np.diagonal(self.block)).copy()

    def support(self, tol: float = 1e-14) -> tuple[int, int]:
        """Lowest and highest level with population above ``tol``."""
        nz = np.nonzero(self.populations() > tol)[0]
        if nz.size == 0:
            raise ValueError("state has no support above tolerance")
        return self.offset + int(nz[0]), self.offset + int(nz[-1])

    def replace(self, **changes) -> "WindowedLadderState":
        data = dict(offset=self.offset, block=self.block, tail_mass=self.tail_mass,
                    spacing=self.spacing, kind=self.kind)
        data.update(changes)
        return WindowedLadderState(**data)

    def to_json(self) -> str:
        return json.dumps(state_to_dict(self))

    @classmethod
    def from_json(cls, text: str) -> "WindowedLadderState":
        return state_from_dict(json.loads(text))


def state_to_dict(sigma: WindowedLadderState) -> dict:
    return {
        "offset": sigma.offset,
        "spacing": sigma.spacing,
        "tail_mass": sigma.tail_mass,
        "block": [[[float(z.real), float(z.imag)] for z in row] for row in sigma.block],
    }


def state_from_dict(data: dict, kind: LadderKind = DOUBLY_INFINITE) -> WindowedLadderState:
    blk = np.array(data["block"], dtype=float)
    block = blk[..., 0] + 1j * blk[..., 1]
    return WindowedLadderState(int(data["offset"]), block, float(data.get("tail_mass", 0.0)),
                               float(data.get("spacing", 1.0)), kind)


def energy_state(level: int, spacing: float = 1.0, kind: LadderKind = DOUBLY_INFINITE) -> WindowedLadderState:
    """The projector ``|level><level|``."""
    return WindowedLadderState(level, np.ones((1, 1)), 0.0, spacing, kind)


def pure_state(amplitudes: Iterable[complex], offset: int, spacing: float = 1.0,
               kind: LadderKind = DOUBLY_INFINITE) -> WindowedLadderState:
    psi = np.asarray(list(amplitudes), dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return WindowedLadderState(offset, np.outer(psi, psi.conj()), 0.0, spacing, kind)


def eta_state(L: int, l0: int = 0, spacing: float = 1.0,
              kind: LadderKind = DOUBLY_INFINITE) -> WindowedLadderState:
    """Uniform superposition of the ``L`` levels ``l0 .. l0+L-1``."""
    if L < 1:
        raise ValueError("L must be at least 1")
    return WindowedLadderState(l0, np.full((L, L), 1.0 / L, dtype=complex), 0.0, spacing, kind)


def eta_moment(L: int, a: int) -> float:
    """Closed form ``<eta_L| Δ^a |eta_L> = max(0, 1 - |a|/L)``."""
    return max(0.0, 1.0 - abs(a) / L)


def delta_moment(sigma: WindowedLadderState, a: int) -> complex:
    """Return ``Tr(Δ^a σ)``, i.e. the sum of ``block[j, j+a]``.

    For ``|a| >= width`` the window holds no such entries and zero is
    returned.  That is exact for untruncated states; for a state with
    declared tail mass a :class:`TruncationWarning` is issued.
    """
    a = int(a)
    if abs(a) >= sigma.width:
        if not sigma.exact:
            warnings.warn(f"moment a={a} outside window of truncated state", TruncationWarning,
                          stacklevel=2)
        return 0j
    return complex(np.trace(sigma.block, offset=a))


def moments(sigma: WindowedLadderState, a_max: int) -> np.ndarray:
    """Vector of ``Tr(Δ^a σ)`` for ``a = -a_max .. a_max``."""
    return np.array([delta_moment(sigma, a) for a in range(-a_max, a_max + 1)])


def shift(sigma: WindowedLadderState, a: int) -> WindowedLadderState:
    """Rigid translation ``Δ^a σ Δ^{a†}`` (offset arithmetic only)."""
    new = sigma.offset + int(a)
    if sigma.kind.is_half and new < 0:
        raise BoundaryError(f"shift by {a} moves offset {sigma.offset} below the floor")
    return sigma.replace(offset=new)


def energy_expectation(sigma: WindowedLadderState) -> float:
    """``Tr(H_E σ)`` with ``H_E = s Σ_j j |j><j|``."""
    return float(sigma.spacing * np.dot(sigma.levels, sigma.populations()))


def pad_window(sigma: WindowedLadderState, below: int, above: int) -> WindowedLadderState:
    """Zero-pad the window by ``below`` levels underneath and ``above`` on top."""
    if below < 0 or above < 0:
        raise ValueError("padding must be non-negative")
    if sigma.kind.is_half:
        below = min(below, sigma.offset)
    if below == 0 and above == 0:
        return sigma
    blk = np.pad(sigma.block, ((below, above), (below, above)))
    return sigma.replace(offset=sigma.offset - below, block=blk)


def grow_window(sigma: WindowedLadderState, pad: int) -> WindowedLadderState:
    """Zero-pad by ``pad`` levels on both sides (only above at the floor)."""
    return pad_window(sigma, pad, pad)


def window_slice(sigma: WindowedLadderState, lo: int, hi: int) -> np.ndarray:
    """Block entries for levels ``lo .. hi-1``, zero outside the window."""
    out = np.zeros((hi - lo, hi - lo), dtype=complex)
    a, b = max(lo, sigma.offset), min(hi, sigma.top)
    if a < b:
        out[a - lo:b - lo, a - lo:b - lo] = sigma.block[a - sigma.offset:b - sigma.offset,
                                                        a - sigma.offset:b - sigma.offset]
    return out


def trim(sigma: WindowedLadderState, tol: float = 0.0) -> WindowedLadderState:
    """Drop empty edge levels (population ``<= tol``) without changing the state.

    With ``tol = 0`` this is lossless because an empty diagonal entry of a
    positive matrix forces its whole row and column to vanish.
    """
    pops = sigma.populations()
    nz = np.nonzero(pops > tol)[0]
    if nz.size == 0:
        return sigma
    lo, hi = int(nz[0]), int(nz[-1]) + 1
    if lo == 0 and hi == sigma.width:
        return sigma
    dropped = float(pops[:lo].sum() + pops[hi:].sum())
    return sigma.replace(offset=sigma.offset + lo, block=sigma.block[lo:hi, lo:hi],
                         tail_mass=sigma.tail_mass + dropped)


def same_state(s1: WindowedLadderState, s2: WindowedLadderState) -> float:
    """Largest entrywise difference of two windowed states on a common window."""
    lo, hi = min(s1.offset, s2.offset), max(s1.top, s2.top)
    return float(np.max(np.abs(window_slice(s1, lo, hi) - window_slice(s2, lo, hi))))


@dataclass(frozen=True)
class CyclicLadderState:
    """Density matrix on the ``n`` levels of the cyclic ladder ``Z_n``."""

    n: int
    block: np.ndarray
    spacing: float = 1.0

    def __post_init__(self) -> None:
        blk = np.array(self.block, dtype=complex)
        if blk.shape != (self.n, self.n):
            raise ValueError(f"block shape {blk.shape} does not match modulus {self.n}")
        if abs(np.trace(blk).real - 1.0) > TRACE_TOL:
            raise NotDensityError("cyclic state must have unit trace")
        blk.setflags(write=False)
        object.__setattr__(self, "block", blk)


def cyclic_shift_matrix(n: int, a: int = 1) -> np.ndarray:
    """Matrix of ``Δ_n^a``: ``|k> -> |k+a mod n>``."""
    return np.roll(np.eye(n, dtype=complex), int(a) % n, axis=0)


def cyclic_moment(sigma: CyclicLadderState, a: int) -> complex:
    """``Tr(Δ_n^a σ) = Σ_j σ[j, j+a mod n]``."""
    n = sigma.n
    j = np.arange(n)
    return complex(np.sum(sigma.block[j, (j + int(a)) % n]))


def embed_cyclic(sigma: WindowedLadderState, n: int, position: int) -> CyclicLadderState:
    """Place the window of ``sigma`` at cyclic indices ``position .. position+W-1``."""
    if sigma.width > n:
        raise ValueError("window wider than the cyclic ladder")
    blk = np.zeros((n, n), dtype=complex)
    idx = (np.arange(sigma.width) + position) % n
    blk[np.ix_(idx, idx)] = sigma.block
    return CyclicLadderState(n, blk, sigma.spacing)


def binomial_weights(k: int) -> np.ndarray:
    """``C(k, l) / 2^k`` for ``l = 0..k``."""
    return np.array([math.comb(k, l) for l in range(k + 1)], dtype=float) / 2.0**k
