"""Resonant Jaynes-Cummings interaction used as a coherence reservoir.

A two-level system in its ground state interacts with a cavity field for a
fixed time.  The field then evolves as ``σ -> A σ A† + B σ B†`` with

    A = Σ_l cos(θ_l) |l><l|,    B = Σ_{l≥1} sin(θ_l) |l-1><l|,

where ``θ_l = x √l`` for the standard coupling and ``θ_l = x`` (for
``l ≥ 1``) for the uniform coupling ``f(l) = 1/√l``.  Repeating this maps a
ladder of prepared qubits onto a decaying preparation quality.

Two evaluation paths are provided.  The full-matrix path keeps the whole
window block.  The band path keeps only the diagonal and first
off-diagonal, which the map never couples to anything else.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ladder import HALF_INFINITE, WindowedLadderState, eta_state

DECAY_M = (5, 7, 9, 11, 14, 18, 24, 31, 40, 52, 67, 87, 113, 147, 191)
REFERENCE_LINE = 0.99


class TruncationError(ValueError):
    """The state reaches the Fock-space cutoff beyond the leakage budget."""


@dataclass(frozen=True)
class JCConfig:
    x: float = math.pi / 4
    fock_cutoff: int | None = None
    coupling: str = "standard"
    leakage_budget: float = 1e-9

    def __post_init__(self) -> None:
        if self.coupling not in ("standard", "uniform"):
            raise ValueError(f"unknown coupling {self.coupling!r}")

    def angles(self, levels: np.ndarray) -> np.ndarray:
        levels = np.asarray(levels)
        if self.coupling == "standard":
            return self.x * np.sqrt(levels.astype(float))
        return np.where(levels >= 1, self.x, 0.0)


def kraus_defect(cfg: JCConfig, levels: np.ndarray) -> float:
    """``max |A†A + B†B - 1|`` on the given levels."""
    th = cfg.angles(levels)
    a2 = np.cos(th) ** 2
    b2 = np.where(np.asarray(levels) >= 1, np.sin(th) ** 2, 0.0)
    return float(np.max(np.abs(a2 + b2 - 1.0)))


def _check_cutoff(top: int, cfg: JCConfig) -> None:
    if cfg.fock_cutoff is not None and top > cfg.fock_cutoff:
        raise TruncationError(f"window top {top} exceeds Fock cutoff {cfg.fock_cutoff}")


def jc_step(sigma: WindowedLadderState, cfg: JCConfig) -> WindowedLadderState:
    """One interaction with a fresh ground-state qubit; the window grows one level down."""
    _check_cutoff(sigma.top, cfg)
    levels = sigma.levels
    th = cfg.angles(levels)
    a = np.cos(th)
    b = np.sin(th)
    blk = sigma.block
    W = sigma.width
    if sigma.offset > 0:
        out = np.zeros((W + 1, W + 1), dtype=complex)
        out[1:, 1:] = np.outer(a, a) * blk
        out[:-1, :-1] += np.outer(b, b) * blk
        offset = sigma.offset - 1
    else:
        # B annihilates |0>, so nothing moves below the floor.
        out = np.outer(a, a) * blk
        out[:-1, :-1] += (np.outer(b, b) * blk)[1:, 1:]
        offset = 0
    return WindowedLadderState(offset, out, sigma.tail_mass, sigma.spacing, HALF_INFINITE)


def _quality_terms(levels: np.ndarray, cfg: JCConfig) -> np.ndarray:
    return np.sin(cfg.angles(levels + 1)) * np.cos(cfg.angles(levels))


def jc_quality(sigma: WindowedLadderState, cfg: JCConfig) -> float:
    """``Q_x(σ) = 1/2 + Σ_l sin(θ_{l+1}) cos(θ_l) Re<l|σ|l+1>``."""
    off = np.diagonal(sigma.block, offset=1)
    levels = sigma.levels[:-1]
    return 0.5 + float(np.sum(_quality_terms(levels, cfg) * off.real))


@dataclass
class BandState:
    """Diagonal ``d[l]`` and first upper diagonal ``o[l] = <l|σ|l+1>`` from level ``offset``."""

    offset: int
    diag: np.ndarray
    upper: np.ndarray

    @classmethod
    def from_state(cls, sigma: WindowedLadderState) -> "BandState":
        return cls(sigma.offset, np.real(np.diagonal(sigma.block)).copy(),
                   np.diagonal(sigma.block, offset=1).copy())

    @property
    def top(self) -> int:
        return self.offset + len(self.diag)


def band_step(band: BandState, cfg: JCConfig) -> BandState:
    _check_cutoff(band.top, cfg)
    levels = np.arange(band.offset, band.top)
    th = cfg.angles(levels)
    a, b = np.cos(th), np.sin(th)
    d, o = band.diag, band.upper
    W = len(d)
    if band.offset > 0:
        nd = np.zeros(W + 1)
        nd[1:] += a * a * d
        nd[:-1] += b * b * d
        no = np.zeros(W, dtype=complex)
        no[1:] += a[:-1] * a[1:] * o
        no[:-1] += b[:-1] * b[1:] * o
        return BandState(band.offset - 1, nd, no)
    nd = a * a * d
    nd[:-1] += (b * b * d)[1:]
    no = a[:-1] * a[1:] * o
    no[:-1] += (b[:-1] * b[1:] * o)[1:]
    return BandState(0, nd, no)


def band_quality(band: BandState, cfg: JCConfig) -> float:
    levels = np.arange(band.offset, band.offset + len(band.upper))
    return 0.5 + float(np.sum(_quality_terms(levels, cfg) * band.upper.real))


def decay_initial_level(m: int, L: int = 50) -> int:
    """``l0(m) = (4m+1)² - 24``; centres the window on a level where ``sin(π√l/2) = 1``."""
    return (4 * m + 1) ** 2 - 24


def auto_cutoff(l0: int, L: int, k_max: int) -> int:
    return l0 + L + k_max + 64


def fidelity_curve(sigma0: WindowedLadderState, k_max: int, cfg: JCConfig,
                   path: str = "band") -> np.ndarray:
    """``F_k = Q_x(σ^{(k)})`` for ``k = 0..k_max`` along the chosen path."""
    fids = np.empty(k_max + 1)
    if path == "band":
        band = BandState.from_state(sigma0)
        fids[0] = band_quality(band, cfg)
        for k in range(1, k_max + 1):
            band = band_step(band, cfg)
            fids[k] = band_quality(band, cfg)
    elif path == "full":
        sigma = sigma0
        fids[0] = jc_quality(sigma, cfg)
        for k in range(1, k_max + 1):
            sigma = jc_step(sigma, cfg)
            fids[k] = jc_quality(sigma, cfg)
    else:
        raise ValueError(f"unknown path {path!r}")
    return fids


def lifetime(fids: np.ndarray, threshold: float = 0.95, k_min: int = 20) -> float:
    """``min{k ≥ k_min : F_k < threshold}``, or ``inf`` if the curve never drops."""
    below = np.nonzero(fids[k_min:] < threshold)[0]
    return float(below[0] + k_min) if below.size else math.inf


@dataclass
class JCRecord:
    m_values: list[int]
    L: int
    k_max: int
    curves: dict[int, np.ndarray]
    lifetimes: dict[int, float]
    reference_line: float = REFERENCE_LINE
    cross_check: dict[int, float] = field(default_factory=dict)

    def rows(self) -> list[tuple[int, int, float]]:
        return [(m, k, float(f)) for m in self.m_values for k, f in enumerate(self.curves[m])]


def _run_curve(m: int, L: int, k_max: int, cfg: JCConfig, threshold: float,
               cross_k: int | None) -> tuple[int, np.ndarray, float, float | None]:
    l0 = decay_initial_level(m, L)
    run_cfg = cfg if cfg.fock_cutoff is not None else JCConfig(
        cfg.x, auto_cutoff(l0, L, k_max), cfg.coupling, cfg.leakage_budget)
    levels = np.arange(max(0, l0 - k_max), run_cfg.fock_cutoff)
    if kraus_defect(run_cfg, levels) > 1e-12:
        raise RuntimeError("Kraus operators are not trace preserving")
    sigma0 = eta_state(L, l0, kind=HALF_INFINITE)
    curve = fidelity_curve(sigma0, k_max, run_cfg, "band")
    dev = None
    if cross_k is not None:
        full = fidelity_curve(sigma0, cross_k, run_cfg, "full")
        dev = float(np.max(np.abs(full - curve[:cross_k + 1])))
    return m, curve, lifetime(curve, threshold), dev


def decay_experiment(m_list: Sequence[int] = DECAY_M, L: int = 50, k_max: int = 1100,
                    cfg: JCConfig | None = None, cross_check_max_m: int | None = None,
                    cross_check_k: int | None = None, threshold: float = 0.95,
                    workers: int = 1) -> JCRecord:
    """Fidelity decay curves from ``η_{L, l0(m)}`` for each ``m``.

    The band path produces the curves.  For ``m ≤ cross_check_max_m`` the
    full-matrix path is also run (for ``cross_check_k`` steps).  The largest
    deviation between the two paths is stored in ``cross_check``.  Curves are
    independent, so ``workers > 1`` computes them in a process pool; results
    are merged in the order of ``m_list``.
    """
    cfg = cfg or JCConfig()
    jobs = []
    for m in m_list:
        ck = None
        if cross_check_max_m is not None and m <= cross_check_max_m:
            ck = k_max if cross_check_k is None else min(cross_check_k, k_max)
        jobs.append((m, L, k_max, cfg, threshold, ck))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_curve, *zip(*jobs)))
    else:
        results = [_run_curve(*job) for job in jobs]
    curves = {m: c for m, c, _, _ in results}
    life = {m: t for m, _, t, _ in results}
    cross = {m: d for m, _, _, d in results if d is not None}
    return JCRecord(list(m_list), L, k_max, curves, life, REFERENCE_LINE, cross)


def lifetimes_nondecreasing(record: JCRecord) -> bool:
    t = [record.lifetimes[m] for m in sorted(record.m_values)]
    return all(t[i] <= t[i + 1] for i in range(len(t) - 1))


@dataclass
class Snapshot:
    offset: int
    magnitudes: np.ndarray
    nodes: list[int]

    def to_dict(self) -> dict:
        return {"offset": self.offset, "magnitudes": self.magnitudes.tolist(), "nodes": self.nodes}


def node_levels(lo: int, hi: int) -> list[int]:
    """Levels ``l`` in ``[lo, hi)`` where ``sin(π√l/4) = 0``, i.e. ``l = 16 m²``."""
    out = []
    m = math.isqrt(max(lo, 0) // 16)
    while 16 * m * m < hi:
        if 16 * m * m >= lo:
            out.append(16 * m * m)
        m += 1
    return out


def jc_state_snapshot(sigma: WindowedLadderState) -> Snapshot:
    """Magnitude grid ``|<l|σ|l'>|`` with markers where ``B_{π/4}`` annihilates."""
    return Snapshot(sigma.offset, np.abs(sigma.block), node_levels(sigma.offset, sigma.top))
