"""Command-line experiment runner.

    catcoh list
    catcoh run <experiment> [--param k=v ...] [--config FILE] [--seed S] [--out DIR]
    catcoh check [--seed S] [--out DIR]

Every experiment is deterministic given its parameters and seed.  Random
draws come from ``numpy.random.default_rng(seed)`` (PCG64); random
unitaries are QR-orthonormalised complex Gaussian matrices with the phases
of the R diagonal absorbed (Haar measure).  Series are written as CSV
(comma separated, header row, LF line endings) next to a JSON summary.

Exit status: 0 when every assertion passes, 1 when one fails, 2 on usage or
configuration errors.  The worker count for parallel sweeps is read from
``CATCOH_WORKERS`` (default 1); results do not depend on it.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .catalytic import (lambda_channel, phi_process_matrix, run_cycles, sequential_prep,
                        binomial_spread)
from .jc import DECAY_M, JCConfig, decay_experiment, lifetimes_nondecreasing
from .ladder import delta_moment, eta_state, pure_state, same_state
from .qmat import haar_unitary, random_density
from .refframe import (ReferenceEmbedding, conserving_commutation_check, random_conserving_unitary,
                       random_povm, replay_two_vs_one, theta, theta_identity)
from .systems import (SystemHamiltonian, ThermalContext, avg_conservation_demo, gibbs, is_passive,
                      passive_yield)
from .workext import convergence_experiment

WORKERS_ENV = "CATCOH_WORKERS"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad command line or configuration."""


# ---------------------------------------------------------------------------
# records


@dataclass
class Assertion:
    name: str
    lhs: float
    rhs: float
    tol: float
    relation: str = "<="

    @property
    def passed(self) -> bool:
        if not (math.isfinite(self.lhs) or math.isfinite(self.rhs)):
            return self.lhs == self.rhs
        if self.relation == "<=":
            return self.lhs <= self.rhs + self.tol
        if self.relation == ">=":
            return self.lhs >= self.rhs - self.tol
        if self.relation == "==":
            return abs(self.lhs - self.rhs) <= self.tol
        raise ValueError(f"unknown relation {self.relation!r}")

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": _num(self.lhs), "rhs": _num(self.rhs),
                "tol": self.tol, "relation": self.relation, "passed": self.passed}


@dataclass
class ExperimentRecord:
    experiment: str
    seed: int
    params: dict[str, Any]
    series: dict[str, tuple[list[str], list[tuple]]] = field(default_factory=dict)
    assertions: list[Assertion] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def check(self, name: str, lhs: float, rhs: float, tol: float, relation: str = "<=") -> None:
        self.assertions.append(Assertion(name, float(lhs), float(rhs), float(tol), relation))

    def summary(self) -> dict:
        return {"experiment": self.experiment, "version": __version__, "seed": self.seed,
                "params": self.params, "passed": self.passed,
                "assertions": [a.to_dict() for a in self.assertions],
                "series": {k: f"{k}.csv" for k in self.series},
                "extra": _jsonable(self.extra)}

    def write(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, (header, rows) in self.series.items():
            with open(out_dir / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for row in rows:
                    w.writerow([_fmt(v) for v in row])
        with open(out_dir / "summary.json", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def _num(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return _num(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ---------------------------------------------------------------------------
# experiments


def _random_system(rng: np.random.Generator, N: int, z_max: int) -> SystemHamiltonian:
    z = np.sort(rng.integers(0, z_max + 1, N))
    if z[-1] == z[0]:
        z[-1] = z[0] + 1
    return SystemHamiltonian(tuple(int(v) for v in z), haar_unitary(N, rng))


def _random_pure(rng: np.random.Generator, W: int, offset: int = 0):
    amp = rng.standard_normal(W) + 1j * rng.standard_normal(W)
    return pure_state(amp, offset)


def exp_catalytic_invariance(p: dict, rng: np.random.Generator, rec: ExperimentRecord) -> None:
    sigma0 = _random_pure(rng, p["window"])
    probe_H = SystemHamiltonian((0, 1, 2), haar_unitary(3, rng))
    probe_U = haar_unitary(3, rng)
    ref = phi_process_matrix(sigma0, probe_U, probe_H)
    a_max = p["a_max"]
    m0 = np.array([delta_moment(sigma0, a) for a in range(-a_max, a_max + 1)])
    rows, worst_m, worst_c = [], 0.0, 0.0
    sigma = sigma0
    dims = p["dims"]
    for i in range(p["uses"]):
        N = dims[i % len(dims)]
        H = _random_system(rng, N, p["z_max"])
        sigma = lambda_channel(sigma, random_density(N, rng), haar_unitary(N, rng), H)
        m = np.array([delta_moment(sigma, a) for a in range(-a_max, a_max + 1)])
        dm = float(np.max(np.abs(m - m0)))
        dc = float(np.max(np.abs(phi_process_matrix(sigma, probe_U, probe_H) - ref)))
        worst_m, worst_c = max(worst_m, dm), max(worst_c, dc)
        rows.append((i + 1, N, sigma.width, dm, dc))
    rec.series["uses"] = (["use", "dim", "window", "moment_dev", "channel_dev"], rows)
    rec.check("moment_invariance", worst_m, 0.0, 1e-12)
    rec.check("probe_channel_fixed", worst_c, 0.0, 1e-10)


def exp_sequential_prep(p: dict, rng: np.random.Generator, rec: ExperimentRecord) -> None:
    L = p["L"]
    sigma0 = eta_state(L, p["l0"])
    res = sequential_prep(sigma0, p["k"], with_entropy=False)
    target = 1.0 - 1.0 / (2 * L)
    rec.series["fidelity"] = (["k", "fidelity", "energy"],
                              [(k, f, e) for k, (f, e) in enumerate(zip(res.fidelities, res.energies))])
    rec.check("fidelity_constant", float(np.max(np.abs(res.fidelities - target))), 0.0, 1e-12)
    kb = min(p["binomial_k"], p["k"])
    dev = max(same_state(res.states[k], binomial_spread(sigma0, k)) for k in range(kb + 1))
    rec.check("binomial_closed_form", dev, 0.0, 1e-12)
    rec.extra["target_fidelity"] = target


def exp_pump_cycle(p: dict, rng: np.random.Generator, rec: ExperimentRecord) -> None:
    D = p["D"]
    from .ladder import HALF_INFINITE
    sigma = eta_state(p["L"], 2 * D, kind=HALF_INFINITE)
    probe_H = SystemHamiltonian((0, D), haar_unitary(2, rng))
    probe_U = haar_unitary(2, rng)
    uses = []
    for _ in range(p["cycles"]):
        N = int(rng.integers(2, 4))
        H = _random_system(rng, N, D)
        uses.append((random_density(N, rng), haar_unitary(N, rng), H))
    reports = run_cycles(sigma, uses, D, probe_U, probe_H, tol=1e-12)
    rows = [(i + 1, r.support_in, r.support_out, r.probe_distance, r.energy_in, r.energy_out)
            for i, r in enumerate(reports)]
    rec.series["cycles"] = (["cycle", "support_in", "support_out", "probe_dev", "energy_in",
                             "energy_out"], rows)
    rec.check("probe_channel_fixed", max(r.probe_distance for r in reports), 0.0, 1e-12)
    rec.check("support_kept", min(r.support_out for r in reports), 2 * D, 0.0, ">=")


def exp_jc_decay(p: dict, rng: np.random.Generator, rec: ExperimentRecord) -> None:
    cfg = JCConfig(x=p["x"])
    r = decay_experiment(p["m"], p["L"], p["k_max"], cfg, cross_check_max_m=p["cross_check_max_m"],
                        cross_check_k=p["cross_check_k"], threshold=p["threshold"],
                        workers=_workers())
    rec.series["fidelity"] = (["m", "k", "fidelity"], r.rows())
    rec.series["lifetime"] = (["m", "T"], [(m, r.lifetimes[m]) for m in r.m_values])
    rec.extra["reference_line"] = r.reference_line
    rec.extra["lifetimes"] = {str(m): r.lifetimes[m] for m in r.m_values}
    big = [m for m in r.m_values if m >= 24]
    if big:
        rec.check("F0_near_reference", max(abs(r.curves[m][0] - 0.99) for m in big), 0.0, 0.01)
    rec.check("lifetime_nondecreasing", float(lifetimes_nondecreasing(r)), 1.0, 0.0, "==")
    if r.cross_check:
        rec.check("band_vs_full", max(r.cross_check.values()), 0.0, 1e-10)


def exp_work_convergence(p: dict, rng: np.random.Generator, rec: ExperimentRecord) -> None:
    ctx = ThermalContext(p["beta"])
    H = SystemHamiltonian(tuple(p["z"]), None, p["delta"])
    c, s = math.cos(p["angle"]), math.sin(p["angle"])
    V = np.array([[c, -s], [s, c]])
    rho = V @ np.diag([p["p0"], 1 - p["p0"]]) @ V.T
    sched = [(K, K ** p["J_power"], K ** p["L_power"]) for K in p["K"]]
    pts = convergence_experiment(rho, H, ctx, sched)
    cols = ["K", "J", "L", "W", "D_target", "gap", "bound_rhs", "S_loss", "mismatch"]
    rec.series["convergence"] = (cols, [tuple(pt.row()[k] for k in cols) for pt in pts])
    rec.check("gap_nonnegative", min(pt.gap for pt in pts), 0.0, 1e-12, ">=")
    rec.check("gap_below_bound", max(pt.gap - pt.bound_rhs for pt in pts), 0.0, 0.0)
    rec.check("gap_shrinks_2x", pts[0].gap / pts[-1].gap, 2.0, 0.0, ">=")
    ident = max(abs(pt.W + pt.S_loss + pt.mismatch - pt.D_target) for pt in pts)
    rec.check("decomposition_identity", ident, 0.0, 1e-9)


def exp_refframe(p: dict, rng: np.random.Generator, rec: ExperimentRecord) -> None:
    worst = 0.0
    for _ in range(p["cases"]):
        N = int(rng.integers(2, 5))
        H = _random_system(rng, N, 3)
        L = int(rng.integers(1, 4))
        xi = _random_pure(rng, L)
        emb = ReferenceEmbedding.auto(H, xi.offset, xi.top)
        rho = random_density(N, rng)
        A = random_povm(N, 2, rng)[0]
        val = np.trace(theta_identity(A, emb) @ theta(rho, xi, emb))
        worst = max(worst, abs(val - np.trace(A @ rho)))
    rec.check("statistics_preserved", worst, 0.0, 1e-12)
    H3 = SystemHamiltonian((0, 1, 1), haar_unitary(3, rng))
    xi = eta_state(2)
    emb = ReferenceEmbedding.auto(H3, 0, 2)
    comm = max(conserving_commutation_check(random_conserving_unitary(H3, rng),
                                            random_density(3, rng), xi, emb).distance
               for _ in range(10))
    rec.check("conserving_commutation", comm, 0.0, 1e-12)
    rows = []
    for i in range(p["replays"]):
        H1 = SystemHamiltonian((0, 1))
        H2 = SystemHamiltonian((0, 1), haar_unitary(2, rng))
        HC = SystemHamiltonian((0, 1))
        rep = replay_two_vs_one(random_density(16, rng), (2, 2, 2), 2, H2, H1, HC,
                                haar_unitary(2, rng), haar_unitary(2, rng), eta_state(2, 0))
        op_gap = float(np.max(np.abs(rep.two_step - rep.one_step)))
        rows.append((i + 1, rep.two_vs_one, rep.two_vs_theta, rep.one_vs_theta, op_gap))
    rec.series["replay"] = (["replay", "two_vs_one", "two_vs_theta", "one_vs_theta",
                             "operator_gap"], rows)
    rec.check("replay_equivalent", max(max(r[1:4]) for r in rows), 0.0, 1e-10)


def exp_passivity(p: dict, rng: np.random.Generator, rec: ExperimentRecord) -> None:
    demo = avg_conservation_demo()
    rec.check("mean_energy_conserved", demo.energy_after, demo.energy_before, 1e-12, "==")
    rec.check("coherence_created", abs(demo.coherence), 0.5, 1e-12, "==")
    ctx = ThermalContext(p["beta"])
    rows, worst = [], 0.0
    for i in range(p["cases"]):
        N = int(rng.integers(2, 5))
        H = _random_system(rng, N, 4)
        rho = random_density(N, rng)
        a = passive_yield(rho, H, ctx, "entropy")
        b = passive_yield(rho, H, ctx, "pairing")
        worst = max(worst, abs(a - b))
        rows.append((i + 1, N, a, b))
    rec.series["yield"] = (["case", "dim", "entropy_form", "pairing_form"], rows)
    rec.check("yield_forms_agree", worst, 0.0, 1e-9)
    H = SystemHamiltonian((0, 1, 3), haar_unitary(3, rng))
    rec.check("gibbs_is_passive", float(is_passive(gibbs(H, ctx), H)), 1.0, 0.0, "==")
    rec.check("gibbs_yield_zero", abs(passive_yield(gibbs(H, ctx), H, ctx)), 0.0, 1e-12)


@dataclass(frozen=True)
class Experiment:
    name: str
    topic: str
    defaults: dict[str, Any]
    run: Callable[[dict, np.random.Generator, ExperimentRecord], None]


REGISTRY: dict[str, Experiment] = {e.name: e for e in [
    Experiment("catalytic-invariance", "reservoir moments and probe channel under repeated use",
               {"uses": 25, "window": 64, "dims": [2, 3, 4], "z_max": 3, "a_max": 6},
               exp_catalytic_invariance),
    Experiment("sequential-prep", "sequential phase-state preparation from one reservoir",
               {"L": 50, "l0": 0, "k": 100, "binomial_k": 12}, exp_sequential_prep),
    Experiment("pump-cycle", "half-infinite ladder with regenerative pumping",
               {"cycles": 20, "D": 3, "L": 8}, exp_pump_cycle),
    Experiment("jc-decay", "Jaynes-Cummings coherence decay",
               {"m": list(DECAY_M), "L": 50, "k_max": 1100, "x": math.pi / 4, "threshold": 0.95,
                "cross_check_max_m": 11, "cross_check_k": 300}, exp_jc_decay),
    Experiment("work-convergence", "work extraction gap along a (K, J, L) schedule",
               {"K": list(range(2, 11)), "J_power": 2, "L_power": 4, "z": [0, 1], "delta": 1.0,
                "beta": 1.0, "p0": 0.8, "angle": 0.4}, exp_work_convergence),
    Experiment("refframe-consistency", "reference-frame representation and replay",
               {"cases": 500, "replays": 3}, exp_refframe),
    Experiment("passivity-demo", "mean-energy conservation and passive yield",
               {"beta": 1.0, "cases": 200}, exp_passivity),
]}


# ---------------------------------------------------------------------------
# configuration


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _coerce(key: str, raw: Any, default: Any, where: str) -> Any:
    try:
        if isinstance(raw, str):
            text = raw.strip()
            if isinstance(default, list):
                if text.startswith("["):
                    raw = json.loads(text)
                else:
                    raw = [t for t in text.split(",") if t.strip()]
            elif isinstance(default, bool):
                if text.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(text)
                return text.lower() in ("true", "1")
            else:
                raw = text
        if isinstance(default, list):
            kind = type(default[0]) if default else float
            return [kind(float(v)) if kind is int and float(v).is_integer() else kind(v) for v in raw]
        if isinstance(default, bool):
            return bool(raw)
        if isinstance(default, int):
            f = float(raw)
            if not f.is_integer():
                raise ValueError(raw)
            return int(f)
        if isinstance(default, float):
            return float(raw)
        return raw
    except (ValueError, TypeError, json.JSONDecodeError):
        raise UsageError(f"{where}: cannot parse value {raw!r} for key '{key}'") from None


def parse_config_text(text: str, source: str = "config") -> dict[str, tuple[Any, str]]:
    """Flat ``key = value`` lines (``#`` comments) or a JSON object."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{source}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
        return {str(k): (v, f"{source}: key '{k}'") for k, v in data.items()}
    out = {}
    for i, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}: line {i}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = (v.strip(), f"{source}: line {i}")
    return out


def resolve_params(exp: Experiment, supplied: dict[str, tuple[Any, str]]) -> dict[str, Any]:
    params = dict(exp.defaults)
    for key, (raw, where) in supplied.items():
        if key == "seed":
            continue
        if key not in exp.defaults:
            raise UsageError(f"{where}: unknown key '{key}' for experiment {exp.name}")
        params[key] = _coerce(key, raw, exp.defaults[key], where)
    return params


def run(name: str, params: dict[str, Any] | None = None, seed: int = 0) -> ExperimentRecord:
    """Run a registered experiment with validated parameters."""
    if name not in REGISTRY:
        raise UsageError(f"unknown experiment '{name}'")
    exp = REGISTRY[name]
    supplied = {k: (v, f"param '{k}'") for k, v in (params or {}).items()}
    p = resolve_params(exp, supplied)
    return _execute(exp, p, int(seed))


def _execute(exp: Experiment, p: dict[str, Any], seed: int) -> ExperimentRecord:
    rec = ExperimentRecord(exp.name, seed, p)
    try:
        exp.run(p, np.random.default_rng(seed), rec)
    except (ValueError, ArithmeticError) as exc:
        raise UsageError(f"{exp.name}: invalid parameters: {exc}") from exc
    return rec


def list_experiments() -> list[tuple[str, str, dict]]:
    return [(e.name, e.topic, e.defaults) for e in REGISTRY.values()]


# ---------------------------------------------------------------------------
# entry point


def _print_record(rec: ExperimentRecord, stream) -> None:
    for a in rec.assertions:
        flag = "PASS" if a.passed else "FAIL"
        print(f"{flag} {rec.experiment}:{a.name} lhs={a.lhs:.6g} {a.relation} rhs={a.rhs:.6g} "
              f"tol={a.tol:g}", file=stream)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="catcoh", description="Run coherence-reservoir experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list registered experiments and their default parameters")
    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("experiment", help="experiment name (see 'list')")
    r.add_argument("--param", "-p", action="append", default=[], metavar="KEY=VALUE",
                   help="override a parameter; lists as a,b,c or JSON; repeatable")
    r.add_argument("--config", type=Path, help="key=value or JSON file with parameters")
    r.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    r.add_argument("--out", type=Path, help="directory for CSV series and summary.json")
    c = sub.add_parser("check", help="run every experiment with defaults and report assertions")
    c.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    c.add_argument("--out", type=Path, help="directory for per-experiment outputs")
    return ap


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "list":
            for name, topic, defaults in list_experiments():
                print(f"{name:22s} {topic}")
                for k, v in defaults.items():
                    print(f"    {k} = {v}")
            return EXIT_OK
        if args.command == "run":
            if args.experiment not in REGISTRY:
                raise UsageError(f"unknown experiment '{args.experiment}'")
            supplied: dict[str, tuple[Any, str]] = {}
            if args.config is not None:
                try:
                    text = args.config.read_text(encoding="utf-8")
                except OSError as exc:
                    raise UsageError(f"cannot read config: {exc}") from None
                supplied.update(parse_config_text(text, str(args.config)))
            for item in args.param:
                if "=" not in item:
                    raise UsageError(f"--param {item!r}: expected KEY=VALUE")
                k, v = item.split("=", 1)
                supplied[k.strip()] = (v, f"--param {k.strip()}")
            seed = args.seed
            if seed is None:
                seed = int(_coerce("seed", supplied["seed"][0], 0, supplied["seed"][1])) \
                    if "seed" in supplied else 0
            exp = REGISTRY[args.experiment]
            p = resolve_params(exp, supplied)
            rec = _execute(exp, p, seed)
            if args.out is not None:
                rec.write(args.out)
            _print_record(rec, sys.stdout)
            return EXIT_OK if rec.passed else EXIT_FAIL
        ok = True
        for name in REGISTRY:
            rec = run(name, seed=args.seed)
            if args.out is not None:
                rec.write(args.out / name)
            _print_record(rec, sys.stdout)
            ok &= rec.passed
        return EXIT_OK if ok else EXIT_FAIL
    except UsageError as exc:
        print(f"catcoh: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
