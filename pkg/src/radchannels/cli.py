"""Command-line driver: one command per acceptance check, plus parameter sweeps.

Configuration is a plain INI file. Keys are read from the ``[run]`` section
and then from a section named after the command; command-line flags override
both. Every command writes ``<out>/<command>.csv`` with the rows
``check,instance,param,observed,expected,tolerance,pass`` after a commented
header that echoes the configuration, and ``<out>/<command>_summary.txt``.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 numerical abort.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import itertools
import math
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channels import grid_for, run_both, verify_equirepartition, verify_exterior_lower_bound
from .fourier_side import (LogGrid, even_channel_ratio, even_exterior_form_parts, hankel_laplace_check,
                           operator_norm_check, random_fourier_pair, rayleigh_ratio, truncated_power,
                           truncated_power_ratio)
from .pspace import TailedState, build_basis
from .radial_core import (Dim, RadialGrid, Soliton, StatePair, eval_W, nonlinear_energy, w_stationary_residual,
                          w_tail_coefficient)
from .verification import (CheckRow, SeqParams, Theorem1Instance, compact_nonradiative_check,
                           geometric_closed_form, proof_constants, random_seq_params, saturated_sequence,
                           sequence_claim_check, soliton_drift, support_trace, theorem1_rate_check, time_invariance_check, w_tail_rates)
from .wave_solver import BlowupSuspected, ProfileData, SolveConfig, convergence_order, evolve, exact_n3, linear_energy

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3
REQUIRED = object()


class ConfigError(Exception):
    pass


# parameter types ---------------------------------------------------------------

def _float(s: str) -> float:
    s = s.strip()
    if "/" in s:
        a, b = s.split("/", 1)
        return float(a) / float(b)
    return float(s)


def _floats(s: str) -> list[float]:
    return [_float(x) for x in s.split(",") if x.strip()]


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


@dataclass(frozen=True)
class Param:
    conv: object
    default: object = REQUIRED
    help: str = ""


COMMON = {
    "out": Param(str, "results", "output directory"),
    "seed": Param(int, 0, "random seed"),
}


# data presets ---------------------------------------------------------------------

_PRESET = re.compile(r"^(\w+)(?:\[([^\]]*)\])?$")


def bump(c: float, w: float, p: int = 4):
    """(1 - x**2)**p with x = (r - c) / w, zero outside |x| < 1."""
    def f(r):
        x = (np.asarray(r, dtype=float) - c) / w
        return np.where(np.abs(x) < 1, (1 - x * x) ** p, 0.0)
    return f


def parse_preset(spec: str) -> tuple[str, list[float]]:
    m = _PRESET.match(spec.strip())
    if not m or m.group(1) not in ("gaussian", "bump", "w_soliton", "xi_tail", "mixture", "random", "zero"):
        raise ConfigError(f"unknown data preset {spec!r}")
    args = _floats(m.group(2)) if m.group(2) else []
    return m.group(1), args


def compact_datum(spec: str, dim: Dim, rng: np.random.Generator, amp: float = 1.0):
    """(f0, f1, support radius) for a compactly supported preset."""
    name, args = parse_preset(spec)
    if name == "gaussian":
        w = args[0] if args else 0.5
        # exp(-(r/w)**2) is below 1e-14 of its peak past 5.7 w
        return (lambda r: amp * np.exp(-(np.asarray(r) / w) ** 2)), None, 5.7 * w
    if name == "bump":
        a, b = (args + [1.0, 2.0][len(args):])[:2]
        if not 0 <= a < b:
            raise ConfigError(f"bump[{a},{b}] needs 0 <= a < b")
        return (lambda r: amp * bump((a + b) / 2, (b - a) / 2)(r)), None, b
    if name == "random":
        c0, c1 = rng.uniform(1.0, 2.0, 2)
        w0, w1 = rng.uniform(0.3, 0.8, 2)
        a0, a1 = amp * rng.normal(size=2)
        f0 = lambda r: a0 * bump(c0, w0)(r)
        f1 = lambda r: a1 * bump(c1, w1)(r)
        return f0, f1, float(max(c0 + w0, c1 + w1))
    if name == "zero":
        return (lambda r: np.zeros_like(np.asarray(r, dtype=float))), None, 1.0
    raise ConfigError(f"preset {name!r} is not compactly supported")


def sample_datum(spec, dim, rng, h, t_final_factor=8.0, amp=1.0, t_final=None):
    f0, f1, rho = compact_datum(spec, dim, rng, amp)
    T = t_final_factor * rho if t_final is None else t_final
    g = grid_for(rho, T, h)
    return StatePair.sample(dim, g, f0, f1), T


# commands ----------------------------------------------------------------------------

@dataclass
class Command:
    name: str
    criterion: str
    params: dict
    func: object
    help: str = ""


def _row(check, instance, param, observed, expected, tol, passed) -> CheckRow:
    return CheckRow(check, instance, param, float(observed), float(expected), float(tol), bool(passed))


def cmd_equirepartition(p, rng):
    rows = []
    for N in p["dim"]:
        dim = Dim(N)
        for i in range(p["cases"]):
            spec = p["data"]
            s, T = sample_datum(spec, dim, rng, p["h"], p["t_factor"])
            res = verify_equirepartition(s, T, p["cfl"])
            rows.append(_row("equirepartition", f"N{N}-{spec}-{i}", f"T={T:.6g}", res.lhs, res.rhs, p["tol"],
                             res.rel_err <= p["tol"]))
    return rows


def ac2_datum(dim: Dim, rng, h: float, T: float, with_tail: bool = True):
    basis = build_basis(dim)
    c0, c1 = rng.uniform(1.5, 2.5, 2)
    w0, w1 = rng.uniform(0.6, 1.0, 2)
    a0, a1 = rng.normal(size=2)
    th = rng.normal(size=basis.m) if with_tail else np.zeros(basis.m)
    g = RadialGrid.covering(3.5 + T + 1.0, h)
    s = StatePair.sample(dim, g, lambda r: a0 * bump(c0, w0)(r), lambda r: a1 * bump(c1, w1)(r))
    powers = tuple(e.scaled(t) for e, t in zip(basis.elements, th) if t != 0.0)
    return TailedState(dim, powers=powers, sampled=s), g


def cmd_exterior_bound(p, rng):
    rows = []
    T = p["t_final"]
    for N in p["dim"]:
        dim = Dim(N)
        basis = build_basis(dim)
        for i in range(p["cases"]):
            data, g = ac2_datum(dim, rng, p["h"], T)
            for res in verify_exterior_lower_bound(data, p["R"], g, T, p["cfl"]):
                rows.append(_row("exterior-lower-bound", f"N{N}-random-{i}", f"R={res.report.R:g}", res.lhs, res.rhs,
                                 p["tol"], res.rel_err <= p["tol"]))
        g = RadialGrid.covering(T + 3.0, p["h"])
        for k, e in enumerate(basis.elements, start=1):
            data = TailedState(dim, powers=(e,))
            for res in verify_exterior_lower_bound(data, p["R"], g, T, p["cfl"]):
                rel = res.lhs / data.h_norm_sq(res.report.R)
                rows.append(_row("xi-tail-channel", f"N{N}-xi{k}", f"R={res.report.R:g}", rel, 0.0, p["xi_tol"],
                                 abs(rel) <= p["xi_tol"]))
    return rows


def even_state(dim: Dim, rng, h: float, i: int) -> StatePair:
    c0, c1 = rng.uniform(0.6, 1.2, 2)
    w0, w1 = rng.uniform(0.1, 0.15, 2)
    a0, a1 = rng.normal(size=2)
    if i % 3 == 0:
        a1 = 0.0
    elif i % 3 == 1:
        a0 = 0.0
    rho = max(c0 + 6 * w0, c1 + 6 * w1)
    g = grid_for(rho, 8 * rho, h)
    return StatePair.sample(dim, g, lambda r: a0 * np.exp(-((r - c0) / w0) ** 2),
                            lambda r: a1 * np.exp(-((r - c1) / w1) ** 2))


def cmd_even_positivity(p, rng):
    rows = []
    for N in p["dim"]:
        dim = Dim(N)
        if N % 2:
            raise ConfigError(f"even-positivity needs even dimensions, got {N}")
        grid = LogGrid.spanning(1e-4, 1e4, 0.05)
        for i in range(p["pairs"]):
            fv = even_exterior_form_parts(random_fourier_pair(rng, dim, grid))
            ok = fv.value > 0 and fv.value >= fv.lower_chain * (1 - 1e-12) and fv.lower_chain >= 0
            rows.append(_row("even-form-positive", f"N{N}-pair-{i}", "value/pi_part", fv.value / fv.pi_part, 0.0, 0.0,
                             ok))
        ratios = []
        for i in range(p["states"]):
            er = even_channel_ratio(even_state(dim, rng, p["h"], i), cfl=p["cfl"])
            ratios.append(er.ratio)
        ratios = np.array(ratios)
        mean = float(np.mean(ratios))
        for i, r in enumerate(ratios):
            rows.append(_row("even-time-fourier-ratio", f"N{N}-state-{i}", "channels/form", r, mean, p["cv_tol"],
                             abs(r / mean - 1) <= p["cv_tol"]))
        cv = float(np.std(ratios) / abs(mean))
        rows.append(_row("even-ratio-cv", f"N{N}", f"states={len(ratios)}", cv, 0.0, p["cv_tol"], cv <= p["cv_tol"]))
    return rows


def cmd_hankel_strictness(p, rng):
    rows = []
    nc = operator_norm_check(p["samples"], rng)
    out = Path(p["out"])
    out.mkdir(parents=True, exist_ok=True)
    nc.to_csv(out / "hankel_norm_check.csv")
    rows.append(_row("hankel-strict", f"random-{p['samples']}", "max ratio/pi", nc.max_ratio / math.pi, 1.0, 0.0,
                     nc.max_ratio < math.pi))
    for T in p["T_list"]:
        obs = rayleigh_ratio(truncated_power(T, 0.05)) / math.pi
        ref = truncated_power_ratio(T) / math.pi
        rows.append(_row("truncated-power-oracle", "sigma^-1/2", f"T={T:g}", obs, ref, 3e-3,
                         abs(obs / ref - 1) <= 3e-3 and obs < 1.0))
    T = p["T_extremal"]
    obs = rayleigh_ratio(truncated_power(T, 0.05)) / math.pi
    rows.append(_row("near-extremal", "sigma^-1/2", f"T={T:g}", obs, p["extremal_target"], 0.0,
                     p["extremal_target"] <= obs < 1.0))
    mism = hankel_laplace_check(p["ll_functions"], rng)
    rows.append(_row("hankel-laplace-square", f"gaussians-{p['ll_functions']}", "max rel L2", float(mism.max()), 0.0,
                     p["ll_tol"], mism.max() <= p["ll_tol"]))
    return rows


def cmd_w_facts(p, rng):
    rows = []
    r = np.linspace(0.0, 1e3, 200001)
    for N in p["dim"]:
        dim = Dim(N)
        res = w_stationary_residual(dim, r)
        rows.append(_row("w-stationary-residual", f"N{N}", "r in (0,1e3]", res, 0.0, 1e-10, res <= 1e-10))
        R = 1e3
        coef = R ** (N - 2) * float(eval_W(dim, 1.0, R))
        ref = w_tail_coefficient(dim)
        rows.append(_row("w-tail-coefficient", f"N{N}", f"r={R:g}", coef, ref, 1e-3, abs(coef / ref - 1) <= 1e-3))
    for N in p["evolve_dim"]:
        drift = soliton_drift(Dim(N), p["h"], p["t_final"], p["r_max"], p["cfl"])
        rows.append(_row("w-nonlinear-stationarity", f"N{N}", f"h={p['h']:g};T={p['t_final']:g}", drift, 0.0, 1e-2,
                         drift <= 1e-2))
    return rows


def cmd_w_tail_rates(p, rng):
    rows = []
    for N in p["dim"]:
        res = w_tail_rates(Dim(N), p["R0"], p["levels"])
        rows.append(_row("w-tail-slope", f"N{N}",
                         f"R0={res.radii[0]:g};levels={p['levels']};ell={res.ell_estimate:.10g}",
                         res.fit.slope, res.target_slope, 0.25, res.passed))
    return rows


def cmd_theorem1_rates(p, rng):
    rows = cmd_w_tail_rates(p | {"R0": None}, rng)
    for N in p["dim"]:
        if N < 5:
            continue
        dim = Dim(N)
        inst = Theorem1Instance(dim, dim.m, w_tail_coefficient(dim), float(N * (N - 2)), soliton=True, name="W")
        rows += _theorem1_rows(inst, p["levels"])
        g = RadialGrid.covering(1.2, 1 / 256)
        for k0 in range(1, dim.m + 1):
            ell = float(rng.uniform(0.2, 1.0)) * (1 if rng.random() < 0.5 else -1)
            a0, a1 = 0.1 * rng.normal(size=2)
            b = StatePair.sample(dim, g, lambda r: a0 * bump(0.45, 0.45)(r), lambda r: a1 * bump(0.45, 0.45)(r))
            rows += _theorem1_rows(Theorem1Instance(dim, k0, ell, 1.0, b, name=f"xi{k0}+bump"), p["levels"])
        # ell and k0 do not move under the truncated flow
        grid = RadialGrid.covering(20.0, 1 / 128)
        for name, data in (("W", TailedState(dim, soliton=Soliton(dim))),
                           ("xi1", TailedState(dim, powers=(build_basis(dim).elements[0].scaled(0.5),)))):
            tab = time_invariance_check(data, p["T_list"], 1.0, grid)
            ell0 = tab[0].ell
            for row in tab[1:]:
                drift = abs(row.ell / ell0 - 1)
                rows.append(_row("ell-time-invariance", f"N{N}-{name}", f"T={row.T:g};k0={row.k0}", drift, 0.0, 0.02,
                                 row.k0 == tab[0].k0 and drift <= 0.02))
    return rows


def _theorem1_rows(inst, levels):
    res = theorem1_rate_check(inst, levels)
    tag = f"N{inst.dim.N}-{inst.name}-k{inst.k0}"
    slope = res.fit.slope if res.fit is not None else -math.inf
    return [
        _row("coordinate-extraction", tag, f"k0={res.extraction.k0}", res.extraction.ell, inst.ell, 1e-3, res.ell_ok),
        _row("remainder-rate", tag, "slope vs -rate", slope, -res.rate, 0.25, res.rate_ok),
        _row("shell-inequality", tag, f"C={res.shell_constant:g}", float(np.max(res.shell)), res.shell_constant, 0.0,
             res.shell_ok),
    ]


def cmd_support_law(p, rng):
    """Law and 1/8 bound at `epsilon`; deviations at the `sensitivity` thresholds
    go to support_sensitivity.csv and are not gated."""
    rows, sens = [], []
    for N in p["dim"]:
        dim = Dim(N)
        for nl, amp in (("linear", 1.0), ("full", p["amp"])):
            f0, f1, rho = compact_datum(p["data"], dim, rng, amp)
            g = grid_for(rho, p["t_final"], p["h"])
            s = StatePair.sample(dim, g, f0, f1)
            fwd, bwd = run_both(s, SolveConfig(nl, t_final=p["t_final"], cfl=p["cfl"], n_snapshots=64))
            tag = f"N{N}-{nl}-{p['data']}"
            eps = p["epsilon"]
            res = support_trace(fwd, bwd, eps)
            best = min(res.max_dev(1), res.max_dev(-1)) / res.h
            rows.append(_row("support-law", tag, f"eps={eps:g}", best, 0.0, 2.0, res.law_ok))
            eighth = max([res.eighth_ratio[d] for d in res.law_directions] or [0.0])
            rows.append(_row("one-eighth-bound", tag, f"eps={eps:g}", eighth, 0.125, 0.05, res.eighth_ok))
            for e in p["sensitivity"]:
                alt = support_trace(fwd, bwd, e)
                sens.append([tag, repr(e), repr(alt.max_dev(1) / alt.h), repr(alt.max_dev(-1) / alt.h)])
    out = Path(p["out"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "support_sensitivity.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "epsilon_rel", "max_dev_fwd_over_h", "max_dev_bwd_over_h"])
        w.writerows(sens)
    return rows


def cmd_compact_exclusion(p, rng):
    rows = []
    for N in p["dim"]:
        dim = Dim(N)
        specs = [p["data"]] * p["cases"] + ["zero"]
        for i, spec in enumerate(specs):
            s, T = sample_datum(spec, dim, rng, p["h"], p["t_factor"], p["amp"])
            v = compact_nonradiative_check(s, True, T, p["cfl"])
            expect = "zero" if spec == "zero" else "radiative"
            rows.append(_row("compact-exclusion", f"N{N}-{spec}-{i}", f"verdict={v.verdict}", v.sum_limits, v.bound, 0.0,
                             v.verdict == expect))
    return rows


def cmd_check_sequences(p, rng):
    rows = []
    params = random_seq_params(rng, p["trials"], p["n_max"])
    res = sequence_claim_check(params, rng=rng)
    rows.append(_row("sequence-claim", f"random-{p['trials']}", f"max mu/(C bound)={res.max_ratio:.6g}",
                     res.counterexamples, 0, 0, res.passed))
    for q, r in ((0.6, 0.3), (0.3, 0.6), (0.5, 0.5)):
        sp = SeqParams(q, r, 0.0, 2.0, 0.4, 0.2, p["n_max"])
        mu = saturated_sequence(sp)
        cf = geometric_closed_form(q, r, 0.4, 0.2, p["n_max"])
        err = float(np.max(np.abs(mu - cf) / cf))
        rows.append(_row("c0-zero-closed-form", f"q={q:g},r={r:g}", "max rel diff", err, 0.0, 1e-12, err <= 1e-12))
    for q, r in ((0.5, 0.25), (0.5, 0.5)):
        eps, _ = proof_constants(q, r, 1.0, 2.0)
        res = sequence_claim_check(SeqParams(q, r, 1.0, 2.0, eps, eps, p["n_max"]), trials=200, rng=rng)
        rows.append(_row("sequence-example", f"q={q:g},r={r:g},c0=1,beta=2", "max mu/(C bound)", res.max_ratio, 1.0,
                         0.0, res.passed))
    return rows


def cmd_solver_gates(p, rng):
    rows = []
    dim = Dim(3)
    f0 = lambda r: np.exp(-np.asarray(r) ** 2)
    data = ProfileData(dim, f0)
    cfg = SolveConfig("linear", t_final=1.0, cfl=p["cfl"], n_snapshots=1)
    conv = convergence_order(data, cfg, 4 * p["h"], refinements=3, r_max=8.0,
                             exact=lambda t, r: exact_n3(f0, t, r))
    rows.append(_row("dalembert-error", "N3-gaussian", f"h={conv.hs[-1]:g};t=1", conv.errors[-1], 0.0, 1e-4,
                     conv.errors[-1] <= 1e-4))
    rows.append(_row("convergence-order", "N3-gaussian", "h=" + "/".join(f"{h:g}" for h in conv.hs), conv.order, 2.0,
                     0.2, conv.conclusive and 1.8 <= conv.order <= 2.2))
    for N in p["dim"]:
        d = Dim(N)
        for nl, amp in (("linear", 1.0), ("full", 0.05)):
            g = grid_for(2.0, p["t_final"], p["h"])
            s = StatePair.sample(d, g, lambda r: amp * bump(1.5, 0.5)(r), lambda r: amp * bump(1.2, 0.4)(r))
            traj = evolve(s, SolveConfig(nl, t_final=p["t_final"], cfl=p["cfl"], n_snapshots=32))
            if nl == "linear":
                E = np.array([linear_energy(x) for x in traj.states])
            else:
                E = np.array([nonlinear_energy(x, check=False) for x in traj.states])
            drift = float(np.max(np.abs(E / E[0] - 1)))
            rows.append(_row("energy-drift", f"N{N}-{nl}", f"T={p['t_final']:g}", drift, 0.0, 5e-3, drift <= 5e-3))
    return rows


SOLVER = {"h": Param(_float, 1 / 512, "grid spacing"), "cfl": Param(_float, 0.5, "dt / h")}
DIMS = {"dim": Param(_ints, REQUIRED, "comma-separated dimensions")}

COMMANDS = {c.name: c for c in [
    Command("verify-equirepartition", "AC1",
            DIMS | SOLVER | {"data": Param(str, "random"), "cases": Param(int, 5), "t_factor": Param(_float, 8.0),
                             "tol": Param(_float, 0.03)},
            cmd_equirepartition, "sum of channel limits at R = 0 against the initial energy"),
    Command("exterior-bound", "AC2",
            DIMS | SOLVER | {"R": Param(_floats, [0.5, 1.0, 2.0]), "cases": Param(int, 5),
                             "t_final": Param(_float, 12.0), "tol": Param(_float, 0.03),
                             "xi_tol": Param(_float, 1e-3)},
            cmd_exterior_bound, "channel limits outside r > R + |t| against the P(R) residual"),
    Command("even-positivity", "AC3",
            DIMS | SOLVER | {"h": Param(_float, 1 / 256), "pairs": Param(int, 100), "states": Param(int, 10),
                             "cv_tol": Param(_float, 0.05)},
            cmd_even_positivity, "Fourier-side form in even dimension"),
    Command("hankel-strictness", "AC4",
            {"samples": Param(int, 1000), "T_list": Param(_floats, [1e2, 1e4, 1e6]),
             "T_extremal": Param(_float, 1e10), "extremal_target": Param(_float, 0.95),
             "ll_functions": Param(int, 50), "ll_tol": Param(_float, 1e-6)},
            cmd_hankel_strictness, "norm of the Hankel operator and H = L L"),
    Command("w-facts", "AC5",
            DIMS | SOLVER | {"evolve_dim": Param(_ints, [5]), "t_final": Param(_float, 2.0),
                             "r_max": Param(_float, 20.0)},
            cmd_w_facts, "ground state residual, tail and stationarity under the flow"),
    Command("theorem1-rates", "AC6",
            DIMS | {"levels": Param(int, 6), "T_list": Param(_floats, [0.0, 0.5, 1.0])},
            cmd_theorem1_rates, "coordinates, decay rates and the shell inequality"),
    Command("w-tail-rates", "",
            DIMS | {"R0": Param(_float, None), "levels": Param(int, 6)},
            cmd_w_tail_rates, "decay of W minus its leading tail"),
    Command("support-law", "AC7",
            DIMS | SOLVER | {"data": Param(str, "bump[1,2]"), "t_final": Param(_float, 2.0),
                             "amp": Param(_float, 0.05), "epsilon": Param(_float, 1e-8),
                             "sensitivity": Param(_floats, [1e-6, 1e-10])},
            cmd_support_law, "support radius against rho(0) + |t|"),
    Command("compact-exclusion", "AC8",
            DIMS | SOLVER | {"h": Param(_float, 1 / 256), "data": Param(str, "random"), "cases": Param(int, 3),
                             "amp": Param(_float, 0.05), "t_factor": Param(_float, 8.0)},
            cmd_compact_exclusion, "compact nonzero data radiate"),
    Command("check-sequences", "AC9",
            {"trials": Param(int, 10000), "n_max": Param(int, 60)},
            cmd_check_sequences, "geometric-sequence lemma on random recursions"),
    Command("solver-gates", "AC10",
            SOLVER | {"dim": Param(_ints, [3, 5]), "t_final": Param(_float, 2.0)},
            cmd_solver_gates, "accuracy, order and energy conservation of the solver"),
]}


# configuration ---------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    command: str
    values: dict
    raw: dict = field(default_factory=dict)
    origin: dict = field(default_factory=dict)
    echo: list = field(default_factory=list)


def _key_lines(path: Path) -> dict:
    """(section, key) -> line number, for line-anchored messages."""
    out = {}
    section = None
    for i, line in enumerate(path.read_text().splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif "=" in s and not s.startswith(("#", ";")):
            out[(section, s.split("=", 1)[0].strip().lower())] = i
    return out


def read_config_file(path, sections) -> tuple[dict, dict, list]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(path.read_text(), source=str(path))
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    lines = _key_lines(path)
    raw, origin = {}, {}
    for sec in sections:
        if cp.has_section(sec):
            for k, v in cp.items(sec):
                raw[k] = v
                origin[k] = f"{path}:{lines.get((sec, k), '?')}"
    return raw, origin, path.read_text().splitlines()


def resolve(params: dict, raw: dict, origin: dict) -> dict:
    spec = COMMON | params
    lower = {k.lower(): k for k in spec}
    unknown = [k for k in raw if k not in lower]
    if unknown:
        k = unknown[0]
        raise ConfigError(f"{origin.get(k, 'command line')}: unknown key {k!r}")
    values = {}
    for key, prm in spec.items():
        text = raw.get(key.lower())
        if text is None:
            if prm.default is REQUIRED:
                raise ConfigError(f"missing required key {key!r} (config file or --{key.replace('_', '-')})")
            values[key] = prm.default
            continue
        try:
            values[key] = prm.conv(text)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{origin.get(key.lower(), 'command line')}: invalid value for {key!r}: {text!r} ({e})")
    return values


def build_config(command: str, cli_values: dict, config_path=None) -> ExperimentConfig:
    cmd = COMMANDS[command]
    raw, origin, echo = {}, {}, []
    if config_path is not None:
        raw, origin, echo = read_config_file(config_path, ["run", command])
    for k, v in cli_values.items():
        if v is not None:
            raw[k.lower()] = v
            origin[k.lower()] = f"--{k.replace('_', '-')}"
    values = resolve(cmd.params, raw, origin)
    return ExperimentConfig(command, values, raw, origin, echo)


# output ------------------------------------------------------------------------------

CSV_FIELDS = ["check", "instance", "param", "observed", "expected", "tolerance", "pass"]


def _fmt(v) -> str:
    if isinstance(v, list):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows, extra=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((extra or []) + CSV_FIELDS)
    for r in rows:
        pre = r[0] if extra else []
        row = r[1] if extra else r
        w.writerow(pre + [row.check, row.instance, row.param, repr(row.observed), repr(row.expected),
                          repr(row.tolerance), "true" if row.passed else "false"])
    return buf.getvalue()


def header(cfg: ExperimentConfig) -> str:
    lines = [f"radchannels {cfg.command}", f"generated {time.strftime('%Y-%m-%dT%H:%M:%S')}"]
    lines += [f"{k} = {_fmt(v)}" for k, v in sorted(cfg.values.items())]
    if cfg.echo:
        lines.append("config file:")
        lines += [f"| {line}" for line in cfg.echo]
    return "".join(f"# {line}\n" for line in lines)


def write_outputs(cfg: ExperimentConfig, body: str, summary: list[str]) -> Path:
    out = Path(cfg.values["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{cfg.command}.csv"
    path.write_text(header(cfg) + body)
    (out / f"{cfg.command}_summary.txt").write_text(header(cfg) + "".join(s + "\n" for s in summary))
    return path


def read_csv_body(path) -> str:
    """The CSV without its commented header."""
    return "".join(line for line in Path(path).read_text().splitlines(keepends=True) if not line.startswith("#"))


def run(cfg: ExperimentConfig) -> int:
    cmd = COMMANDS[cfg.command]
    rng = np.random.default_rng(cfg.values["seed"])
    rows = cmd.func(cfg.values, rng)
    failed = [r for r in rows if not r.passed]
    label = f"{cmd.criterion} " if cmd.criterion else ""
    status = "PASS" if not failed else "FAIL"
    summary = [f"{label}{cfg.command}: {status} ({len(rows) - len(failed)}/{len(rows)} rows pass)"]
    summary += [f"  failed: {r.check} {r.instance} {r.param} observed={r.observed!r} expected={r.expected!r}"
                for r in failed]
    write_outputs(cfg, rows_to_csv(rows), summary)
    print(summary[0])
    for line in summary[1:]:
        print(line)
    return EXIT_PASS if not failed else EXIT_FAIL


# sweep ---------------------------------------------------------------------------------

def _sweep_case(args):
    target, values = args
    try:
        rng = np.random.default_rng(values["seed"])
        return COMMANDS[target].func(values, rng), None
    except Exception as e:  # recorded per row; a sweep never aborts
        return None, f"{type(e).__name__}: {e}"


def run_sweep(target: str, grid: dict, base: dict, origin: dict, echo: list, workers: int, out: str) -> int:
    if target not in COMMANDS:
        raise ConfigError(f"unknown sweep target {target!r}")
    keys = sorted(grid)
    combos = [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))] if keys else []
    cases = []
    for combo in combos:
        raw = dict(base)
        raw.update(combo)
        cases.append((target, resolve(COMMANDS[target].params, raw, origin)))
    if workers > 1 and len(cases) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_case, cases))
    else:
        results = [_sweep_case(c) for c in cases]
    rows = []
    any_fail = False
    for i, (combo, (res, err)) in enumerate(zip(combos, results)):
        pre = [str(i)] + [combo[k] for k in keys]
        if err is not None:
            any_fail = True
            rows.append((pre, CheckRow("error", target, err, math.nan, math.nan, math.nan, False)))
            continue
        for r in res:
            any_fail |= not r.passed
            rows.append((pre, r))
    cfg = ExperimentConfig("sweep", {"target": target, "workers": workers, "out": out} |
                           {f"grid.{k}": " | ".join(grid[k]) for k in keys}, echo=echo)
    n_fail = sum(not r.passed for _, r in rows)
    summary = [f"sweep {target}: {'FAIL' if any_fail else 'PASS'} ({len(combos)} cases, {len(rows)} rows, "
               f"{n_fail} failing)"]
    write_outputs(cfg, rows_to_csv(rows, ["case"] + keys), summary)
    print(summary[0])
    return EXIT_FAIL if any_fail else EXIT_PASS


def _split_grid_values(text: str) -> list[str]:
    """Values are separated by '|' so that list-valued keys keep their commas."""
    return [v.strip() for v in text.split("|") if v.strip()]


# entry point --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="radchannels", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS.values():
        sp = sub.add_parser(cmd.name, help=cmd.help)
        sp.add_argument("--config", help="INI file; keys from [run] and [%s]" % cmd.name)
        for key, prm in (COMMON | cmd.params).items():
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=prm.help or None)
    sp = sub.add_parser("sweep", help="Cartesian product over parameter values of one command")
    sp.add_argument("--config", help="INI file with [sweep] target/workers/out, [run] base keys and [grid]")
    sp.add_argument("--target", default=None, help="command to sweep")
    sp.add_argument("--grid", action="append", default=[], metavar="KEY=V1|V2",
                    help="parameter values separated by '|'; repeatable")
    sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="fixed parameter")
    sp.add_argument("--workers", default=None)
    sp.add_argument("--out", default=None)
    return ap


def _kv(items, what):
    out = {}
    for it in items:
        if "=" not in it:
            raise ConfigError(f"{what} expects KEY=VALUE, got {it!r}")
        k, v = it.split("=", 1)
        out[k.strip().lower()] = v.strip()
    return out


def _main_sweep(ns) -> int:
    base, origin, echo, grid = {}, {}, [], {}
    sweep_opts = {}
    if ns.config:
        path = Path(ns.config)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(path.read_text(), source=str(path))
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from None
        lines = _key_lines(path)
        echo = path.read_text().splitlines()
        if cp.has_section("sweep"):
            sweep_opts = dict(cp.items("sweep"))
        if cp.has_section("run"):
            for k, v in cp.items("run"):
                base[k] = v
                origin[k] = f"{path}:{lines.get(('run', k), '?')}"
        if cp.has_section("grid"):
            grid = {k: _split_grid_values(v) for k, v in cp.items("grid")}
    target = ns.target or sweep_opts.get("target")
    if not target:
        raise ConfigError("missing required key 'target' ([sweep] section or --target)")
    base.update(_kv(ns.set, "--set"))
    grid.update({k: _split_grid_values(v) for k, v in _kv(ns.grid, "--grid").items()})
    try:
        workers = int(ns.workers or sweep_opts.get("workers", 1))
    except ValueError:
        raise ConfigError("workers must be an integer") from None
    out = ns.out or sweep_opts.get("out", "results")
    base["out"] = out
    return run_sweep(target, grid, base, origin, echo, workers, out)


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    try:
        if ns.command == "sweep":
            return _main_sweep(ns)
        cli_values = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
        cfg = build_config(ns.command, cli_values, ns.config)
        return run(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (BlowupSuspected, ArithmeticError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_ABORT
    except ValueError as e:
        # module preconditions rejected the configured instance
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
