"""Explicit second-order time stepping for radial wave equations.

The radial Laplacian is discretized in conservative (finite-volume) form,
which reduces to 2N (u_1 - u_0)/h**2 at the origin. Time stepping is the
velocity form of leapfrog. The outer node is a Dirichlet boundary: frozen at
its initial value or driven by a known exact solution.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate

from .pspace import TailedState, free_evolve_powers
from .radial_core import Dim, RadialGrid, Soliton, StatePair, exterior_norm_sq

BLOWUP_SENTINEL = 1e6
MAX_CFL = 0.9
NONLINEARITIES = ("linear", "full", "truncated")
# cells behind the cone r = R + |t| where extension effects are still visible;
# the explicit stencil propagates at speed 1/cfl with superexponentially small amplitude
TRUST_MARGIN_CELLS = 32


@dataclass(frozen=True)
class SolveConfig:
    nonlinearity: str = "linear"
    t_final: float = 1.0
    cfl: float = 0.5
    R_cone: float | None = None
    r_max: float | None = None
    snapshot_every: int = 0
    n_snapshots: int = 64

    def __post_init__(self):
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"nonlinearity must be one of {NONLINEARITIES}")
        if self.nonlinearity == "truncated" and self.R_cone is None:
            raise ValueError("truncated nonlinearity needs R_cone")
        if not 0 < self.cfl <= MAX_CFL:
            raise ValueError(f"cfl must lie in (0, {MAX_CFL}]")
        if not self.t_final >= 0:
            raise ValueError("t_final must be nonnegative")

    def echo(self) -> list[str]:
        return [f"{k} = {v}" for k, v in asdict(self).items()]


class BlowupSuspected(RuntimeError):
    """sup|u| exceeded the sentinel or became non-finite; carries the partial run."""

    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(eq=False)
class Trajectory:
    config: SolveConfig
    times: np.ndarray
    states: list
    direction: int = 1
    dt: float = 0.0

    @property
    def grid(self) -> RadialGrid:
        return self.states[0].grid

    @property
    def dim(self) -> Dim:
        return self.states[0].dim

    def final(self) -> StatePair:
        return self.states[-1]

    def at(self, t: float) -> StatePair:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t={t}")
        return self.states[i]

    def export(self, directory) -> Path:
        """One CSV per snapshot, an index `t,filename` and a config echo."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        lines = self.config.echo() + [f"direction = {self.direction}", f"dt = {self.dt!r}",
                                      f"N = {self.dim.N}", f"h = {self.grid.h!r}"]
        (out / "config.txt").write_text("\n".join(lines) + "\n")
        with open(out / "index.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "filename"])
            for i, (t, s) in enumerate(zip(self.times, self.states)):
                name = f"snap_{i:05d}.csv"
                s.to_csv(out / name)
                w.writerow([repr(float(t)), name])
        return out


@dataclass(frozen=True)
class ProfileData:
    """Initial data given by callables, re-sampleable on any grid."""

    dim: Dim
    f0: Callable
    f1: Callable | None = None

    def sample(self, grid: RadialGrid) -> StatePair:
        return StatePair.sample(self.dim, grid, self.f0, self.f1)


# discrete operator ---------------------------------------------------------

def laplacian_coeffs(N: int, grid: RadialGrid):
    """Flux weights and inverse cell volumes of the conservative radial Laplacian."""
    if not grid.has_origin:
        raise ValueError("the solver needs a grid starting at r = 0")
    h = grid.h
    r = grid.r
    rp = r + h / 2
    rm = np.clip(r - h / 2, 0.0, None)
    vol = (rp**N - rm**N) / N
    flux = rp[:-1] ** (N - 1) / h
    return flux, 1.0 / vol


def apply_laplacian(u: np.ndarray, flux: np.ndarray, inv_vol: np.ndarray, out: np.ndarray) -> np.ndarray:
    f = flux * np.diff(u)
    out[:-1] = f
    out[1:-1] -= f[:-1]
    out[:-1] *= inv_vol[:-1]
    out[-1] = 0.0
    return out


@lru_cache(maxsize=None)
def stable_cfl(N: int, n: int = 64) -> float:
    """Largest stable dt/h for leapfrog with this Laplacian, from its spectral radius."""
    g = RadialGrid(0.0, 1.0, n + 1)
    flux, inv_vol = laplacian_coeffs(N, g)
    A = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n + 1)
        e[j] = 1.0
        A[:, j] = -apply_laplacian(e, flux, inv_vol, np.empty(n + 1))[:n]
    lam = np.max(np.real(np.linalg.eigvals(A)))
    return float(2.0 / math.sqrt(lam))


def _nonlinear_term(u: np.ndarray, p: float, mask: np.ndarray | None, out: np.ndarray) -> np.ndarray:
    np.abs(u, out=out)
    if p == 4.0:
        np.square(out, out=out)
        np.square(out, out=out)
    elif p == 2.0:
        np.square(out, out=out)
    elif p != 1.0:
        np.power(out, p, out=out)
    out *= u
    if mask is not None:
        out *= mask
    return out


def _check_support(init: StatePair, cfg: SolveConfig, tol: float = 1e-12):
    r = init.r
    h = init.grid.h
    cut = init.grid.r_end - cfg.t_final - 2 * h
    scale = max(np.max(np.abs(init.u0)), np.max(np.abs(init.u1)), 1e-300)
    beyond = r >= cut
    if np.any(np.abs(init.u0[beyond]) > tol * scale) or np.any(np.abs(init.u1[beyond]) > tol * scale):
        raise ValueError("data reaches r_max - t_final - 2h; enlarge the grid or drive the boundary")


def evolve(init: StatePair, cfg: SolveConfig, direction: int = 1,
           boundary: Callable[[float], tuple[float, float]] | None = None) -> Trajectory:
    """Evolve radial data over [0, t_final] forward (direction=+1) or backward (-1).

    `boundary(t)` returns the exact (u, u_t) at the outer node for signed time t;
    without it the outer value stays frozen and the data must stay clear of it.
    """
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    grid = init.grid
    N = init.dim.N
    h = grid.h
    if cfg.r_max is not None and grid.r_end < cfg.r_max - 1e-9 * h:
        raise ValueError("grid does not reach r_max")
    limit = min(MAX_CFL, stable_cfl(N))
    if cfg.cfl > limit:
        raise ValueError(f"CFL violation: cfl={cfg.cfl} exceeds the stable bound {limit:.3f} for N={N}")
    if boundary is None:
        _check_support(init, cfg)

    T = cfg.t_final
    steps = int(math.ceil(T / (cfg.cfl * h) - 1e-9)) if T > 0 else 0
    dt = T / steps if steps else 0.0
    every = cfg.snapshot_every or max(1, steps // max(cfg.n_snapshots, 1))

    r = grid.r
    flux, inv_vol = laplacian_coeffs(N, grid)
    p = init.dim.p_crit
    nonlinear = cfg.nonlinearity != "linear"
    R_cone = cfg.R_cone if cfg.nonlinearity == "truncated" else None

    u = init.u0.copy()
    v = direction * init.u1.copy()
    acc = np.empty_like(u)
    acc_new = np.empty_like(u)
    work = np.empty_like(u)

    def force(uu, tau, out):
        apply_laplacian(uu, flux, inv_vol, out)
        if nonlinear:
            mask = None if R_cone is None else (r > R_cone + tau).astype(float)
            out += _nonlinear_term(uu, p, mask, work)
            out[-1] = 0.0
        return out

    times = [0.0]
    states = [init]

    def snapshot(k):
        times.append(direction * k * dt)
        states.append(StatePair(init.dim, grid, u.copy(), direction * v))

    def partial_traj():
        return Trajectory(cfg, np.array(times), states, direction, dt)

    force(u, 0.0, acc)
    # blow-up is checked every 8 steps; overflow in between is expected and caught there
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, steps + 1):
            tau = k * dt
            u += dt * v + (0.5 * dt * dt) * acc
            if boundary is not None:
                ub, vb = boundary(direction * tau)
                u[-1] = ub
            force(u, tau, acc_new)
            v += (0.5 * dt) * (acc + acc_new)
            if boundary is not None:
                v[-1] = direction * vb
            acc, acc_new = acc_new, acc
            if nonlinear and (k % 8 == 0 or k == steps):
                peak = float(np.max(np.abs(u)))
                if not peak < BLOWUP_SENTINEL:
                    raise BlowupSuspected(f"type I blow-up suspected at t={direction * tau:.6g} (sup|u|={peak:.3g})",
                                          partial_traj())
            if k % every == 0 or k == steps:
                if not np.all(np.isfinite(u)):
                    raise BlowupSuspected(f"non-finite values at t={direction * tau:.6g}", partial_traj())
                snapshot(k)
    return partial_traj()


# exact N = 3 solution ---------------------------------------------------------

def exact_n3(f0: Callable, t: float, r, f1: Callable | None = None, F1: Callable | None = None):
    """d'Alembert solution of the linear radial wave equation in dimension 3.

    With w = r u the problem is the 1-D wave equation on the half-line with odd
    extension. `F1`, if given, is an antiderivative of s * f1(s); otherwise the
    velocity integral is done by quadrature.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.empty_like(r)

    def w0(s):
        return s * f0(np.abs(s))

    def vel(a, b):
        if f1 is None:
            return 0.0
        if F1 is not None:
            return F1(b) - F1(a)
        return integrate.quad(lambda s: s * f1(s), a, b, epsabs=1e-15, epsrel=1e-13, limit=200)[0]

    for i, ri in enumerate(r):
        if t == 0.0:
            out[i] = f0(ri)
            continue
        if ri == 0.0:
            # limit r -> 0: d/ds [s f0(s)] at s = |t|, plus t f1(|t|)
            a = abs(t)
            eps = 1e-5 * max(a, 1e-3)
            d = (w0(a + eps) - w0(a - eps)) / (2 * eps)
            out[i] = d + (t * f1(a) if f1 is not None else 0.0)
            continue
        val = 0.5 * (w0(ri + t) + w0(ri - t))
        if f1 is not None:
            val += math.copysign(0.5, t) * vel(abs(ri - abs(t)), ri + abs(t))
        out[i] = val / ri
    return out if out.size > 1 else float(out[0])


# exterior evolution ------------------------------------------------------------

def canonical_extension(r: np.ndarray, R: float, u0R: float, g: float):
    """Inside r < R: u_r ramps linearly from g at R to 0 at R/2; u_t = 0."""
    x = np.clip(r, R / 2, R)
    u0 = u0R - (g / R) * ((R / 2) ** 2 - (x - R / 2) ** 2)
    return u0, np.zeros_like(r)


@dataclass(eq=False)
class ExteriorRun:
    trajectory: Trajectory
    R: float
    data: TailedState

    def trusted_from(self, t: float) -> float:
        return self.R + abs(t) + TRUST_MARGIN_CELLS * self.trajectory.grid.h

    def analytic_tail(self, t: float) -> TailedState:
        """Exact evolution of the analytic part (exact for the linear flow, and for W)."""
        N = self.data.dim.N
        return TailedState(self.data.dim, free_evolve_powers(self.data.powers, N, t), self.data.soliton)


def _analytic_boundary(data: TailedState, r_end: float):
    N = data.dim.N

    def bnd(t):
        powers = free_evolve_powers(data.powers, N, t)
        ub = sum(float(p.u0(r_end)) for p in powers)
        vb = sum(float(p.u1(r_end)) for p in powers)
        if data.soliton is not None:
            ub += float(data.soliton.u0(r_end))
        return ub, vb

    return bnd


def exterior_initial(data: TailedState, grid: RadialGrid, R: float, extension=None) -> StatePair:
    """Data on the solver grid: given values for r >= R, an extension inside."""
    if not 0 < R < grid.r_end:
        raise ValueError("R must lie strictly inside the grid")
    full = data.sample(grid)
    r = grid.r
    u0 = full.u0.copy()
    u1 = full.u1.copy()
    inside = r < R
    u0R = float(data.analytic_u0(R))
    g = float(data.analytic_du0(R))
    if data.sampled is not None:
        u0R += float(np.interp(R, r, data.sampled.u0))
        g += float(np.interp(R, r, np.gradient(data.sampled.u0, grid.h)))
    ext = canonical_extension if extension is None else extension
    e0, e1 = ext(r[inside], R, u0R, g)
    u0[inside] = e0
    u1[inside] = e1
    return StatePair(data.dim, grid, u0, u1)


def evolve_exterior(data, R: float, cfg: SolveConfig, grid: RadialGrid, direction: int = 1,
                    extension=None) -> ExteriorRun:
    """Evolve data given on r > R; only r > R + |t| is trusted.

    The outer node is driven by the exact evolution of the analytic tail.
    """
    data = TailedState.of(data)
    init = exterior_initial(data, grid, R, extension)
    bnd = _analytic_boundary(data, grid.r_end) if data.has_analytic else None
    traj = evolve(init, cfg, direction, boundary=bnd)
    return ExteriorRun(traj, R, data)


# convergence ---------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceResult:
    order: float
    errors: tuple
    hs: tuple
    conclusive: bool
    note: str = ""


def _restrict(fine: StatePair, coarse_grid: RadialGrid) -> StatePair:
    k = int(round(coarse_grid.h / fine.grid.h))
    return StatePair(fine.dim, coarse_grid, fine.u0[::k][:coarse_grid.n], fine.u1[::k][:coarse_grid.n])


def _sample_init(init, grid: RadialGrid) -> StatePair:
    if isinstance(init, (ProfileData, Soliton)):
        return init.sample(grid)
    if isinstance(init, TailedState):
        return init.sample(grid)
    raise TypeError("convergence study needs re-sampleable initial data")


def convergence_order(init, cfg: SolveConfig, h0: float, refinements: int = 3, r_max: float | None = None,
                      exact: Callable | None = None, boundary=None) -> ConvergenceResult:
    """Observed order from runs at h0, h0/2, ...; against `exact(t, r)` if given,
    otherwise by self-refinement. Errors are H(0) norms at t_final."""
    if refinements < 2 + (exact is None):
        raise ValueError("not enough refinements for an order estimate")
    r_max = cfg.r_max if r_max is None else r_max
    if r_max is None:
        raise ValueError("r_max needed")
    hs = [h0 / 2**i for i in range(refinements)]
    finals = []
    for h in hs:
        g = RadialGrid.covering(r_max, h)
        traj = evolve(_sample_init(init, g), cfg, boundary=boundary)
        finals.append(traj.final())
    errors = []
    if exact is not None:
        T = cfg.t_final
        for s in finals:
            ref = exact(T, s.r)
            diff = StatePair(s.dim, s.grid, s.u0 - ref, np.zeros_like(ref))
            errors.append(math.sqrt(exterior_norm_sq(diff, 0.0, check=False)))
    else:
        for c, f in zip(finals[:-1], finals[1:]):
            diff = c - _restrict(f, c.grid)
            errors.append(math.sqrt(exterior_norm_sq(diff, 0.0, check=False)))
    errors = tuple(float(e) for e in errors)
    if any(e == 0.0 for e in errors):
        return ConvergenceResult(float("nan"), errors, tuple(hs), False, "zero error: order undefined")
    if any(b >= a for a, b in zip(errors[:-1], errors[1:])):
        return ConvergenceResult(float("nan"), errors, tuple(hs), False, "non-monotone errors")
    orders = [math.log2(a / b) for a, b in zip(errors[:-1], errors[1:])]
    return ConvergenceResult(float(orders[-1]), errors, tuple(hs), True)


def linear_energy(state: StatePair) -> float:
    return exterior_norm_sq(state, state.grid.r0, check=False)
