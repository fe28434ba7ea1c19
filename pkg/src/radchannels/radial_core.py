"""Dimensions, grids, radial states, exterior norms and the ground state W.

All integrals use the reduced radial measure ``r**(N-1) dr``; the area of
the unit sphere is left out everywhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate

SUPPORT_TOL = 1e-10


@dataclass(frozen=True)
class Dim:
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 3:
            raise ValueError(f"dimension must be an integer >= 3, got {self.N}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def parity(self) -> str:
        return "odd" if self.N % 2 else "even"

    @property
    def m(self) -> int | None:
        return (self.N - 1) // 2 if self.N % 2 else None

    @property
    def p_crit(self) -> float:
        """Exponent of the nonlinearity, |u|**(4/(N-2)) u."""
        return 4.0 / (self.N - 2)


@dataclass(frozen=True)
class RadialGrid:
    r0: float
    h: float
    n: int

    def __post_init__(self):
        if self.r0 < 0:
            raise ValueError("r0 must be nonnegative")
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        if self.n < 2:
            raise ValueError("grid needs at least two nodes")

    @classmethod
    def covering(cls, r_max: float, h: float, r0: float = 0.0) -> "RadialGrid":
        n = int(math.ceil((r_max - r0) / h - 1e-9)) + 1
        return cls(r0, h, n)

    @property
    def r(self) -> np.ndarray:
        return self.r0 + self.h * np.arange(self.n)

    @property
    def r_end(self) -> float:
        return self.r0 + self.h * (self.n - 1)

    @property
    def has_origin(self) -> bool:
        return self.r0 == 0.0


@dataclass(frozen=True, eq=False)
class StatePair:
    """Radial data (u, du/dt) sampled on a grid."""

    dim: Dim
    grid: RadialGrid
    u0: np.ndarray
    u1: np.ndarray

    def __post_init__(self):
        for name in ("u0", "u1"):
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != (self.grid.n,):
                raise ValueError(f"{name} has shape {a.shape}, expected ({self.grid.n},)")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains non-finite samples")
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def r(self) -> np.ndarray:
        return self.grid.r

    @classmethod
    def sample(cls, dim: Dim, grid: RadialGrid, f0, f1=None) -> "StatePair":
        r = grid.r
        u0 = np.asarray(f0(r), dtype=float) * np.ones_like(r)
        u1 = np.zeros_like(r) if f1 is None else np.asarray(f1(r), dtype=float) * np.ones_like(r)
        return cls(dim, grid, u0, u1)

    @classmethod
    def zeros(cls, dim: Dim, grid: RadialGrid) -> "StatePair":
        return cls(dim, grid, np.zeros(grid.n), np.zeros(grid.n))

    def _check_same(self, other: "StatePair"):
        if self.dim != other.dim or self.grid != other.grid:
            raise ValueError("states live on different grids or dimensions")

    def __add__(self, other: "StatePair") -> "StatePair":
        self._check_same(other)
        return StatePair(self.dim, self.grid, self.u0 + other.u0, self.u1 + other.u1)

    def __sub__(self, other: "StatePair") -> "StatePair":
        self._check_same(other)
        return StatePair(self.dim, self.grid, self.u0 - other.u0, self.u1 - other.u1)

    def __mul__(self, c: float) -> "StatePair":
        return StatePair(self.dim, self.grid, c * self.u0, c * self.u1)

    __rmul__ = __mul__

    def scaled(self, lam: float) -> "StatePair":
        """The energy-critical rescaling f_(lam); exact on the stretched grid."""
        if not lam > 0:
            raise ValueError("scale must be positive")
        N = self.dim.N
        g = RadialGrid(self.grid.r0 * lam, self.grid.h * lam, self.grid.n)
        return StatePair(self.dim, g, lam ** (-(N - 2) / 2) * self.u0, lam ** (-N / 2) * self.u1)

    def time_reversed(self) -> "StatePair":
        return StatePair(self.dim, self.grid, self.u0, -self.u1)

    def energy_density(self) -> np.ndarray:
        """(u_r**2 + u_t**2) r**(N-1) at the nodes."""
        du = np.gradient(self.u0, self.grid.h)
        return (du * du + self.u1 * self.u1) * self.r ** (self.dim.N - 1)

    def to_csv(self, path) -> None:
        data = np.column_stack([self.r, self.u0, self.u1])
        np.savetxt(path, data, delimiter=",", header="r,u0,u1", comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path, dim: Dim) -> "StatePair":
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        r = data[:, 0]
        h = (r[-1] - r[0]) / (len(r) - 1)
        if not np.allclose(np.diff(r), h, rtol=1e-9, atol=1e-12):
            raise ValueError("CSV radii are not uniformly spaced")
        return cls(dim, RadialGrid(float(r[0]), float(h), len(r)), data[:, 1], data[:, 2])


def trapezoid_from(r: np.ndarray, f: np.ndarray, a: float) -> float:
    """Trapezoid integral of samples f over [a, r[-1]] with a partial first cell."""
    h = r[1] - r[0]
    if a <= r[0]:
        return float(np.trapezoid(f, r))
    if a >= r[-1]:
        return 0.0
    j = int(np.searchsorted(r, a))
    fa = f[j - 1] + (f[j] - f[j - 1]) * (a - r[j - 1]) / h
    return float(0.5 * (fa + f[j]) * (r[j] - a) + np.trapezoid(f[j:], r[j:]))


def check_support(state: StatePair, tol: float = SUPPORT_TOL) -> None:
    dens = state.energy_density()
    peak = float(np.max(np.abs(dens)))
    if peak > 0 and abs(dens[-1]) > tol * peak:
        raise ValueError("state support reaches the last grid node; exterior integrals would be truncated")


# ground state -------------------------------------------------------------

def eval_W(dim: Dim, lam: float, r, sign: int = 1, deriv: int = 0):
    """sign * lam**(-(N-2)/2) * W(r/lam) or its first/second radial derivative."""
    if not lam > 0:
        raise ValueError("scale must be positive")
    N = dim.N
    c = N * (N - 2.0)
    x = np.asarray(r, dtype=float) / lam
    if np.any(x < 0):
        raise ValueError("radius must be nonnegative")
    q = 1.0 + x * x / c
    amp = sign * lam ** (-(N - 2) / 2)
    if deriv == 0:
        val = q ** (-(N - 2) / 2)
    elif deriv == 1:
        val = -(N - 2) / c * x * q ** (-N / 2) / lam
    elif deriv == 2:
        val = -(N - 2) / c * (q ** (-N / 2) - N * x * x / c * q ** (-N / 2 - 1)) / lam**2
    else:
        raise ValueError("deriv must be 0, 1 or 2")
    return amp * val


def w_stationary_residual(dim: Dim, r, lam: float = 1.0) -> float:
    """max |W'' + (N-1)/r W' + |W|**(4/(N-2)) W| over r > 0, relative to max |W|**((N+2)/(N-2))."""
    r = np.asarray(r, dtype=float)
    r = r[r > 0]
    N = dim.N
    w = eval_W(dim, lam, r)
    src = np.abs(w) ** (4 / (N - 2)) * w
    res = eval_W(dim, lam, r, deriv=2) + (N - 1) / r * eval_W(dim, lam, r, deriv=1) + src
    return float(np.max(np.abs(res)) / np.max(np.abs(src)))


def w_tail_coefficient(dim: Dim) -> float:
    N = dim.N
    return float((N * (N - 2.0)) ** ((N - 2) / 2))


def _quad_piece(f, lo, hi, epsabs, epsrel):
    val, err, _, *msg = integrate.quad(f, lo, hi, epsabs=epsabs, epsrel=epsrel, limit=200, full_output=1)
    # the roundoff floor is reached on integrands that are differences of nearly
    # equal profiles; the value is then as good as the data allows
    if msg and "roundoff" not in msg[0] and err > 1e-8 * max(abs(val), 1e-300):
        raise ArithmeticError(f"quadrature on [{lo}, {hi}] failed: {msg[0]}")
    return val


def _half_line_quad(f, R: float) -> float:
    """Integral of f over [R, inf) for smooth algebraically decaying f."""
    pieces = [R]
    b = max(R, 1.0)
    while b < 1e8 * max(R, 1.0):
        b *= 4.0
        pieces.append(b)
    total = 0.0
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        # far pieces only need accuracy relative to what has been accumulated
        total += _quad_piece(f, lo, hi, 1e-15 * abs(total), 1e-13)
    # remaining tail with s = 1/r
    B = pieces[-1]
    tail = lambda s: f(1.0 / s) / (s * s) if s > 0 else 0.0
    total += _quad_piece(tail, 0.0, 1.0 / B, 0.0, 1e-10)
    return total


@dataclass(frozen=True)
class Soliton:
    """sign * W_(lam), stationary for the focusing equation."""

    dim: Dim
    lam: float = 1.0
    sign: int = 1

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("scale must be positive")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    def u0(self, r):
        return eval_W(self.dim, self.lam, r, self.sign)

    def du0(self, r):
        return eval_W(self.dim, self.lam, r, self.sign, deriv=1)

    def u1(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    def sample(self, grid: RadialGrid) -> StatePair:
        return StatePair.sample(self.dim, grid, self.u0)

    def h_norm_sq(self, R: float) -> float:
        N = self.dim.N
        return _half_line_quad(lambda s: self.du0(s) ** 2 * s ** (N - 1), R)

    def energy(self) -> float:
        # Pohozaev: the potential term is (N-2)/N of the kinetic one.
        return self.h_norm_sq(0.0) / self.dim.N

    def sup_weighted(self, R: float) -> float:
        N = self.dim.N
        c = N * (N - 2.0)
        x = max(R / self.lam, math.sqrt(c))
        return float((x / (1 + x * x / c)) ** ((N - 2) / 2))


# norms and energies -------------------------------------------------------

def exterior_norm_sq(state, R: float, check: bool = True) -> float:
    """Integral over r > R of (u_r**2 + u_t**2) r**(N-1)."""
    if hasattr(state, "h_norm_sq"):
        return float(state.h_norm_sq(R))
    g = state.grid
    if R < g.r0 - 1e-12 * max(1.0, g.r0) or R > g.r_end:
        raise ValueError(f"R={R} outside grid coverage [{g.r0}, {g.r_end}]")
    if check:
        check_support(state)
    return trapezoid_from(state.r, state.energy_density(), R)


def nonlinear_energy(state, check: bool = True) -> float:
    if isinstance(state, Soliton):
        return state.energy()
    if check:
        check_support(state)
    N = state.dim.N
    r = state.r
    kin = np.trapezoid(state.energy_density(), r)
    pot = np.trapezoid(np.abs(state.u0) ** (2 * N / (N - 2)) * r ** (N - 1), r)
    return float(0.5 * kin - (N - 2) / (2 * N) * pot)


def radial_sobolev_bound(state, R: float) -> float:
    """sup over r >= R of r**((N-2)/2) |u0(r)|."""
    if isinstance(state, Soliton):
        return state.sup_weighted(R)
    g = state.grid
    if R < g.r0 or R > g.r_end:
        raise ValueError(f"R={R} outside grid coverage [{g.r0}, {g.r_end}]")
    mask = state.r >= R - 1e-12
    w = state.r[mask] ** ((state.dim.N - 2) / 2) * np.abs(state.u0[mask])
    return float(np.max(w)) if w.size else 0.0
