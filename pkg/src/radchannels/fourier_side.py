"""Even-dimensional exterior energy on the Fourier side and the Hankel operator.

Half-line functions are stored on log-spaced grids sigma = exp(x). With
psi(x) = exp(x/2) phi(exp(x)) the map phi -> psi is unitary from L2(0, inf)
onto L2(R), the Hankel operator

    (H phi)(rho) = int_0^inf phi(sigma) / (rho + sigma) d sigma

becomes convolution with k(z) = 1 / (2 cosh(z/2)), whose Fourier symbol
pi / cosh(pi w) stays below pi, and the Laplace transform becomes a
correlation with g(z) = exp(z/2 - exp(z)).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.signal import fftconvolve

from .radial_core import Dim, StatePair

TAIL_TOL = 0.01
PAD = 50.0  # log-units of padding used when an output must cover the whole half-line


@dataclass(frozen=True)
class LogGrid:
    x0: float
    dx: float
    n: int

    def __post_init__(self):
        if not self.dx > 0 or self.n < 2:
            raise ValueError("log grid needs dx > 0 and at least two nodes")

    @classmethod
    def spanning(cls, s_min: float, s_max: float, dx: float = 0.02) -> "LogGrid":
        x0 = math.log(s_min)
        n = int(math.ceil((math.log(s_max) - x0) / dx)) + 1
        return cls(x0, dx, n)

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.n)

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.x)

    def padded(self, pad: float = PAD) -> tuple["LogGrid", int]:
        k = int(math.ceil(pad / self.dx))
        return LogGrid(self.x0 - k * self.dx, self.dx, self.n + 2 * k), k


@dataclass(frozen=True, eq=False)
class HalfLineFn:
    """Samples phi(sigma_j) on a log grid; outside the grid phi is taken as 0."""

    grid: LogGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n,) or not np.all(np.isfinite(v)):
            raise ValueError("values must be finite with one sample per grid node")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, grid: LogGrid, f) -> "HalfLineFn":
        return cls(grid, f(grid.sigma))

    @classmethod
    def from_psi(cls, grid: LogGrid, psi: np.ndarray) -> "HalfLineFn":
        return cls(grid, np.exp(-grid.x / 2) * psi)

    @property
    def sigma(self) -> np.ndarray:
        return self.grid.sigma

    @property
    def psi(self) -> np.ndarray:
        return np.exp(self.grid.x / 2) * self.values

    def norm(self) -> float:
        return math.sqrt(float(np.sum(self.psi**2)) * self.grid.dx)

    def inner(self, other: "HalfLineFn") -> float:
        if other.grid != self.grid:
            raise ValueError("functions live on different grids")
        return float(np.sum(self.psi * other.psi)) * self.grid.dx

    def decay_flags(self, tol: float = 1e-6) -> tuple[bool, bool]:
        """Whether psi is negligible at the lower and upper grid ends."""
        p = np.abs(self.psi)
        peak = p.max() if p.size else 0.0
        if peak == 0:
            return True, True
        return bool(p[0] <= tol * peak), bool(p[-1] <= tol * peak)


@dataclass(frozen=True, eq=False)
class FourierSidePair:
    dim: Dim
    u0hat: HalfLineFn
    u1hat: HalfLineFn

    def __post_init__(self):
        if self.u0hat.grid != self.u1hat.grid:
            raise ValueError("components must share a grid")

    @property
    def rho(self) -> np.ndarray:
        return self.u0hat.sigma

    def weighted(self) -> tuple[HalfLineFn, HalfLineFn]:
        """phi0 = rho**((N+1)/2) u0hat, phi1 = rho**((N-1)/2) u1hat."""
        N = self.dim.N
        rho = self.rho
        g = self.u0hat.grid
        return (HalfLineFn(g, rho ** ((N + 1) / 2) * self.u0hat.values),
                HalfLineFn(g, rho ** ((N - 1) / 2) * self.u1hat.values))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rho", "u0hat", "u1hat"])
            for row in zip(self.rho, self.u0hat.values, self.u1hat.values):
                w.writerow([repr(float(v)) for v in row])


# kernels -------------------------------------------------------------------

def _hankel_kernel(z):
    return 0.5 / np.cosh(0.5 * z)


def _laplace_kernel(z):
    return np.exp(0.5 * z - np.exp(np.minimum(z, 700.0)))


def _aligned(a: LogGrid, b: LogGrid) -> float:
    if not math.isclose(a.dx, b.dx, rel_tol=1e-12):
        raise ValueError("grids must share the log spacing")
    off = (b.x0 - a.x0) / a.dx
    if abs(off - round(off)) > 1e-6:
        raise ValueError("grids must be aligned on a common lattice")
    return b.x0 - a.x0


def _hankel_psi(psi: np.ndarray, src: LogGrid, dst: LogGrid) -> np.ndarray:
    shift = _aligned(src, dst)
    n, m = src.n, dst.n
    offs = shift + (np.arange(n + m - 1) - (n - 1)) * src.dx
    K = _hankel_kernel(offs)
    return fftconvolve(psi, K)[n - 1:n - 1 + m] * src.dx


def hankel_H(phi: HalfLineFn, out: LogGrid | None = None, check_tail: bool = True) -> HalfLineFn:
    """H phi sampled on `out` (default: the input grid)."""
    dst = phi.grid if out is None else out
    if check_tail:
        wide, k = dst.padded(2 * math.log(1.0 / TAIL_TOL) + 10.0)
        full = _hankel_psi(phi.psi, phi.grid, wide)
        inside = full[k:k + dst.n]
        tot = float(np.sum(full**2))
        if tot > 0 and float(np.sum(full**2) - np.sum(inside**2)) > TAIL_TOL**2 * tot:
            raise ValueError("output grid too short for the kernel tails of H")
        return HalfLineFn.from_psi(dst, inside)
    return HalfLineFn.from_psi(dst, _hankel_psi(phi.psi, phi.grid, dst))


def hankel_norm(phi: HalfLineFn) -> float:
    """||H phi|| over the whole half-line (output on a widely padded grid)."""
    wide, _ = phi.grid.padded()
    out = _hankel_psi(phi.psi, phi.grid, wide)
    return math.sqrt(float(np.sum(out**2)) * phi.grid.dx)


def hankel_quadratic(phi: HalfLineFn) -> float:
    """<H phi, phi>; exact for phi supported on its grid."""
    return float(np.dot(_hankel_psi(phi.psi, phi.grid, phi.grid), phi.psi)) * phi.grid.dx


def laplace_L(f: HalfLineFn, out: LogGrid | None = None, check_tail: bool = True) -> HalfLineFn:
    """(L f)(s) = int_0^inf f(t) exp(-s t) dt sampled on `out`."""
    dst = f.grid if out is None else out
    src = f.grid
    if not math.isclose(src.dx, dst.dx, rel_tol=1e-12):
        raise ValueError("grids must share the log spacing")
    n, m = src.n, dst.n
    K = _laplace_kernel(src.x0 + dst.x0 + np.arange(n + m - 1) * src.dx)
    res = fftconvolve(K, f.psi[::-1])[n - 1:n - 1 + m] * src.dx
    if check_tail:
        wide, k = dst.padded(2 * math.log(1.0 / TAIL_TOL) + 10.0)
        Kw = _laplace_kernel(src.x0 + wide.x0 + np.arange(n + wide.n - 1) * src.dx)
        full = fftconvolve(Kw, f.psi[::-1])[n - 1:n - 1 + wide.n] * src.dx
        tot = float(np.sum(full**2))
        if tot > 0 and float(tot - np.sum(res**2)) > TAIL_TOL**2 * tot:
            raise ValueError("output grid too short for the tails of L f")
    return HalfLineFn.from_psi(dst, res)


# radial Fourier transform ------------------------------------------------------

def radial_kernel(N: int, z):
    """K_N(z) = z**-nu J_nu(z), nu = (N-2)/2, continuous at z = 0."""
    nu = (N - 2) / 2
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z < 1e-6
    out[small] = 1.0 / (2**nu * special.gamma(nu + 1)) * (1 - z[small] ** 2 / (4 * (nu + 1)))
    zz = z[~small]
    out[~small] = special.jv(nu, zz) / zz**nu
    return out


def default_rho_grid(state: StatePair, dx: float = 0.02, rho_min: float = 1e-4) -> LogGrid:
    # trapezoid sampling aliases frequencies beyond pi/h; stay well below
    return LogGrid.spanning(rho_min, math.pi / (2 * state.grid.h), dx)


def radial_fourier(state: StatePair, grid: LogGrid | None = None, chunk: int = 256) -> FourierSidePair:
    """u_hat(rho) = int u(r) K_N(r rho) r**(N-1) dr by the trapezoid rule on the state grid."""
    N = state.dim.N
    g = default_rho_grid(state) if grid is None else grid
    r = state.r
    w = np.full(r.shape, state.grid.h)
    w[0] *= 0.5
    w[-1] *= 0.5
    scale = max(np.max(np.abs(state.u0)), np.max(np.abs(state.u1)))
    if scale > 0 and max(abs(state.u0[-1]), abs(state.u1[-1])) > 1e-8 * scale:
        raise ValueError("insufficient decay: data does not vanish at the grid end")
    wr = w * r ** (N - 1)
    a0 = state.u0 * wr
    a1 = state.u1 * wr
    rho = g.sigma
    h0 = np.empty(g.n)
    h1 = np.empty(g.n)
    for s in range(0, g.n, chunk):
        K = radial_kernel(N, np.outer(rho[s:s + chunk], r))
        h0[s:s + chunk] = K @ a0
        h1[s:s + chunk] = K @ a1
    return FourierSidePair(state.dim, HalfLineFn(g, h0), HalfLineFn(g, h1))


def fourier_norm_sq(f: HalfLineFn, N: int, weight_power: float = 0.0) -> float:
    """int |f|**2 rho**(N-1+weight_power) d rho on the log grid."""
    rho = f.sigma
    return float(np.sum(f.values**2 * rho ** (N + weight_power))) * f.grid.dx


# quadratic form -------------------------------------------------------------------

@dataclass(frozen=True)
class FormValue:
    value: float
    pi_part: float
    h0: float
    h1: float

    @property
    def lower_chain(self) -> float:
        """pi (|phi0|^2 + |phi1|^2) - |<H phi0, phi0>| - |<H phi1, phi1>|."""
        return self.pi_part - abs(self.h0) - abs(self.h1)


def even_exterior_form_parts(pair: FourierSidePair) -> FormValue:
    N = pair.dim.N
    if N % 2:
        raise ValueError("the Fourier-side form is for even dimensions")
    phi0, phi1 = pair.weighted()
    pi_part = math.pi * (phi0.norm() ** 2 + phi1.norm() ** 2)
    q0 = hankel_quadratic(phi0)
    q1 = hankel_quadratic(phi1)
    sign = (-1) ** (N // 2)
    return FormValue(pi_part + sign * (q0 - q1), pi_part, q0, q1)


def even_exterior_form(pair: FourierSidePair) -> float:
    return even_exterior_form_parts(pair).value


def random_fourier_pair(rng: np.random.Generator, dim: Dim, grid: LogGrid) -> FourierSidePair:
    """A pair whose weighted components are independent random test functions."""
    N = dim.N
    rho = grid.sigma
    while True:
        phi0 = random_test_function(rng, grid)
        phi1 = random_test_function(rng, grid) if rng.random() < 0.7 else HalfLineFn(grid, np.zeros(grid.n))
        if rng.random() < 0.2:
            phi0 = HalfLineFn(grid, np.zeros(grid.n))
        if phi0.norm() + phi1.norm() > 0:
            break
    return FourierSidePair(dim, HalfLineFn(grid, rho ** (-(N + 1) / 2) * phi0.values),
                           HalfLineFn(grid, rho ** (-(N - 1) / 2) * phi1.values))


@dataclass(frozen=True)
class EvenRatio:
    channel_sum: float
    form: float
    limit_error: float

    @property
    def ratio(self) -> float:
        return self.channel_sum / self.form


def even_channel_ratio(state: StatePair, t_final: float | None = None, cfl: float = 0.5,
                       dx: float = 0.02) -> EvenRatio:
    """Sum of the two channel limits at R = 0 against the Fourier-side form.

    The form carries the unspecified normalization of the Fourier side, so
    only the constancy of this ratio across states is meaningful.
    """
    from .channels import channel_report, run_both, support_radius
    from .wave_solver import SolveConfig

    if state.dim.N % 2:
        raise ValueError("even dimension required")
    rho = support_radius(state)
    T = 8.0 * rho if t_final is None else t_final
    fwd, bwd = run_both(state, SolveConfig("linear", t_final=T, cfl=cfl))
    rep = channel_report(fwd, bwd, 0.0)
    pair = radial_fourier(state, default_rho_grid(state, dx=dx))
    return EvenRatio(rep.sum_limits, even_exterior_form(pair), rep.limit_error)


# operator norm -------------------------------------------------------------------

def random_test_function(rng: np.random.Generator, grid: LogGrid) -> HalfLineFn:
    """A random mixture of log-scale bumps and truncated powers sigma**(-1/2 +- eps)."""
    x = grid.x
    psi = np.zeros(grid.n)
    for _ in range(rng.integers(1, 4)):
        if rng.random() < 0.6:
            mu = rng.uniform(-6, 6)
            s = rng.uniform(0.2, 3.0)
            psi += rng.normal() * np.exp(-0.5 * ((x - mu) / s) ** 2)
        else:
            a, b = np.sort(rng.uniform(-8, 8, 2))
            eps = rng.uniform(-0.3, 0.3)
            # sigma**(-1/2 + eps) on [e^a, e^b] is exp(eps x) in psi units
            psi += rng.normal() * np.where((x >= a) & (x <= b), np.exp(eps * (x - 0.5 * (a + b))), 0.0)
    return HalfLineFn.from_psi(grid, psi)


def rayleigh_ratio(phi: HalfLineFn) -> float:
    n = phi.norm()
    if n == 0:
        raise ValueError("ratio undefined for the zero function")
    return hankel_norm(phi) / n


def truncated_power(T: float, dx: float = 0.02) -> HalfLineFn:
    """sigma**(-1/2) restricted to [1/T, T]."""
    g = LogGrid.spanning(1.0 / T, T, dx)
    return HalfLineFn.from_psi(g, np.ones(g.n))


def truncated_power_ratio(T: float) -> float:
    """Continuum value of ||H phi|| / ||phi|| for phi = sigma**(-1/2) on [1/T, T].

    In log variables phi is the indicator of [-L/2, L/2] with L = 2 ln T, so
    ||H phi||**2 = int_{-L}^{L} (L - |z|) (k*k)(z) dz with (k*k)(z) = z / (2 sinh(z/2)).
    """
    from scipy import integrate

    L = 2.0 * math.log(T)
    kk = lambda z: 1.0 if z == 0 else z / (2.0 * math.sinh(z / 2.0))
    val = 2.0 * integrate.quad(lambda z: (L - z) * kk(z), 0.0, L, limit=400, epsabs=0.0, epsrel=1e-12)[0]
    return math.sqrt(val / L)


def hankel_laplace_check(count: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Relative L2 mismatch between H phi and L(L phi) on random log-Gaussians."""
    rng = np.random.default_rng(0) if rng is None else rng
    gin = LogGrid(-12.0, 0.02, 1201)
    gmid = LogGrid(-40.0, 0.02, 4001)
    out = []
    for _ in range(count):
        mu = rng.uniform(-5, 5)
        s = rng.uniform(0.5, 3.0)
        phi = HalfLineFn.from_psi(gin, np.exp(-0.5 * ((gin.x - mu) / s) ** 2))
        H = hankel_H(phi, check_tail=False)
        LL = laplace_L(laplace_L(phi, gmid, check_tail=False), gin, check_tail=False)
        out.append(np.linalg.norm(H.psi - LL.psi) / np.linalg.norm(H.psi))
    return np.array(out)


@dataclass(frozen=True, eq=False)
class NormCheck:
    ratios: np.ndarray

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "ratio"])
            for i, r in enumerate(self.ratios):
                w.writerow([i, repr(float(r))])


def operator_norm_check(samples: int, rng: np.random.Generator | None = None, dx: float = 0.05) -> NormCheck:
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(0) if rng is None else rng
    grid = LogGrid(-12.0, dx, int(round(24.0 / dx)) + 1)
    ratios = []
    while len(ratios) < samples:
        phi = random_test_function(rng, grid)
        if phi.norm() > 0:
            ratios.append(rayleigh_ratio(phi))
    return NormCheck(np.array(ratios))


# spherical-harmonic sectors -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Sector:
    v: StatePair
    nu: int
    N: int

    @property
    def D(self) -> int:
        return self.N + 2 * self.nu


def _origin_limit(r: np.ndarray, v: np.ndarray) -> float:
    # v is even in r; fit v(0) from the next two nodes
    return float((4 * v[1] - v[2]) / 3)


def sector_reduce(u: StatePair, nu: int) -> Sector:
    """v = r**-nu u, a radial field in dimension N + 2 nu."""
    if nu < 0 or int(nu) != nu:
        raise ValueError("harmonic degree must be a nonnegative integer")
    nu = int(nu)
    N = u.dim.N
    D = Dim(N + 2 * nu)
    if nu == 0:
        return Sector(StatePair(D, u.grid, u.u0, u.u1), 0, N)
    r = u.r
    v0 = np.zeros_like(r)
    v1 = np.zeros_like(r)
    pos = r > 0
    v0[pos] = u.u0[pos] / r[pos] ** nu
    v1[pos] = u.u1[pos] / r[pos] ** nu
    if not np.all(pos):
        v0[~pos] = _origin_limit(r, v0)
        v1[~pos] = _origin_limit(r, v1)
    return Sector(StatePair(D, u.grid, v0, v1), nu, N)


def sector_expand(v: StatePair, nu: int, N: int) -> StatePair:
    """Inverse of sector_reduce: u = r**nu v in dimension N."""
    if v.dim.N != N + 2 * nu:
        raise ValueError(f"sector field lives in dimension {v.dim.N}, expected {N + 2 * nu}")
    f = v.r ** nu
    return StatePair(Dim(N), v.grid, f * v.u0, f * v.u1)


def sector_residual(states: list, dt: float, nu: int, N: int, r_min: float = 0.5) -> float:
    """Relative residual of u_tt - Delta_N u + nu(nu+N-2) u / r**2 from three
    consecutive snapshots of the reduced field, by centred differences."""
    if len(states) != 3:
        raise ValueError("need three consecutive snapshots")
    us = [sector_expand(s, nu, N).u0 for s in states]
    h = states[0].grid.h
    r = states[0].r
    u = us[1]
    utt = (us[2] - 2 * u + us[0]) / dt**2
    ur = (u[2:] - u[:-2]) / (2 * h)
    urr = (u[2:] - 2 * u[1:-1] + u[:-2]) / h**2
    ri = r[1:-1]
    res = utt[1:-1] - urr - (N - 1) / ri * ur + nu * (nu + N - 2) / ri**2 * u[1:-1]
    mask = (ri >= r_min) & (ri <= r[-1] - 2 * h)
    scale = np.max(np.abs(utt[1:-1][mask])) + np.max(np.abs(urr[mask]))
    return float(np.max(np.abs(res[mask])) / scale) if scale > 0 else 0.0
