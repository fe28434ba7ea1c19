"""The nonradiative power space P(R): generators, Gram matrices, projection."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .radial_core import Dim, Soliton, StatePair, _half_line_quad, check_support, trapezoid_from

POSITION = "position"
VELOCITY = "velocity"
# sampled moments and exact Gram entries mix two quadratures; allow their O(h^2) mismatch
RESIDUAL_TOL = 1e-9
CANCEL_FLOOR = 1e-12


@dataclass(frozen=True)
class PowerPair:
    """coeff * (r**-a, 0) or coeff * (0, r**-a)."""

    slot: str
    a: float
    coeff: float = 1.0

    def __post_init__(self):
        if self.slot not in (POSITION, VELOCITY):
            raise ValueError(f"slot must be {POSITION!r} or {VELOCITY!r}")
        if not self.a > 0:
            raise ValueError("decay exponent must be positive")

    def finite_in(self, N: int) -> bool:
        if self.slot == POSITION:
            return 2 * self.a + 2 - N > 0
        return 2 * self.a - N > 0

    def scaled(self, c: float) -> "PowerPair":
        return PowerPair(self.slot, self.a, c * self.coeff)

    def u0(self, r):
        r = np.asarray(r, dtype=float)
        return self.coeff * r ** (-self.a) if self.slot == POSITION else np.zeros_like(r)

    def du0(self, r):
        r = np.asarray(r, dtype=float)
        return -self.a * self.coeff * r ** (-self.a - 1) if self.slot == POSITION else np.zeros_like(r)

    def u1(self, r):
        r = np.asarray(r, dtype=float)
        return self.coeff * r ** (-self.a) if self.slot == VELOCITY else np.zeros_like(r)


def power_inner(p: PowerPair, q: PowerPair, N: int, R: float) -> float:
    """Closed-form H(R) inner product of two power pairs."""
    if p.slot != q.slot:
        return 0.0
    a, b = p.a, q.a
    if p.slot == POSITION:
        e = a + b + 2 - N
        val = a * b / e
    else:
        e = a + b - N
        val = 1.0 / e
    if e <= 0:
        raise ValueError(f"divergent H(R) integral for exponents {a}, {b} in dimension {N}")
    return p.coeff * q.coeff * val * R ** (-e)


def free_evolve_powers(powers, N: int, t: float) -> tuple[PowerPair, ...]:
    """Exact linear evolution of a finite sum of power pairs (valid for r > |t|).

    Uses u(t) = sum_j t**(2j)/(2j)! L^j u0 + t**(2j+1)/(2j+1)! L^j u1 with
    L r**p = p(p+N-2) r**(p-2); the series terminates for the generators of P(R).
    """
    acc: dict[tuple[str, float], float] = {}

    def add(slot, a, c):
        if c != 0.0:
            acc[(slot, a)] = acc.get((slot, a), 0.0) + c

    for pw in powers:
        p = -pw.a
        c = pw.coeff
        own = pw.slot
        # position data: u = sum t^2j/(2j)! L^j f, u_t = sum t^(2j-1)/(2j-1)! L^j f
        # velocity data: u = sum t^(2j+1)/(2j+1)! L^j g, u_t = sum t^2j/(2j)! L^j g
        j = 0
        coef = c
        while coef != 0.0 and j < 64:
            e = -(p - 2 * j)
            if own == POSITION:
                add(POSITION, e, coef * t ** (2 * j) / math.factorial(2 * j))
                if j > 0:
                    add(VELOCITY, e, coef * t ** (2 * j - 1) / math.factorial(2 * j - 1))
            else:
                add(VELOCITY, e, coef * t ** (2 * j) / math.factorial(2 * j))
                add(POSITION, e, coef * t ** (2 * j + 1) / math.factorial(2 * j + 1))
            q = p - 2 * j
            coef = coef * q * (q + N - 2)
            j += 1
        if coef != 0.0:
            raise ValueError("power series of the free evolution does not terminate")
    return tuple(PowerPair(s, a, c) for (s, a), c in sorted(acc.items()))


@dataclass(frozen=True, eq=False)
class TailedState:
    """Data on r > R given as analytic tail (powers, soliton) plus sampled part.

    The sampled part lives on a finite grid and is taken as zero beyond it.
    """

    dim: Dim
    powers: tuple = ()
    soliton: Soliton | None = None
    sampled: StatePair | None = None

    def __post_init__(self):
        object.__setattr__(self, "powers", tuple(self.powers))
        if self.soliton is not None and self.soliton.dim != self.dim:
            raise ValueError("soliton dimension mismatch")
        if self.sampled is not None and self.sampled.dim != self.dim:
            raise ValueError("sampled part dimension mismatch")

    @classmethod
    def of(cls, obj, dim: Dim | None = None) -> "TailedState":
        if isinstance(obj, TailedState):
            return obj
        if isinstance(obj, StatePair):
            return cls(obj.dim, sampled=obj)
        if isinstance(obj, Soliton):
            return cls(obj.dim, soliton=obj)
        if isinstance(obj, PowerPair):
            if dim is None:
                raise ValueError("a bare power pair needs a dimension")
            return cls(dim, powers=(obj,))
        raise TypeError(f"cannot interpret {type(obj).__name__} as radial data")

    @property
    def has_analytic(self) -> bool:
        return bool(self.powers) or self.soliton is not None

    def analytic_u0(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        if self.soliton is not None:
            out = out + self.soliton.u0(r)
        for p in self.powers:
            out = out + p.u0(r)
        return out

    def analytic_du0(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        if self.soliton is not None:
            out = out + self.soliton.du0(r)
        for p in self.powers:
            out = out + p.du0(r)
        return out

    def analytic_u1(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for p in self.powers:
            out = out + p.u1(r)
        return out

    def sample(self, grid) -> StatePair:
        """Values at grid nodes; analytic parts are evaluated where r > 0."""
        r = grid.r
        u0 = np.zeros_like(r)
        u1 = np.zeros_like(r)
        if self.has_analytic:
            pos = r > 0
            u0[pos] = self.analytic_u0(r[pos])
            u1[pos] = self.analytic_u1(r[pos])
        if self.sampled is not None:
            if self.sampled.grid != grid:
                raise ValueError("sampled part lives on a different grid")
            u0 += self.sampled.u0
            u1 += self.sampled.u1
        return StatePair(self.dim, grid, u0, u1)

    def __add__(self, other: "TailedState") -> "TailedState":
        if self.soliton is not None and other.soliton is not None:
            raise ValueError("sum of two solitons is not representable")
        if self.sampled is not None and other.sampled is not None:
            sampled = self.sampled + other.sampled
        else:
            sampled = self.sampled if self.sampled is not None else other.sampled
        return TailedState(self.dim, self.powers + other.powers,
                           self.soliton if self.soliton is not None else other.soliton, sampled)

    # inner products --------------------------------------------------------

    def _sampled_density_with(self, R: float, du0, u1) -> float:
        s = self.sampled
        r = s.r
        if R > s.grid.r_end:
            return 0.0
        mask = r > 0
        a0 = np.zeros_like(r)
        a1 = np.zeros_like(r)
        a0[mask] = du0(r[mask])
        a1[mask] = u1(r[mask])
        f = (np.gradient(s.u0, s.grid.h) * a0 + s.u1 * a1) * r ** (self.dim.N - 1)
        return trapezoid_from(r, f, max(R, s.grid.r0))

    def _check_sampled(self, R: float):
        s = self.sampled
        if R < s.grid.r0 - 1e-12:
            raise ValueError(f"R={R} below the sampled grid start {s.grid.r0}")
        check_support(s)

    def _analytic_norm_sq(self, R: float) -> float:
        N = self.dim.N
        if self.soliton is None:
            return float(sum(power_inner(p, q, N, R) for p in self.powers for q in self.powers))
        f = lambda s: (self.analytic_du0(s) ** 2 + self.analytic_u1(s) ** 2) * s ** (N - 1)
        return _half_line_quad(f, R)

    def h_norm_sq(self, R: float) -> float:
        total = 0.0
        if self.has_analytic:
            total += self._analytic_norm_sq(R)
        if self.sampled is not None:
            self._check_sampled(R)
            s = self.sampled
            if R < s.grid.r_end:
                total += trapezoid_from(s.r, s.energy_density(), max(R, s.grid.r0))
                if self.has_analytic:
                    total += 2 * self._sampled_density_with(R, self.analytic_du0, self.analytic_u1)
        return float(total)

    def inner_power(self, p: PowerPair, R: float) -> float:
        """<self, p> in H(R)."""
        N = self.dim.N
        val = sum(power_inner(q, p, N, R) for q in self.powers)
        if self.soliton is not None and p.slot == POSITION:
            f = lambda s: self.soliton.du0(s) * p.du0(s) * s ** (N - 1)
            val += _half_line_quad(f, R)
        if self.sampled is not None:
            self._check_sampled(R)
            val += self._sampled_density_with(R, p.du0, p.u1)
        return float(val)


# basis ------------------------------------------------------------------

@dataclass(frozen=True)
class PBasis:
    dim: Dim
    elements: tuple
    c: tuple

    @property
    def m(self) -> int:
        return len(self.elements)

    def scales(self, R: float) -> np.ndarray:
        """R**-(k-1/2), k = 1..m."""
        k = np.arange(1, self.m + 1)
        return R ** (-(k - 0.5))


def build_basis(dim: Dim) -> PBasis:
    N = dim.N
    if N % 2 == 0:
        raise ValueError("P(R) is only characterized for odd dimensions")
    m = dim.m
    slots: dict[int, PowerPair] = {}
    for k1 in range(1, (N + 2) // 4 + 1):
        slots[(N + 3) // 2 - 2 * k1] = PowerPair(POSITION, N - 2 * k1)
    for k2 in range(1, N // 4 + 1):
        slots[(N + 1) // 2 - 2 * k2] = PowerPair(VELOCITY, N - 2 * k2)
    if sorted(slots) != list(range(1, m + 1)):
        raise AssertionError("basis index bookkeeping failed")
    elements = tuple(slots[k] for k in range(1, m + 1))
    c = tuple(math.sqrt(power_inner(e, e, N, 1.0)) for e in elements)
    return PBasis(dim, elements, c)


def gram(basis: PBasis, R: float) -> np.ndarray:
    if not R > 0:
        raise ValueError("R must be positive")
    N = basis.dim.N
    els = basis.elements
    return np.array([[power_inner(p, q, N, R) for q in els] for p in els])


@dataclass(frozen=True, eq=False)
class PElement:
    basis: PBasis
    theta: np.ndarray
    R: float

    def __post_init__(self):
        th = np.array(self.theta, dtype=float)
        if th.shape != (self.basis.m,) or not np.all(np.isfinite(th)):
            raise ValueError("coordinates must be a finite vector of length m")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    def powers(self) -> tuple[PowerPair, ...]:
        return tuple(e.scaled(t) for e, t in zip(self.basis.elements, self.theta) if t != 0.0)

    def to_state(self) -> TailedState:
        return TailedState(self.basis.dim, powers=self.powers())

    def norm_sq(self, R: float | None = None) -> float:
        R = self.R if R is None else R
        return float(self.theta @ gram(self.basis, R) @ self.theta)


@dataclass(frozen=True, eq=False)
class Projection:
    element: PElement
    residual_sq: float
    norm_sq: float

    @property
    def theta(self) -> np.ndarray:
        return self.element.theta


def _solve_scaled(basis: PBasis, R: float, b: np.ndarray) -> np.ndarray:
    # G(R) = D G(1) D with D = diag(R**-(k-1/2)); solve in the well-scaled frame.
    d = basis.scales(R)
    y = linalg.solve(gram(basis, 1.0), b / d, assume_a="pos")
    return y / d


def project(state, basis: PBasis, R: float) -> Projection:
    """Orthogonal projection onto P(R) in H(R) and the squared residual."""
    data = TailedState.of(state, basis.dim)
    if data.dim != basis.dim:
        raise ValueError("state and basis dimensions differ")
    b = np.array([data.inner_power(e, R) for e in basis.elements])
    theta = _solve_scaled(basis, R, b)
    norm_sq = data.h_norm_sq(R)
    if data.soliton is not None:
        # direct norm of the difference avoids cancellation for tails close to P(R)
        diff = TailedState(data.dim, data.powers + tuple(p.scaled(-1.0) for p in PElement(basis, theta, R).powers()),
                           data.soliton, data.sampled)
        resid = diff.h_norm_sq(R)
    else:
        resid = norm_sq - float(theta @ b)
        # below this the subtraction carries no information
        if abs(resid) <= CANCEL_FLOOR * norm_sq:
            resid = 0.0
    if resid < 0:
        if resid < -RESIDUAL_TOL * norm_sq:
            raise ArithmeticError(f"negative projection residual {resid:g} (norm {norm_sq:g})")
        resid = 0.0
    return Projection(PElement(basis, theta, R), float(resid), float(norm_sq))


def coord_norm_equiv(element: PElement, R: float | None = None) -> float:
    """||U||_{H(R)} divided by sum_k |theta_k| / R**(k-1/2); 1 for theta = 0."""
    R = element.R if R is None else R
    big = float(np.max(np.abs(element.theta)))
    if big == 0.0:
        return 1.0
    # normalize first so tiny or huge coordinates do not under/overflow
    unit = PElement(element.basis, element.theta / big, R)
    s = float(np.sum(np.abs(unit.theta) * unit.basis.scales(R)))
    return math.sqrt(max(unit.norm_sq(R), 0.0)) / s


def coord_equiv_window(basis: PBasis) -> tuple[float, float]:
    """Bounds valid for every coordinate vector and every R."""
    ev = np.linalg.eigvalsh(gram(basis, 1.0))
    return math.sqrt(ev[0] / basis.m), math.sqrt(ev[-1])


@dataclass(frozen=True, eq=False)
class SweepRow:
    R: float
    theta: np.ndarray
    residual_sq: float
    norm_sq: float


def dyadic_sweep(state, basis: PBasis, R0: float, levels: int) -> list[SweepRow]:
    """Projections at R0 * 2**n for n = 0..levels-1."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    rows = []
    for n in range(levels):
        R = R0 * 2.0**n
        p = project(state, basis, R)
        rows.append(SweepRow(R, p.theta, p.residual_sq, p.norm_sq))
    return rows


def write_sweep_csv(rows: list[SweepRow], m: int, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["R"] + [f"theta_{k}" for k in range(1, m + 1)] + ["residual_sq"])
        for row in rows:
            w.writerow([repr(float(row.R))] + [repr(float(t)) for t in row.theta] + [repr(float(row.residual_sq))])
