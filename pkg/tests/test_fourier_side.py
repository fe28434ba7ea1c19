from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from scipy import special

from radchannels.fourier_side import (FourierSidePair, HalfLineFn, LogGrid, default_rho_grid, even_channel_ratio,
                                      even_exterior_form, even_exterior_form_parts, fourier_norm_sq, hankel_H,
                                      hankel_laplace_check, hankel_norm, hankel_quadratic, laplace_L,
                                      operator_norm_check, radial_fourier, radial_kernel, random_fourier_pair,
                                      random_test_function, rayleigh_ratio, sector_expand, sector_reduce,
                                      sector_residual, truncated_power, truncated_power_ratio)
from radchannels.radial_core import Dim, RadialGrid, StatePair
from radchannels.wave_solver import SolveConfig, evolve

GOMPERTZ = 0.596347362323194074  # e * E1(1)
# independent mpmath quadratures of the continuum ratio, divided by pi
TRUNC_RATIO = {1e6: 0.936258879978, 1e10: 0.962261844585}

WIDE = LogGrid(-40.0, 0.02, int(round(54 / 0.02)) + 1)  # sigma in [e^-40, e^14]


def bump(c, w, p=4):
    def f(r):
        x = (np.asarray(r) - c) / w
        return np.where(np.abs(x) < 1, (1 - x * x) ** p, 0.0)
    return f


def window(f: HalfLineFn, lo: float, hi: float):
    m = (f.sigma >= lo) & (f.sigma <= hi)
    return f.sigma[m], f.values[m]


def test_log_grid_and_halfline_basics():
    g = LogGrid.spanning(1e-2, 1e2, 0.1)
    assert math.isclose(g.sigma[0], 1e-2) and g.sigma[-1] >= 1e2
    with pytest.raises(ValueError):
        LogGrid(0.0, 0.0, 10)
    with pytest.raises(ValueError):
        HalfLineFn(g, np.zeros(3))
    f = HalfLineFn.from_callable(g, lambda s: np.exp(-s))
    assert np.allclose(HalfLineFn.from_psi(g, f.psi).values, f.values, rtol=1e-14)
    assert f.decay_flags(1e-3) == (False, True)


def test_hankel_of_exponential_is_e1():
    phi = HalfLineFn.from_callable(WIDE, lambda s: np.exp(-s))
    H = hankel_H(phi)
    rho, val = window(H, 1e-2, 10.0)
    assert np.allclose(val, np.exp(rho) * special.exp1(rho), rtol=1e-8)
    at1 = float(np.interp(0.0, np.log(rho), val))
    assert math.isclose(at1, GOMPERTZ, rel_tol=1e-6)


def test_hankel_and_laplace_of_zero():
    g = LogGrid(-5.0, 0.05, 201)
    z = HalfLineFn(g, np.zeros(g.n))
    assert np.all(hankel_H(z).values == 0) and np.all(laplace_L(z).values == 0)


def test_hankel_symmetric():
    rng = np.random.default_rng(3)
    g = LogGrid(-10.0, 0.05, 401)
    for _ in range(10):
        a, b = random_test_function(rng, g), random_test_function(rng, g)
        lhs = hankel_H(a, check_tail=False).inner(b)
        rhs = a.inner(hankel_H(b, check_tail=False))
        assert abs(lhs - rhs) <= 1e-8 * max(abs(lhs), a.norm() * b.norm())


def test_hankel_tail_guard():
    g = LogGrid(-2.0, 0.02, 201)
    phi = HalfLineFn.from_psi(g, np.ones(g.n))
    with pytest.raises(ValueError):
        hankel_H(phi)


def test_laplace_of_exponential():
    f = HalfLineFn.from_callable(WIDE, lambda s: np.exp(-s))
    Lf = laplace_L(f)
    s, val = window(Lf, 1e-3, 1e3)
    assert np.allclose(val, 1 / (1 + s), rtol=1e-8)


def test_laplace_squared_matches_hankel_on_exponential():
    g = WIDE
    f = HalfLineFn.from_callable(g, lambda s: 1 / (1 + s))
    LL = laplace_L(f, check_tail=False)
    rho, val = window(LL, 1e-2, 10.0)
    assert np.allclose(val, np.exp(rho) * special.exp1(rho), rtol=1e-6)


def test_h_equals_l_squared_on_test_set():
    assert np.max(hankel_laplace_check(50, np.random.default_rng(1))) <= 1e-6


def test_operator_norm_strict_on_random_functions():
    chk = operator_norm_check(1000, np.random.default_rng(7))
    assert chk.ratios.size == 1000
    assert np.all(chk.ratios > 0)
    assert chk.max_ratio < math.pi - 0.05
    with pytest.raises(ValueError):
        operator_norm_check(0)


def test_norm_check_csv(tmp_path):
    chk = operator_norm_check(5)
    chk.to_csv(tmp_path / "n.csv")
    rows = list(csv.reader(open(tmp_path / "n.csv")))
    assert rows[0] == ["sample_id", "ratio"] and len(rows) == 6


def test_truncated_power_closed_form_oracle():
    for T, ref in TRUNC_RATIO.items():
        assert math.isclose(truncated_power_ratio(T) / math.pi, ref, rel_tol=1e-9)


def test_truncated_power_family_discrete():
    vals = {}
    for T in (1e2, 1e6, 1e10):
        vals[T] = rayleigh_ratio(truncated_power(T, dx=0.05))
        assert abs(vals[T] / truncated_power_ratio(T) - 1) <= 3e-3
        assert vals[T] < math.pi
    assert vals[1e2] < vals[1e6] < vals[1e10]
    assert vals[1e10] >= 0.95 * math.pi


def test_rayleigh_ratio_zero_raises():
    g = LogGrid(-1.0, 0.1, 21)
    with pytest.raises(ValueError):
        rayleigh_ratio(HalfLineFn(g, np.zeros(g.n)))


def test_radial_kernel_continuity():
    for N in (4, 6):
        z = np.array([0.0, 5e-7, 2e-6])
        k = radial_kernel(N, z)
        assert np.allclose(k, k[0], rtol=1e-9)
        assert math.isclose(k[0], 1 / (2 ** ((N - 2) / 2) * special.gamma(N / 2)))


def test_gaussian_self_reciprocal_n4():
    g = RadialGrid.covering(12.0, 1 / 64)
    s = StatePair.sample(Dim(4), g, lambda r: np.exp(-np.asarray(r) ** 2 / 2))
    pair = radial_fourier(s, LogGrid.spanning(1e-3, 8.0, 0.05))
    # trapezoid endpoint error at r = 0 is O(h**4) since r**3 times an even function is odd
    assert np.allclose(pair.u0hat.values, np.exp(-pair.rho**2 / 2), rtol=1e-9, atol=1e-9)
    assert np.all(pair.u1hat.values == 0)


def test_fourier_of_zero_and_decay_guard():
    g = RadialGrid.covering(4.0, 1 / 16)
    pair = radial_fourier(StatePair.zeros(Dim(4), g))
    assert np.all(pair.u0hat.values == 0)
    with pytest.raises(ValueError):
        radial_fourier(StatePair.sample(Dim(4), g, lambda r: 1 / (1 + np.asarray(r))))


@pytest.mark.parametrize("N", [4, 6])
def test_parseval_constant(N):
    rng = np.random.default_rng(N)
    g = RadialGrid.covering(6.0, 1 / 64)
    ratios = []
    for _ in range(20):
        c, w = rng.uniform(1.0, 3.0), rng.uniform(0.5, 1.5)
        s = StatePair.sample(Dim(N), g, bump(c, w, 6), bump(rng.uniform(1, 3), 0.8, 6))
        pair = radial_fourier(s, default_rho_grid(s, dx=0.02, rho_min=1e-3))
        lhs = float(np.sum(s.u0**2 * s.r ** (N - 1))) * g.h
        ratios.append(lhs / fourier_norm_sq(pair.u0hat, N))
    assert np.allclose(ratios, 1.0, rtol=5e-3)


def test_form_zero_and_sign_invariance():
    g = LogGrid(-8.0, 0.05, 321)
    z = HalfLineFn(g, np.zeros(g.n))
    assert even_exterior_form(FourierSidePair(Dim(4), z, z)) == 0.0
    rng = np.random.default_rng(11)
    pair = random_fourier_pair(rng, Dim(4), g)
    v = even_exterior_form(pair)
    neg0 = FourierSidePair(pair.dim, HalfLineFn(g, -pair.u0hat.values), pair.u1hat)
    both = FourierSidePair(pair.dim, HalfLineFn(g, -pair.u0hat.values), HalfLineFn(g, -pair.u1hat.values))
    assert math.isclose(even_exterior_form(neg0), v, rel_tol=1e-12)
    assert math.isclose(even_exterior_form(both), v, rel_tol=1e-12)
    with pytest.raises(ValueError):
        even_exterior_form(FourierSidePair(Dim(5), z, z))


@pytest.mark.parametrize("N", [4, 6])
def test_form_positive_and_respects_chain(N):
    rng = np.random.default_rng(100 + N)
    g = LogGrid(-12.0, 0.05, 481)
    for _ in range(100):
        pair = random_fourier_pair(rng, Dim(N), g)
        parts = even_exterior_form_parts(pair)
        phi0, phi1 = pair.weighted()
        assert abs(parts.h0) <= hankel_norm(phi0) * phi0.norm() * (1 + 1e-12)
        assert abs(parts.h1) <= hankel_norm(phi1) * phi1.norm() * (1 + 1e-12)
        assert parts.lower_chain > 0
        assert parts.value >= parts.lower_chain * (1 - 1e-12)
        assert parts.value > 0
        assert math.isclose(hankel_quadratic(phi0), parts.h0)


def test_time_domain_ratio_constant_n4():
    rng = np.random.default_rng(5)
    ratios = []
    for _ in range(3):
        c, w = rng.uniform(1.5, 2.5), rng.uniform(0.6, 1.0)
        g = RadialGrid.covering(9 * (c + w) + 2.0, 1 / 128)
        s = StatePair.sample(Dim(4), g, lambda r: rng.normal() * bump(c, w)(r), bump(c, w))
        ratios.append(even_channel_ratio(s).ratio)
    assert np.ptp(ratios) <= 0.05 * np.mean(ratios)
    assert math.isclose(np.mean(ratios), 1 / math.pi, rel_tol=0.05)


def test_sector_identity_and_inverse():
    g = RadialGrid.covering(4.0, 1 / 32)
    u = StatePair.sample(Dim(4), g, lambda r: np.asarray(r) ** 2 * np.exp(-np.asarray(r) ** 2))
    s0 = sector_reduce(u, 0)
    assert s0.D == 4 and np.array_equal(s0.v.u0, u.u0)
    s2 = sector_reduce(u, 2)
    assert s2.D == 8 and s2.v.dim.N == 8
    assert np.allclose(s2.v.u0, np.exp(-g.r**2), atol=1e-6)
    back = sector_expand(s2.v, 2, 4)
    assert np.allclose(back.u0, u.u0, atol=1e-15)
    with pytest.raises(ValueError):
        sector_reduce(u, -1)
    with pytest.raises(ValueError):
        sector_expand(s2.v, 1, 4)


def test_sector_evolution_n4_nu1():
    h = 1 / 128
    g = RadialGrid.covering(10.0, h)
    u = StatePair.sample(Dim(4), g, lambda r: np.asarray(r) * bump(2.0, 1.0)(r))
    sec = sector_reduce(u, 1)
    assert sec.D == 6
    traj = evolve(sec.v, SolveConfig(t_final=3.0, snapshot_every=1))
    k = len(traj.states) // 2
    dt = traj.dt
    res = sector_residual(traj.states[k - 1:k + 2], dt, 1, 4)
    assert res <= 1e-3
    final = sector_expand(traj.final(), 1, 4)
    ext = float(np.sum((np.gradient(final.u0, h) ** 2 + final.u1**2)[final.r > 3.0] * final.r[final.r > 3.0] ** 3)) * h
    assert ext > 0


def test_pair_csv(tmp_path):
    g = LogGrid(-2.0, 0.5, 9)
    pair = FourierSidePair(Dim(4), HalfLineFn(g, np.arange(9.0)), HalfLineFn(g, np.ones(9)))
    pair.to_csv(tmp_path / "p.csv")
    rows = list(csv.reader(open(tmp_path / "p.csv")))
    assert rows[0] == ["rho", "u0hat", "u1hat"] and len(rows) == 10
    assert float(rows[3][1]) == 2.0
