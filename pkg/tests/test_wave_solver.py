from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from radchannels.channels import support_radius
from radchannels.pspace import PowerPair, POSITION, TailedState
from radchannels.radial_core import Dim, RadialGrid, Soliton, StatePair, exterior_norm_sq, nonlinear_energy
from radchannels.verification import soliton_drift
from radchannels.wave_solver import (BlowupSuspected, ProfileData, SolveConfig, canonical_extension,
                                     convergence_order, evolve, evolve_exterior, exact_n3, linear_energy, stable_cfl)


def gauss(r):
    return np.exp(-np.asarray(r) ** 2)


def gauss_n3(t, r):
    r = np.asarray(r, dtype=float)
    return exact_n3(gauss, t, r)


def h0_err(s: StatePair, ref) -> float:
    d = StatePair(s.dim, s.grid, s.u0 - ref, np.zeros_like(ref))
    return math.sqrt(exterior_norm_sq(d, 0.0, check=False))


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(cfl=0.95)
    with pytest.raises(ValueError):
        SolveConfig("cubic")
    with pytest.raises(ValueError):
        SolveConfig("truncated")
    with pytest.raises(ValueError):
        SolveConfig(t_final=-1.0)


def test_cfl_bound_enforced():
    for N in (3, 4, 5, 7):
        assert 0.5 < stable_cfl(N) <= 2.0
    g = RadialGrid.covering(4.0, 1 / 32)
    zero = StatePair.zeros(Dim(3), g)
    assert stable_cfl(3) < 0.85
    with pytest.raises(ValueError, match="CFL"):
        evolve(zero, SolveConfig(t_final=0.5, cfl=0.85))


def test_zero_data_stays_zero():
    g = RadialGrid.covering(4.0, 1 / 32)
    traj = evolve(StatePair.zeros(Dim(5), g), SolveConfig("full", t_final=1.0))
    assert all(np.all(s.u0 == 0) and np.all(s.u1 == 0) for s in traj.states)
    assert np.all(np.diff(traj.times) > 0)


def test_exact_n3_examples():
    r = np.array([0.3, 1.0, 2.5])
    assert np.array_equal(exact_n3(gauss, 0.0, r), gauss(r))
    t = 0.7
    expected = ((r + t) * gauss(r + t) + (r - t) * gauss(r - t)) / (2 * r)
    assert np.allclose(exact_n3(gauss, t, r), expected, rtol=1e-15)
    inv = lambda s: 1 / np.asarray(s)
    rr = np.array([1.5, 3.0, 10.0])
    assert np.allclose(exact_n3(inv, 1.2, rr), 1 / rr, rtol=1e-15)


def test_exact_n3_velocity_and_origin():
    r = np.array([0.5, 1.0, 2.0])
    F1 = lambda s: -0.5 * np.exp(-s * s)
    a = exact_n3(gauss, 0.8, r, f1=gauss, F1=F1)
    b = exact_n3(gauss, 0.8, r, f1=gauss)
    assert np.allclose(a, b, rtol=1e-12)
    # r = 0 is the continuous limit
    assert math.isclose(exact_n3(gauss, 0.8, 0.0, f1=gauss), exact_n3(gauss, 0.8, 1e-5, f1=gauss), rel_tol=1e-6)
    # negative time reverses the velocity contribution
    assert np.allclose(exact_n3(gauss, -0.8, r, f1=gauss), exact_n3(gauss, 0.8, r, f1=lambda s: -gauss(s)))


def test_gaussian_matches_dalembert():
    g = RadialGrid.covering(8.0, 1 / 512)
    traj = evolve(StatePair.sample(Dim(3), g, gauss), SolveConfig(t_final=1.0))
    assert h0_err(traj.final(), gauss_n3(1.0, g.r)) <= 1e-4


def test_convergence_order_linear():
    res = convergence_order(ProfileData(Dim(3), gauss), SolveConfig(t_final=1.0, r_max=8.0), 1 / 32,
                            refinements=3, exact=gauss_n3)
    assert res.conclusive and 1.8 <= res.order <= 2.2


def test_convergence_order_zero_flagged():
    zero = ProfileData(Dim(3), lambda r: np.zeros_like(r))
    res = convergence_order(zero, SolveConfig(t_final=0.5, r_max=4.0), 1 / 16, refinements=3)
    assert not res.conclusive and math.isnan(res.order)


def test_convergence_order_nonlinear_w():
    W = Soliton(Dim(5))
    wb = float(W.u0(20.0))
    res = convergence_order(W, SolveConfig("full", t_final=1.0, r_max=20.0), 1 / 8, refinements=4,
                            boundary=lambda t: (wb, 0.0))
    assert res.conclusive and 1.8 <= res.order <= 2.2


def test_soliton_stationarity():
    assert soliton_drift(Dim(5), 1 / 128) <= 1e-2


def test_linear_energy_drift():
    g = RadialGrid.covering(10.0, 1 / 256)
    init = StatePair.sample(Dim(5), g, gauss, lambda r: r * gauss(r))
    traj = evolve(init, SolveConfig(t_final=2.0))
    e = np.array([linear_energy(s) for s in traj.states])
    assert np.max(np.abs(e / e[0] - 1)) <= 5e-3


def test_nonlinear_energy_drift():
    g = RadialGrid.covering(10.0, 1 / 256)
    init = StatePair.sample(Dim(3), g, lambda r: 0.5 * gauss(r))
    traj = evolve(init, SolveConfig("full", t_final=2.0))
    assert max(np.max(np.abs(s.u0)) for s in traj.states) <= 10
    e = np.array([nonlinear_energy(s, check=False) for s in traj.states])
    assert np.max(np.abs(e / e[0] - 1)) <= 5e-3


@pytest.mark.parametrize("N", [3, 4, 5])
def test_finite_speed(N):
    g = RadialGrid.covering(8.0, 1 / 128)
    rho0 = 1.0
    bump = lambda r: np.where(r < rho0, (1 - np.asarray(r) ** 2) ** 8, 0.0)
    cfg = SolveConfig(t_final=2.0)
    traj = evolve(StatePair.sample(Dim(N), g, bump), cfg)
    for t, s in zip(traj.times, traj.states):
        # physical cone, up to a precursor far below the data
        assert support_radius(s, tol=1e-6) <= rho0 + t + 2 * g.h
        # exact zeros outside the stencil's domain of dependence
        assert support_radius(s, tol=0.0) <= rho0 + t / cfg.cfl + g.h


def test_time_symmetry():
    g = RadialGrid.covering(8.0, 1 / 64)
    d = Dim(5)
    a = StatePair.sample(d, g, gauss, lambda r: np.sin(r) * gauss(r))
    fwd = evolve(a, SolveConfig("full", t_final=1.0))
    bwd = evolve(a.time_reversed(), SolveConfig("full", t_final=1.0), direction=-1)
    assert np.allclose(bwd.times, -fwd.times)
    for s, q in zip(fwd.states, bwd.states):
        assert np.allclose(q.u0, s.u0, rtol=0, atol=1e-13)
        assert np.allclose(q.u1, -s.u1, rtol=0, atol=1e-13)


def test_cfl_and_guard_errors():
    g = RadialGrid.covering(3.0, 1 / 32)
    wide = StatePair.sample(Dim(3), g, lambda r: 1 / (1 + np.asarray(r)))
    with pytest.raises(ValueError):
        evolve(wide, SolveConfig(t_final=1.0))
    with pytest.raises(ValueError):
        evolve(StatePair.zeros(Dim(3), RadialGrid(1.0, 0.1, 20)), SolveConfig())
    with pytest.raises(ValueError):
        evolve(StatePair.zeros(Dim(3), g), SolveConfig(r_max=5.0))


def test_blowup_aborts_with_partial_trajectory():
    g = RadialGrid.covering(10.0, 1 / 64)
    init = StatePair.sample(Dim(3), g, lambda r: 4 * gauss(r))
    with pytest.raises(BlowupSuspected) as info:
        evolve(init, SolveConfig("full", t_final=2.0))
    assert "type I blow-up suspected" in str(info.value) or "non-finite" in str(info.value)
    part = info.value.trajectory
    assert part.times[-1] < 2.0 and len(part.states) == len(part.times)
    assert np.all(np.isfinite(part.final().u0))


def test_canonical_extension_shape():
    r = np.linspace(0.0, 2.0, 9)
    u0, u1 = canonical_extension(r, 2.0, 1.0, -0.5)
    assert u0[-1] == 1.0 and np.all(u1 == 0)
    assert np.all(u0[r <= 1.0] == u0[0])
    slope = np.gradient(u0, r)
    assert math.isclose(slope[-1], -0.5, rel_tol=0.2)


def test_exterior_tail_is_stationary_n3():
    d = Dim(3)
    g = RadialGrid.covering(12.0, 1 / 64)
    data = TailedState(d, powers=(PowerPair(POSITION, 1.0),))
    run = evolve_exterior(data, 2.0, SolveConfig(t_final=3.0), g)
    for t, s in zip(run.trajectory.times, run.trajectory.states):
        mask = s.r >= run.trusted_from(t)
        assert np.allclose(s.u0[mask], 1 / s.r[mask], rtol=1e-5, atol=0)


def test_two_extensions_agree_in_trusted_region():
    d = Dim(5)
    g = RadialGrid.covering(12.0, 1 / 64)
    bump = StatePair.sample(d, g, lambda r: np.where(np.abs(r - 3) < 1, (1 - (r - 3) ** 2) ** 4, 0.0))
    data = TailedState(d, powers=(PowerPair(POSITION, 3.0, 0.5),), sampled=bump)

    def other(r, R, u0R, g):
        return u0R * np.cos(r) ** 2, np.sin(r)

    cfg = SolveConfig("truncated", t_final=2.0, R_cone=2.0)
    a = evolve_exterior(data, 2.0, cfg, g)
    b = evolve_exterior(data, 2.0, cfg, g, extension=other)
    for t, sa, sb in zip(a.trajectory.times, a.trajectory.states, b.trajectory.states):
        mask = sa.r >= a.trusted_from(t)
        assert np.max(np.abs(sa.u0[mask] - sb.u0[mask])) <= 1e-10
        assert np.max(np.abs(sa.u1[mask] - sb.u1[mask])) <= 1e-10


def test_w_exterior_stationary_n5():
    d = Dim(5)
    g = RadialGrid.covering(30.0, 1 / 64)
    W = Soliton(d)
    run = evolve_exterior(TailedState(d, soliton=W), 2.0, SolveConfig("truncated", t_final=3.0, R_cone=2.0), g)
    for t, s in zip(run.trajectory.times, run.trajectory.states):
        mask = s.r >= run.trusted_from(t)
        assert np.max(np.abs(s.u0[mask] - W.u0(s.r[mask]))) <= 1e-3 * float(W.u0(2.0))
        assert np.max(np.abs(s.u1[mask])) <= 1e-3


def test_export(tmp_path):
    g = RadialGrid.covering(6.0, 1 / 16)
    traj = evolve(StatePair.sample(Dim(3), g, gauss), SolveConfig(t_final=0.5, n_snapshots=4))
    out = traj.export(tmp_path / "run")
    with open(out / "index.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "filename"] and len(rows) == len(traj.times) + 1
    assert [float(x[0]) for x in rows[1:]] == list(traj.times)
    back = StatePair.from_csv(out / rows[-1][1], Dim(3))
    assert np.array_equal(back.u0, traj.final().u0)
    cfg = (out / "config.txt").read_text()
    assert "nonlinearity = linear" in cfg and "t_final = 0.5" in cfg


def test_trajectory_lookup():
    g = RadialGrid.covering(6.0, 1 / 16)
    traj = evolve(StatePair.sample(Dim(3), g, gauss), SolveConfig(t_final=0.5, n_snapshots=4))
    assert traj.at(traj.times[2]) is traj.states[2]
    with pytest.raises(KeyError):
        traj.at(0.123456)
