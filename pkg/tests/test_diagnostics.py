"""Functional and accumulator diagnostics.

Frozen oracle values, each derived by hand:

  - weighted mass of u=1, v=M, p=2 on the unit interval: the weight rate is
    gamma = (p-1)/(12 p M^2) so gamma M^2 = 1/24 and the value is exp(1/24).
  - certificate weight, exponential phi at p=2, eta1=eta2=1/2, s=M=1/6:
    gamma = 1/(24 M^2) = 3/2, and
    g/phi = 1/2 + 2 gamma s + 8 gamma^2 s^2 - gamma - 2 gamma^2 s^2
          = 1/2 + 1/2 + 1/2 - 3/2 - 1/8 = -1/8,
    hence g(M) = -exp(1/24)/8.
  - Dirichlet energy of sqrt(2+cos(pi x)) on (0,1):
    int pi^2 sin^2(pi x) / (4 (2+cos(pi x))) dx = (pi^2/4) pi^{-1} *
    int_0^pi sin^2 t/(2+cos t) dt = (pi^2/4)(2-sqrt(3)) using
    int_0^{2pi} sin^2 t/(a+cos t) dt = 2 pi (a - sqrt(a^2-1)).
  - Fisher information of 2+cos(pi x):
    int pi^2 sin^2/(2+cos)^2 = pi^2 (2/sqrt(3) - 1), by differentiating the
    same closed form in a.
  - largest feasible sublinear exponent at M=1: bracketed by evaluating the
    margin at p=0.06 (negative) and p=0.065 (positive), so p0 is near 0.0615;
    the test cross-checks against a 1e-6-resolution scan of the margin
    written out independently below.
"""

import dataclasses
import math

import numpy as np
import pytest

from chis.diagnostics import (
    DiagnosticsConfig,
    accumulate_spacetime,
    compute_p0,
    dirichlet_p,
    duhamel_w_residual,
    fisher_information,
    g_phi_field,
    gn_ratio,
    lyapunov_exponential,
    sublinear_functional,
    trapezoid_w_gap,
)
from chis.grid import Field, GridSpec, integrate
from chis.operators import gradient_sq
from chis.stepper import ModelParams, StepConfig, run


def grid1d(n, length=1.0):
    return GridSpec(dim=1, extent=(length,), cells=(n,))


def centers(g):
    return g.cell_centers()[0]


def cosine(g, k, amp, offset):
    return Field(g, offset + amp * np.cos(k * np.pi * centers(g)))


# --- weighted masses -------------------------------------------------------


def test_lyapunov_exponential_constant_fields():
    g = grid1d(16)
    M = 0.25
    val = lyapunov_exponential(Field.full(g, 1.0), Field.full(g, M), 2.0, M)
    assert val == pytest.approx(math.exp(1.0 / 24.0), rel=1e-14)


def test_lyapunov_exponential_rejects_bad_exponent():
    g = grid1d(8)
    one = Field.full(g, 1.0)
    for p in (1.0, 0.5, -2.0):
        with pytest.raises(ValueError):
            lyapunov_exponential(one, one, p, 0.5)
    with pytest.raises(ValueError):
        lyapunov_exponential(one, one, 2.0, 0.0)


def test_sublinear_functional_constant_fields():
    g = grid1d(16)
    M = 0.3
    u = Field.full(g, 1.0)
    assert sublinear_functional(u, Field.full(g, 0.0), 0.5, M) == pytest.approx(
        1.0 + M * M, rel=1e-14
    )
    # v at its ceiling leaves weight exactly one
    assert sublinear_functional(
        Field.full(g, 4.0), Field.full(g, M), 0.5, M
    ) == pytest.approx(2.0, rel=1e-14)


def test_sublinear_functional_rejects_bad_exponent():
    g = grid1d(8)
    one = Field.full(g, 1.0)
    for p in (0.0, 1.0, 1.2):
        with pytest.raises(ValueError):
            sublinear_functional(one, one, p, 0.5)


# --- feasible sublinear exponent ------------------------------------------


def scan_margin(p, M):
    # the sufficient sign condition, written out independently
    return 0.75 * (1 - p) * (1 + M * M) + 2 * M + 12 * M * M / (1 - p) - 1 / p


def test_compute_p0_matches_scan():
    M = 1.0
    ps = np.arange(1e-6, 1.0, 1e-6)
    feasible = ps[scan_margin(ps, M) <= 0.0]
    p_scan = feasible.max()
    p0 = compute_p0(M)
    assert 0.05 < p0 < 0.08
    assert abs(p0 - p_scan) <= 2e-6


def test_compute_p0_monotone_in_ceiling():
    assert compute_p0(0.05) > compute_p0(0.5) > compute_p0(2.0)


def test_compute_p0_flat_signal_hits_cap():
    assert compute_p0(0.0) > 1.0 - 1e-7


def test_compute_p0_infeasible_raises():
    with pytest.raises(ValueError):
        compute_p0(1e5)


# --- certificate weight ----------------------------------------------------


def test_g_phi_constant_weight():
    g = grid1d(8)
    v = Field.full(g, 0.3)
    out = g_phi_field(v, 2.0, "one", 0.5, 0.5)
    assert np.allclose(out.values, 0.5, rtol=0, atol=1e-15)
    out = g_phi_field(v, 0.5, "one", 1.0 / 3.0, 1.0 / 3.0)
    assert np.allclose(out.values, 0.375, rtol=1e-14)


def test_g_phi_exponential_frozen_value_and_sign():
    M = 1.0 / 6.0
    g = GridSpec(dim=1, extent=(1.0,), cells=(400,))
    v = Field(g, np.linspace(0.0, M, 400))
    out = g_phi_field(v, 2.0, "exponential", 0.5, 0.5, v0max=M)
    assert out.values.max() <= 0.0
    v_top = Field.full(g, M)
    top = g_phi_field(v_top, 2.0, "exponential", 0.5, 0.5, v0max=M)
    assert top.values[0] == pytest.approx(-math.exp(1.0 / 24.0) / 8.0, rel=1e-13)


def test_g_phi_exponential_above_threshold_goes_positive():
    # at three times the ceiling the certificate must fail somewhere
    M = 0.5
    g = GridSpec(dim=1, extent=(1.0,), cells=(400,))
    v = Field(g, np.linspace(0.0, M, 400))
    out = g_phi_field(v, 2.0, "exponential", 0.5, 0.5, v0max=M)
    assert out.values.max() > 0.0


def test_g_phi_quadratic_nonpositive_below_p0():
    M = 1.0
    p = 0.5 * compute_p0(M)
    g = GridSpec(dim=1, extent=(1.0,), cells=(10001,))
    v = Field(g, np.linspace(0.0, M, 10001))
    out = g_phi_field(v, p, "quadratic", 1.0 / 3.0, 1.0 / 3.0, v0max=M)
    assert out.values.max() <= 0.0


def test_g_phi_validation():
    g = grid1d(8)
    v = Field.full(g, 0.2)
    with pytest.raises(ValueError):
        g_phi_field(v, 1.0, "one", 0.5, 0.5)
    with pytest.raises(ValueError):
        g_phi_field(v, 2.0, "gaussian", 0.5, 0.5)
    with pytest.raises(ValueError):
        g_phi_field(v, 2.0, "quadratic", 0.5, 0.5)  # missing v0max
    with pytest.raises(ValueError):
        g_phi_field(v, 2.0, "exponential", 0.5, 0.5)  # missing gamma and v0max
    big = Field.full(g, 2.0)
    with pytest.raises(ValueError):
        g_phi_field(big, 2.0, "quadratic", 0.5, 0.5, v0max=1.0)  # phi <= 0
    with pytest.raises(ValueError):
        g_phi_field(v, 2.0, "one", 0.0, 0.5)


# --- gradient diagnostics --------------------------------------------------


def test_dirichlet_energy_frozen_value():
    target = (math.pi ** 2 / 4.0) * (2.0 - math.sqrt(3.0))
    errs = []
    for n in (64, 128, 256):
        g = grid1d(n)
        u = cosine(g, 1, 1.0, 2.0)
        errs.append(abs(dirichlet_p(u, 1.0) - target))
    assert errs[-1] <= 1e-5
    assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5


def test_fisher_information_frozen_value():
    target = math.pi ** 2 * (2.0 / math.sqrt(3.0) - 1.0)
    errs = []
    for n in (64, 128, 256):
        g = grid1d(n)
        u = cosine(g, 1, 1.0, 2.0)
        errs.append(abs(fisher_information(u) - target))
    assert errs[-1] <= 2e-4
    assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5


def test_fisher_information_scale_invariant():
    g = grid1d(64)
    u = cosine(g, 2, 0.4, 1.5)
    a = fisher_information(u)
    b = fisher_information(Field(g, 3.0 * u.values))
    assert b == pytest.approx(a, rel=1e-13)


def test_fisher_information_flat_field_is_zero():
    g = grid1d(32)
    assert fisher_information(Field.full(g, 0.0)) == 0.0
    assert fisher_information(Field.full(g, 2.0)) == 0.0


def test_gn_ratio_constant_field():
    g = grid1d(32)
    val = gn_ratio(Field.full(g, 2.0), 0.5)
    assert val == pytest.approx(2.0 ** 2.5, rel=1e-13)


def test_gn_ratio_smooth_field_finite():
    g = grid1d(128)
    u = cosine(g, 1, 0.9, 1.0)
    val = gn_ratio(u, 0.25)
    assert math.isfinite(val) and val > 0.0


def test_accumulate_spacetime_constant():
    g = grid1d(16)
    f = Field.full(g, 3.0)
    total = 0.0
    for _ in range(10):
        total = accumulate_spacetime(total, f, 0.1)
    assert total == pytest.approx(3.0, rel=1e-14)
    with pytest.raises(ValueError):
        accumulate_spacetime(0.0, f, -0.1)


# --- trajectory bookkeeping ------------------------------------------------


def small_params(n=32, a=0.05, w0=0.1):
    g = grid1d(n)
    return ModelParams(
        grid=g,
        delta=1.0,
        u0=cosine(g, 1, 0.5, 1.0),
        v0=Field(g, a * (1.0 + np.cos(np.pi * centers(g))) / 2.0),
        w0=Field.full(g, w0),
    )


def test_record_accumulators_match_manual_rectangle_sums():
    params = small_params()
    cfg = StepConfig(dt=1e-2)
    traj = run(params, cfg, 0.2, diagnostic_stride=1, snapshot_stride=1)
    snaps = traj.snapshots
    h = params.grid.h
    cum_vw = 0.0
    cum_gv = 0.0
    cum_u2 = 0.0
    for k in range(len(snaps) - 1):
        dt = snaps[k + 1].t - snaps[k].t
        cum_vw += dt * float((snaps[k].w.values * snaps[k + 1].v.values).sum()) * h
        cum_gv += dt * integrate(gradient_sq(snaps[k + 1].v))
        cum_u2 += dt * float((snaps[k].u.values ** 2).sum()) * h
    rec = traj.final_record
    assert rec.cum_vw == pytest.approx(cum_vw, rel=1e-13)
    assert rec.cum_grad_v_sq == pytest.approx(cum_gv, rel=1e-13)
    assert rec.cum_u_l2sq == pytest.approx(cum_u2, rel=1e-13)


def test_absorbed_signal_budget_identity():
    # sum dt int(w^n v^{n+1}) telescopes exactly against the signal mass drop
    params = small_params(a=0.2, w0=0.5)
    cfg = StepConfig(dt=5e-3)
    traj = run(params, cfg, 0.5, diagnostic_stride=0)
    rec = traj.final_record
    v0_mass = integrate(params.v0)
    vT_mass = integrate(traj.final_state.v)
    assert rec.cum_vw == pytest.approx(v0_mass - vT_mass, rel=1e-9)
    assert rec.cum_vw <= v0_mass


def test_sampled_records_agree_across_strides():
    params = small_params()
    cfg = StepConfig(dt=1e-2)
    t1 = run(params, cfg, 0.1, diagnostic_stride=1)
    t2 = run(params, cfg, 0.1, diagnostic_stride=2)
    # every stride-2 sample must reproduce the stride-1 values bit-for-bit
    by_t = {r.t: r for r in t1.records}
    for r in t2.records:
        ref = by_t[r.t]
        for name in ("mass", "E_p", "F_p", "u_linf", "cum_vw", "grad_v_sq"):
            assert getattr(r, name) == pytest.approx(getattr(ref, name), rel=1e-13)


def test_monotone_functionals_on_smooth_run():
    params = small_params(a=1.0 / 6.0)
    cfg = StepConfig(dt=1e-3)
    traj = run(params, cfg, 0.5, diagnostic_stride=10)
    assert traj.lyap_step_viol_max < 0.0
    assert traj.subl_step_viol_max < 0.0
    E = traj.series("E_p")
    assert np.all(np.diff(E) < 0.0)
    # the sublinear functional climbs toward its Hoelder ceiling
    F = traj.series("F_p")
    assert np.all(np.diff(F) > 0.0)
    m0 = traj.m0
    cap = (1.0 + traj.v0max ** 2) * m0 ** traj.p_sublinear * traj.grid.volume ** (
        1.0 - traj.p_sublinear
    )
    assert F[-1] <= cap


def test_stationary_point_stays_put():
    g = grid1d(24)
    c = 2.0
    delta = 0.8
    params = ModelParams(
        grid=g,
        delta=delta,
        u0=Field.full(g, c),
        v0=Field.full(g, 0.0),
        w0=Field.full(g, c / delta),
    )
    traj = run(params, StepConfig(dt=1e-2), 1.0, diagnostic_stride=10)
    for rec in traj.records:
        assert rec.dist_u <= 1e-13
        assert rec.dist_v <= 1e-13
        assert rec.dist_w <= 1e-13


def test_trajectory_series_and_time_validation():
    params = small_params()
    traj = run(params, StepConfig(dt=1e-2), 0.05, diagnostic_stride=1)
    times = traj.series("t")
    assert np.array_equal(times, traj.times)
    assert np.all(np.diff(traj.times) > 0.0)
    bad = traj.times.copy()
    bad[1] = bad[0]
    with pytest.raises(ValueError):
        dataclasses.replace(traj, times=bad)


# --- memory-kernel reconstruction ------------------------------------------


def test_duhamel_reconstruction_is_exact():
    params = small_params(w0=0.1)
    cfg = StepConfig(dt=1e-2)
    traj = run(params, cfg, 0.5, diagnostic_stride=0, snapshot_stride=1)
    assert duhamel_w_residual(traj) <= 1e-12


def test_duhamel_requires_full_snapshot_series():
    params = small_params()
    traj = run(params, StepConfig(dt=1e-2), 0.1, snapshot_stride=2)
    with pytest.raises(ValueError):
        duhamel_w_residual(traj)


def test_trapezoid_gap_halves_with_dt():
    gaps = []
    for dt in (1e-2, 5e-3):
        params = small_params(n=32)
        traj = run(
            params, StepConfig(dt=dt), 0.5, diagnostic_stride=0, snapshot_stride=1
        )
        gaps.append(trapezoid_w_gap(traj))
    ratio = gaps[0] / gaps[1]
    assert 1.7 <= ratio <= 2.3
