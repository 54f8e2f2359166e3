"""Trajectory diagnostics: energy-type functionals, dissipation budgets,
and the per-step accumulator engine.

Functionals evaluated along trajectories:

  - lyapunov_exponential: integral of u^p exp(gamma v^2) with
    gamma = (p-1)/(12 p v0max^2); decays when ||v0||_inf <= 1/(3 max(2, dim)).
  - sublinear_functional: integral of u^p (1 + v0max^2 - v^2) for p in (0,1),
    with an a-priori bound on the weighted Dirichlet budget it dissipates.
  - compute_p0: the largest exponent for which the sufficient sign condition
    (3/4)(1-p)(1+M^2) + 2M + 12 M^2/(1-p) - 1/p <= 0 holds (M = ||v0||_inf).
  - g_phi_field: the pointwise weight
        |p-1|/(4 eta2) phi + |phi'| + phi'^2/(eta1 |p-1| phi) - sign(p-1)/p phi''
    whose nonpositivity on [0, max v] certifies the decay of the functionals
    above (phi exponential, quadratic, or constant one).
  - dirichlet_p, fisher_information, gn_ratio: gradient-based diagnostics.

Cumulative space-time integrals advance once per time step by the rectangle
rule with the stepper's frozen-coefficient convention: the absorbed-mass
integrand is (frozen w) * (implicit v), the signal Dirichlet integrand uses
the implicit v, and the density-norm integrand uses the frozen u.  With these
choices the discrete budget identities hold to rounding, e.g.
sum dt * int(w^n v^{n+1}) = int(v_0) - int(v(T)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from chis.grid import Field, GridSpec, integrate
from chis.operators import gradsq_array, gradient_sq, power_field

if TYPE_CHECKING:
    from chis.stepper import State

__all__ = [
    "DiagnosticsConfig",
    "DiagnosticsRecord",
    "Trajectory",
    "lyapunov_exponential",
    "sublinear_functional",
    "compute_p0",
    "g_phi_field",
    "dirichlet_p",
    "fisher_information",
    "gn_ratio",
    "accumulate_spacetime",
    "duhamel_w_residual",
    "trapezoid_w_gap",
]

# Relative slack allowed per step before a functional increase counts as a
# monotonicity violation.
MONOTONE_REL_SLACK = 1e-8

# Exponent cap: the sufficient condition is an open condition on (0, 1).
_P0_CAP = 1.0 - 1e-8
_P0_FLOOR = 1e-9


def exponential_weight_rate(p: float, v0max: float) -> float:
    """The rate gamma = (p-1)/(12 p v0max^2) of the exponential weight."""
    if v0max <= 0.0:
        raise ValueError("exponential weight needs v0max > 0")
    if p <= 1.0:
        raise ValueError(f"exponential weight needs p > 1, got {p}")
    return (p - 1.0) / (12.0 * p * v0max * v0max)


def lyapunov_exponential(u: Field, v: Field, p: float, v0max: float) -> float:
    """Integral of u^p exp(gamma v^2), gamma = (p-1)/(12 p v0max^2).

    Raises:
        ValueError: if p <= 1 or v0max <= 0.
    """
    gamma = exponential_weight_rate(p, v0max)
    uv = u.values
    w = np.exp(gamma * np.square(v.values))
    if p == 2.0:
        up = uv * uv
    else:
        up = np.power(uv, p)
    return float((up * w).sum()) * u.grid.h ** u.grid.dim


def sublinear_functional(u: Field, v: Field, p: float, v0max: float) -> float:
    """Integral of u^p (1 + v0max^2 - v^2) for a sublinear exponent p in (0,1).

    Raises:
        ValueError: if p is outside (0, 1) or v0max < 0.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"sublinear exponent must lie in (0,1), got {p}")
    if v0max < 0.0:
        raise ValueError("v0max must be nonnegative")
    up = np.power(u.values, p)
    phi = (1.0 + v0max * v0max) - np.square(v.values)
    return float((up * phi).sum()) * u.grid.h ** u.grid.dim


def sublinear_margin(p: float, v0max: float) -> float:
    """Left side of the sufficient sign condition; feasible iff <= 0."""
    M = v0max
    return 0.75 * (1.0 - p) * (1.0 + M * M) + 2.0 * M + 12.0 * M * M / (1.0 - p) - 1.0 / p


def compute_p0(v0max: float, tol: float = 1e-10) -> float:
    """Largest p in (0,1) satisfying the sufficient sign condition, by bisection.

    The margin is strictly increasing in p, so bisection brackets the unique
    crossing; resolution `tol` (default 1e-10).

    Raises:
        ValueError: if no exponent above the floor 1e-9 is feasible.
    """
    M = float(v0max)
    if not np.isfinite(M) or M < 0.0:
        raise ValueError(f"v0max must be finite and nonnegative, got {v0max}")
    if sublinear_margin(_P0_CAP, M) <= 0.0:
        return _P0_CAP
    lo = _P0_FLOOR
    if sublinear_margin(lo, M) > 0.0:
        raise ValueError(f"no feasible sublinear exponent for v0max={M}")
    hi = _P0_CAP
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if sublinear_margin(mid, M) <= 0.0:
            lo = mid
        else:
            hi = mid
    return lo


_PHI_KINDS = ("exponential", "quadratic", "one")


def g_phi_field(
    v: Field,
    p: float,
    phi: str,
    eta1: float,
    eta2: float,
    v0max: Optional[float] = None,
    gamma: Optional[float] = None,
) -> Field:
    """Pointwise decay-certificate weight evaluated at the field v.

        g(s) = |p-1|/(4 eta2) phi(s) + |phi'(s)|
               + phi'(s)^2 / (eta1 |p-1| phi(s)) - sign(p-1)/p phi''(s)

    phi is one of "exponential" (phi = exp(gamma s^2), gamma derived from
    v0max unless given), "quadratic" (phi = 1 + v0max^2 - s^2), or "one".

    Raises:
        ValueError: if p == 1, the weight kind is unknown, required
            parameters are missing, or phi is not positive on [0, max v].
    """
    if phi not in _PHI_KINDS:
        raise ValueError(f"phi must be one of {_PHI_KINDS}, got {phi!r}")
    p = float(p)
    if p == 1.0 or p <= 0.0:
        raise ValueError(f"exponent must be positive and != 1, got {p}")
    if eta1 <= 0.0 or eta2 <= 0.0:
        raise ValueError("eta1, eta2 must be positive")
    s = v.values
    ap = abs(p - 1.0)
    sigma = 1.0 if p > 1.0 else -1.0
    if phi == "one":
        vals = np.full(v.grid.shape, ap / (4.0 * eta2))
        return Field(v.grid, vals)
    if phi == "exponential":
        if gamma is None:
            if v0max is None:
                raise ValueError("exponential weight needs gamma or v0max")
            gamma = exponential_weight_rate(p, v0max)
        ph = np.exp(gamma * np.square(s))
        d1 = 2.0 * gamma * s * ph
        d2 = (2.0 * gamma + 4.0 * gamma * gamma * np.square(s)) * ph
    else:  # quadratic
        if v0max is None:
            raise ValueError("quadratic weight needs v0max")
        ph = (1.0 + v0max * v0max) - np.square(s)
        if np.any(ph <= 0.0):
            raise ValueError("quadratic weight is not positive on the range of v")
        d1 = -2.0 * s
        d2 = np.full_like(ph, -2.0)
    vals = (
        ap / (4.0 * eta2) * ph
        + np.abs(d1)
        + np.square(d1) / (eta1 * ap * ph)
        - (sigma / p) * d2
    )
    return Field(v.grid, vals)


def dirichlet_p(u: Field, p: float) -> float:
    """Dirichlet energy of u^{p/2}: integral of |grad u^{p/2}|^2."""
    return integrate(gradient_sq(power_field(u, 0.5 * p)))


def fisher_information(u: Field, floor: float = 1e-300) -> float:
    """Integral of |grad u|^2 / u^2 with u floored away from zero.

    The division happens in two stages so the squared floor cannot underflow
    to zero: flat regions at the floor contribute zero, not NaN.
    """
    g = gradsq_array(u.values, u.grid.h)
    den = np.maximum(u.values, floor)
    with np.errstate(over="ignore"):
        return float((g / den / den).sum()) * u.grid.h ** u.grid.dim


def gn_ratio(u: Field, p: float) -> float:
    """Ratio of int u^{2/n + p} to 1 + dirichlet_p(u); n is the dimension."""
    n = u.grid.dim
    num = integrate(power_field(u, 2.0 / n + p))
    return num / (1.0 + dirichlet_p(u, p))


def accumulate_spacetime(total: float, integrand: Field, dt: float) -> float:
    """Advance a space-time integral by one rectangle-rule step."""
    if dt < 0.0:
        raise ValueError("dt must be nonnegative")
    return total + dt * integrate(integrand)


# ---------------------------------------------------------------------------
# per-sample record and trajectory containers
# ---------------------------------------------------------------------------


@dataclass
class DiagnosticsRecord:
    """Scalar diagnostics at one sample time."""

    t: float
    mass: float
    u_linf: float
    v_linf: float
    w_linf: float
    u_l2: float
    v_l2: float
    w_l2: float
    E_p: float
    F_p: float
    dirichlet_p: float
    fisher: float
    cross_vw: float
    grad_v_sq: float
    dist_u: float
    dist_v: float
    dist_w: float
    # cumulative space-time integrals up to this sample
    cum_vw: float
    cum_grad_v_sq: float
    cum_fisher: float
    cum_dirichlet_p: float
    cum_budget: float
    cum_u_l2sq: float
    # auxiliary series used by the check suite
    u_l1: float
    w_l1: float
    grad_v_theta: float
    sup_u_linf: float
    g_phi_max: float


@dataclass
class DiagnosticsConfig:
    """Knobs for the trajectory diagnostics.

    Exponents default at run start: p_lyapunov to max(2, dim), p_sublinear to
    compute_p0(||v0||_inf)/2.  theta is the exponent of the |grad v|^theta
    diagnostic.  rel_slack is the per-step relative slack before a functional
    increase counts against monotonicity.
    """

    p_lyapunov: Optional[float] = None
    p_sublinear: Optional[float] = None
    theta: float = 4.0
    u_floor: float = 1e-300
    rel_slack: float = MONOTONE_REL_SLACK


@dataclass
class Trajectory:
    """A completed run: sampled diagnostics, aggregates, and snapshots."""

    grid: GridSpec
    delta: float
    T: float
    dt_nominal: float
    advection_scheme: str
    transport: str
    absorption: str
    linear_tol: float
    # run-start constants
    m0: float
    ubar0: float
    v0max: float
    u0_linf: float
    w0_linf: float
    w0_l1: float
    w0_l2: float
    p_lyapunov: float
    p_sublinear: float
    gamma: float  # nan when v0 vanishes
    theta: float
    rel_slack: float
    # sampled series
    times: np.ndarray
    records: list
    snapshots: list
    initial_state: "State"
    final_state: "State"
    # whole-run aggregates (over every step, not just samples)
    step_count: int
    dt_max_used: float
    mass_drift_max: float
    min_u: float
    max_u: float
    min_v: float
    max_v: float
    min_w: float
    max_w: float
    sup_u_linf: float
    lyap_step_viol_max: float
    subl_step_viol_max: float
    min_u_at_t1: float
    t_at_1: float

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) != len(self.records):
            raise ValueError("times and records must align")
        if len(t) >= 2 and not np.all(np.diff(t) > 0.0):
            raise ValueError("sample times must be strictly increasing")
        self.times = t

    def series(self, name: str) -> np.ndarray:
        """Column of one record attribute across samples."""
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def final_record(self) -> DiagnosticsRecord:
        return self.records[-1]


# ---------------------------------------------------------------------------
# engine driven by the stepper's run loop
# ---------------------------------------------------------------------------


class DiagnosticsEngine:
    """Advances accumulators every step and materializes sample records.

    The run loop calls ``on_step`` after each update with the frozen (pre-step)
    and implicit (post-step) arrays, then ``sample`` at the configured stride.
    """

    def __init__(
        self,
        grid: GridSpec,
        delta: float,
        u0: np.ndarray,
        v0: np.ndarray,
        w0: np.ndarray,
        cfg: DiagnosticsConfig,
    ) -> None:
        self.grid = grid
        self.delta = delta
        self.cfg = cfg
        self.meas = grid.h ** grid.dim
        self.m0 = float(u0.sum()) * self.meas
        self.ubar0 = self.m0 / grid.volume
        self.weq = self.ubar0 / delta
        self.v0max = float(np.abs(v0).max())
        self.u0_linf = float(np.abs(u0).max())
        self.p_E = (
            float(cfg.p_lyapunov)
            if cfg.p_lyapunov is not None
            else float(max(2, grid.dim))
        )
        if self.v0max > 0.0 and self.p_E > 1.0:
            self.gamma = exponential_weight_rate(self.p_E, self.v0max)
        else:
            self.gamma = math.nan
        self.p_F = (
            float(cfg.p_sublinear)
            if cfg.p_sublinear is not None
            else 0.5 * compute_p0(self.v0max)
        )
        self.phi_sub_max = 1.0 + self.v0max * self.v0max
        self.theta = float(cfg.theta)
        self.u_floor = float(cfg.u_floor)
        self.rel_slack = float(cfg.rel_slack)

        # accumulators
        self.cum_vw = 0.0
        self.cum_grad_v_sq = 0.0
        self.cum_fisher = 0.0
        self.cum_dirichlet = 0.0
        self.cum_budget = 0.0
        self.cum_u_l2sq = 0.0
        # aggregates over all steps
        self.sup_u_linf = self.u0_linf
        self.mass_drift_max = 0.0
        self.min_u = float(u0.min())
        self.max_u = float(u0.max())
        self.min_v = float(v0.min())
        self.max_v = float(v0.max())
        self.min_w = float(w0.min())
        self.max_w = float(w0.max())
        self.lyap_viol = -math.inf
        self.subl_viol = -math.inf
        self.min_u_at_t1 = math.nan
        self.t_at_1 = math.nan
        self.step_count = 0
        self.dt_max_used = 0.0

        self._E_prev = self._lyapunov(u0, v0)
        self._F_prev = self._sublinear(u0, v0)
        self._last = None  # per-step scalars reused by sample()
        self._last_u2 = u0 * u0  # frozen-density square for the norm budget
        self._last_gsq_v = gradsq_array(v0, grid.h)
        self._last_u_linf = self.u0_linf
        self.records: list[DiagnosticsRecord] = []
        self.times: list[float] = []

    # -- functional kernels on raw arrays ---------------------------------

    def _lyapunov(self, u: np.ndarray, v: np.ndarray) -> float:
        up = u * u if self.p_E == 2.0 else np.power(u, self.p_E)
        if math.isnan(self.gamma):
            return float(up.sum()) * self.meas
        return float((up * np.exp(self.gamma * np.square(v))).sum()) * self.meas

    def _sublinear(self, u: np.ndarray, v: np.ndarray) -> float:
        up = np.power(u, self.p_F)
        return float((up * (self.phi_sub_max - np.square(v))).sum()) * self.meas

    # -- stepping hooks -----------------------------------------------------

    def on_step(
        self,
        dt: float,
        t_new: float,
        u_old: np.ndarray,
        w_old: np.ndarray,
        u_new: np.ndarray,
        v_new: np.ndarray,
        w_new: np.ndarray,
    ) -> float:
        """Advance accumulators/aggregates; returns ||u_new||_inf."""
        meas = self.meas
        self.step_count += 1
        if dt > self.dt_max_used:
            self.dt_max_used = dt

        # space-time accumulators (scheme-consistent endpoints, see module doc)
        self.cum_vw += dt * float((w_old * v_new).sum()) * meas
        gsq_v = gradsq_array(v_new, self.grid.h)
        self._last_gsq_v = gsq_v
        self.cum_grad_v_sq += dt * float(gsq_v.sum()) * meas
        # density-norm budget uses the frozen u consumed by the w-update
        self.cum_u_l2sq += dt * float(self._last_u2.sum()) * meas

        gsq_u = gradsq_array(u_new, self.grid.h)
        q = np.power(u_new, 0.5 * self.p_F)
        gsq_q = gradsq_array(q, self.grid.h)
        dir_now = float(gsq_q.sum()) * meas
        self.cum_dirichlet += dt * dir_now
        v2 = np.square(v_new)
        upm2 = np.square(q / u_new)  # u^(p-2)
        self.cum_budget += dt * float(
            (upm2 * gsq_u * (self.phi_sub_max - v2)).sum()
        ) * meas

        eff = min(dt, max(0.0, t_new - 1.0))
        fisher_now = math.nan
        if t_new >= 1.0:
            den = np.maximum(u_new, self.u_floor)
            with np.errstate(over="ignore"):
                fisher_now = float((gsq_u / den / den).sum()) * meas
            if eff > 0.0:
                self.cum_fisher += eff * fisher_now
            if math.isnan(self.t_at_1):
                self.min_u_at_t1 = float(u_new.min())
                self.t_at_1 = t_new

        # monotonicity aggregates
        if math.isnan(self.gamma):
            up = u_new * u_new if self.p_E == 2.0 else np.power(u_new, self.p_E)
            E = float(up.sum()) * meas
        else:
            ew = np.exp(self.gamma * v2)
            up = u_new * u_new if self.p_E == 2.0 else np.power(u_new, self.p_E)
            E = float((up * ew).sum()) * meas
        qq = q * q  # u^p_F
        F = float((qq * (self.phi_sub_max - v2)).sum()) * meas
        # the weighted p-energy must not rise, the sublinear functional must
        # not fall (it grows toward its Hoelder ceiling, funding the budget)
        ev = E - self._E_prev - self.rel_slack * self._E_prev
        if ev > self.lyap_viol:
            self.lyap_viol = ev
        fv = self._F_prev - F - self.rel_slack * self._F_prev
        if fv > self.subl_viol:
            self.subl_viol = fv
        self._E_prev = E
        self._F_prev = F

        # pointwise aggregates over every step
        umin = float(u_new.min())
        umax = float(u_new.max())
        vmin = float(v_new.min())
        vmax = float(v_new.max())
        wmin = float(w_new.min())
        wmax = float(w_new.max())
        if umin < self.min_u:
            self.min_u = umin
        if umax > self.max_u:
            self.max_u = umax
        if vmin < self.min_v:
            self.min_v = vmin
        if vmax > self.max_v:
            self.max_v = vmax
        if wmin < self.min_w:
            self.min_w = wmin
        if wmax > self.max_w:
            self.max_w = wmax
        # sup over the frozen densities the w-update consumed (u_0 .. u_{n-1})
        if self._last_u_linf > self.sup_u_linf:
            self.sup_u_linf = self._last_u_linf

        mass = float(u_new.sum()) * meas
        drift = abs(mass - self.m0) / self.m0
        if drift > self.mass_drift_max:
            self.mass_drift_max = drift

        u2 = u_new * u_new
        self._last_u2 = u2
        u_linf = umax if umax >= -umin else -umin
        self._last_u_linf = u_linf
        self._last = (
            t_new, mass, u_linf, E, F, dir_now, fisher_now,
            gsq_v, v2, u2, vmax, vmin, wmax, wmin, umin,
        )
        return u_linf

    def sample(self, t: float, u: np.ndarray, v: np.ndarray, w: np.ndarray) -> DiagnosticsRecord:
        meas = self.meas
        if self._last is not None and self._last[0] == t:
            (_, mass, u_linf, E, F, dir_now, fisher_now,
             gsq_v, v2, u2, vmax, vmin, wmax, wmin, umin) = self._last
            if math.isnan(fisher_now):
                den = np.maximum(u, self.u_floor)
                with np.errstate(over="ignore"):
                    fisher_now = float(
                        (gradsq_array(u, self.grid.h) / den / den).sum()
                    ) * meas
        else:
            mass = float(u.sum()) * meas
            u_linf = float(np.abs(u).max())
            E = self._lyapunov(u, v)
            F = self._sublinear(u, v)
            q = np.power(u, 0.5 * self.p_F)
            dir_now = float(gradsq_array(q, self.grid.h).sum()) * meas
            den = np.maximum(u, self.u_floor)
            with np.errstate(over="ignore"):
                fisher_now = float(
                    (gradsq_array(u, self.grid.h) / den / den).sum()
                ) * meas
            gsq_v = gradsq_array(v, self.grid.h)
            v2 = np.square(v)
            u2 = u * u
            vmax = float(v.max())
            vmin = float(v.min())
            wmax = float(w.max())
            wmin = float(w.min())
            umin = float(u.min())
        grad_v_sq = float(gsq_v.sum()) * meas
        grad_v_theta = float(np.power(gsq_v, 0.5 * self.theta).sum()) * meas
        v_linf = vmax if vmax >= -vmin else -vmin
        w_linf = wmax if wmax >= -wmin else -wmin
        rec = DiagnosticsRecord(
            t=t,
            mass=mass,
            u_linf=u_linf,
            v_linf=v_linf,
            w_linf=w_linf,
            u_l2=math.sqrt(float(u2.sum()) * meas),
            v_l2=math.sqrt(float(v2.sum()) * meas),
            w_l2=math.sqrt(float((w * w).sum()) * meas),
            E_p=E,
            F_p=F,
            dirichlet_p=dir_now,
            fisher=fisher_now,
            cross_vw=float((v * w).sum()) * meas,
            grad_v_sq=grad_v_sq,
            dist_u=float(np.abs(u - self.ubar0).max()),
            dist_v=v_linf,
            dist_w=float(np.abs(w - self.weq).max()),
            cum_vw=self.cum_vw,
            cum_grad_v_sq=self.cum_grad_v_sq,
            cum_fisher=self.cum_fisher,
            cum_dirichlet_p=self.cum_dirichlet,
            cum_budget=self.cum_budget,
            cum_u_l2sq=self.cum_u_l2sq,
            u_l1=float(np.abs(u).sum()) * meas,
            w_l1=float(np.abs(w).sum()) * meas,
            grad_v_theta=grad_v_theta,
            sup_u_linf=self.sup_u_linf,
            g_phi_max=self._g_phi_max(v),
        )
        self.records.append(rec)
        self.times.append(t)
        return rec

    def _g_phi_max(self, v: np.ndarray) -> float:
        if math.isnan(self.gamma):
            return math.nan
        s = v
        ph = np.exp(self.gamma * np.square(s))
        d1 = 2.0 * self.gamma * s * ph
        d2 = (2.0 * self.gamma + 4.0 * self.gamma * self.gamma * np.square(s)) * ph
        ap = abs(self.p_E - 1.0)
        g = 0.5 * ap * ph + np.abs(d1) + 2.0 * np.square(d1) / (ap * ph) - d2 / self.p_E
        return float(g.max())

    def build(
        self,
        *,
        T: float,
        dt_nominal: float,
        advection_scheme: str,
        transport: str,
        absorption: str,
        linear_tol: float,
        initial_state: "State",
        final_state: "State",
        snapshots: list,
        w0: np.ndarray,
    ) -> Trajectory:
        meas = self.meas
        return Trajectory(
            grid=self.grid,
            delta=self.delta,
            T=T,
            dt_nominal=dt_nominal,
            advection_scheme=advection_scheme,
            transport=transport,
            absorption=absorption,
            linear_tol=linear_tol,
            m0=self.m0,
            ubar0=self.ubar0,
            v0max=self.v0max,
            u0_linf=self.u0_linf,
            w0_linf=float(np.abs(w0).max()),
            w0_l1=float(np.abs(w0).sum()) * meas,
            w0_l2=math.sqrt(float((w0 * w0).sum()) * meas),
            p_lyapunov=self.p_E,
            p_sublinear=self.p_F,
            gamma=self.gamma,
            theta=self.theta,
            rel_slack=self.rel_slack,
            times=np.array(self.times, dtype=float),
            records=self.records,
            snapshots=snapshots,
            initial_state=initial_state,
            final_state=final_state,
            step_count=self.step_count,
            dt_max_used=self.dt_max_used,
            mass_drift_max=self.mass_drift_max,
            min_u=self.min_u,
            max_u=self.max_u,
            min_v=self.min_v,
            max_v=self.max_v,
            min_w=self.min_w,
            max_w=self.max_w,
            sup_u_linf=self.sup_u_linf,
            lyap_step_viol_max=self.lyap_viol,
            subl_step_viol_max=self.subl_viol,
            min_u_at_t1=self.min_u_at_t1,
            t_at_1=self.t_at_1,
        )


# ---------------------------------------------------------------------------
# Duhamel reconstruction of the absorber from stored density snapshots
# ---------------------------------------------------------------------------


def _full_snapshot_series(traj: Trajectory):
    snaps = traj.snapshots
    if not snaps or len(snaps) != traj.step_count + 1:
        raise ValueError(
            "Duhamel reconstruction needs snapshots at every step "
            f"(have {len(snaps)}, need {traj.step_count + 1})"
        )
    times = [s.t for s in snaps]
    if times[0] != 0.0:
        raise ValueError("snapshot series must start at t = 0")
    return snaps, times


def duhamel_w_residual(traj: Trajectory) -> float:
    """Max-norm gap between the stored final w and its reconstruction

        e^{-delta T} w0 + sum_k W_k u(t_k),
        W_k = (e^{-delta (T - t_{k+1})} - e^{-delta (T - t_k)}) / delta,

    i.e. exact exponential integration of the piecewise-frozen density, the
    same convention the stepper uses; the gap is pure rounding.
    """
    snaps, times = _full_snapshot_series(traj)
    delta = traj.delta
    T = times[-1]
    acc = math.exp(-delta * T) * snaps[0].w.values
    for k in range(len(snaps) - 1):
        wk = (
            math.exp(-delta * (T - times[k + 1])) - math.exp(-delta * (T - times[k]))
        ) / delta
        acc = acc + wk * snaps[k].u.values
    return float(np.abs(traj.final_state.w.values - acc).max())


def trapezoid_w_gap(traj: Trajectory) -> float:
    """Max-norm gap between the stored final w and an independent trapezoid
    quadrature of the memory integral; O(dt), so it halves with the step."""
    snaps, times = _full_snapshot_series(traj)
    delta = traj.delta
    T = times[-1]
    acc = math.exp(-delta * T) * snaps[0].w.values
    for k in range(len(snaps) - 1):
        dt = times[k + 1] - times[k]
        ek = math.exp(-delta * (T - times[k]))
        ek1 = math.exp(-delta * (T - times[k + 1]))
        acc = acc + 0.5 * dt * (ek * snaps[k].u.values + ek1 * snaps[k + 1].u.values)
    return float(np.abs(traj.final_state.w.values - acc).max())
