"""Reference 1D finite-volume transient solver.

Solves the three transport PDEs (mass, momentum, energy) for the heated
channel and loop rigs. Serves three roles: training/test data generator,
environment for governor rollouts, and fault injector for the diagnostics
study.

Scheme (first-order, semi-implicit, staggered):

* scalars (p, T) on cell centers, velocity on faces;
* per substep, the energy equation advances conservatively in h = rho*T with
  explicit upwind fluxes (old velocities), and T is recovered by inverting
  the quadratic closure h = (rho_a - rho_b*T)*T (smaller root);
* momentum is semi-implicit: explicit upwind advection, friction linearized
  about the current Picard iterate, implicit pressure gradient; substituting
  the face-velocity update into continuity yields a tridiagonal (channel) or
  pinned-cyclic (loop) pressure system, solved directly.

The loop's static pressure boundary at z_set acts as a pressurizer: its cell
is pinned to the reference (gage zero) pressure and exchanges the tiny
thermal-expansion makeup flow; every other cell satisfies discrete
continuity exactly.

Controls are zero-order held over each delta_t step: ``step`` takes one
constant control vector and advances the full interval in substeps.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .errors import NumericalError
from .transport import (
    ConfigError,
    FieldState,
    Grid,
    ScenarioConfig,
    build_grid,
    density,
    scenario_fingerprint,
)

__all__ = [
    "SolverConfig",
    "InputTrajectory",
    "SimulationRecord",
    "generate_trajectories",
    "steady_state",
    "step",
    "step_with_audit",
    "run_experiment",
    "inject_degradation",
    "sensor_readout",
    "applied_source",
]

# control rollouts may exceed training ranges by this fraction of the span
RANGE_SLACK = 0.10


@dataclass(frozen=True)
class SolverConfig:
    """Inner-step numerics: substep size, Picard tolerance and iteration cap."""

    substep: float = 0.05  # s
    tol: float = 1e-10  # relative velocity change per Picard sweep
    max_iters: int = 40

    def n_substeps(self, delta_t: float) -> int:
        if self.substep <= 0:
            raise ConfigError("substep must be positive")
        if self.substep > delta_t + 1e-12:
            raise ConfigError("substep must be <= delta_t")
        n = round(delta_t / self.substep)
        if abs(n * self.substep - delta_t) > 1e-9 * delta_t:
            raise ConfigError("substep must divide delta_t")
        return n


@dataclass(frozen=True)
class InputTrajectory:
    """Piecewise-linear control time series, one knot set per channel."""

    channels: tuple[str, ...]
    knot_times: tuple[np.ndarray, ...]  # per channel, strictly increasing from 0
    knot_values: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        for name, t, v in zip(self.channels, self.knot_times, self.knot_values):
            if t.size != v.size or t.size < 1:
                raise ConfigError(f"channel {name!r}: knot arrays must align")
            if t[0] != 0.0:
                raise ConfigError(f"channel {name!r}: knots must start at 0")
            if t.size > 1 and not np.all(np.diff(t) > 0):
                raise ConfigError(f"channel {name!r}: knot times must increase")

    def value(self, t: float) -> np.ndarray:
        """Control vector at time t (held constant beyond the last knot)."""
        return np.array(
            [np.interp(t, kt, kv) for kt, kv in zip(self.knot_times, self.knot_values)]
        )

    @staticmethod
    def constant(scenario: ScenarioConfig, v) -> "InputTrajectory":
        v = np.asarray(v, dtype=float)
        return InputTrajectory(
            channels=scenario.control_channels,
            knot_times=tuple(np.array([0.0]) for _ in v),
            knot_values=tuple(np.array([float(x)]) for x in v),
        )


@dataclass(frozen=True)
class SimulationRecord:
    """One experiment: full fields, controls, and sensor readouts per delta_t."""

    scenario_hash: str
    times: np.ndarray  # (K+1,)
    grid_z: np.ndarray  # (n,)
    p: np.ndarray  # (K+1, n)
    u: np.ndarray
    T: np.ndarray
    v: np.ndarray  # (K+1, n_controls); row k applied over [t_k, t_{k+1})
    station_z: np.ndarray  # (s,)
    sensors: np.ndarray  # (K+1, 3, s) field-major (p, u, T)

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    def state(self, k: int) -> FieldState:
        return FieldState(grid_z=self.grid_z, p=self.p[k], u=self.u[k], T=self.T[k])


# ===================== per-scenario solve plan =====================


@dataclass(frozen=True)
class _Plan:
    grid: Grid
    dzf: np.ndarray  # face control-volume widths
    fric: np.ndarray  # (f/D_h) per face
    grav: np.ndarray  # gravity component per face
    q_fixed: np.ndarray  # W/m^3 per cell
    q_ctrl: np.ndarray  # (n_cells, n_controls) source coupling matrix
    is_loop: bool
    ref_cell: int
    v_lo: np.ndarray
    v_hi: np.ndarray


@functools.lru_cache(maxsize=32)
def _plan(scenario: ScenarioConfig) -> _Plan:
    areas = {s.flow_area for s in scenario.segments}
    if len(areas) != 1:
        raise ConfigError("solver requires a uniform flow_area across segments")
    grid = build_grid(scenario)
    n = grid.n_cells
    seg = grid.segment_of_cell
    cell_fric = np.array(
        [scenario.segments[s].friction_factor / scenario.segments[s].hydraulic_diameter for s in seg]
    )
    cell_grav = np.array([scenario.segments[s].gravity_component for s in seg])
    q_fixed = np.array([scenario.segments[s].heat_source for s in seg])
    q_ctrl = np.zeros((n, scenario.n_controls))
    for i, s in enumerate(seg):
        sid = scenario.segments[s].volumetric_source_id
        if sid is not None:
            q_ctrl[i, scenario.channel_index(sid)] = scenario.segments[s].source_scale

    dz = grid.dz
    is_loop = scenario.kind == "loop"
    if is_loop:
        # face j sits between cells j-1 and j (cyclic); faces 0 and n coincide
        left = np.roll(np.arange(n), 1)
        dzf = np.empty(n + 1)
        dzf[:n] = 0.5 * (dz[left] + dz)
        dzf[n] = dzf[0]
        fric = np.empty(n + 1)
        fric[:n] = (dz[left] * cell_fric[left] + dz * cell_fric) / (dz[left] + dz)
        fric[n] = fric[0]
        grav = np.empty(n + 1)
        grav[:n] = (dz[left] * cell_grav[left] + dz * cell_grav) / (dz[left] + dz)
        grav[n] = grav[0]
    else:
        dzf = np.empty(n + 1)
        dzf[0] = 0.5 * dz[0]
        dzf[1:n] = 0.5 * (dz[:-1] + dz[1:])
        dzf[n] = 0.5 * dz[-1]
        fric = np.empty(n + 1)
        fric[0] = cell_fric[0]
        fric[1:n] = (dz[:-1] * cell_fric[:-1] + dz[1:] * cell_fric[1:]) / (dz[:-1] + dz[1:])
        fric[n] = cell_fric[-1]
        grav = np.empty(n + 1)
        grav[0] = cell_grav[0]
        grav[1:n] = (dz[:-1] * cell_grav[:-1] + dz[1:] * cell_grav[1:]) / (dz[:-1] + dz[1:])
        grav[n] = cell_grav[-1]

    return _Plan(
        grid=grid,
        dzf=dzf,
        fric=fric,
        grav=grav,
        q_fixed=q_fixed,
        q_ctrl=q_ctrl,
        is_loop=is_loop,
        ref_cell=scenario.reference_cell,
        v_lo=np.array([r[0] for r in scenario.input_ranges]),
        v_hi=np.array([r[1] for r in scenario.input_ranges]),
    )


def applied_source(scenario: ScenarioConfig, v) -> np.ndarray:
    """Volumetric source per cell (W/m^3) for control vector v."""
    plan = _plan(scenario)
    return plan.q_fixed + plan.q_ctrl @ np.asarray(v, dtype=float)


def _check_inputs(plan: _Plan, v: np.ndarray) -> None:
    span = plan.v_hi - plan.v_lo
    lo = plan.v_lo - RANGE_SLACK * span
    hi = plan.v_hi + RANGE_SLACK * span
    if np.any(v < lo - 1e-12) or np.any(v > hi + 1e-12):
        raise ConfigError(f"control inputs {v} outside the extended range [{lo}, {hi}]")


def _face_velocities(plan: _Plan, state: FieldState, v: np.ndarray, scenario: ScenarioConfig) -> np.ndarray:
    """Staggered velocities: reuse the carried array or interpolate centers."""
    n = plan.grid.n_cells
    if state.u_face is not None:
        uf = np.array(state.u_face, dtype=float, copy=True)
        if uf.size != n + 1:
            raise ConfigError("u_face length must be n_cells + 1")
        if not plan.is_loop:
            uf[0] = v[scenario.channel_index("u_in")]
        return uf
    uc = state.u
    uf = np.empty(n + 1)
    if plan.is_loop:
        left = np.roll(np.arange(n), 1)
        uf[:n] = 0.5 * (uc[left] + uc)
        uf[n] = uf[0]
    else:
        uf[1:n] = np.interp(plan.grid.faces[1:n], plan.grid.centers, uc)
        uf[0] = v[scenario.channel_index("u_in")]
        uf[n] = uc[-1]
    return uf


# ===================== single substep =====================


def _substep(
    plan: _Plan,
    scenario: ScenarioConfig,
    p_c: np.ndarray,
    T_c: np.ndarray,
    u_f: np.ndarray,
    v: np.ndarray,
    dt: float,
    cfg: SolverConfig,
    audit: dict | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    fluid = scenario.fluid
    a, b, cp = fluid.rho_a, fluid.rho_b, fluid.cp
    grid = plan.grid
    n = grid.n_cells
    dz = grid.dz
    is_loop = plan.is_loop

    courant = float(np.max(np.abs(u_f))) * dt / float(np.min(dz))
    if courant > 1.0:
        raise NumericalError(
            f"advective Courant number {courant:.3f} > 1 at substep {dt} s; "
            "reduce the substep or the velocity range"
        )

    rho_c = density(fluid, T_c)
    h = rho_c * T_c

    if not is_loop:
        T_in = v[scenario.channel_index("T_in")]
        rho_in = a - b * T_in
        h_in = rho_in * T_in

    # --- energy: conservative upwind fluxes of h = rho*T with old velocities ---
    phi = np.empty(n + 1)
    if is_loop:
        left = np.roll(np.arange(n), 1)
        h_upw = np.where(u_f[:n] >= 0.0, h[left], h)
        phi[:n] = u_f[:n] * h_upw
        phi[n] = phi[0]
    else:
        phi[1:n] = u_f[1:n] * np.where(u_f[1:n] >= 0.0, h[:-1], h[1:])
        phi[0] = u_f[0] * (h_in if u_f[0] >= 0.0 else h[0])
        phi[n] = u_f[n] * h[-1]  # outflow (flow does not reverse at the outlet)

    q_cell = plan.q_fixed + plan.q_ctrl @ v
    h_new = h - (dt / dz) * (phi[1:] - phi[:-1]) + dt * q_cell / cp
    if b > 0.0:
        disc = a * a - 4.0 * b * h_new
        if np.any(disc <= 0.0):
            raise NumericalError("energy update left the closure's invertible range")
        T_new = (a - np.sqrt(disc)) / (2.0 * b)
    else:
        T_new = h_new / a
    rho_new = a - b * T_new

    # --- momentum + continuity (Picard on the friction coefficient) ---
    # upwind directions and face densities are frozen at the old velocity signs
    if is_loop:
        sign_pos = u_f[:n] >= 0.0
        rho_f = np.empty(n + 1)
        rho_f[:n] = np.where(sign_pos, rho_new[left], rho_new)
        rho_f[n] = rho_f[0]
        # explicit upwind advection du/dz at each face
        adv = np.empty(n + 1)
        grad_left = (u_f[:n] - u_f[left]) / dz[left]  # cell between faces j-1, j
        grad_right = (u_f[1 : n + 1] - u_f[:n]) / dz  # cell between faces j, j+1
        adv[:n] = u_f[:n] * np.where(sign_pos, grad_left, grad_right)
        adv[n] = adv[0]
    else:
        rho_f = np.empty(n + 1)
        rho_f[1:n] = np.where(u_f[1:n] >= 0.0, rho_new[:-1], rho_new[1:])
        rho_f[0] = rho_in if u_f[0] >= 0.0 else rho_new[0]
        rho_f[n] = rho_new[-1]
        adv = np.zeros(n + 1)
        gl = (u_f[1:n] - u_f[0 : n - 1]) / dz[:-1]
        gr = (u_f[2 : n + 1] - u_f[1:n]) / dz[1:]
        adv[1:n] = u_f[1:n] * np.where(u_f[1:n] >= 0.0, gl, gr)
        adv[n] = u_f[n] * (u_f[n] - u_f[n - 1]) / dz[-1] if u_f[n] >= 0.0 else 0.0

    m_i = -dz * (rho_new - rho_c) / dt  # continuity source per cell
    dp_pump = v[scenario.channel_index("dp_pump")] if is_loop else 0.0

    u_k = u_f.copy()
    p_new = p_c
    converged = False
    idx = np.arange(n)
    for _ in range(cfg.max_iters):
        D = rho_f * (1.0 / dt + plan.fric * np.abs(u_k) / 2.0)
        uhat = rho_f * (u_f / dt - adv + plan.grav) / D
        e = 1.0 / (plan.dzf * D)

        # substituting u_j = uhat_j - e_j * dp_j into continuity gives a
        # pressure system; el/er are the left/right face coupling weights
        el = rho_f[:n] * e[:n]
        er = rho_f[1:] * e[1:]
        rhs = m_i - rho_f[1:] * uhat[1:] + rho_f[:n] * uhat[:n]

        if is_loop:
            # cyclic continuity with cell ref_cell replaced by the pressure pin
            re = plan.ref_cell
            A_mat = np.diag(el + er)
            A_mat[idx, idx - 1] -= el  # wraps cell 0 to column n-1
            A_mat[idx, (idx + 1) % n] -= er
            rhs[0] += el[0] * dp_pump  # pump jump sits at the wrap face
            rhs[n - 1] -= er[n - 1] * dp_pump
            A_mat[re, :] = 0.0
            A_mat[re, re] = 1.0
            rhs[re] = scenario.reference_pressure
            p_new = np.linalg.solve(A_mat, rhs)
            dpf = np.empty(n + 1)
            dpf[0] = p_new[0] - p_new[n - 1] - dp_pump
            dpf[1:n] = p_new[1:] - p_new[:-1]
            dpf[n] = dpf[0]
        else:
            # tridiagonal: face 0 carries the fixed inlet velocity (no
            # pressure coupling), face n sees the prescribed outlet pressure
            el[0] = 0.0
            rhs[0] = m_i[0] - rho_f[1] * uhat[1] + rho_f[0] * u_f[0]
            rhs[n - 1] += er[n - 1] * scenario.outlet_pressure
            ab = np.zeros((3, n))
            ab[0, 1:] = -er[:-1]
            ab[1, :] = el + er
            ab[2, :-1] = -el[1:]
            p_new = scipy.linalg.solve_banded((1, 1), ab, rhs)
            dpf = np.empty(n + 1)
            dpf[0] = 0.0
            dpf[1:n] = p_new[1:] - p_new[:-1]
            dpf[n] = scenario.outlet_pressure - p_new[-1]

        u_next = uhat - e * dpf
        if not is_loop:
            u_next[0] = u_f[0]  # Dirichlet inlet
        else:
            u_next[n] = u_next[0]
        du = float(np.max(np.abs(u_next - u_k)))
        u_k = u_next
        if du < cfg.tol * max(1.0, float(np.max(np.abs(u_k)))):
            converged = True
            break
    if not converged:
        raise NumericalError(
            f"momentum Picard iteration did not converge (last change {du:.3e})"
        )

    if not (np.all(np.isfinite(p_new)) and np.all(np.isfinite(u_k)) and np.all(np.isfinite(T_new))):
        raise NumericalError("non-finite fields after substep")

    if audit is not None:
        area = scenario.segments[0].flow_area
        mass_old = float(np.sum(rho_c * dz)) * area
        mass_new = float(np.sum(rho_new * dz)) * area
        if is_loop:
            # every cell but the pinned one satisfies continuity exactly, so
            # the total mass change decomposes into the pinned cell's own
            # density change minus the net inflow through its two faces
            re = plan.ref_cell
            jl, jr = re, (re + 1) % n
            bnd = (rho_f[jl] * u_k[jl] - rho_f[jr] * u_k[jr]) * area * dt
            audit["pinned_mass_change"] = (
                audit.get("pinned_mass_change", 0.0)
                + dz[re] * (rho_new[re] - rho_c[re]) * area
            )
            enth_bnd = 0.0  # cyclic fluxes telescope away
        else:
            bnd = (rho_f[0] * u_k[0] - rho_f[n] * u_k[n]) * area * dt
            enth_bnd = (phi[0] - phi[n]) * area * cp * dt
        enth_old = float(np.sum(h * dz)) * area * cp
        enth_new = float(np.sum(h_new * dz)) * area * cp
        src = float(np.sum(q_cell * dz)) * area * dt
        audit["mass_change"] = audit.get("mass_change", 0.0) + (mass_new - mass_old)
        audit["mass_boundary"] = audit.get("mass_boundary", 0.0) + bnd
        audit["mass_total"] = mass_new
        audit["enthalpy_change"] = audit.get("enthalpy_change", 0.0) + (enth_new - enth_old)
        audit["enthalpy_boundary"] = audit.get("enthalpy_boundary", 0.0) + enth_bnd
        audit["enthalpy_source"] = audit.get("enthalpy_source", 0.0) + src
        audit["max_courant"] = max(audit.get("max_courant", 0.0), courant)

    return p_new, T_new, u_k


# ===================== public stepping API =====================


def step_with_audit(
    state: FieldState,
    inputs,
    scenario: ScenarioConfig,
    solver_config: SolverConfig = SolverConfig(),
) -> tuple[FieldState, dict]:
    """Advance one delta_t with constant controls; also return balance audits.

    The audit dict accumulates over the substeps: total mass/enthalpy change,
    net boundary fluxes (for the loop, the net flow through the pinned cell's
    faces), the applied source integral, and the peak Courant number.
    """
    plan = _plan(scenario)
    v = np.asarray(inputs, dtype=float)
    if v.shape != (scenario.n_controls,):
        raise ConfigError(f"expected {scenario.n_controls} control inputs")
    _check_inputs(plan, v)
    if state.grid_z.size != plan.grid.n_cells:
        raise ConfigError("state is not on the scenario grid")

    dt = solver_config.substep
    n_sub = solver_config.n_substeps(scenario.delta_t)
    p_c = np.array(state.p, dtype=float)
    T_c = np.array(state.T, dtype=float)
    u_f = _face_velocities(plan, state, v, scenario)
    audit: dict = {}
    for _ in range(n_sub):
        p_c, T_c, u_f = _substep(plan, scenario, p_c, T_c, u_f, v, dt, solver_config, audit)
    u_c = 0.5 * (u_f[:-1] + u_f[1:])
    new_state = FieldState(grid_z=plan.grid.centers, p=p_c, u=u_c, T=T_c, u_face=u_f)
    return new_state, audit


def step(
    state: FieldState,
    inputs,
    scenario: ScenarioConfig,
    solver_config: SolverConfig = SolverConfig(),
) -> FieldState:
    """Advance the state one delta_t interval under constant controls."""
    return step_with_audit(state, inputs, scenario, solver_config)[0]


# ===================== steady state =====================

# fixed per-field scales for the convergence metric (cannot collapse to zero)
_STEADY_SCALES = {"p": 1.0e3, "u": 1.0, "T": 100.0}


def _initial_guess(scenario: ScenarioConfig, v: np.ndarray) -> FieldState:
    """Analytic marching profile: good enough to cut convergence to a few transits."""
    plan = _plan(scenario)
    grid = plan.grid
    n = grid.n_cells
    fluid = scenario.fluid
    q_cell = plan.q_fixed + plan.q_ctrl @ v

    if scenario.kind == "heated_channel":
        u_in = v[scenario.channel_index("u_in")]
        T_in = v[scenario.channel_index("T_in")]
        G = float(density(fluid, T_in)) * u_in  # steady mass flux
        T = np.empty(n)
        run = T_in
        for i in range(n):
            run = run + q_cell[i] * grid.dz[i] / (G * fluid.cp)
            T[i] = run - 0.5 * q_cell[i] * grid.dz[i] / (G * fluid.cp)
        u_c = G / density(fluid, T)
        # integrate friction drop backward from the outlet
        p = np.empty(n)
        rho = density(fluid, T)
        drop = plan.fric[1:] * rho * u_c * np.abs(u_c) / 2.0 * plan.dzf[1:]
        acc = scenario.outlet_pressure
        for i in range(n - 1, -1, -1):
            p[i] = acc + drop[i] / 2.0
            acc = acc + drop[i]
        return FieldState(grid_z=grid.centers, p=p, u=u_c, T=T)

    # loop: uniform temperature at the reference, velocity from the head balance
    T = np.full(n, scenario.reference_temperature)
    rho = density(fluid, scenario.reference_temperature)
    dp_pump = v[scenario.channel_index("dp_pump")]
    coeff = float(np.sum(plan.fric[:n] * plan.dzf[:n])) * rho / 2.0
    u0 = np.sqrt(max(dp_pump, 0.0) / max(coeff, 1e-30))
    u_c = np.full(n, u0)
    p = np.zeros(n)
    acc = 0.0
    for i in range(1, n):
        acc -= plan.fric[i] * rho * u0 * abs(u0) / 2.0 * plan.dzf[i]
        p[i] = acc
    p -= p[scenario.reference_cell] - scenario.reference_pressure
    return FieldState(grid_z=grid.centers, p=p, u=u_c, T=T)


def steady_state(
    scenario: ScenarioConfig,
    inputs,
    solver_config: SolverConfig = SolverConfig(),
    tol: float = 1e-8,
    max_time: float = 2000.0,
) -> FieldState:
    """March the transient until fields stop changing.

    Convergence: max per-field change over one delta_t, divided by fixed field
    scales (p: 1 kPa, u: 1 m/s, T: 100 K), below ``tol``. Raises
    NumericalError with the residual if max_time elapses first.
    """
    v = np.asarray(inputs, dtype=float)
    state = _initial_guess(scenario, v)
    t = 0.0
    resid = np.inf
    while t < max_time:
        new_state, _ = step_with_audit(state, v, scenario, solver_config)
        resid = max(
            float(np.max(np.abs(new_state.p - state.p))) / _STEADY_SCALES["p"],
            float(np.max(np.abs(new_state.u - state.u))) / _STEADY_SCALES["u"],
            float(np.max(np.abs(new_state.T - state.T))) / _STEADY_SCALES["T"],
        )
        state = new_state
        t += scenario.delta_t
        if resid < tol:
            return state
    raise NumericalError(
        f"steady_state did not converge within {max_time} s (residual {resid:.3e})"
    )


# ===================== experiments =====================


def sensor_readout(state: FieldState, stations) -> np.ndarray:
    """(3, s) array of (p, u, T) linearly interpolated at the station positions."""
    stations = np.asarray(stations, dtype=float)
    return np.stack(
        [
            np.interp(stations, state.grid_z, state.p),
            np.interp(stations, state.grid_z, state.u),
            np.interp(stations, state.grid_z, state.T),
        ]
    )


def run_experiment(
    scenario: ScenarioConfig,
    trajectory: InputTrajectory,
    initial_state: FieldState,
    solver_config: SolverConfig = SolverConfig(),
    n_steps: int | None = None,
) -> SimulationRecord:
    """Step through the trajectory, recording fields and sensors each delta_t.

    The control vector applied over [t_k, t_{k+1}) is the trajectory value at
    the interval's left endpoint (zero-order hold at the control cadence).
    """
    if n_steps is None:
        n_steps = round(scenario.episode_duration / scenario.delta_t)
    plan = _plan(scenario)
    stations = np.asarray(scenario.sensor_stations, dtype=float)
    K = int(n_steps)
    n = plan.grid.n_cells

    times = np.arange(K + 1) * scenario.delta_t
    p = np.empty((K + 1, n))
    u = np.empty((K + 1, n))
    T = np.empty((K + 1, n))
    v = np.empty((K + 1, scenario.n_controls))
    sensors = np.empty((K + 1, 3, stations.size))

    state = initial_state
    p[0], u[0], T[0] = state.p, state.u, state.T
    v[0] = trajectory.value(0.0)
    sensors[0] = sensor_readout(state, stations)
    for k in range(K):
        vk = trajectory.value(float(times[k]))
        state = step(state, vk, scenario, solver_config)
        p[k + 1], u[k + 1], T[k + 1] = state.p, state.u, state.T
        v[k] = vk
        sensors[k + 1] = sensor_readout(state, stations)
    v[K] = trajectory.value(float(times[K]))

    return SimulationRecord(
        scenario_hash=scenario_fingerprint(scenario),
        times=times,
        grid_z=plan.grid.centers.copy(),
        p=p,
        u=u,
        T=T,
        v=v,
        station_z=stations,
        sensors=sensors,
    )


# ===================== trajectory generation =====================


def generate_trajectories(
    seed: int, scenario: ScenarioConfig, n_experiments: int
) -> list[InputTrajectory]:
    """Random hold/ramp control schedules, one independent stream per experiment.

    Each channel alternates holds of random duration with linear ramps of
    random rate, clipped to the configured ranges. Successive ramp targets
    random-walk from the current level rather than resampling the whole
    range: the inputs keep moving at the control cadence (so snapshots never
    pin down the next sample by themselves) while per-step changes stay
    moderate, which keeps the plant close to the quasi-steady manifold that
    one-step predictions can actually resolve. Episode starts are uniform
    over the range so a corpus still covers the full operating box.
    Experiment k draws from default_rng((seed, k)), so corpora are
    reproducible and experiments are independent.
    """
    if n_experiments < 1:
        raise ConfigError("n_experiments must be >= 1")
    duration = scenario.episode_duration
    dt = scenario.delta_t
    out = []
    for k in range(n_experiments):
        rng = np.random.default_rng((seed, k))
        knot_times = []
        knot_values = []
        for lo, hi in scenario.input_ranges:
            # per-episode move scale, fraction of the channel range
            delta = float(rng.uniform(0.05, 0.15)) * (hi - lo)
            t_list = [0.0]
            v_list = [float(rng.uniform(lo, hi))]
            t = 0.0
            while t < duration:
                if rng.uniform() < 0.15:
                    hold = float(rng.uniform(2.0, 4.0)) * dt  # occasional long rest
                else:
                    hold = float(rng.uniform(0.3, 1.5)) * dt
                t_hold = min(t + hold, duration)
                if t_hold > t:
                    t_list.append(t_hold)
                    v_list.append(v_list[-1])
                    t = t_hold
                if t >= duration:
                    break
                ramp = float(rng.uniform(0.8, 2.0)) * dt
                target = v_list[-1] + float(rng.uniform(-delta, delta))
                t_ramp = min(t + ramp, duration)
                frac = (t_ramp - t) / ramp
                value = v_list[-1] + frac * (target - v_list[-1])
                t_list.append(t_ramp)
                v_list.append(float(np.clip(value, lo, hi)))
                t = t_ramp
            knot_times.append(np.asarray(t_list))
            knot_values.append(np.asarray(v_list))
        out.append(
            InputTrajectory(
                channels=scenario.control_channels,
                knot_times=tuple(knot_times),
                knot_values=tuple(knot_values),
            )
        )
    return out


# ===================== fault injection =====================


def inject_degradation(
    scenario: ScenarioConfig, segment_index: int, friction_multiplier: float
) -> ScenarioConfig:
    """Copy of the scenario with one segment's friction factor scaled."""
    if not 0 <= segment_index < len(scenario.segments):
        raise ConfigError(f"segment index {segment_index} out of range")
    if friction_multiplier <= 0:
        raise ConfigError("friction multiplier must be positive")
    segs = list(scenario.segments)
    old = segs[segment_index]
    segs[segment_index] = replace(
        old, friction_factor=old.friction_factor * friction_multiplier
    )
    return replace(scenario, segments=tuple(segs))
