"""Dataset assembly, losses, and training for the field surrogates.

A surrogate input row is the scaled vector

    [z*, t*, v*_0 .. v*_{p-1}, x0*_0 .. x0*_{q-1}]

where x0 is the sensor snapshot at the start of the step, laid out
fields-major: all pressure stations, then all velocity stations, then all
temperature stations (q = 3 * n_stations). Targets are the scaled field
triple (p*, u*, T*) at the row's (z, t).

Each simulation step contributes two rows per sensor station: a t = 0 row
whose target restates the matching x0 entry (the model learns the initial
condition is an identity), and a t = delta_t row whose target is the next
snapshot. Closed-loop rollout aliases the model's own station predictions
as the next step's x0.

The physics loss evaluates the mass, momentum, and energy residuals at
random collocation points. Outputs are unscaled inside the autodiff graph,
spatial/temporal derivatives come from forward-mode tangent channels
carried through the tape, and the three residuals are nondimensionalized
(see ``PdeResidualSet``) before a Log-Cosh penalty against zero.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, absval, logcosh, logcosh_np
from .errors import NumericalError
from .network import (
    FIELD_ORDER,
    MlpSpec,
    ParamStore,
    TapeParams,
    forward,
    forward_tape,
    forward_with_tangents,
    init_params,
    learning_rate,
    optimizer_step,
)
from .solver import SimulationRecord
from .transport import (
    ConfigError,
    ScalingSpec,
    ScenarioConfig,
    build_grid,
    density,
    scenario_fingerprint,
)

__all__ = [
    "Sample",
    "NoiseSpec",
    "TrainConfig",
    "Dataset",
    "Batch",
    "PdeResidualSet",
    "InputLayout",
    "input_layout",
    "mlp_for_scenario",
    "compute_scaling",
    "assemble_dataset",
    "sample_collocation",
    "add_noise",
    "measurement_loss",
    "physics_loss",
    "train",
    "rollout_evaluate",
    "RolloutResult",
    "evaluate_records",
]

# instrumentation: bumped on every physics_loss evaluation
physics_eval_count = 0


@dataclass(frozen=True)
class InputLayout:
    """Column offsets of one scaled input row."""

    n_controls: int
    n_stations: int

    @property
    def n_state(self) -> int:
        return 3 * self.n_stations

    @property
    def input_dim(self) -> int:
        return 2 + self.n_controls + self.n_state

    @property
    def z_col(self) -> int:
        return 0

    @property
    def t_col(self) -> int:
        return 1

    @property
    def v_cols(self) -> slice:
        return slice(2, 2 + self.n_controls)

    @property
    def x0_cols(self) -> slice:
        return slice(2 + self.n_controls, self.input_dim)


def input_layout(scenario: ScenarioConfig) -> InputLayout:
    return InputLayout(n_controls=scenario.n_controls, n_stations=len(scenario.sensor_stations))


def mlp_for_scenario(scenario: ScenarioConfig, widths=(200, 100, 100)) -> MlpSpec:
    """Architecture sized to the scenario's control and sensor counts."""
    lay = input_layout(scenario)
    return MlpSpec(
        input_dim=lay.input_dim,
        head_width=widths[0],
        intermediate_width=widths[1],
        tail_width=widths[2],
    )


@dataclass(frozen=True)
class Sample:
    """One dataset row in physical units."""

    z: float  # m
    t: float  # s, 0 or delta_t
    v: np.ndarray  # (n_controls,)
    x0: np.ndarray  # (3 * n_stations,) fields-major sensor snapshot
    target: np.ndarray  # (3,) field triple (p, u, T) at (z, t)


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement-noise model applied in scaled units."""

    mode: str = "none"  # none | homoscedastic | heteroscedastic
    sigma: float = 0.0  # additive noise std
    xi: float = 0.0  # variance factor for signal-dependent noise

    def __post_init__(self) -> None:
        if self.mode not in ("none", "homoscedastic", "heteroscedastic"):
            raise ConfigError(f"unknown noise mode {self.mode!r}")
        if self.sigma < 0 or self.xi < 0:
            raise ConfigError("noise parameters must be nonnegative")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.5  # measurement-loss weight
    beta: float = 0.5  # physics-loss weight; alpha + beta = 1
    epochs: int = 500
    batch_size: int = 2048
    base_lr: float = 1e-3
    collocation_size: int | None = None  # defaults to batch_size
    seed: int = 0

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0 or abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ConfigError("loss weights must be nonnegative and sum to 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.collocation_size is not None and self.collocation_size < 1:
            raise ConfigError("collocation_size must be positive")

    @property
    def n_collocation(self) -> int:
        return self.batch_size if self.collocation_size is None else self.collocation_size


@dataclass
class Batch:
    """Scaled minibatch: inputs (B, input_dim), targets (B, 3)."""

    inputs: np.ndarray
    targets: np.ndarray


@dataclass(frozen=True)
class Dataset:
    """Assembled corpus in physical units, one array per row component."""

    scenario_hash: str
    delta_t: float
    z: np.ndarray  # (N,)
    t: np.ndarray  # (N,)
    v: np.ndarray  # (N, p)
    x0: np.ndarray  # (N, q)
    targets: np.ndarray  # (N, 3)

    @property
    def n_samples(self) -> int:
        return self.z.size

    def sample(self, i: int) -> Sample:
        return Sample(
            z=float(self.z[i]), t=float(self.t[i]),
            v=self.v[i].copy(), x0=self.x0[i].copy(), target=self.targets[i].copy(),
        )

    def scaled(self, scaling: ScalingSpec) -> Batch:
        """Full corpus as one scaled Batch (fields-major x0 scaling)."""
        n_stations = self.x0.shape[1] // 3
        inputs = np.empty((self.n_samples, 2 + self.v.shape[1] + self.x0.shape[1]))
        inputs[:, 0] = scaling.scale_z(self.z)
        inputs[:, 1] = scaling.scale_t(self.t)
        inputs[:, 2 : 2 + self.v.shape[1]] = scaling.scale_v(self.v)
        off = 2 + self.v.shape[1]
        targets = np.empty((self.n_samples, 3))
        for f, name in enumerate(FIELD_ORDER):
            cols = slice(off + f * n_stations, off + (f + 1) * n_stations)
            inputs[:, cols] = scaling.scale_field(name, self.x0[:, f * n_stations : (f + 1) * n_stations])
            targets[:, f] = scaling.scale_field(name, self.targets[:, f])
        return Batch(inputs=inputs, targets=targets)


# ===================== scaling and assembly =====================

_SCALE_MARGIN = 0.05  # symmetric headroom added to field ranges


def check_stream_compatible(record: SimulationRecord, scenario: ScenarioConfig) -> None:
    """Validate that a record's layout matches the scenario's, hash aside.

    Sensor streams from a drifted plant carry a different scenario hash but
    must still share the station positions, control width, and cadence.
    """
    if record.station_z.size != len(scenario.sensor_stations) or not np.allclose(
        record.station_z, scenario.sensor_stations
    ):
        raise ConfigError("record stations do not match the scenario's sensor stations")
    if record.v.shape[1] != len(scenario.control_channels):
        raise ConfigError("record control width does not match the scenario")
    if record.times.size >= 2 and not np.isclose(
        record.times[1] - record.times[0], scenario.delta_t
    ):
        raise ConfigError("record cadence does not match the scenario delta_t")


def compute_scaling(records: list[SimulationRecord], scenario: ScenarioConfig) -> ScalingSpec:
    """Min-max bounds over the corpus's full fields, with margin.

    Field bounds get 5 % symmetric headroom so mild extrapolation stays
    inside [0, 1]-ish; controls use the configured input ranges verbatim;
    density bounds follow from the closure at the temperature bounds.
    """
    if not records:
        raise ConfigError("scaling needs at least one record")
    bounds = {}
    for name in FIELD_ORDER:
        lo = min(float(getattr(r, name).min()) for r in records)
        hi = max(float(getattr(r, name).max()) for r in records)
        span = max(hi - lo, 1e-12)
        bounds[name] = (lo - _SCALE_MARGIN * span, hi + _SCALE_MARGIN * span)
    v_lo = tuple(r[0] for r in scenario.input_ranges)
    v_hi = tuple(r[1] for r in scenario.input_ranges)
    return ScalingSpec(
        z_max=scenario.total_length,
        t_max=scenario.delta_t,
        p_min=bounds["p"][0], p_max=bounds["p"][1],
        u_min=bounds["u"][0], u_max=bounds["u"][1],
        T_min=bounds["T"][0], T_max=bounds["T"][1],
        rho_min=float(density(scenario.fluid, bounds["T"][1])),
        rho_max=float(density(scenario.fluid, bounds["T"][0])),
        v_min=v_lo, v_max=v_hi,
    )


def assemble_dataset(
    records: list[SimulationRecord],
    scenario: ScenarioConfig,
    scaling: ScalingSpec | None = None,
    strict: bool = True,
) -> tuple[Dataset, ScalingSpec]:
    """Emit the two-row-per-station samples for every step of every record.

    Scaling is computed over these records unless an existing spec is passed
    (test corpora must reuse the training scaling). ``strict`` pins records
    to the exact scenario fingerprint; diagnostics relaxes it to structural
    compatibility because streams from a degraded plant hash differently.
    """
    fingerprint = scenario_fingerprint(scenario)
    for r in records:
        if strict and r.scenario_hash != fingerprint:
            raise ConfigError("record was generated under a different scenario")
        if not strict:
            check_stream_compatible(r, scenario)
        if r.n_steps < 2:
            raise ConfigError("records must contain at least 2 steps")
    if scaling is None:
        scaling = compute_scaling(records, scenario)

    z_rows, t_rows, v_rows, x0_rows, tgt_rows = [], [], [], [], []
    for rec in records:
        K = rec.n_steps
        s = rec.station_z.size
        for k in range(K):
            x0 = rec.sensors[k].ravel()  # fields-major (3, s) -> (3s,)
            for t_val, snap in ((0.0, rec.sensors[k]), (scenario.delta_t, rec.sensors[k + 1])):
                z_rows.append(rec.station_z)
                t_rows.append(np.full(s, t_val))
                v_rows.append(np.tile(rec.v[k], (s, 1)))
                x0_rows.append(np.tile(x0, (s, 1)))
                tgt_rows.append(snap.T.copy())  # (s, 3) rows are (p, u, T) per station
    dataset = Dataset(
        scenario_hash=fingerprint,
        delta_t=scenario.delta_t,
        z=np.concatenate(z_rows),
        t=np.concatenate(t_rows),
        v=np.concatenate(v_rows),
        x0=np.concatenate(x0_rows),
        targets=np.concatenate(tgt_rows),
    )
    return dataset, scaling


# ===================== noise =====================


def add_noise(batch: Batch, noise: NoiseSpec, rng, layout: InputLayout) -> Batch:
    """Fresh noise on targets and the x0 input block; controls untouched."""
    if noise.mode == "none":
        return Batch(inputs=batch.inputs.copy(), targets=batch.targets.copy())
    inputs = batch.inputs.copy()
    targets = batch.targets.copy()
    x0 = inputs[:, layout.x0_cols]
    if noise.mode == "homoscedastic":
        targets += noise.sigma * rng.standard_normal(targets.shape)
        x0 += noise.sigma * rng.standard_normal(x0.shape)
    else:
        targets += np.sqrt(np.abs(targets) * noise.xi) * rng.standard_normal(targets.shape)
        x0 += np.sqrt(np.abs(x0) * noise.xi) * rng.standard_normal(x0.shape)
    return Batch(inputs=inputs, targets=targets)


# ===================== losses =====================


def measurement_loss(predictions, targets):
    """Mean Log-Cosh over batch and field channels.

    Tape mode when ``predictions`` is the (p*, u*, T*) Tensor triple; plain
    numpy when it is a (B, 3) array.
    """
    if isinstance(predictions, (tuple, list)):
        targets = np.asarray(targets, dtype=np.float64)
        total = None
        for i, out in enumerate(predictions):
            term = logcosh(out - targets[:, i : i + 1]).mean()
            total = term if total is None else total + term
        return total * (1.0 / len(predictions))
    return float(np.mean(logcosh_np(np.asarray(predictions) - np.asarray(targets))))


@dataclass(frozen=True)
class PdeResidualSet:
    """Nondimensional residuals per collocation point.

    Mass is scaled by rho_ref/t_max, momentum by rho_ref*u_ref/t_max, and
    energy by rho_ref*C_p*T_range/t_max, with rho_ref the corpus density
    maximum, u_ref the largest control-velocity magnitude scale, and
    T_range the corpus temperature span.
    """

    mass: np.ndarray
    momentum: np.ndarray
    energy: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"mass": self.mass, "momentum": self.momentum, "energy": self.energy}


@functools.lru_cache(maxsize=32)
def _segment_tables(scenario: ScenarioConfig):
    grid = build_grid(scenario)
    fric = np.array([s.friction_factor / s.hydraulic_diameter for s in scenario.segments])
    grav = np.array([s.gravity_component for s in scenario.segments])
    q_fix = np.array([s.heat_source for s in scenario.segments])
    q_ctrl = np.zeros((len(scenario.segments), scenario.n_controls))
    for i, s in enumerate(scenario.segments):
        if s.volumetric_source_id is not None:
            q_ctrl[i, scenario.channel_index(s.volumetric_source_id)] = s.source_scale
    return grid, fric, grav, q_fix, q_ctrl


def pointwise_closures(scenario: ScenarioConfig, z_phys: np.ndarray, v_phys: np.ndarray):
    """(f/D_h, g, q''') arrays evaluated at physical positions and controls."""
    grid, fric, grav, q_fix, q_ctrl = _segment_tables(scenario)
    segs = grid.segment_of_cell[grid.cell_of_z(z_phys)]
    q = q_fix[segs] + np.einsum("bc,bc->b", q_ctrl[segs], v_phys)
    return fric[segs], grav[segs], q


def _reference_scales(scaling: ScalingSpec, fluid):
    rho_ref = scaling.rho_max
    u_ref = max(abs(scaling.u_min), abs(scaling.u_max))
    T_range = scaling.span("T")
    t_max = scaling.t_max
    return (
        rho_ref / t_max,
        rho_ref * u_ref / t_max,
        rho_ref * fluid.cp * T_range / t_max,
    )


def physics_residuals(outs, tans_z, tans_t, closures, scenario, scaling):
    """Nondimensional PDE residual triple; works on Tensors or ndarrays.

    outs/tans are the (p*, u*, T*) triples of values and of directional
    derivatives along the scaled z and t axes. Unscaling and chain-rule
    factors are applied here so everything stays inside the graph when the
    inputs are Tensors.
    """
    fluid = scenario.fluid
    fric, grav, q = closures
    span_p, span_u, span_T = (scaling.span(n) for n in FIELD_ORDER)
    u = outs[1] * span_u + scaling.u_min
    T = outs[2] * span_T + scaling.T_min
    rho = fluid.rho_a - fluid.rho_b * T
    dp_dz = tans_z[0] * (span_p / scaling.z_max)
    du_dz = tans_z[1] * (span_u / scaling.z_max)
    dT_dz = tans_z[2] * (span_T / scaling.z_max)
    du_dt = tans_t[1] * (span_u / scaling.t_max)
    dT_dt = tans_t[2] * (span_T / scaling.t_max)
    drho_dz = -fluid.rho_b * dT_dz
    drho_dt = -fluid.rho_b * dT_dt
    u_abs = absval(u) if isinstance(u, Tensor) else np.abs(u)
    r_mass = drho_dt + rho * du_dz + u * drho_dz
    r_mom = (
        rho * du_dt + rho * u * du_dz + dp_dz - rho * grav
        + 0.5 * fric * rho * u * u_abs
    )
    r_energy = rho * fluid.cp * (dT_dt + u * dT_dz) - q
    s_mass, s_mom, s_energy = _reference_scales(scaling, fluid)
    return r_mass * (1.0 / s_mass), r_mom * (1.0 / s_mom), r_energy * (1.0 / s_energy)


def physics_loss(spec: MlpSpec, params, collocation: np.ndarray, scenario: ScenarioConfig,
                 scaling: ScalingSpec) -> tuple[Tensor, PdeResidualSet]:
    """Mean Log-Cosh of the nondimensional residuals at collocation inputs.

    ``params`` may be a ParamStore (standalone call) or a TapeParams already
    in use by a measurement loss, so both losses share one backward sweep.
    """
    global physics_eval_count
    physics_eval_count += 1
    tape = params if isinstance(params, TapeParams) else TapeParams(params)
    colloc = np.asarray(collocation, dtype=np.float64)
    lay_n = spec.input_dim
    if colloc.ndim != 2 or colloc.shape[1] != lay_n:
        raise ConfigError("collocation batch shape does not match the network input")
    z_star = colloc[:, 0]
    if np.any(z_star < -1e-9) or np.any(z_star > 1.0 + 1e-9):
        raise ConfigError("collocation z outside the scaled domain [0, 1]")

    n_controls = len(scenario.control_channels)
    v_phys = scaling.unscale_v(colloc[:, 2 : 2 + n_controls])
    z_phys = scaling.unscale_z(z_star)
    fric, grav, q = pointwise_closures(scenario, z_phys, v_phys)
    closures = (fric[:, None], grav[:, None], q[:, None])

    e_z = np.zeros(lay_n)
    e_z[0] = 1.0
    e_t = np.zeros(lay_n)
    e_t[1] = 1.0
    outs, tans = forward_with_tangents(spec, tape, colloc, [e_z, e_t])
    r_mass, r_mom, r_energy = physics_residuals(outs, tans[0], tans[1], closures, scenario, scaling)
    loss = (logcosh(r_mass).mean() + logcosh(r_mom).mean() + logcosh(r_energy).mean()) * (1.0 / 3.0)
    residuals = PdeResidualSet(
        mass=r_mass.value.ravel().copy(),
        momentum=r_mom.value.ravel().copy(),
        energy=r_energy.value.ravel().copy(),
    )
    return loss, residuals


# ===================== collocation =====================


def sample_collocation(rng, batch_size: int, scenario: ScenarioConfig, batch: Batch,
                       layout: InputLayout | None = None) -> np.ndarray:
    """Random scaled collocation inputs inheriting (v, x0) from the minibatch.

    z* and t* are uniform on [0, 1]; each collocation row copies the control
    and initial-state columns of a uniformly chosen measurement row (noisy
    if the minibatch was noised).
    """
    if batch.inputs.shape[0] == 0:
        raise ConfigError("measurement minibatch is empty")
    lay = layout or input_layout(scenario)
    picks = rng.integers(0, batch.inputs.shape[0], size=batch_size)
    colloc = batch.inputs[picks].copy()
    colloc[:, lay.z_col] = rng.uniform(0.0, 1.0, size=batch_size)
    colloc[:, lay.t_col] = rng.uniform(0.0, 1.0, size=batch_size)
    return colloc


# ===================== training loop =====================


def train(
    spec: MlpSpec,
    dataset: Dataset,
    scenario: ScenarioConfig,
    scaling: ScalingSpec,
    config: TrainConfig,
    noise: NoiseSpec = NoiseSpec(),
    params: ParamStore | None = None,
    log_every: int = 0,
    abort_ratio: float | None = None,
) -> tuple[ParamStore, list[dict]]:
    """Minibatch training of the total loss alpha*L_m + beta*L_p.

    Per batch: noise the measurement rows, evaluate the measurement loss,
    and when beta > 0 draw fresh collocation points (inheriting the noisy
    (x0, v) rows) for the physics loss; one optimizer step per batch with
    the step-decay learning rate. Returns the trained store and one history
    dict per epoch with keys epoch, loss_measurement, loss_physics,
    loss_total, learning_rate.

    ``abort_ratio`` guards warm-started retraining: raise if an epoch's
    total loss exceeds abort_ratio times the first epoch's.
    """
    if dataset.scenario_hash != scenario_fingerprint(scenario):
        raise ConfigError("dataset was assembled under a different scenario")
    lay = input_layout(scenario)
    if lay.input_dim != spec.input_dim:
        raise ConfigError("network input width does not match the scenario layout")
    if params is None:
        params = init_params(spec, config.seed)
    rng = np.random.default_rng(config.seed)
    full = dataset.scaled(scaling)
    n = full.inputs.shape[0]
    history: list[dict] = []
    for epoch in range(1, config.epochs + 1):
        lr = learning_rate(config.base_lr, epoch)
        perm = rng.permutation(n)
        sum_lm = sum_lp = 0.0
        n_seen = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            raw = Batch(inputs=full.inputs[idx], targets=full.targets[idx])
            batch = add_noise(raw, noise, rng, lay)
            tape = TapeParams(params)
            outs = forward_tape(spec, tape, batch.inputs)
            loss_m = measurement_loss(outs, batch.targets)
            if config.beta > 0.0:
                colloc = sample_collocation(rng, config.n_collocation, scenario, batch, lay)
                loss_p, _ = physics_loss(spec, tape, colloc, scenario, scaling)
                total = config.alpha * loss_m + config.beta * loss_p
                lp_val = float(loss_p.value)
            else:
                total = config.alpha * loss_m
                lp_val = 0.0
            lm_val = float(loss_m.value)
            if not np.isfinite(float(total.value)):
                raise NumericalError(
                    f"loss became non-finite at epoch {epoch}, batch {start // config.batch_size}"
                )
            total.backward()
            optimizer_step(params, tape.grad_vector(), lr)
            b = idx.size
            sum_lm += lm_val * b
            sum_lp += lp_val * b
            n_seen += b
        row = {
            "epoch": epoch,
            "loss_measurement": sum_lm / n_seen,
            "loss_physics": sum_lp / n_seen,
            "loss_total": (config.alpha * sum_lm + config.beta * sum_lp) / n_seen,
            "learning_rate": lr,
        }
        history.append(row)
        if abort_ratio is not None and row["loss_total"] > abort_ratio * history[0]["loss_total"]:
            raise NumericalError(
                f"retraining diverged: epoch {epoch} loss {row['loss_total']:.3e} exceeds "
                f"{abort_ratio:g}x the first epoch's {history[0]['loss_total']:.3e}"
            )
        if log_every and (epoch % log_every == 0 or epoch == 1):
            print(
                f"epoch {epoch:4d}  L_m {row['loss_measurement']:.3e}  "
                f"L_p {row['loss_physics']:.3e}  L_total {row['loss_total']:.3e}  lr {lr:.2e}"
            )
    return params, history


# ===================== rollout evaluation =====================


@dataclass
class RolloutResult:
    """Closed-loop rollout against one recorded episode."""

    times: np.ndarray  # (K,) evaluation times (t_1 .. t_K)
    z: np.ndarray  # (n,)
    predicted: dict  # field -> (K, n) physical units
    errors: dict  # field -> (K, n) predicted - truth
    rmse: dict  # field -> float over all (K, n)


def rollout_evaluate(
    spec: MlpSpec,
    params: ParamStore,
    scenario: ScenarioConfig,
    scaling: ScalingSpec,
    record: SimulationRecord,
    oracle_x0: bool = False,
) -> RolloutResult:
    """Iterate the one-step model along a recorded control trajectory.

    Starting from the record's initial sensor snapshot, each step predicts
    the full fields at t = delta_t on the record's grid and the station
    values that become the next x0 (closed loop). With ``oracle_x0`` the
    recorded snapshots are fed instead, bounding the attainable error.
    """
    lay = input_layout(scenario)
    if record.scenario_hash != scenario_fingerprint(scenario):
        raise ConfigError("record was generated under a different scenario")
    z_grid = record.grid_z
    z_star = scaling.scale_z(z_grid)
    st_star = scaling.scale_z(record.station_z)
    n, s = z_grid.size, record.station_z.size
    K = record.n_steps

    rows = np.empty((n + s, lay.input_dim))
    rows[:, lay.t_col] = 1.0  # predictions at t = delta_t
    rows[:n, lay.z_col] = z_star
    rows[n:, lay.z_col] = st_star

    x0 = np.concatenate(
        [scaling.scale_field(name, record.sensors[0][f]) for f, name in enumerate(FIELD_ORDER)]
    )
    pred = {name: np.empty((K, n)) for name in FIELD_ORDER}
    err = {name: np.empty((K, n)) for name in FIELD_ORDER}
    for k in range(K):
        rows[:, lay.v_cols] = scaling.scale_v(record.v[k])
        rows[:, lay.x0_cols] = x0
        y = forward(spec, params, rows)
        for f, name in enumerate(FIELD_ORDER):
            full_phys = scaling.unscale_field(name, y[:n, f])
            pred[name][k] = full_phys
            err[name][k] = full_phys - getattr(record, name)[k + 1]
        if oracle_x0:
            x0 = np.concatenate(
                [scaling.scale_field(name, record.sensors[k + 1][f]) for f, name in enumerate(FIELD_ORDER)]
            )
        else:
            x0 = y[n:].T.ravel()  # (s,3) -> fields-major (3s,)
    rmse = {name: float(np.sqrt(np.mean(err[name] ** 2))) for name in FIELD_ORDER}
    return RolloutResult(times=record.times[1:], z=z_grid.copy(), predicted=pred, errors=err, rmse=rmse)


def evaluate_records(
    spec: MlpSpec,
    params: ParamStore,
    scenario: ScenarioConfig,
    scaling: ScalingSpec,
    records: list[SimulationRecord],
    oracle_x0: bool = False,
) -> dict:
    """Aggregate rollout errors over a record set.

    Returns per field: the space-time error map (RMSE across records at each
    (t, z) point), its mean and max, the overall RMSE, and the per-z error
    profile (RMSE across records and time).
    """
    sq = {name: None for name in FIELD_ORDER}
    z = None
    for rec in records:
        result = rollout_evaluate(spec, params, scenario, scaling, rec, oracle_x0=oracle_x0)
        z = result.z
        for name in FIELD_ORDER:
            e2 = result.errors[name] ** 2
            sq[name] = e2 if sq[name] is None else sq[name] + e2
    out = {"z": z, "fields": {}}
    for name in FIELD_ORDER:
        err_map = np.sqrt(sq[name] / len(records))
        out["fields"][name] = {
            "map": err_map,
            "mean_rmse": float(err_map.mean()),
            "max_rmse": float(err_map.max()),
            "overall_rmse": float(np.sqrt(np.mean(sq[name] / len(records)))),
            "profile": np.sqrt(np.mean(sq[name] / len(records), axis=0)),
        }
    return out
