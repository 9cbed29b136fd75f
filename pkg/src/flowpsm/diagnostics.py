"""Model-based fault detection and localization.

A trained one-step state map is monitored against the live sensor stream:
windowed prediction error above a calibrated threshold latches a fault flag.
After detection the map is retrained on post-fault data only (a drifted twin
of the nominal model), and the spatial profiles of the twin's transport
residuals are differenced against the nominal model's. A fault that enters
one balance equation (for example a flow blockage raising wall friction)
shows up as a localized bump in that equation's residual difference, at the
positions where the learned dynamics disagree with the nominal closures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import FIELD_ORDER, MlpSpec, ParamStore, forward, input_jacobian
from .solver import SimulationRecord
from .training import (
    Dataset,
    PdeResidualSet,
    TrainConfig,
    check_stream_compatible,
    input_layout,
    physics_residuals,
    pointwise_closures,
    train,
)
from .transport import (
    ConfigError,
    ScalingSpec,
    ScenarioConfig,
    build_grid,
)

__all__ = [
    "DetectorConfig",
    "DetectionResult",
    "prediction_errors",
    "detect",
    "calibrate_zeta",
    "transfer_learn_twin",
    "sample_conditions",
    "pde_residuals",
    "ResidualSignature",
    "signature",
    "localization_ratio",
]


# ===================== detection =====================


@dataclass(frozen=True)
class DetectorConfig:
    """Windowed-error fault detector settings.

    The per-step scaled prediction errors are averaged over non-overlapping
    windows of ``window`` steps; a window mean above ``zeta`` trips the
    detector, and the flag latches (no automatic reset).
    """

    zeta: float  # threshold on the window-mean squared error
    window: int = 4  # steps per window

    def __post_init__(self) -> None:
        if self.zeta <= 0.0:
            raise ConfigError("detector threshold zeta must be positive")
        if self.window < 1:
            raise ConfigError("detector window must be >= 1 step")


@dataclass(frozen=True)
class DetectionResult:
    """Outcome of running the detector over one error sequence."""

    tripped: bool
    trip_index: int | None  # first step of the tripping window
    window_means: np.ndarray  # (n_windows,)
    threshold: float


def prediction_errors(
    spec: MlpSpec,
    params: ParamStore,
    scenario: ScenarioConfig,
    scaling: ScalingSpec,
    record: SimulationRecord,
) -> np.ndarray:
    """Per-step scaled MSE of one-step-ahead sensor predictions.

    Entry k compares the model's prediction from snapshot k under input v_k
    against the recorded snapshot k+1, averaged over stations and fields in
    scaled units (so the three fields weigh equally, like the training loss).
    The scenario hash is deliberately not checked: monitored streams come
    from a plant that may have drifted, only the layout must match.
    """
    check_stream_compatible(record, scenario)
    lay = input_layout(scenario)
    K = record.n_steps
    s = record.station_z.size
    rows = np.empty((K * s, lay.input_dim))
    rows[:, lay.z_col] = np.tile(scaling.scale_z(record.station_z), K)
    rows[:, lay.t_col] = 1.0
    scaled = np.empty((K + 1, 3, s))
    for f, name in enumerate(FIELD_ORDER):
        scaled[:, f] = scaling.scale_field(name, record.sensors[:, f])
    rows[:, lay.v_cols] = np.repeat(scaling.scale_v(record.v[:K]), s, axis=0)
    rows[:, lay.x0_cols] = np.repeat(scaled[:K].reshape(K, 3 * s), s, axis=0)
    pred = forward(spec, params, rows).reshape(K, s, 3)
    truth = scaled[1:].transpose(0, 2, 1)  # (K, s, 3)
    return np.mean((pred - truth) ** 2, axis=(1, 2))


def detect(errors: np.ndarray, config: DetectorConfig) -> DetectionResult:
    """Latching window test over a per-step error sequence.

    Only complete windows are scored (a trailing partial window is ignored).
    The reported index is the first step of the earliest window whose mean
    error exceeds the threshold.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.ndim != 1:
        raise ConfigError("detector expects a 1-D error sequence")
    n_win = errors.size // config.window
    if n_win == 0:
        raise ConfigError(
            f"need at least {config.window} error samples for one window, got {errors.size}"
        )
    means = errors[: n_win * config.window].reshape(n_win, config.window).mean(axis=1)
    hits = means > config.zeta
    if hits.any():
        first = int(np.argmax(hits))
        return DetectionResult(
            tripped=True,
            trip_index=first * config.window,
            window_means=means,
            threshold=config.zeta,
        )
    return DetectionResult(tripped=False, trip_index=None, window_means=means, threshold=config.zeta)


def calibrate_zeta(
    error_sequences,
    window: int,
    multiplier: float = 5.0,
    percentile: float = 95.0,
) -> float:
    """Threshold from nominal validation data: multiplier times the
    window-mean error percentile over all complete windows."""
    means = []
    for seq in error_sequences:
        seq = np.asarray(seq, dtype=np.float64)
        n_win = seq.size // window
        if n_win:
            means.append(seq[: n_win * window].reshape(n_win, window).mean(axis=1))
    if not means:
        raise ConfigError("no complete windows in the calibration sequences")
    return float(multiplier * np.percentile(np.concatenate(means), percentile))


# ===================== twin retraining =====================


def transfer_learn_twin(
    spec: MlpSpec,
    params: ParamStore,
    dataset: Dataset,
    scenario: ScenarioConfig,
    scaling: ScalingSpec,
    base_lr: float = 1e-4,
    epochs: int = 50,
    batch_size: int = 512,
    seed: int = 0,
) -> tuple[ParamStore, list[dict]]:
    """Retrain a copy of the nominal parameters on post-fault data.

    Measurement loss only, at a tenth of the usual learning rate, so the
    twin drifts just far enough to absorb the plant's changed dynamics
    while staying comparable to the nominal model. Optimizer moments start
    fresh; training aborts if the loss blows past 10x its first epoch.
    """
    twin = ParamStore(spec=params.spec, flat=params.flat.copy(), layout=params.layout)
    config = TrainConfig(
        alpha=1.0,
        beta=0.0,
        epochs=epochs,
        batch_size=batch_size,
        base_lr=base_lr,
        seed=seed,
    )
    return train(spec, dataset, scenario, scaling, config, params=twin, abort_ratio=10.0)


# ===================== residual signatures =====================


def sample_conditions(
    dataset: Dataset,
    scenario: ScenarioConfig,
    scaling: ScalingSpec,
    n_conditions: int,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw scaled (v, x0) condition rows from an assembled corpus."""
    if n_conditions < 1:
        raise ConfigError("need at least one condition")
    if n_conditions > dataset.n_samples:
        raise ConfigError(
            f"asked for {n_conditions} conditions but the corpus has {dataset.n_samples} rows"
        )
    rng = np.random.default_rng(seed)
    idx = rng.choice(dataset.n_samples, size=n_conditions, replace=False)
    lay = input_layout(scenario)
    batch = dataset.scaled(scaling)
    return batch.inputs[idx, lay.v_cols], batch.inputs[idx, lay.x0_cols]


def pde_residuals(
    spec: MlpSpec,
    params: ParamStore,
    scenario: ScenarioConfig,
    scaling: ScalingSpec,
    v_star: np.ndarray,
    x0_star: np.ndarray,
    t_star: float = 0.5,
) -> tuple[np.ndarray, PdeResidualSet]:
    """Signed transport residual profiles of a trained map.

    Evaluates the nondimensional mass/momentum/energy residuals on the
    scenario grid centers at mid-step time, for every supplied scaled
    (v, x0) condition row, and averages them signed over conditions. The
    result is a spatial fingerprint of where the learned dynamics disagree
    with the nominal balance closures.
    """
    v_star = np.atleast_2d(np.asarray(v_star, dtype=np.float64))
    x0_star = np.atleast_2d(np.asarray(x0_star, dtype=np.float64))
    if v_star.shape[0] != x0_star.shape[0]:
        raise ConfigError("v and x0 condition rows must pair up")
    lay = input_layout(scenario)
    if v_star.shape[1] != lay.n_controls or x0_star.shape[1] != lay.n_state:
        raise ConfigError("condition rows do not match the scenario layout")

    grid = build_grid(scenario)
    zc = grid.centers
    nz = zc.size
    n_cond = v_star.shape[0]

    rows = np.empty((n_cond * nz, lay.input_dim))
    rows[:, lay.z_col] = np.tile(scaling.scale_z(zc), n_cond)
    rows[:, lay.t_col] = t_star
    rows[:, lay.v_cols] = np.repeat(v_star, nz, axis=0)
    rows[:, lay.x0_cols] = np.repeat(x0_star, nz, axis=0)

    e_z = np.zeros(lay.input_dim)
    e_z[lay.z_col] = 1.0
    e_t = np.zeros(lay.input_dim)
    e_t[lay.t_col] = 1.0
    outs = forward(spec, params, rows)
    tan_z = input_jacobian(spec, params, rows, e_z)
    tan_t = input_jacobian(spec, params, rows, e_t)

    closures = pointwise_closures(
        scenario, np.tile(zc, n_cond), scaling.unscale_v(rows[:, lay.v_cols])
    )
    r = physics_residuals(
        (outs[:, 0], outs[:, 1], outs[:, 2]),
        (tan_z[:, 0], tan_z[:, 1], tan_z[:, 2]),
        (tan_t[:, 0], tan_t[:, 1], tan_t[:, 2]),
        closures,
        scenario,
        scaling,
    )
    mass, momentum, energy = (part.reshape(n_cond, nz).mean(axis=0) for part in r)
    return zc.copy(), PdeResidualSet(mass=mass, momentum=momentum, energy=energy)


@dataclass(frozen=True)
class ResidualSignature:
    """Spatial residual comparison between the nominal model and its twin.

    ``difference`` is twin minus nominal per equation; ``scaled`` divides
    each equation's difference by its own max magnitude (sign preserved) so
    profiles are comparable across equations. ``extrema`` keeps the signed
    (min, max) of each difference row before scaling.
    """

    z: np.ndarray  # (nz,) grid centers, m
    equations: tuple[str, ...]
    nominal: np.ndarray  # (3, nz)
    twin: np.ndarray  # (3, nz)
    difference: np.ndarray  # (3, nz)
    scaled: np.ndarray  # (3, nz) in [-1, 1]
    extrema: dict


def signature(
    spec: MlpSpec,
    nominal_params: ParamStore,
    twin_params: ParamStore,
    scenario: ScenarioConfig,
    scaling: ScalingSpec,
    v_star: np.ndarray,
    x0_star: np.ndarray,
    t_star: float = 0.5,
) -> ResidualSignature:
    """Difference the residual profiles of the nominal and twin models.

    Both models see the same condition rows; the changed physics then
    cancels everywhere except where the twin learned different dynamics.
    """
    z, nom = pde_residuals(spec, nominal_params, scenario, scaling, v_star, x0_star, t_star)
    _, tw = pde_residuals(spec, twin_params, scenario, scaling, v_star, x0_star, t_star)
    equations = ("mass", "momentum", "energy")
    nominal = np.stack([getattr(nom, eq) for eq in equations])
    twin = np.stack([getattr(tw, eq) for eq in equations])
    difference = twin - nominal
    scaled = np.zeros_like(difference)
    extrema = {}
    for i, eq in enumerate(equations):
        row = difference[i]
        extrema[eq] = (float(row.min()), float(row.max()))
        peak = float(np.max(np.abs(row)))
        if peak > 0.0:
            scaled[i] = row / peak
    return ResidualSignature(
        z=z,
        equations=equations,
        nominal=nominal,
        twin=twin,
        difference=difference,
        scaled=scaled,
        extrema=extrema,
    )


def localization_ratio(sig: ResidualSignature, span: tuple[float, float]) -> dict:
    """Peak |residual difference| inside a span over the peak outside, per equation.

    A ratio well above 1 for exactly one balance equation localizes the
    fault both spatially (the span) and physically (the equation).
    """
    lo, hi = span
    if not lo < hi:
        raise ConfigError("span must satisfy lo < hi")
    inside = (sig.z >= lo) & (sig.z <= hi)
    if not inside.any() or inside.all():
        raise ConfigError("span must cover some but not all grid centers")
    out = {}
    for i, eq in enumerate(sig.equations):
        mag = np.abs(sig.difference[i])
        peak_in = float(mag[inside].max())
        peak_out = float(mag[~inside].max())
        if peak_out == 0.0:
            out[eq] = float("inf") if peak_in > 0.0 else 0.0
        else:
            out[eq] = peak_in / peak_out
    return out
