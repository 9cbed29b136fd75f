"""Dense head/intermediate/tail network and its optimizer.

The surrogate maps a scaled input row (z*, t*, v*, x0*) to the three scaled
field values (p*, u*, T*). Three shared head layers feed one intermediate
layer, which fans out into three independent tail branches, one per field,
each ending in a scalar linear output. Hidden activations are tanh
(identity is available for linear test builds); outputs are identity.

Three forward flavors share the same weights:

* ``forward``: pure numpy, batched, used everywhere gradients are not needed;
* ``forward_tape``: the same pass on autodiff Tensors for parameter gradients;
* ``forward_with_tangents``: the tape pass carrying forward-mode tangent
  channels for chosen input directions; the tangents are built from tape ops,
  so losses containing these directional derivatives backpropagate exactly.

``input_jacobian`` is the tape-free numpy tangent pass for fast Jacobian
assembly (linearization, diagnostics).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, tanh
from .errors import NumericalError
from .transport import ConfigError

__all__ = [
    "MlpSpec",
    "ParamStore",
    "init_params",
    "forward",
    "forward_tape",
    "forward_with_tangents",
    "input_jacobian",
    "optimizer_step",
    "learning_rate",
    "FIELD_ORDER",
]

FIELD_ORDER = ("p", "u", "T")  # tail branch order

# adaptive-moment constants
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class MlpSpec:
    """Architecture: widths of the head (3 layers), intermediate, and tails."""

    input_dim: int
    head_width: int = 200
    intermediate_width: int = 100
    tail_width: int = 100
    activation: str = "tanh"  # "identity" builds a linear net for exact tests

    def __post_init__(self) -> None:
        if min(self.input_dim, self.head_width, self.intermediate_width, self.tail_width) < 1:
            raise ConfigError("all widths must be positive")
        if self.activation not in ("tanh", "identity"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    def layer_shapes(self) -> list[tuple[str, tuple[int, int]]]:
        """(name, (out, in)) per weight matrix, in evaluation order."""
        sh, si, st = self.head_width, self.intermediate_width, self.tail_width
        shapes = [
            ("head0", (sh, self.input_dim)),
            ("head1", (sh, sh)),
            ("head2", (sh, sh)),
            ("inter", (si, sh)),
        ]
        for name in FIELD_ORDER:
            shapes.append((f"tail_{name}", (st, si)))
            shapes.append((f"out_{name}", (1, st)))
        return shapes


@dataclass
class ParamStore:
    """Flat parameter vector with named per-layer views, plus Adam moments.

    The views tile the flat vector exactly once: weights first then bias for
    each layer, in evaluation order.
    """

    spec: MlpSpec
    flat: np.ndarray
    layout: tuple[tuple[str, tuple[int, ...], int, int], ...]
    m: np.ndarray | None = None  # first moment
    v: np.ndarray | None = None  # second moment
    step: int = 0
    _views: dict = field(default_factory=dict, repr=False)

    def view(self, name: str) -> np.ndarray:
        """Writable ndarray view into the flat vector for one layer tensor."""
        cached = self._views.get(name)
        if cached is not None:
            return cached
        for nm, shape, start, stop in self.layout:
            if nm == name:
                out = self.flat[start:stop].reshape(shape)
                self._views[name] = out
                return out
        raise KeyError(name)

    @property
    def n_params(self) -> int:
        return self.flat.size

    def copy(self) -> "ParamStore":
        return ParamStore(
            spec=self.spec,
            flat=self.flat.copy(),
            layout=self.layout,
            m=None if self.m is None else self.m.copy(),
            v=None if self.v is None else self.v.copy(),
            step=self.step,
        )


def _layout(spec: MlpSpec) -> tuple[tuple[str, tuple[int, ...], int, int], ...]:
    entries = []
    cursor = 0
    for name, (out, inp) in spec.layer_shapes():
        entries.append((f"{name}.w", (out, inp), cursor, cursor + out * inp))
        cursor += out * inp
        entries.append((f"{name}.b", (out,), cursor, cursor + out))
        cursor += out
    return tuple(entries)


def init_params(spec: MlpSpec, seed: int) -> ParamStore:
    """Fan-in-scaled symmetric uniform weights, zero biases, seeded."""
    layout = _layout(spec)
    flat = np.zeros(layout[-1][3])
    store = ParamStore(spec=spec, flat=flat, layout=layout)
    rng = np.random.default_rng(seed)
    for name, (out, inp) in spec.layer_shapes():
        bound = 1.0 / np.sqrt(inp)
        store.view(f"{name}.w")[:] = rng.uniform(-bound, bound, size=(out, inp))
        # biases stay zero
    return store


# ===================== forward passes =====================


def forward(spec: MlpSpec, params: ParamStore, x) -> np.ndarray:
    """Batched numpy evaluation: (batch, input_dim) -> (batch, 3)."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != spec.input_dim:
        raise ConfigError(f"input must have {spec.input_dim} columns, got shape {x.shape}")
    act = np.tanh if spec.activation == "tanh" else (lambda a: a)
    h = x
    for name in ("head0", "head1", "head2", "inter"):
        h = act(h @ params.view(f"{name}.w").T + params.view(f"{name}.b"))
    cols = []
    for fname in FIELD_ORDER:
        t = act(h @ params.view(f"tail_{fname}.w").T + params.view(f"tail_{fname}.b"))
        cols.append(t @ params.view(f"out_{fname}.w").T + params.view(f"out_{fname}.b"))
    out = np.concatenate(cols, axis=1)
    return out[0] if squeeze else out


def input_jacobian(spec: MlpSpec, params: ParamStore, x, direction) -> np.ndarray:
    """Directional derivative d(outputs)/d(inputs) . direction, tape-free.

    ``direction`` is one input-space vector (applied to every batch row) or a
    per-row array matching x. Returns the output tangent with x's batch shape.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    s = np.broadcast_to(np.asarray(direction, dtype=np.float64), x.shape)
    tanh_act = spec.activation == "tanh"
    h, dh = x, s
    for name in ("head0", "head1", "head2", "inter"):
        w = params.view(f"{name}.w")
        a = h @ w.T + params.view(f"{name}.b")
        da = dh @ w.T
        if tanh_act:
            h = np.tanh(a)
            dh = (1.0 - h * h) * da
        else:
            h, dh = a, da
    cols = []
    for fname in FIELD_ORDER:
        w = params.view(f"tail_{fname}.w")
        a = h @ w.T + params.view(f"tail_{fname}.b")
        da = dh @ w.T
        if tanh_act:
            t = np.tanh(a)
            dt = (1.0 - t * t) * da
        else:
            t, dt = a, da
        cols.append(dt @ params.view(f"out_{fname}.w").T)
    out = np.concatenate(cols, axis=1)
    return out[0] if squeeze else out


class TapeParams:
    """Tensor leaves for every layer, built once per loss evaluation."""

    def __init__(self, params: ParamStore):
        self.params = params
        self.tensors: dict[str, Tensor] = {
            name: Tensor(params.flat[start:stop].reshape(shape))
            for name, shape, start, stop in params.layout
        }

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def grad_vector(self) -> np.ndarray:
        """Flat gradient aligned with the store layout (zeros where unused)."""
        g = np.zeros_like(self.params.flat)
        for name, shape, start, stop in self.params.layout:
            t = self.tensors[name]
            if t.grad is not None:
                g[start:stop] = t.grad.ravel()
        return g


def _act_tape(spec: MlpSpec, a: Tensor) -> Tensor:
    return tanh(a) if spec.activation == "tanh" else a


def _linear(tape: TapeParams, name: str, h: Tensor) -> Tensor:
    w, b = tape[f"{name}.w"], tape[f"{name}.b"]
    return h @ _transpose(w) + b


def forward_tape(spec: MlpSpec, tape: TapeParams, x) -> tuple[Tensor, Tensor, Tensor]:
    """Tape forward; returns the three (batch, 1) field outputs."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != spec.input_dim:
        raise ConfigError(f"input must have {spec.input_dim} columns, got shape {x.shape}")
    h = Tensor(x)
    for name in ("head0", "head1", "head2", "inter"):
        h = _act_tape(spec, _linear(tape, name, h))
    outs = []
    for fname in FIELD_ORDER:
        t = _act_tape(spec, _linear(tape, f"tail_{fname}", h))
        outs.append(_linear(tape, f"out_{fname}", t))
    return tuple(outs)


def _transpose(t: Tensor) -> Tensor:
    out = Tensor(t.value.T, (t,))
    out._vjp = lambda g: t._accumulate(g.T)
    return out


def forward_with_tangents(
    spec: MlpSpec, tape: TapeParams, x, directions
) -> tuple[tuple[Tensor, ...], list[tuple[Tensor, ...]]]:
    """Tape forward carrying one tangent channel per input direction.

    Returns (outputs, tangents): outputs is the (p*, u*, T*) Tensor triple,
    tangents[i] is the matching triple of directional derivatives along
    directions[i]. All six live on the same tape, so a loss mixing values
    and derivatives differentiates exactly w.r.t. the parameters.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != spec.input_dim:
        raise ConfigError(f"input must have {spec.input_dim} columns, got shape {x.shape}")
    h = Tensor(x)
    dhs = [Tensor(np.broadcast_to(np.asarray(d, dtype=np.float64), x.shape).copy()) for d in directions]
    use_tanh = spec.activation == "tanh"
    for name in ("head0", "head1", "head2", "inter"):
        wT = _transpose(tape[f"{name}.w"])
        a = h @ wT + tape[f"{name}.b"]
        das = [dh @ wT for dh in dhs]
        if use_tanh:
            h = tanh(a)
            gate = 1.0 - h * h
            dhs = [gate * da for da in das]
        else:
            h, dhs = a, das
    outs: list[Tensor] = []
    touts: list[list[Tensor]] = [[] for _ in directions]
    for fname in FIELD_ORDER:
        wT = _transpose(tape[f"tail_{fname}.w"])
        a = h @ wT + tape[f"tail_{fname}.b"]
        das = [dh @ wT for dh in dhs]
        if use_tanh:
            t = tanh(a)
            gate = 1.0 - t * t
            dts = [gate * da for da in das]
        else:
            t, dts = a, das
        owT = _transpose(tape[f"out_{fname}.w"])
        outs.append(t @ owT + tape[f"out_{fname}.b"])
        for i, dt in enumerate(dts):
            touts[i].append(dt @ owT)
    return tuple(outs), [tuple(ts) for ts in touts]


# ===================== optimizer =====================


def learning_rate(base_lr: float, epoch: int) -> float:
    """Step-decay schedule: halve every 50 epochs; ``epoch`` is 1-based."""
    if epoch < 1:
        raise ConfigError("epoch numbering starts at 1")
    return base_lr * 0.5 ** (epoch // 50)


def optimizer_step(params: ParamStore, grad: np.ndarray, lr: float) -> ParamStore:
    """In-place adaptive-moment update; returns the store for chaining."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.flat.shape:
        raise ConfigError("gradient shape does not match the parameter vector")
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient; optimizer step aborted")
    if params.m is None:
        params.m = np.zeros_like(params.flat)
        params.v = np.zeros_like(params.flat)
    params.step += 1
    params.m = ADAM_BETA1 * params.m + (1.0 - ADAM_BETA1) * grad
    params.v = ADAM_BETA2 * params.v + (1.0 - ADAM_BETA2) * grad * grad
    m_hat = params.m / (1.0 - ADAM_BETA1**params.step)
    v_hat = params.v / (1.0 - ADAM_BETA2**params.step)
    params.flat -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return params
