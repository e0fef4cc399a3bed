"""Dense ReLU networks with hand-written backprop, Adam and L2 penalty.

Everything is float64. Parameters live in one flat vector; per-layer weight
and bias arrays are views into it, so optimizers and polyak averaging work on
``params.flat`` directly while the forward pass uses the structured views.

Layout convention: ``y = x @ W + b`` with ``W`` of shape ``(fan_in, fan_out)``.
Flattening order is ``W0, b0, W1, b1, ...`` with each ``W`` in C order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from awet.errors import NumericOverflowError, RejectedInputError

HIDDEN_ACTIVATIONS = ("relu",)
OUTPUT_ACTIVATIONS = ("tanh", "identity")

CHECKPOINT_MAGIC = b"AWETNET1"


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "identity"
    output_scale: tuple[float, ...] | None = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise RejectedInputError("an MLP needs at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise RejectedInputError(f"layer sizes must be positive, got {sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise RejectedInputError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise RejectedInputError(f"unknown output activation {self.output_activation!r}")
        scale = self.output_scale
        if scale is None:
            scale = (1.0,) * sizes[-1]
        scale = tuple(float(s) for s in scale)
        if len(scale) != sizes[-1]:
            raise RejectedInputError("output_scale length must equal the output dimension")
        if any(not s > 0 for s in scale):
            raise RejectedInputError("output_scale entries must be > 0")
        object.__setattr__(self, "output_scale", scale)

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        """Number of affine layers."""
        return len(self.layer_sizes) - 1

    def shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.shapes())


class ParameterSet:
    """Flat parameter vector with per-layer ``weights``/``biases`` views."""

    def __init__(self, spec: MlpSpec, flat: np.ndarray | None = None):
        self.spec = spec
        n = spec.n_params()
        if flat is None:
            flat = np.zeros(n)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (n,):
            raise RejectedInputError(f"expected {n} parameters, got shape {flat.shape}")
        self.flat = flat
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        self._weight_mask = np.zeros(n, dtype=bool)
        offset = 0
        for fan_in, fan_out in spec.shapes():
            w_end = offset + fan_in * fan_out
            self.weights.append(self.flat[offset:w_end].reshape(fan_in, fan_out))
            self._weight_mask[offset:w_end] = True
            self.biases.append(self.flat[w_end : w_end + fan_out])
            offset = w_end + fan_out

    @property
    def weight_mask(self) -> np.ndarray:
        """Boolean mask over ``flat`` selecting weight (non-bias) entries."""
        return self._weight_mask

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.spec, self.flat.copy())

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet(self.spec)

    def assign(self, other: "ParameterSet") -> None:
        self.flat[:] = other.flat

    def unflatten(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(w.copy(), b.copy()) for w, b in zip(self.weights, self.biases)]

    @classmethod
    def from_layers(cls, spec: MlpSpec, layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> "ParameterSet":
        parts = []
        for (fan_in, fan_out), (w, b) in zip(spec.shapes(), layers, strict=True):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise RejectedInputError("layer shapes do not match the spec")
            parts.extend([w.ravel(), b])
        return cls(spec, np.concatenate(parts))

    def __repr__(self) -> str:
        return f"ParameterSet(sizes={self.spec.layer_sizes}, n={self.flat.size})"


def init_params(spec: MlpSpec, rng: np.random.Generator) -> ParameterSet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    params = ParameterSet(spec)
    for w, b in zip(params.weights, params.biases):
        bound = 1.0 / np.sqrt(w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return params


@dataclass
class GradientTape:
    """Values recorded by :func:`forward_tape` for one backward pass."""

    inputs: list[np.ndarray]  # input to each affine layer
    pre_activations: list[np.ndarray]
    output: np.ndarray
    squeeze: bool = False


def _check_input(spec: MlpSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.n_in:
        raise RejectedInputError(f"input has shape {x.shape}, network expects (..., {spec.n_in})")
    return x, squeeze


def _output_limits(spec: MlpSpec) -> np.ndarray:
    scale = np.asarray(spec.output_scale)
    # Largest float strictly below each scale keeps |out| < scale when tanh saturates.
    return np.nextafter(scale, 0.0)


def forward_tape(spec: MlpSpec, params: ParameterSet, x) -> GradientTape:
    x, squeeze = _check_input(spec, x)
    inputs, pre = [], []
    h = x
    last = spec.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w
        z += b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
    # Non-finite values propagate through relu, so checking the last layer suffices.
    if not np.isfinite(h).all():
        bad = next(i for i, z in enumerate(pre) if not np.isfinite(z).all())
        raise NumericOverflowError(f"non-finite activation in layer {bad}", layer=bad)
    if spec.output_activation == "tanh":
        lim = _output_limits(spec)
        h = np.clip(np.tanh(h) * np.asarray(spec.output_scale), -lim, lim)
    return GradientTape(inputs, pre, h, squeeze)


def forward(spec: MlpSpec, params: ParameterSet, x) -> np.ndarray:
    """Evaluate the network on a single vector or a ``(batch, n_in)`` array."""
    tape = forward_tape(spec, params, x)
    return tape.output[0] if tape.squeeze else tape.output


def backward(
    spec: MlpSpec,
    params: ParameterSet,
    tape: GradientTape,
    grad_output,
    want_params: bool = True,
) -> tuple[ParameterSet | None, np.ndarray]:
    """Vector-Jacobian product of the taped forward pass.

    ``grad_output`` is dloss/d(output) with the same shape as the taped
    output. Returns ``(param_grads, input_grads)``; ``param_grads`` is None
    when ``want_params`` is False (used to push gradients through a frozen
    critic into the actor).
    """
    g = np.asarray(grad_output, dtype=np.float64)
    if tape.squeeze and g.ndim == 1:
        g = g[None, :]
    if g.shape != tape.output.shape:
        raise RejectedInputError(f"grad_output shape {g.shape} != output shape {tape.output.shape}")
    if not np.isfinite(g).all():
        raise NumericOverflowError("non-finite loss gradient at the output", layer=spec.n_layers - 1)
    if spec.output_activation == "tanh":
        scale = np.asarray(spec.output_scale)
        t = tape.output / scale
        g = g * scale * (1.0 - t * t)
    grads = params.zeros_like() if want_params else None
    for i in range(spec.n_layers - 1, -1, -1):
        if i < spec.n_layers - 1:
            g = g * (tape.pre_activations[i] > 0.0)
        if grads is not None:
            grads.weights[i][...] = tape.inputs[i].T @ g
            grads.biases[i][...] = g.sum(axis=0)
        g = g @ params.weights[i].T
    if grads is not None and not np.isfinite(grads.flat).all():
        bad = next(i for i, w in enumerate(grads.weights) if not np.isfinite(w).all())
        raise NumericOverflowError(f"non-finite gradient in layer {bad}", layer=bad)
    return grads, (g[0] if tape.squeeze else g)


LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


def value_and_grad(spec: MlpSpec, params: ParameterSet, x, loss: LossFn) -> tuple[float, ParameterSet]:
    """Evaluate ``loss(output)`` and its parameter gradient.

    ``loss`` maps the batch output to ``(value, dvalue/doutput)``.
    """
    tape = forward_tape(spec, params, x)
    value, g = loss(tape.output)
    grads, _ = backward(spec, params, tape, g)
    return float(value), grads


def mse_loss(target) -> LossFn:
    """Mean over the batch of the squared error summed over output dims."""
    target = np.asarray(target, dtype=np.float64)

    def loss(out: np.ndarray) -> tuple[float, np.ndarray]:
        diff = out - target.reshape(out.shape)
        n = out.shape[0]
        return float(np.sum(diff * diff) / n), 2.0 * diff / n

    return loss


def l2_penalty(params: ParameterSet) -> float:
    """Sum of squared weights; biases are not penalised."""
    return float(sum(np.sum(w * w) for w in params.weights))


def l2_grad(params: ParameterSet) -> ParameterSet:
    g = params.zeros_like()
    for gw, w in zip(g.weights, params.weights):
        gw[...] = 2.0 * w
    return g


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.m.shape != self.v.shape:
            raise RejectedInputError("Adam moment shapes differ")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise RejectedInputError("Adam betas must lie in [0, 1)")
        if self.t < 0:
            raise RejectedInputError("Adam step counter must be >= 0")

    @classmethod
    def for_params(cls, params: ParameterSet, lr: float = 1e-3, **kw) -> "AdamState":
        n = params.flat.size
        return cls(np.zeros(n), np.zeros(n), lr=lr, **kw)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(params: ParameterSet, grads: ParameterSet, state: AdamState) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected Adam update, applied in place and returned."""
    if grads.flat.shape != params.flat.shape or state.m.shape != params.flat.shape:
        raise RejectedInputError("parameter, gradient and Adam state shapes must match")
    g = grads.flat
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    params.flat -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def polyak_update(target: ParameterSet, online: ParameterSet, rho: float) -> None:
    """``target <- rho * target + (1 - rho) * online`` in place."""
    target.flat *= rho
    target.flat += (1.0 - rho) * online.flat


# -- checkpoints -------------------------------------------------------------
#
# magic (8 bytes) | n_sizes: u32 | sizes: n_sizes * u32 | hidden act: u8 |
# output act: u8 | output_scale: n_out * f64 | n_params: u64 | params: f64...
# All integers and floats little-endian.


def save_params(path: str | Path, params: ParameterSet) -> None:
    spec = params.spec
    header = bytearray(CHECKPOINT_MAGIC)
    header += struct.pack("<I", len(spec.layer_sizes))
    header += struct.pack(f"<{len(spec.layer_sizes)}I", *spec.layer_sizes)
    header += struct.pack(
        "<BB",
        HIDDEN_ACTIVATIONS.index(spec.hidden_activation),
        OUTPUT_ACTIVATIONS.index(spec.output_activation),
    )
    header += np.asarray(spec.output_scale, dtype="<f8").tobytes()
    header += struct.pack("<Q", params.flat.size)
    Path(path).write_bytes(bytes(header) + params.flat.astype("<f8").tobytes())


def load_params(path: str | Path) -> ParameterSet:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise RejectedInputError(f"{path}: not an awet network checkpoint")
    pos = 8
    (n_sizes,) = struct.unpack_from("<I", data, pos)
    pos += 4
    sizes = struct.unpack_from(f"<{n_sizes}I", data, pos)
    pos += 4 * n_sizes
    hidden, out = struct.unpack_from("<BB", data, pos)
    pos += 2
    scale = np.frombuffer(data, dtype="<f8", count=sizes[-1], offset=pos)
    pos += 8 * sizes[-1]
    (n,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    spec = MlpSpec(sizes, HIDDEN_ACTIVATIONS[hidden], OUTPUT_ACTIVATIONS[out], tuple(scale))
    if n != spec.n_params() or len(data) - pos != 8 * n:
        raise RejectedInputError(f"{path}: parameter count does not match header")
    flat = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64)
    return ParameterSet(spec, flat)
