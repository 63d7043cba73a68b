"""Dense MLP numerics: forward/backward passes, input gradients, the
parameter gradient of the critic's gradient-norm penalty, and Adam.

All math is 64-bit and functional: no operation mutates its arguments.
Matrices are numpy float64 arrays with row-major batch semantics (one
sample per row).  Backward passes are exact reverse-mode derivatives of
the recorded forward pass; the penalty gradient treats ReLU masks as
constants, which is exact almost everywhere because the second
derivative of ReLU vanishes off the kink.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

RELU = "relu"
LINEAR = "linear"
SOFTMAX_TAIL = "softmax-tail"

ACTIVATIONS = (RELU, LINEAR, SOFTMAX_TAIL)

# guard added inside the square root of the gradient-norm penalty so a
# zero-gradient row stays differentiable
NORM_EPS = 1e-12


class ShapeError(ValueError):
    """Dimension disagreement between operands."""


class StaleTapeError(RuntimeError):
    """Backward called after the taped parameters were mutated in place."""


class DivergenceError(ArithmeticError):
    """A gradient or loss stopped being finite."""


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D batch matrix, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class Layer:
    """One fully connected layer: y = act(x @ weight + bias).

    ``tail`` declares the width of the softmax suffix and must be zero
    unless ``activation`` is softmax-tail.
    """

    weight: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray    # (out_dim,)
    activation: str = LINEAR
    tail: int = 0

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[1]:
            raise ShapeError(
                f"layer shapes disagree: weight {w.shape}, bias {b.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == SOFTMAX_TAIL:
            if not 0 < self.tail <= w.shape[1]:
                raise ShapeError(
                    f"softmax tail {self.tail} outside (0, {w.shape[1]}]")
        elif self.tail:
            raise ShapeError("tail declared on a non-softmax layer")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class MlpParams:
    """Ordered fully connected layers with chained dimensions."""

    layers: Tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ShapeError("empty network")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(
                    f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        for lay in layers[:-1]:
            if lay.activation == SOFTMAX_TAIL:
                raise ShapeError("softmax tail allowed only on the final layer")
        object.__setattr__(self, "layers", layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def dims(self) -> Tuple[int, ...]:
        return (self.in_dim,) + tuple(l.out_dim for l in self.layers)

    def n_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)


@dataclass
class MlpGrads:
    """Gradient container shaped like an MlpParams instance."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @staticmethod
    def zeros_like(params: MlpParams) -> "MlpGrads":
        return MlpGrads(
            weights=[np.zeros_like(l.weight) for l in params.layers],
            biases=[np.zeros_like(l.bias) for l in params.layers],
        )

    def add_scaled(self, other: "MlpGrads", scale: float = 1.0) -> "MlpGrads":
        """Accumulate ``scale * other`` into this container (returns self)."""
        for w, ow in zip(self.weights, other.weights):
            w += scale * ow
        for b, ob in zip(self.biases, other.biases):
            b += scale * ob
        return self

    def scaled(self, scale: float) -> "MlpGrads":
        return MlpGrads(
            weights=[scale * w for w in self.weights],
            biases=[scale * b for b in self.biases],
        )


def _stamp(params: MlpParams) -> tuple:
    # cheap staleness tripwire: corner entries change under any realistic
    # in-place parameter update
    parts = []
    for l in params.layers:
        parts.append((float(l.weight[0, 0]), float(l.weight[-1, -1]),
                      float(l.bias[0]), float(l.bias[-1])))
    return tuple(parts)


@dataclass
class Tape:
    """Activation record from one forward pass.

    ``inputs[l]`` is the batch fed to layer l, ``masks[l]`` the ReLU
    activity pattern (None for other activations), ``tail_probs`` the
    softmax output of the final tail slice when present.
    """

    params: MlpParams
    inputs: List[np.ndarray]
    masks: List[Optional[np.ndarray]]
    tail_probs: Optional[np.ndarray]
    output: np.ndarray
    stamp: tuple

    def check_fresh(self) -> None:
        if _stamp(self.params) != self.stamp:
            raise StaleTapeError(
                "parameters were mutated in place after the forward pass")


def _softmax_rows(a: np.ndarray) -> np.ndarray:
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def mlp_forward(params: MlpParams, x: np.ndarray) -> Tuple[np.ndarray, Tape]:
    """Run the network on a batch; return output and the gradient tape."""
    h = _as_batch(x)
    if h.shape[1] != params.in_dim:
        raise ShapeError(
            f"input dim {h.shape[1]} != network input dim {params.in_dim}")
    inputs: List[np.ndarray] = []
    masks: List[Optional[np.ndarray]] = []
    tail_probs: Optional[np.ndarray] = None
    for layer in params.layers:
        inputs.append(h)
        a = h @ layer.weight + layer.bias
        if layer.activation == RELU:
            mask = a > 0.0
            masks.append(mask)
            h = np.where(mask, a, 0.0)
        elif layer.activation == LINEAR:
            masks.append(None)
            h = a
        else:  # softmax tail on the final layer
            masks.append(None)
            split = layer.out_dim - layer.tail
            tail_probs = _softmax_rows(a[:, split:])
            h = np.concatenate([a[:, :split], tail_probs], axis=1)
    tape = Tape(params=params, inputs=inputs, masks=masks,
                tail_probs=tail_probs, output=h, stamp=_stamp(params))
    return h, tape


def mlp_backward(
    tape: Tape,
    upstream: np.ndarray,
    tail_upstream_is_logit_grad: bool = False,
) -> Tuple[MlpGrads, np.ndarray]:
    """Reverse-mode pass over a recorded forward computation.

    Args:
        tape: record produced by mlp_forward.
        upstream: dLoss/dOutput, same shape as the forward output.
        tail_upstream_is_logit_grad: when the final layer has a softmax
            tail, interpret the tail columns of ``upstream`` as the
            gradient w.r.t. the pre-softmax logits instead (the stable
            closed form for cross-entropy losses).

    Returns:
        (gradients shaped like the parameters, gradient w.r.t. the input
        batch).
    """
    tape.check_fresh()
    u = _as_batch(upstream)
    if u.shape != tape.output.shape:
        raise ShapeError(
            f"upstream shape {u.shape} != output shape {tape.output.shape}")
    params = tape.params
    n_layers = len(params.layers)
    d_w: List[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    d_b: List[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    g = u
    for idx in range(n_layers - 1, -1, -1):
        layer = params.layers[idx]
        if layer.activation == RELU:
            ga = np.where(tape.masks[idx], g, 0.0)
        elif layer.activation == LINEAR:
            ga = g
        else:
            split = layer.out_dim - layer.tail
            probs = tape.tail_probs
            assert probs is not None
            if tail_upstream_is_logit_grad:
                ga_tail = g[:, split:]
            else:
                ut = g[:, split:]
                ga_tail = probs * (ut - (ut * probs).sum(axis=1, keepdims=True))
            ga = np.concatenate([g[:, :split], ga_tail], axis=1)
        d_w[idx] = tape.inputs[idx].T @ ga
        d_b[idx] = ga.sum(axis=0)
        g = ga @ layer.weight.T
    return MlpGrads(weights=d_w, biases=d_b), g


def _require_scalar_output(params: MlpParams) -> None:
    final = params.layers[-1]
    if params.out_dim != 1 or final.activation == SOFTMAX_TAIL:
        raise ShapeError(
            "operation requires a scalar-output network "
            f"(out_dim={params.out_dim}, final activation={final.activation})")


def input_gradient(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Per-row gradient of the scalar network output w.r.t. its input."""
    _require_scalar_output(params)
    _, tape = mlp_forward(params, x)
    ones = np.ones_like(tape.output)
    _, dx = mlp_backward(tape, ones)
    return dx


def gp_param_gradient(
    params: MlpParams, x_hat: np.ndarray
) -> Tuple[float, MlpGrads]:
    """Penalty mean((||d output/d input||_2 - 1)^2) and its parameter gradient.

    The forward ReLU masks are held fixed while differentiating, so the
    result is the exact gradient of the mask-frozen (piecewise-linear)
    function; bias gradients are identically zero under that convention.
    A 1e-12 term inside the square root keeps zero-gradient rows finite.
    """
    _require_scalar_output(params)
    x_hat = _as_batch(x_hat)
    _, tape = mlp_forward(params, x_hat)
    layers = params.layers
    n_layers = len(layers)
    n = x_hat.shape[0]

    # backward sweep of the input gradient, keeping the per-layer
    # pre-activation adjoints (rows are the masked weight-product suffixes)
    deltas: List[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    d = np.ones((n, 1))
    deltas[n_layers - 1] = d
    for idx in range(n_layers - 2, -1, -1):
        d = d @ layers[idx + 1].weight.T
        mask = tape.masks[idx]
        if mask is not None:
            d = np.where(mask, d, 0.0)
        deltas[idx] = d
    grad_x = deltas[0] @ layers[0].weight.T  # (n, in_dim)

    norms = np.sqrt((grad_x * grad_x).sum(axis=1) + NORM_EPS)
    penalty = float(np.mean((norms - 1.0) ** 2))

    # upstream on the input gradient itself
    u = ((2.0 / n) * (norms - 1.0) / norms)[:, None] * grad_x

    # forward sweep of u through the mask-frozen linearization: the
    # parameter gradient of layer idx is prefix(u)^T @ suffix(delta)
    grads = MlpGrads(
        weights=[None] * n_layers,  # type: ignore[list-item]
        biases=[np.zeros_like(l.bias) for l in layers],
    )
    t = u
    for idx in range(n_layers):
        grads.weights[idx] = t.T @ deltas[idx]
        if idx < n_layers - 1:
            t = t @ layers[idx].weight
            mask = tape.masks[idx]
            if mask is not None:
                t = np.where(mask, t, 0.0)
    return penalty, grads


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators shaped like one MlpParams."""

    step: int
    m: MlpGrads
    v: MlpGrads
    alpha: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1, beta2 must lie in (0, 1)")


def adam_init(params: MlpParams, alpha: float = 1e-4, beta1: float = 0.5,
              beta2: float = 0.9, eps: float = 1e-8) -> AdamState:
    return AdamState(step=0, m=MlpGrads.zeros_like(params),
                     v=MlpGrads.zeros_like(params),
                     alpha=alpha, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(
    state: AdamState, params: MlpParams, grads: MlpGrads
) -> Tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    for idx, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            raise DivergenceError(f"non-finite gradient in layer {idx}")
        if gw.shape != params.layers[idx].weight.shape or \
                gb.shape != params.layers[idx].bias.shape:
            raise ShapeError(f"gradient shape mismatch in layer {idx}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_layers = []
    new_m: List[np.ndarray] = []
    new_v: List[np.ndarray] = []
    new_mb: List[np.ndarray] = []
    new_vb: List[np.ndarray] = []
    for layer, mw, vw, mb, vb, gw, gb in zip(
            params.layers, state.m.weights, state.v.weights,
            state.m.biases, state.v.biases, grads.weights, grads.biases):
        mw = b1 * mw + (1.0 - b1) * gw
        vw = b2 * vw + (1.0 - b2) * gw * gw
        mb = b1 * mb + (1.0 - b1) * gb
        vb = b2 * vb + (1.0 - b2) * gb * gb
        w = layer.weight - state.alpha * (mw / c1) / (np.sqrt(vw / c2) + state.eps)
        b = layer.bias - state.alpha * (mb / c1) / (np.sqrt(vb / c2) + state.eps)
        new_layers.append(Layer(weight=w, bias=b, activation=layer.activation,
                                tail=layer.tail))
        new_m.append(mw)
        new_v.append(vw)
        new_mb.append(mb)
        new_vb.append(vb)
    new_params = MlpParams(layers=tuple(new_layers))
    new_state = AdamState(step=t,
                          m=MlpGrads(weights=new_m, biases=new_mb),
                          v=MlpGrads(weights=new_v, biases=new_vb),
                          alpha=state.alpha, beta1=state.beta1,
                          beta2=state.beta2, eps=state.eps)
    return new_params, new_state
