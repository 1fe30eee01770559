"""Feed-forward encoder and the width-doubled linear head, with hand-derived
forward and backward passes plus an SGD-with-momentum optimizer.

The head takes two feature slots of equal width and computes

    logits = W1 @ left + W2 @ right + bias

where ``weight = [W1 | W2]``. Feeding the same feature into both slots
recovers a plain ``(W1 + W2) @ z + bias`` classifier; feeding a memory
readout into the right slot gives the augmented classifier. Classification
in the no-concatenation ablation uses a single-slot head built with
:func:`init_head` at width ``d_z`` and the ``linear_*`` helpers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numcore import (
    ContractViolation,
    NumericFailure,
    as_vector,
    check_finite,
    matvec,
    RngStream,
)

_ACTIVATIONS = ("tanh", "identity")


@dataclass
class EncoderParams:
    weights: list  # layer i: (out_i, in_i)
    biases: list   # layer i: (out_i,)
    activation: str = "tanh"

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]


@dataclass
class EncodeTape:
    """Forward cache: layer inputs and post-activation outputs."""
    x: np.ndarray
    outputs: list  # h_1 .. h_L, h_L is the feature vector


@dataclass
class HeadParams:
    weight: np.ndarray  # (n_classes, in_dim)
    bias: np.ndarray    # (n_classes,)

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class ProjectionParams:
    w_query: np.ndarray  # (d_h, d_z)
    w_key: np.ndarray    # (d_h, d_z)

    @property
    def d_hidden(self) -> int:
        return self.w_query.shape[0]

    @property
    def d_feature(self) -> int:
        return self.w_query.shape[1]


@dataclass
class OptimizerState:
    """SGD momentum buffers plus the learning-rate schedule position."""
    base_lr: float
    momentum: float = 0.9
    schedule: str = "constant"  # constant | step | cosine
    decay_epoch: int | None = None
    decay_factor: float = 0.1
    total_epochs: int = 1
    epoch: int = 0
    buffers: dict = field(default_factory=dict)


def glorot_uniform(rng: RngStream, out_dim: int, in_dim: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return (rng.uniform(out_dim * in_dim).reshape(out_dim, in_dim) * 2.0 - 1.0) * limit


def init_encoder(dims: list, rng: RngStream, activation: str = "tanh") -> EncoderParams:
    """dims = [d_x, hidden..., d_z]; Glorot-uniform weights, zero biases."""
    if len(dims) < 2:
        raise ContractViolation("encoder needs at least input and output dims")
    if activation not in _ACTIVATIONS:
        raise ContractViolation(f"unknown activation {activation!r}")
    weights = [glorot_uniform(rng, dims[i + 1], dims[i]) for i in range(len(dims) - 1)]
    biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
    return EncoderParams(weights=weights, biases=biases, activation=activation)


def init_head(n_classes: int, in_dim: int, rng: RngStream) -> HeadParams:
    return HeadParams(weight=glorot_uniform(rng, n_classes, in_dim), bias=np.zeros(n_classes))


def init_projections(d_hidden: int, d_feature: int, rng: RngStream) -> ProjectionParams:
    return ProjectionParams(
        w_query=glorot_uniform(rng, d_hidden, d_feature),
        w_key=glorot_uniform(rng, d_hidden, d_feature),
    )


def _act(a: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(a) if kind == "tanh" else a


def _act_grad_from_output(h: np.ndarray, kind: str) -> np.ndarray:
    return 1.0 - h * h if kind == "tanh" else np.ones_like(h)


def encode(enc: EncoderParams, x) -> tuple[np.ndarray, EncodeTape]:
    """Forward pass; returns the feature vector and the cache for backward."""
    h = as_vector(x, "encoder input")
    if h.shape[0] != enc.in_dim:
        raise ContractViolation(
            f"encoder input dim {h.shape[0]} != expected {enc.in_dim}"
        )
    tape = EncodeTape(x=h, outputs=[])
    for w, b in zip(enc.weights, enc.biases):
        h = _act(w @ h + b, enc.activation)
        tape.outputs.append(h)
    return h, tape


def encoder_backward(enc: EncoderParams, tape: EncodeTape, d_feature) -> dict:
    """Exact gradients of a scalar loss w.r.t. encoder weights and biases,
    given the loss gradient at the encoder output."""
    if len(tape.outputs) != len(enc.weights):
        raise ContractViolation("tape does not match encoder depth")
    dh = as_vector(d_feature, "encoder output gradient")
    if dh.shape[0] != enc.out_dim:
        raise ContractViolation("encoder output gradient has wrong length")
    grads: dict = {}
    for i in range(len(enc.weights) - 1, -1, -1):
        h_out = tape.outputs[i]
        h_in = tape.outputs[i - 1] if i > 0 else tape.x
        da = dh * _act_grad_from_output(h_out, enc.activation)
        grads[f"enc.w{i}"] = np.outer(da, h_in)
        grads[f"enc.b{i}"] = da
        dh = enc.weights[i].T @ da
    return grads


def head_slots(head: HeadParams, d_feature: int) -> tuple[np.ndarray, np.ndarray]:
    """Split weight = [W1 | W2] for a two-slot head of feature width d_feature."""
    if head.in_dim != 2 * d_feature:
        raise ContractViolation(
            f"head width {head.in_dim} is not two slots of {d_feature}"
        )
    return head.weight[:, :d_feature], head.weight[:, d_feature:]


def duplicated_weight(head: HeadParams, d_feature: int) -> np.ndarray:
    """Effective weight seen by a feature fed to every slot: W1 + W2 for a
    two-slot head, the raw weight for a single-slot head."""
    if head.in_dim == d_feature:
        return head.weight
    w1, w2 = head_slots(head, d_feature)
    return w1 + w2


def head_forward(head: HeadParams, left, right) -> np.ndarray:
    lf = as_vector(left, "head left slot")
    rt = as_vector(right, "head right slot")
    if lf.shape[0] != rt.shape[0]:
        raise ContractViolation("head slots must have equal width")
    w1, w2 = head_slots(head, lf.shape[0])
    return w1 @ lf + w2 @ rt + head.bias


def head_backward(head: HeadParams, left, right, d_logits) -> tuple[dict, np.ndarray, np.ndarray]:
    """Gradients for the head plus the gradients arriving at each slot."""
    lf = as_vector(left, "head left slot")
    rt = as_vector(right, "head right slot")
    dl = as_vector(d_logits, "logits gradient")
    w1, w2 = head_slots(head, lf.shape[0])
    grads = {
        "head.weight": np.concatenate([np.outer(dl, lf), np.outer(dl, rt)], axis=1),
        "head.bias": dl.copy(),
    }
    return grads, w1.T @ dl, w2.T @ dl


def model_backward(
    enc: EncoderParams,
    head: HeadParams,
    tape: EncodeTape,
    left,
    right,
    d_logits,
    through_left: bool = True,
    through_right: bool = True,
) -> tuple[dict, dict]:
    """Backward through head and encoder for a forward pass where the slot
    inputs came from ``tape``'s feature vector. Slot flags gate which slots
    propagate into the encoder; with both false the encoder gradient is
    exactly zero while head gradients are unaffected."""
    head_grads, d_left, d_right = head_backward(head, left, right, d_logits)
    d_feature = np.zeros(enc.out_dim)
    if through_left:
        d_feature = d_feature + d_left
    if through_right:
        d_feature = d_feature + d_right
    enc_grads = encoder_backward(enc, tape, d_feature)
    return enc_grads, head_grads


def linear_forward(head: HeadParams, v) -> np.ndarray:
    """Single-slot head: weight @ v + bias."""
    return matvec(head.weight, v) + head.bias


def linear_backward(head: HeadParams, v, d_logits) -> tuple[dict, np.ndarray]:
    vv = as_vector(v, "linear input")
    dl = as_vector(d_logits, "logits gradient")
    grads = {"head.weight": np.outer(dl, vv), "head.bias": dl.copy()}
    return grads, head.weight.T @ dl


def learning_rate(opt: OptimizerState) -> float:
    """Schedule value at the optimizer's current epoch."""
    if opt.schedule == "constant":
        return opt.base_lr
    if opt.schedule == "step":
        if opt.decay_epoch is None:
            raise ContractViolation("step schedule requires decay_epoch")
        return opt.base_lr * (opt.decay_factor if opt.epoch >= opt.decay_epoch else 1.0)
    if opt.schedule == "cosine":
        horizon = max(opt.total_epochs, 1)
        return opt.base_lr * 0.5 * (1.0 + np.cos(np.pi * min(opt.epoch, horizon) / horizon))
    raise ContractViolation(f"unknown schedule {opt.schedule!r}")


def sgd_step(params: dict, grads: dict, opt: OptimizerState) -> None:
    """In-place update p <- p - lr(epoch) * (momentum-smoothed grad).

    ``params`` and ``grads`` are dicts keyed by parameter name; momentum
    buffers live in ``opt.buffers`` under the same keys.
    """
    lr = learning_rate(opt)
    for name in sorted(params):
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericFailure(f"non-finite gradient for parameter {name!r}")
        buf = opt.buffers.get(name)
        if buf is None:
            buf = np.zeros_like(g)
        buf = opt.momentum * buf + g
        opt.buffers[name] = buf
        params[name] -= lr * buf


def param_dict(enc: EncoderParams, head: HeadParams, proj: ProjectionParams | None) -> dict:
    """Flat name -> array view of every trainable tensor (arrays are shared,
    so in-place optimizer updates mutate the model)."""
    params = {}
    for i, (w, b) in enumerate(zip(enc.weights, enc.biases)):
        params[f"enc.w{i}"] = w
        params[f"enc.b{i}"] = b
    params["head.weight"] = head.weight
    params["head.bias"] = head.bias
    if proj is not None:
        params["proj.w_query"] = proj.w_query
        params["proj.w_key"] = proj.w_key
    return params


def check_params_finite(params: dict) -> None:
    for name, arr in params.items():
        check_finite(arr, name)
