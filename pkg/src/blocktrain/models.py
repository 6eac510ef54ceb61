"""Tiny dense and recurrent frame classifiers over flat parameter vectors.

Both model families share one calling convention: a spec describes the
architecture, a :class:`~blocktrain.numerics.ParamVector` holds every weight,
and the functions below unpack views into that vector on the fly. The
recurrent model runs exact backpropagation through time within each sequence
and resets its state at sequence boundaries.

Parameter packing (row-major, in order):

* MLP: for each layer ``l``: ``W_l`` with shape ``(d_l, d_{l+1})``, then
  ``b_l`` with shape ``(d_{l+1},)``. Hidden activations are sigmoid, the last
  layer produces softmax logits.
* LSTM: for each recurrent layer: ``W`` with shape ``(D + H, 4H)`` applied to
  the concatenation ``[x_t, h_{t-1}]``, then ``b`` with shape ``(4H,)``. Gate
  order along the ``4H`` axis is input, forget, candidate, output. After all
  recurrent layers comes the output projection ``W_out (H, K)``, ``b_out (K,)``.

The loss everywhere is mean cross-entropy per frame, so gradient magnitudes
do not depend on how many frames a worker happens to hold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .numerics import ParamVector, frozen

__all__ = [
    "MlpSpec",
    "LstmSpec",
    "ModelSpec",
    "Batch",
    "param_count",
    "init_params",
    "forward_loss",
    "backward",
    "predict_frames",
]


@dataclass(frozen=True)
class MlpSpec:
    """Feed-forward net: sigmoid hidden layers, softmax output."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]


@dataclass(frozen=True)
class LstmSpec:
    """Unidirectional LSTM stack, one dense projection, softmax output.

    Vanilla cells: sigmoid gates, tanh candidate and cell output, no
    peepholes, no projection between recurrent layers.
    """

    input_dim: int
    hidden_dim: int
    num_layers: int = 2
    output_dim: int = 2

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.hidden_dim < 1 or self.output_dim < 1:
            raise ValueError("dimensions must be >= 1")
        if self.num_layers < 1:
            raise ValueError("need at least one recurrent layer")


ModelSpec = Union[MlpSpec, LstmSpec]


@dataclass(frozen=True)
class Batch:
    """Frames with per-frame class targets, segmented into sequences.

    ``inputs`` is ``(num_frames, dim)``, ``targets`` is ``(num_frames,)`` of
    class indices, and ``seq_lengths`` partitions the frame axis into
    contiguous sequences (recurrent state resets at each boundary). A feed
    forward model ignores the segmentation. When ``seq_lengths`` is omitted
    the whole batch is one sequence.
    """

    inputs: np.ndarray
    targets: np.ndarray
    seq_lengths: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        inputs = np.asarray(self.inputs, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.int64)
        if inputs.ndim != 2:
            raise ValueError(f"inputs must be (frames, dim), got {inputs.shape}")
        if targets.shape != (inputs.shape[0],):
            raise ValueError("targets must have one entry per frame")
        if not np.isfinite(inputs).all():
            raise ValueError("inputs contain non-finite values")
        if targets.size and targets.min() < 0:
            raise ValueError("targets must be non-negative class indices")
        lengths = tuple(int(t) for t in self.seq_lengths) or (inputs.shape[0],)
        if any(t < 1 for t in lengths):
            raise ValueError("sequence lengths must be positive")
        if sum(lengths) != inputs.shape[0]:
            raise ValueError("sequence lengths must sum to the frame count")
        if inputs.flags.writeable:
            inputs = frozen(inputs.copy())
        if targets.flags.writeable:
            targets = frozen(targets.copy())
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "seq_lengths", lengths)

    @property
    def num_frames(self) -> int:
        return self.inputs.shape[0]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form: overflow-free and exactly saturating for |z| >~ 40
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softmax_ce(logits: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame softmax probabilities and cross-entropy, max-shifted.

    The log-sum-exp path keeps the loss finite and non-negative even when
    probabilities underflow.
    """
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    exps = np.exp(shifted)
    sums = exps.sum(axis=1, keepdims=True)
    probs = exps / sums
    rows = np.arange(logits.shape[0])
    frame_ce = np.log(sums[:, 0]) - shifted[rows, targets]
    return probs, frame_ce


# ---------------------------------------------------------------------------
# parameter packing


def param_count(spec: ModelSpec) -> int:
    """Number of trainable parameters described by ``spec``."""
    if isinstance(spec, MlpSpec):
        sizes = spec.layer_sizes
        return sum(d_in * d_out + d_out for d_in, d_out in zip(sizes, sizes[1:]))
    n = 0
    d = spec.input_dim
    for _ in range(spec.num_layers):
        n += (d + spec.hidden_dim) * 4 * spec.hidden_dim + 4 * spec.hidden_dim
        d = spec.hidden_dim
    n += spec.hidden_dim * spec.output_dim + spec.output_dim
    return n


def _mlp_views(spec: MlpSpec, arr: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    views = []
    off = 0
    sizes = spec.layer_sizes
    for d_in, d_out in zip(sizes, sizes[1:]):
        w = arr[off : off + d_in * d_out].reshape(d_in, d_out)
        off += d_in * d_out
        b = arr[off : off + d_out]
        off += d_out
        views.append((w, b))
    return views


def _lstm_views(
    spec: LstmSpec, arr: np.ndarray
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray, np.ndarray]:
    layers = []
    off = 0
    h = spec.hidden_dim
    d = spec.input_dim
    for _ in range(spec.num_layers):
        w = arr[off : off + (d + h) * 4 * h].reshape(d + h, 4 * h)
        off += (d + h) * 4 * h
        b = arr[off : off + 4 * h]
        off += 4 * h
        layers.append((w, b))
        d = h
    k = spec.output_dim
    w_out = arr[off : off + h * k].reshape(h, k)
    off += h * k
    b_out = arr[off : off + k]
    return layers, w_out, b_out


def _check_params(spec: ModelSpec, params: ParamVector) -> None:
    expected = param_count(spec)
    if len(params) != expected:
        raise ValueError(
            f"parameter vector has length {len(params)}, spec needs {expected}"
        )


def init_params(spec: ModelSpec, rng: np.random.Generator) -> ParamVector:
    """Fan-in scaled uniform weights, zero biases, forget-gate bias +1.

    Draw order is fixed (layer by layer, weights only), so the result is a
    pure function of the stream state.
    """
    out = np.zeros(param_count(spec))
    if isinstance(spec, MlpSpec):
        for w, b in _mlp_views(spec, out):
            scale = 1.0 / np.sqrt(w.shape[0])
            w[...] = rng.uniform(-scale, scale, size=w.shape)
            b[...] = 0.0
    else:
        layers, w_out, b_out = _lstm_views(spec, out)
        h = spec.hidden_dim
        for w, b in layers:
            scale = 1.0 / np.sqrt(w.shape[0])
            w[...] = rng.uniform(-scale, scale, size=w.shape)
            b[...] = 0.0
            b[h : 2 * h] = 1.0
        w_out[...] = rng.uniform(-1.0 / np.sqrt(h), 1.0 / np.sqrt(h), size=w_out.shape)
        b_out[...] = 0.0
    return ParamVector(frozen(out))


# ---------------------------------------------------------------------------
# grouping equal-length sequences so the recurrence runs batched


def _sequence_slices(lengths: Sequence[int]) -> list[tuple[int, int]]:
    bounds = np.concatenate([[0], np.cumsum(lengths)])
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def _length_groups(lengths: Sequence[int]) -> dict[int, list[tuple[int, int]]]:
    groups: dict[int, list[tuple[int, int]]] = {}
    for lo, hi in _sequence_slices(lengths):
        groups.setdefault(hi - lo, []).append((lo, hi))
    return groups


# ---------------------------------------------------------------------------
# MLP forward/backward


def _mlp_pass(
    spec: MlpSpec, values: np.ndarray, inputs: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    layers = _mlp_views(spec, values)
    acts = [inputs]
    for idx, (w, b) in enumerate(layers):
        z = acts[-1] @ w + b
        acts.append(z if idx == len(layers) - 1 else _sigmoid(z))
    return acts, acts[-1]


def _mlp_loss_grad(
    spec: MlpSpec, values: np.ndarray, batch: Batch, want_grad: bool
) -> tuple[float, np.ndarray | None]:
    acts, logits = _mlp_pass(spec, values, batch.inputs)
    probs, frame_ce = _softmax_ce(logits, batch.targets)
    loss = float(frame_ce.sum() / batch.num_frames)
    if not want_grad:
        return loss, None
    gvec = np.zeros(len(values))
    gviews = _mlp_views(spec, gvec)
    layers = _mlp_views(spec, values)
    delta = probs.copy()
    delta[np.arange(batch.num_frames), batch.targets] -= 1.0
    delta /= batch.num_frames
    for idx in range(len(layers) - 1, -1, -1):
        w, _ = layers[idx]
        gw, gb = gviews[idx]
        gw += acts[idx].T @ delta
        gb += delta.sum(axis=0)
        if idx > 0:
            a = acts[idx]
            delta = (delta @ w.T) * a * (1.0 - a)
    return loss, gvec


# ---------------------------------------------------------------------------
# LSTM forward/backward (exact BPTT, grouped by sequence length)


def _lstm_layer_forward(
    w: np.ndarray, b: np.ndarray, x3: np.ndarray, keep_cache: bool
) -> tuple[np.ndarray, list[tuple[np.ndarray, ...]]]:
    n_seq, steps, _ = x3.shape
    h_dim = b.shape[0] // 4
    h = np.zeros((n_seq, h_dim))
    c = np.zeros((n_seq, h_dim))
    hs = np.empty((n_seq, steps, h_dim))
    caches: list[tuple[np.ndarray, ...]] = []
    for t in range(steps):
        xh = np.concatenate([x3[:, t, :], h], axis=1)
        z = xh @ w + b
        gi = _sigmoid(z[:, :h_dim])
        gf = _sigmoid(z[:, h_dim : 2 * h_dim])
        gg = np.tanh(z[:, 2 * h_dim : 3 * h_dim])
        go = _sigmoid(z[:, 3 * h_dim :])
        c_prev = c
        c = gf * c_prev + gi * gg
        tc = np.tanh(c)
        h = go * tc
        hs[:, t, :] = h
        if keep_cache:
            caches.append((xh, gi, gf, gg, go, c_prev, tc))
    return hs, caches


def _lstm_layer_backward(
    w: np.ndarray,
    caches: list[tuple[np.ndarray, ...]],
    dh_seq: np.ndarray,
    gw: np.ndarray,
    gb: np.ndarray,
) -> np.ndarray:
    n_seq, steps, h_dim = dh_seq.shape
    in_dim = w.shape[0] - h_dim
    dx3 = np.empty((n_seq, steps, in_dim))
    dh_next = np.zeros((n_seq, h_dim))
    dc_next = np.zeros((n_seq, h_dim))
    for t in range(steps - 1, -1, -1):
        xh, gi, gf, gg, go, c_prev, tc = caches[t]
        dh = dh_seq[:, t, :] + dh_next
        d_go = dh * tc
        dc = dh * go * (1.0 - tc * tc) + dc_next
        d_gi = dc * gg
        d_gf = dc * c_prev
        d_gg = dc * gi
        dz = np.concatenate(
            [
                d_gi * gi * (1.0 - gi),
                d_gf * gf * (1.0 - gf),
                d_gg * (1.0 - gg * gg),
                d_go * go * (1.0 - go),
            ],
            axis=1,
        )
        gw += xh.T @ dz
        gb += dz.sum(axis=0)
        dxh = dz @ w.T
        dx3[:, t, :] = dxh[:, :in_dim]
        dh_next = dxh[:, in_dim:]
        dc_next = dc * gf
    return dx3


def _lstm_loss_grad(
    spec: LstmSpec, values: np.ndarray, batch: Batch, want_grad: bool
) -> tuple[float, np.ndarray | None]:
    layers, w_out, b_out = _lstm_views(spec, values)
    gvec = np.zeros(len(values)) if want_grad else None
    if want_grad:
        gl, gw_out, gb_out = _lstm_views(spec, gvec)
    total_ce = 0.0
    for steps, spans in _length_groups(batch.seq_lengths).items():
        x3 = np.stack([batch.inputs[lo:hi] for lo, hi in spans])
        targets = np.concatenate([batch.targets[lo:hi] for lo, hi in spans])
        hs_stack = []
        caches_stack = []
        inp = x3
        for w, b in layers:
            hs, caches = _lstm_layer_forward(w, b, inp, keep_cache=want_grad)
            hs_stack.append(hs)
            caches_stack.append(caches)
            inp = hs
        n_seq = len(spans)
        h_top = inp.reshape(n_seq * steps, spec.hidden_dim)
        logits = h_top @ w_out + b_out
        probs, frame_ce = _softmax_ce(logits, targets)
        total_ce += float(frame_ce.sum())
        if want_grad:
            delta = probs
            delta[np.arange(targets.shape[0]), targets] -= 1.0
            delta /= batch.num_frames
            gw_out += h_top.T @ delta
            gb_out += delta.sum(axis=0)
            dh = (delta @ w_out.T).reshape(n_seq, steps, spec.hidden_dim)
            for idx in range(spec.num_layers - 1, -1, -1):
                gw, gb = gl[idx]
                dh = _lstm_layer_backward(layers[idx][0], caches_stack[idx], dh, gw, gb)
    return total_ce / batch.num_frames, gvec


def _lstm_logits(spec: LstmSpec, values: np.ndarray, batch: Batch) -> np.ndarray:
    """Logits for every frame, restored to the batch's frame order."""
    layers, w_out, b_out = _lstm_views(spec, values)
    out = np.empty((batch.num_frames, spec.output_dim))
    for steps, spans in _length_groups(batch.seq_lengths).items():
        inp = np.stack([batch.inputs[lo:hi] for lo, hi in spans])
        for w, b in layers:
            inp, _ = _lstm_layer_forward(w, b, inp, keep_cache=False)
        h_top = inp.reshape(len(spans) * steps, spec.hidden_dim)
        logits = h_top @ w_out + b_out
        for row, (lo, hi) in enumerate(spans):
            out[lo:hi] = logits[row * steps : (row + 1) * steps]
    return out


# ---------------------------------------------------------------------------
# public operations


def forward_loss(spec: ModelSpec, params: ParamVector, batch: Batch) -> float:
    """Mean cross-entropy over all frames in the batch."""
    _check_params(spec, params)
    if batch.inputs.shape[1] != _input_dim(spec):
        raise ValueError(
            f"batch dim {batch.inputs.shape[1]} does not match model input "
            f"{_input_dim(spec)}"
        )
    if batch.targets.size and int(batch.targets.max()) >= _output_dim(spec):
        raise ValueError("target class out of range for model output")
    if isinstance(spec, MlpSpec):
        loss, _ = _mlp_loss_grad(spec, params.values, batch, want_grad=False)
    else:
        loss, _ = _lstm_loss_grad(spec, params.values, batch, want_grad=False)
    return loss


def backward(
    spec: ModelSpec, params: ParamVector, batch: Batch
) -> tuple[float, ParamVector]:
    """Loss plus its gradient with respect to every parameter.

    The returned loss is bitwise the value :func:`forward_loss` computes on
    the same inputs; both run the identical forward code.
    """
    _check_params(spec, params)
    if batch.inputs.shape[1] != _input_dim(spec):
        raise ValueError(
            f"batch dim {batch.inputs.shape[1]} does not match model input "
            f"{_input_dim(spec)}"
        )
    if batch.targets.size and int(batch.targets.max()) >= _output_dim(spec):
        raise ValueError("target class out of range for model output")
    if isinstance(spec, MlpSpec):
        loss, gvec = _mlp_loss_grad(spec, params.values, batch, want_grad=True)
    else:
        loss, gvec = _lstm_loss_grad(spec, params.values, batch, want_grad=True)
    return loss, ParamVector(frozen(gvec))


def predict_frames(
    spec: ModelSpec,
    params: ParamVector,
    inputs: np.ndarray,
    seq_lengths: Sequence[int] | None = None,
) -> np.ndarray:
    """Most likely class per frame; ties resolve to the lowest class index.

    ``seq_lengths`` segments the frames into sequences for recurrent models
    (default: one sequence). Softmax is monotone, so the argmax is taken on
    the logits directly.
    """
    _check_params(spec, params)
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != _input_dim(spec):
        raise ValueError(
            f"inputs must be (frames, {_input_dim(spec)}), got {inputs.shape}"
        )
    dummy = np.zeros(inputs.shape[0], dtype=np.int64)
    batch = Batch(inputs, dummy, tuple(seq_lengths) if seq_lengths else ())
    if isinstance(spec, MlpSpec):
        _, logits = _mlp_pass(spec, params.values, batch.inputs)
    else:
        logits = _lstm_logits(spec, params.values, batch)
    return np.argmax(logits, axis=1)


def _input_dim(spec: ModelSpec) -> int:
    return spec.layer_sizes[0] if isinstance(spec, MlpSpec) else spec.input_dim


def _output_dim(spec: ModelSpec) -> int:
    return spec.layer_sizes[-1] if isinstance(spec, MlpSpec) else spec.output_dim
