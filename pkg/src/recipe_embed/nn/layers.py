"""LSTM cells and sequence encoders on top of the autodiff core."""

from __future__ import annotations

import numpy as np

from recipe_embed.errors import DimensionError, EmptyInputError
from recipe_embed.nn.tensor import (
    Param,
    Tensor,
    _accum,
    _make,
    _stable_sigmoid,
    as_tensor,
    blend,
    concat,
    getitem,
    linear,
    mul,
    add,
    stack,
    tanh,
)


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class LSTMCell:
    """Standard LSTM cell.

    The four gate matrices (input, forget, output, candidate), each of shape
    (hidden, input + hidden), are stored stacked in one (4 * hidden, input +
    hidden) parameter so a step costs a single matmul.
    """

    GATES = ("input", "forget", "output", "candidate")

    def __init__(self, input_size, hidden_size, rng=None, name="lstm", forget_bias=1.0):
        rng = np.random.default_rng(0) if rng is None else rng
        self.input_size = int(input_size)
        self.hidden_size = int(hidden_size)
        h = self.hidden_size
        self.W = Param(uniform_init(rng, (4 * h, self.input_size + h), h), name=f"{name}.W")
        b = np.zeros(4 * h)
        b[h:2 * h] = forget_bias
        self.b = Param(b, name=f"{name}.b")

    def params(self):
        return {self.W.name: self.W, self.b.name: self.b}

    def gate_weight(self, gate):
        k = self.GATES.index(gate)
        h = self.hidden_size
        return self.W.data[k * h:(k + 1) * h], self.b.data[k * h:(k + 1) * h]

    def zero_state(self, batch):
        z = np.zeros((batch, self.hidden_size))
        return Tensor(z), Tensor(z.copy())


def _lstm_gates(z, h):
    """sigmoid on the first 3h columns, tanh on the last h, as one node."""
    a = np.empty_like(z.data)
    a[:, :3 * h] = _stable_sigmoid(z.data[:, :3 * h])
    a[:, 3 * h:] = np.tanh(z.data[:, 3 * h:])

    def backward(g):
        d = np.empty_like(g)
        s = a[:, :3 * h]
        d[:, :3 * h] = g[:, :3 * h] * s * (1.0 - s)
        t = a[:, 3 * h:]
        d[:, 3 * h:] = g[:, 3 * h:] * (1.0 - t * t)
        _accum(z, d)

    return _make(a, (z,), backward)


def _as_batch(t):
    t = as_tensor(t)
    return (t.reshape(1, -1), True) if t.ndim == 1 else (t, False)


def lstm_step(cell, x_t, h_prev, c_prev):
    """One LSTM recurrence step; accepts (B, d) batches or single (d,) vectors."""
    x, single = _as_batch(x_t)
    h_prev, _ = _as_batch(h_prev)
    c_prev, _ = _as_batch(c_prev)
    if x.shape[1] != cell.input_size:
        raise DimensionError(f"lstm input width {x.shape[1]} != cell input size {cell.input_size}")
    if h_prev.shape[1] != cell.hidden_size or c_prev.shape != h_prev.shape:
        raise DimensionError("lstm state does not match cell hidden size")
    if x.shape[0] != h_prev.shape[0]:
        raise DimensionError("lstm input and state batch sizes differ")
    h = cell.hidden_size
    a = _lstm_gates(linear(concat([x, h_prev], axis=1), cell.W, cell.b), h)
    i, f, o, g = a[:, :h], a[:, h:2 * h], a[:, 2 * h:3 * h], a[:, 3 * h:]
    c_t = add(mul(f, c_prev), mul(i, g))
    h_t = mul(o, tanh(c_t))
    if single:
        return h_t.reshape(-1), c_t.reshape(-1)
    return h_t, c_t


def length_mask(lengths, steps):
    lengths = np.asarray(lengths)
    return (np.arange(steps)[None, :] < lengths[:, None]).astype(np.float64)


def run_lstm(cell, x, lengths=None, return_all=False, h0=None, c0=None):
    """Run ``cell`` over a right-padded batch ``x`` of shape (B, T, d).

    State stops updating past each row's length, so the returned final state
    is the state after the last valid step. With ``return_all`` the per-step
    hidden states are stacked to (B, T, hidden). ``h0``/``c0`` default to zeros.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"run_lstm expects (B, T, d), got {x.shape}")
    B, T, _ = x.shape
    if T == 0:
        raise EmptyInputError("empty sequence")
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
    if np.any(lengths < 1):
        raise EmptyInputError("every sequence needs at least one element")
    mask = length_mask(lengths, T)
    full = bool(np.all(lengths == T))
    h, c = cell.zero_state(B)
    if h0 is not None:
        h = as_tensor(h0)
    if c0 is not None:
        c = as_tensor(c0)
    outputs = []
    for t in range(T):
        h_new, c_new = lstm_step(cell, x[:, t, :], h, c)
        if full:
            h, c = h_new, c_new
        else:
            m = mask[:, t:t + 1]
            h, c = blend(h_new, h, m), blend(c_new, c, m)
        if return_all:
            outputs.append(h_new)
    if return_all:
        return stack(outputs, axis=1), h
    return h


def reverse_padded(x, lengths):
    """Reverse the valid prefix of each row of a (B, T, d) batch; padding stays put."""
    x = as_tensor(x)
    B, T = x.shape[0], x.shape[1]
    lengths = np.asarray(lengths)
    t = np.arange(T)[None, :]
    src = np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)
    rows = np.repeat(np.arange(B)[:, None], T, axis=1)
    return getitem(x, (rows, src))


def run_bilstm(fwd, bwd, x, lengths=None):
    """Concatenated final states of a forward and a backward LSTM, (B, 2 * hidden)."""
    x = as_tensor(x)
    lengths = np.full(x.shape[0], x.shape[1]) if lengths is None else np.asarray(lengths)
    hf = run_lstm(fwd, x, lengths)
    hb = run_lstm(bwd, reverse_padded(x, lengths), lengths)
    return concat([hf, hb], axis=1)


def run_bilstm_all(fwd, bwd, x, lengths):
    """Per-step bidirectional states (B, T, 2 * hidden), aligned to input positions."""
    x = as_tensor(x)
    lengths = np.asarray(lengths)
    hs_f, _ = run_lstm(fwd, x, lengths, return_all=True)
    hs_b, _ = run_lstm(bwd, reverse_padded(x, lengths), lengths, return_all=True)
    return concat([hs_f, reverse_padded(hs_b, lengths)], axis=2)


def encode_sequence(cell, inputs, direction="forward", backward_cell=None):
    """Encode a list of (d,) vectors to a single vector.

    ``forward`` returns the final hidden state; ``bidirectional`` returns the
    final forward state concatenated with the final state of ``backward_cell``
    (``cell`` itself when not given) run over the reversed sequence.
    """
    if len(inputs) == 0:
        raise EmptyInputError("encode_sequence needs a non-empty input list")
    x = stack([as_tensor(v) for v in inputs], axis=0).reshape(1, len(inputs), -1)
    if direction == "forward":
        return run_lstm(cell, x).reshape(-1)
    if direction == "bidirectional":
        return run_bilstm(cell, backward_cell or cell, x).reshape(-1)
    raise ValueError(f"unknown direction {direction!r}")


def pad_sequences(seqs, width=None):
    """Stack variable-length (n_i, d) arrays into (B, T, d) plus lengths."""
    if not seqs:
        raise EmptyInputError("no sequences to pad")
    lengths = np.array([len(s) for s in seqs])
    if np.any(lengths == 0):
        raise EmptyInputError("cannot pad an empty sequence")
    d = seqs[0].shape[1] if width is None else width
    out = np.zeros((len(seqs), int(lengths.max()), d))
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out, lengths
