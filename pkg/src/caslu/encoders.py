"""Embedding lookup plus the encoder zoo: LSTM, GRU, Bi-LSTM, Bi-GRU, CNN.

All encoders map an embedded sequence [L x d] (or a batch [B x L x d]) to
per-position hidden states, with masked positions forced to exact zeros.
Recurrences run over the full padded length; at a masked step the carried
state is passed through unchanged, so trailing PAD can never alter the
states of real tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DegenerateMaskError, ShapeError, Tensor

ARCHS = ("lstm", "gru", "bilstm", "bigru", "cnn")
CNN_WIDTHS = (3, 4, 5)
CNN_FILTERS = 100


@dataclass
class EmbeddingTable:
    """Token-id to vector table. Row 0 is PAD (frozen), row 1 is UNK."""

    vocab_size: int
    dim: int
    weights: Tensor


@dataclass
class RecurrentParams:
    """Fused-gate cell parameters. Gate order: [i,f,g,o] LSTM, [z,r,cand] GRU."""

    kind: str
    hidden: int
    wx: Tensor
    wh: Tensor
    b: Tensor


@dataclass
class ConvParams:
    widths: tuple
    w: list
    b: list


@dataclass
class EncoderParams:
    arch: str
    max_len: int
    out_width: int
    fwd: RecurrentParams | None = None
    bwd: RecurrentParams | None = None
    conv: ConvParams | None = None


@dataclass
class EncodedSequence:
    hidden: Tensor
    mask: np.ndarray


def recurrent_param_shapes(input_dim, hidden, kind):
    gates = 4 if kind == "lstm" else 3
    return {"wx": (input_dim, gates * hidden),
            "wh": (hidden, gates * hidden),
            "b": (gates * hidden,)}


def conv_param_shapes(input_dim, widths=CNN_WIDTHS, filters=CNN_FILTERS):
    shapes = {}
    for w in widths:
        shapes[f"w{w}"] = (w * input_dim, filters)
        shapes[f"b{w}"] = (filters,)
    return shapes


def encoder_out_width(arch, hidden, widths=CNN_WIDTHS, filters=CNN_FILTERS):
    if arch == "cnn":
        return len(widths) * filters
    if arch in ("bilstm", "bigru"):
        return 2 * hidden
    if arch in ("lstm", "gru"):
        return hidden
    raise ValueError(f"unknown encoder arch {arch!r}")


def embed(ids, table: EmbeddingTable, mask) -> Tensor:
    """Look up rows for a single sequence [L] -> [L x dim], masked rows zeroed."""
    ids = np.asarray(ids)
    rows = T.gather_rows(table.weights, ids)
    m = table.weights.tape.constant(np.asarray(mask))
    return T.scale_rows(rows, m)


def embed_batch(ids, table: EmbeddingTable, mask) -> Tensor:
    """Batched lookup [B x L] -> [B x L x dim], masked positions zeroed."""
    ids = np.asarray(ids)
    rows = T.gather_rows(table.weights, ids)
    m = table.weights.tape.constant(np.asarray(mask))
    return T.scale_mid(rows, m)


def lstm_step(x: Tensor, state, params: RecurrentParams):
    """One LSTM cell update over a batch of rows: ([B,d], ([B,H],[B,H])) -> ([B,H],[B,H])."""
    h, c = state
    H = params.hidden
    gates = T.add_bias(T.add(T.matmul(x, params.wx), T.matmul(h, params.wh)), params.b)
    i = T.sigmoid(T.slice_cols(gates, 0, H))
    f = T.sigmoid(T.slice_cols(gates, H, 2 * H))
    g = T.tanh(T.slice_cols(gates, 2 * H, 3 * H))
    o = T.sigmoid(T.slice_cols(gates, 3 * H, 4 * H))
    c_new = T.add(T.mul(f, c), T.mul(i, g))
    h_new = T.mul(o, T.tanh(c_new))
    return h_new, c_new


def gru_step(x: Tensor, h: Tensor, params: RecurrentParams) -> Tensor:
    """One GRU cell update: h' = (1-z) * h + z * tanh(Wx x + Wh (r*h) + b)."""
    H = params.hidden
    zr_x = T.matmul(x, T.slice_cols(params.wx, 0, 2 * H))
    zr_h = T.matmul(h, T.slice_cols(params.wh, 0, 2 * H))
    zr = T.sigmoid(T.add_bias(T.add(zr_x, zr_h), T.slice_cols(params.b, 0, 2 * H)))
    z = T.slice_cols(zr, 0, H)
    r = T.slice_cols(zr, H, 2 * H)
    cand_x = T.matmul(x, T.slice_cols(params.wx, 2 * H, 3 * H))
    cand_h = T.matmul(T.mul(r, h), T.slice_cols(params.wh, 2 * H, 3 * H))
    cand = T.tanh(T.add_bias(T.add(cand_x, cand_h), T.slice_cols(params.b, 2 * H, 3 * H)))
    return T.add(T.sub(h, T.mul(z, h)), T.mul(z, cand))


def run_recurrence(seq3: Tensor, mask, params: RecurrentParams, reverse=False):
    """Masked recurrence over [B,L,d]; returns per-step outputs, each [B,H].

    At a masked step the carried state is held (h <- h_prev), and the
    emitted output row is zeroed. Running in reverse therefore equals a
    forward run over the reversed unmasked sequence, re-reversed.
    """
    tape = seq3.tape
    mask = np.asarray(mask, dtype=float)
    B, L, _ = seq3.shape
    H = params.hidden
    h = tape.constant(np.zeros((B, H)))
    c = tape.constant(np.zeros((B, H))) if params.kind == "lstm" else None
    outs = [None] * L
    order = range(L - 1, -1, -1) if reverse else range(L)
    for t in order:
        x_t = T.select_time(seq3, t)
        m = tape.constant(mask[:, t])
        inv = tape.constant(1.0 - mask[:, t])
        if params.kind == "lstm":
            h_new, c_new = lstm_step(x_t, (h, c), params)
            c = T.add(T.scale_rows(c_new, m), T.scale_rows(c, inv))
        else:
            h_new = gru_step(x_t, h, params)
        h = T.add(T.scale_rows(h_new, m), T.scale_rows(h, inv))
        outs[t] = T.scale_rows(h, m)
    return outs


def encode_batch(seq3: Tensor, mask, enc: EncoderParams) -> Tensor:
    """Encode a batch [B,L,d] -> [B,L,D] under the configured architecture."""
    mask = np.asarray(mask, dtype=float)
    B, L, _ = seq3.shape
    if mask.shape != (B, L):
        raise ShapeError(f"encode: mask {mask.shape} does not match batch ({B}, {L})")
    if L > enc.max_len:
        raise ShapeError(f"encode: length {L} exceeds maximum {enc.max_len}")
    if not (mask.sum(axis=1) > 0).all():
        raise DegenerateMaskError("encode: a sequence in the batch is all PAD")

    if enc.arch == "cnn":
        parts = []
        for width, w, b in zip(enc.conv.widths, enc.conv.w, enc.conv.b):
            windows = T.unfold_same(seq3, width)
            parts.append(T.tanh(T.add_bias(T.matmul3(windows, w), b)))
        hidden = T.concat_cols(parts) if len(parts) > 1 else parts[0]
        return T.scale_mid(hidden, seq3.tape.constant(mask))

    fwd_outs = run_recurrence(seq3, mask, enc.fwd, reverse=False)
    if enc.arch in ("lstm", "gru"):
        return T.stack_time(fwd_outs)
    bwd_outs = run_recurrence(seq3, mask, enc.bwd, reverse=True)
    rows = [T.concat_cols([f, b]) for f, b in zip(fwd_outs, bwd_outs)]
    return T.stack_time(rows)


def encode(seq: Tensor, mask, enc: EncoderParams) -> EncodedSequence:
    """Encode one sequence [L,d] -> EncodedSequence with hidden [L,D]."""
    L, d = seq.shape
    mask = np.asarray(mask, dtype=float)
    hidden3 = encode_batch(T.reshape(seq, (1, L, d)), mask.reshape(1, L), enc)
    return EncodedSequence(T.reshape(hidden3, (L, enc.out_width)), mask)
