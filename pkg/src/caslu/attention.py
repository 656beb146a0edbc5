"""Cross-attention interaction: cosine correlation map, full-length kernel
attention over its rows and columns, and attention-weighted pooling.

The "convolution" kernels span an entire row or column of the correlation
map, so each reduces to a dot product producing one logit per position.
Kernels carry no bias and are initialized to zero elsewhere, which makes
the initial attention exactly uniform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoders import EncodedSequence
from .tensor import ShapeError, Tensor


class ContractError(ValueError):
    """An argument violates a documented value contract (not a shape one)."""


@dataclass
class CorrelationMap:
    C: Tensor
    row_mask: np.ndarray
    col_mask: np.ndarray


@dataclass
class AttentionKernels:
    k_text: Tensor
    k_phoneme: Tensor


@dataclass
class AttentionTrace:
    C: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    words: list
    phonemes: list

    def to_json(self) -> str:
        return json.dumps({"C": self.C.tolist(), "alpha": self.alpha.tolist(),
                           "beta": self.beta.tolist(), "words": list(self.words),
                           "phonemes": list(self.phonemes)})

    @classmethod
    def from_json(cls, text: str) -> "AttentionTrace":
        d = json.loads(text)
        return cls(np.asarray(d["C"]), np.asarray(d["alpha"]),
                   np.asarray(d["beta"]), d["words"], d["phonemes"])


def _unit_rows(hidden: Tensor, epsilon: float) -> Tensor:
    """Divide each row by max(its L2 norm, epsilon). Zero rows stay zero.

    The clamp happens under the square root so sqrt never sees 0 and the
    backward pass stays finite; sub-epsilon rows get no norm gradient.
    """
    sq = T.sum_last(T.mul(hidden, hidden))
    inv = T.recip(T.sqrt(T.clamp_min(sq, epsilon * epsilon)))
    if len(hidden.shape) == 2:
        return T.scale_rows(hidden, inv)
    return T.scale_mid(hidden, inv)


def correlation_map(Hw: EncodedSequence, Hp: EncodedSequence,
                    epsilon: float = 1e-8, premask: bool = True) -> CorrelationMap:
    """Cosine similarity of every word row against every phoneme row."""
    if Hw.hidden.shape[1] != Hp.hidden.shape[1]:
        raise ShapeError(f"correlation_map: hidden widths {Hw.hidden.shape[1]} "
                         f"and {Hp.hidden.shape[1]} differ")
    nw = _unit_rows(Hw.hidden, epsilon)
    np_ = _unit_rows(Hp.hidden, epsilon)
    C = T.matmul(nw, T.transpose_last2(np_))
    row_mask = np.asarray(Hw.mask, dtype=float)
    col_mask = np.asarray(Hp.mask, dtype=float)
    if premask:
        C = T.mul(C, C.tape.constant(np.outer(row_mask, col_mask)))
    return CorrelationMap(C, row_mask, col_mask)


def correlation_batch(Hw3: Tensor, w_mask, Hp3: Tensor, p_mask,
                      epsilon: float = 1e-8, premask: bool = True) -> Tensor:
    """Batched correlation maps: [B,Lw,D] x [B,Lp,D] -> [B,Lw,Lp]."""
    if Hw3.shape[2] != Hp3.shape[2]:
        raise ShapeError(f"correlation_batch: hidden widths {Hw3.shape[2]} "
                         f"and {Hp3.shape[2]} differ")
    nw = _unit_rows(Hw3, epsilon)
    np_ = _unit_rows(Hp3, epsilon)
    C = T.bmm(nw, T.transpose_last2(np_))
    if premask:
        pair = np.asarray(w_mask, float)[:, :, None] * np.asarray(p_mask, float)[:, None, :]
        C = T.mul(C, C.tape.constant(pair))
    return C


def row_attention(cmap: CorrelationMap, k_text: Tensor) -> Tensor:
    """Attention over words: logit_i = k_text . C[i, :], masked softmax."""
    m, n = cmap.C.shape
    logits = T.reshape(T.matmul(cmap.C, T.reshape(k_text, (n, 1))), (m,))
    return T.masked_softmax(logits, cmap.row_mask)


def col_attention(cmap: CorrelationMap, k_phoneme: Tensor) -> Tensor:
    """Attention over phonemes: logit_j = k_phoneme . C[:, j], masked softmax."""
    m, n = cmap.C.shape
    logits = T.reshape(T.matmul(T.transpose_last2(cmap.C), T.reshape(k_phoneme, (m, 1))), (n,))
    return T.masked_softmax(logits, cmap.col_mask)


def row_attention_batch(C3: Tensor, row_mask, k_text: Tensor) -> Tensor:
    B, m, n = C3.shape
    logits = T.reshape(T.matmul3(C3, T.reshape(k_text, (n, 1))), (B, m))
    return T.masked_softmax(logits, np.asarray(row_mask, float))


def col_attention_batch(C3: Tensor, col_mask, k_phoneme: Tensor) -> Tensor:
    B, m, n = C3.shape
    logits = T.reshape(T.matmul3(T.transpose_last2(C3), T.reshape(k_phoneme, (m, 1))), (B, n))
    return T.masked_softmax(logits, np.asarray(col_mask, float))


def attend_pool(H: EncodedSequence, weights: Tensor) -> Tensor:
    """Weighted sum of hidden rows: [L,D] pooled by a simplex vector [L]."""
    total = float(weights.value.sum())
    if abs(total - 1.0) > 1e-5:
        raise ContractError(f"attend_pool: weights sum to {total}, not 1")
    L, D = H.hidden.shape
    pooled = T.matmul(T.transpose_last2(H.hidden), T.reshape(weights, (L, 1)))
    return T.reshape(pooled, (D,))


def pool_batch(H3: Tensor, weights: Tensor) -> Tensor:
    """Batched pooling: [B,L,D] with per-row simplex weights [B,L] -> [B,D]."""
    sums = weights.value.sum(axis=-1)
    if np.abs(sums - 1.0).max() > 1e-5:
        raise ContractError("pool_batch: a weight row does not sum to 1")
    B, L, D = H3.shape
    pooled = T.bmm(T.transpose_last2(H3), T.reshape(weights, (B, L, 1)))
    return T.reshape(pooled, (B, D))


def uniform_pool(H: EncodedSequence) -> Tensor:
    """Mean over unmasked rows; attend_pool with uniform weights."""
    mask = np.asarray(H.mask, dtype=float)
    active = mask.sum()
    if active == 0:
        raise T.DegenerateMaskError("uniform_pool: all positions masked")
    return attend_pool(H, H.hidden.tape.constant(mask / active))


def uniform_pool_batch(H3: Tensor, mask) -> Tensor:
    mask = np.asarray(mask, dtype=float)
    active = mask.sum(axis=1, keepdims=True)
    if (active == 0).any():
        raise T.DegenerateMaskError("uniform_pool: a sequence is all masked")
    return pool_batch(H3, H3.tape.constant(mask / active))
