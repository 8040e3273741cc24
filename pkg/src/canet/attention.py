"""Temporal multi-head self-attention over per-sensor sequences.

One parameter set serves all sensors in a layer: inputs of shape
``(..., seq, width)`` are processed independently along every leading axis,
so a stack of N sensor sequences runs as N parallel attention instances
sharing weights.  Decoders pass ``causal=True`` to restrict each position to
itself and earlier ones.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from canet.initializers import glorot_uniform
from canet.tensor import ShapeError, Tensor, concat, matmul, softmax


@dataclass
class AttentionParams:
    """Per-head query/key/value projections plus the output projection."""

    w_query: List[Tensor]
    w_key: List[Tensor]
    w_value: List[Tensor]
    w_out: Tensor

    @property
    def heads(self) -> int:
        return len(self.w_query)

    @staticmethod
    def create(width: int, heads: int, rng: np.random.Generator, dtype=np.float32) -> "AttentionParams":
        if heads < 1:
            raise ValueError(f"head count must be >= 1, got {heads}")
        if width % heads != 0:
            raise ValueError(f"model width {width} is not divisible by head count {heads}")
        head_dim = width // heads
        return AttentionParams(
            w_query=[glorot_uniform(rng, (width, head_dim), dtype) for _ in range(heads)],
            w_key=[glorot_uniform(rng, (width, head_dim), dtype) for _ in range(heads)],
            w_value=[glorot_uniform(rng, (width, head_dim), dtype) for _ in range(heads)],
            w_out=glorot_uniform(rng, (heads * head_dim, width), dtype),
        )

    def named(self, prefix: str):
        for i in range(self.heads):
            yield f"{prefix}.w_query.{i}", self.w_query[i]
            yield f"{prefix}.w_key.{i}", self.w_key[i]
            yield f"{prefix}.w_value.{i}", self.w_value[i]
        yield f"{prefix}.w_out", self.w_out


def project_qkv(sequence: Tensor, params: AttentionParams, head: int):
    """Bias-free linear maps into the query/key/value subspaces of one head."""
    if head >= params.heads:
        raise IndexError(f"head {head} out of range for {params.heads} heads")
    q = matmul(sequence, params.w_query[head])
    k = matmul(sequence, params.w_key[head])
    v = matmul(sequence, params.w_value[head])
    return q, k, v


def causal_mask(length: int) -> np.ndarray:
    """Boolean mask excluding future positions (True above the diagonal)."""
    return np.triu(np.ones((length, length), dtype=bool), k=1)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False) -> Tensor:
    """softmax(q kᵀ / sqrt(d_k)) v along the sequence axis."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key widths differ: {q.shape} vs {k.shape}")
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = matmul(q, k.transpose()) * scale
    mask = causal_mask(scores.shape[-1]) if causal else None
    weights = softmax(scores, axis=-1, mask=mask)
    return matmul(weights, v)


def multi_head_attention(sequence: Tensor, params: AttentionParams, causal: bool = False) -> Tensor:
    """Concatenate all head outputs along channels and project back."""
    outputs = [
        scaled_dot_attention(*project_qkv(sequence, params, i), causal=causal)
        for i in range(params.heads)
    ]
    stacked = outputs[0] if len(outputs) == 1 else concat(outputs, axis=-1)
    return matmul(stacked, params.w_out)


def sinusoid_table(length: int, width: int, dtype=np.float32) -> np.ndarray:
    """Fixed sinusoidal position table: sin on even channels, cos on odd."""
    positions = np.arange(length, dtype=np.float64)[:, None]
    channels = np.arange(width, dtype=np.float64)[None, :]
    angles = positions / np.power(10000.0, 2.0 * (channels // 2) / width)
    table = np.where(channels % 2 == 0, np.sin(angles), np.cos(angles))
    return table.astype(dtype)


def positional_encoding(seq_len: int, width: int, dtype=np.float32) -> Tensor:
    """Sinusoidal positional rows for a sequence of ``seq_len`` slots."""
    return Tensor(sinusoid_table(seq_len, width, dtype))


class PositionalTable:
    """Position rows added to model inputs, fixed sinusoidal by default.

    With ``learned=True`` the table is a trainable parameter instead.
    """

    def __init__(self, max_len: int, width: int, learned: bool = False,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        self.max_len = max_len
        self.width = width
        self.learned = learned
        if learned:
            self.values = Tensor(
                (0.1 * rng.standard_normal((max_len, width))).astype(dtype),
                requires_grad=True)
        else:
            self.values = Tensor(sinusoid_table(max_len, width, dtype))

    @staticmethod
    def create(max_len: int, width: int, learned: bool = False,
               rng: Optional[np.random.Generator] = None, dtype=np.float32) -> "PositionalTable":
        return PositionalTable(max_len, width, learned=learned, rng=rng, dtype=dtype)

    def take(self, seq_len: int) -> Tensor:
        if seq_len > self.max_len:
            raise ShapeError(f"requested {seq_len} positions from a table of {self.max_len}")
        return self.values[:seq_len]

    def named(self, prefix: str):
        if self.learned:
            yield f"{prefix}.values", self.values
