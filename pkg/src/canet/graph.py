"""Sensor-graph learning and global-local graph convolution.

The global graph comes from learned sensor embeddings (similarity of rows),
the local graph from attention over the current window's features, and a
binary top-k mask picks each sensor's candidate neighbours from the global
graph before propagation.
"""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from canet.initializers import glorot_uniform
from canet.tensor import (Tensor, leaky_relu, matmul, relu, row_normalize,
                          softmax, Pow)


def init_sensor_embedding(n_sensors: int, embed_dim: int,
                          rng: np.random.Generator, dtype=np.float32) -> Tensor:
    """One learnable row per sensor, seeded normal scaled by 1/sqrt(dim)."""
    values = rng.standard_normal((n_sensors, embed_dim)) / np.sqrt(embed_dim)
    return Tensor(values.astype(dtype), requires_grad=True)


def global_adjacency(embedding: Tensor) -> Tensor:
    """relu(E Eᵀ): symmetric, non-negative sensor similarity."""
    return relu(matmul(embedding, embedding.transpose()))


def topk_mask(adjacency: np.ndarray, k: int) -> np.ndarray:
    """Binary row mask keeping each row's k largest entries.

    Ties break toward the lower column index; k >= N keeps everything.
    Operates on raw values, gradients never flow through the mask.
    """
    if k < 1:
        raise ValueError(f"top-k must be >= 1, got {k}")
    values = np.asarray(getattr(adjacency, "data", adjacency))
    n = values.shape[-1]
    keep = min(k, n)
    order = np.argsort(-values, axis=-1, kind="stable")
    mask = np.zeros_like(values)
    np.put_along_axis(mask, order[..., :keep], 1.0, axis=-1)
    return mask


def normalize_adjacency(adjacency: Tensor, mode: str = "row") -> Tensor:
    """Normalize a non-negative adjacency; all-zero rows stay zero.

    ``row`` divides each row by its sum; ``sym`` applies symmetric degree
    scaling d^-1/2 A d^-1/2.
    """
    if mode == "row":
        return row_normalize(adjacency)
    if mode == "sym":
        degree = adjacency.sum(axis=-1, keepdims=True)
        inv_root = Pow.apply(degree + 1e-12, exponent=-0.5)
        return adjacency * inv_root * inv_root.transpose()
    raise ValueError(f"unknown adjacency normalization {mode!r}")


@dataclass
class SensorGraph:
    """Global adjacency with its normalized form and the top-k neighbour mask."""

    adjacency: Tensor
    normalized: Tensor
    mask: np.ndarray
    top_k: int


def build_sensor_graph(embedding: Tensor, top_k: int, mode: str = "row") -> SensorGraph:
    adjacency = global_adjacency(embedding)
    return SensorGraph(
        adjacency=adjacency,
        normalized=normalize_adjacency(adjacency, mode),
        mask=topk_mask(adjacency.data, top_k),
        top_k=top_k,
    )


@dataclass
class GraphConvParams:
    """Learnables for the local graph and the propagation step."""

    feature_map: Tensor        # (width, local_dim)
    attn_vector: Tensor        # (2 * seq * local_dim, 1)
    propagation: Tensor        # (width, width)
    retain: float              # share of the original state kept, in [0, 1]
    slope: float = 0.2

    @staticmethod
    def create(width: int, seq_len: int, local_dim: int, retain: float,
               rng: np.random.Generator, dtype=np.float32) -> "GraphConvParams":
        if not 0.0 <= retain <= 1.0:
            raise ValueError(f"retain ratio must be in [0, 1], got {retain}")
        return GraphConvParams(
            feature_map=glorot_uniform(rng, (width, local_dim), dtype),
            attn_vector=glorot_uniform(rng, (2 * seq_len * local_dim, 1), dtype),
            propagation=glorot_uniform(rng, (width, width), dtype),
            retain=retain,
        )

    def named(self, prefix: str):
        yield f"{prefix}.feature_map", self.feature_map
        yield f"{prefix}.attn_vector", self.attn_vector
        yield f"{prefix}.propagation", self.propagation


def local_adjacency(features: Tensor, params: GraphConvParams) -> Tensor:
    """Window-dependent adjacency from pairwise attention over flattened
    per-sensor features; rows are softmax-normalized."""
    *lead, n, seq, _ = features.shape
    mapped = matmul(features, params.feature_map)
    local_dim = mapped.shape[-1]
    flat = mapped.reshape(tuple(lead) + (n, seq * local_dim))
    half = seq * local_dim
    self_score = matmul(flat, params.attn_vector[:half])      # (..., n, 1)
    peer_score = matmul(flat, params.attn_vector[half:])
    logits = leaky_relu(self_score + peer_score.transpose(), slope=params.slope)
    return softmax(logits, axis=-1)


def global_local_conv(features: Tensor, graph: SensorGraph,
                      local: Optional[Tensor], params: GraphConvParams) -> Tensor:
    """Mask-filtered propagation mixing the sensor axis, then feature map.

    Combines the normalized global graph with the (optional) local graph,
    zeroes non-candidate edges with the binary mask, and blends the
    propagated state with the original by the retain ratio.
    """
    combined = graph.normalized if local is None else local + graph.normalized
    gated = combined * Tensor(graph.mask.astype(features.dtype))

    *lead, n, seq, width = features.shape
    if params.retain == 1.0:
        mixed = features
    else:
        flat = features.reshape(tuple(lead) + (n, seq * width))
        propagated = matmul(gated, flat).reshape(features.shape)
        if params.retain == 0.0:
            mixed = propagated
        else:
            mixed = params.retain * features + (1.0 - params.retain) * propagated
    return matmul(mixed, params.propagation)


def write_embeddings_csv(path, sensor_names, embedding: np.ndarray) -> None:
    """Write one row per sensor: sensor_id, e_0 .. e_{d-1}."""
    values = np.asarray(getattr(embedding, "data", embedding))
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["sensor_id"] + [f"e_{i}" for i in range(values.shape[1])])
        for name, row in zip(sensor_names, values):
            writer.writerow([name] + [repr(float(v)) for v in row])
