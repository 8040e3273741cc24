"""The full coupled-attention model: encoder, bottleneck, and two decoders.

The encoder stacks coupled attention layers (temporal self-attention plus
global-local graph convolution, each with residual + layer norm) over the
input window extended by a zero-initialized placeholder slot.  Each layer's
placeholder state is squeezed through a small autoencoder and handed to the
matching layer of both causal decoders: one predicts the next step, the
other reconstructs the window.
"""

from dataclasses import dataclass, field, asdict
from typing import List, Optional

import numpy as np

from canet.attention import AttentionParams, PositionalTable, multi_head_attention
from canet.graph import (GraphConvParams, SensorGraph, build_sensor_graph,
                         global_local_conv, init_sensor_embedding, local_adjacency)
from canet.initializers import glorot_uniform, ones, zeros
from canet.tensor import ShapeError, Tensor, concat, layer_norm, matmul, relu

BOTTLENECK_DIMS = (8, 4, 8)

ABLATIONS = ("none", "no-local-graph", "no-graph-conv", "no-ae", "no-rec-decoder")


@dataclass
class ModelConfig:
    """Everything that determines the parameter set."""

    n_sensors: int
    window: int                    # history length; sequences run window+1 slots
    layers: int = 3
    heads: int = 8
    model_dim: int = 32
    embed_dim: int = 10
    neighbor_k: int = 10
    retain: float = 0.8
    local_dim: Optional[int] = None
    adjacency_norm: str = "row"
    learned_positions: bool = False
    ablation: str = "none"

    def __post_init__(self):
        if self.n_sensors < 1 or self.window < 1 or self.layers < 1:
            raise ValueError("n_sensors, window and layers must all be >= 1")
        if self.model_dim % self.heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} is not divisible by heads {self.heads}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        if self.local_dim is None:
            self.local_dim = self.model_dim

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CamLayerParams:
    """One coupled attention layer: attention sublayer + graph sublayer."""

    attention: AttentionParams
    graph: Optional[GraphConvParams]
    dense: Optional[Tensor]            # replaces the graph sublayer when set
    use_local: bool
    ln_attn_gain: Tensor
    ln_attn_bias: Tensor
    ln_graph_gain: Tensor
    ln_graph_bias: Tensor

    def named(self, prefix: str):
        yield from self.attention.named(f"{prefix}.attention")
        if self.graph is not None:
            yield from self.graph.named(f"{prefix}.graph")
        if self.dense is not None:
            yield f"{prefix}.dense", self.dense
        yield f"{prefix}.ln_attn_gain", self.ln_attn_gain
        yield f"{prefix}.ln_attn_bias", self.ln_attn_bias
        yield f"{prefix}.ln_graph_gain", self.ln_graph_gain
        yield f"{prefix}.ln_graph_bias", self.ln_graph_bias


@dataclass
class DecoderLayerParams:
    attention: AttentionParams
    ln_gain: Tensor
    ln_bias: Tensor

    def named(self, prefix: str):
        yield from self.attention.named(f"{prefix}.attention")
        yield f"{prefix}.ln_gain", self.ln_gain
        yield f"{prefix}.ln_bias", self.ln_bias


@dataclass
class BottleneckParams:
    """Autoencoder between encoder and decoders: width -> 8 -> 4 -> 8 -> width."""

    weights: List[Tensor]
    biases: List[Tensor]

    @staticmethod
    def create(width: int, rng: np.random.Generator, dtype=np.float32) -> "BottleneckParams":
        dims = (width,) + BOTTLENECK_DIMS + (width,)
        weights = [glorot_uniform(rng, (dims[i], dims[i + 1]), dtype) for i in range(len(dims) - 1)]
        biases = [zeros((dims[i + 1],), dtype) for i in range(len(dims) - 1)]
        return BottleneckParams(weights=weights, biases=biases)

    def named(self, prefix: str):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"{prefix}.{i}.weight", w
            yield f"{prefix}.{i}.bias", b


@dataclass
class ForwardOutput:
    y_pred: Tensor                     # (..., n_sensors)
    y_rec: Optional[Tensor]            # (..., n_sensors, window)
    embeddings: List[Tensor] = field(default_factory=list)


class CanModel:
    """Parameter container plus the forward passes defined below."""

    def __init__(self, config: ModelConfig, seed: int, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        cfg = config
        seq = cfg.window + 1

        self.embedding = init_sensor_embedding(cfg.n_sensors, cfg.embed_dim, rng, dtype)
        self.input_weight = glorot_uniform(rng, (1, cfg.model_dim), dtype)
        self.input_bias = zeros((cfg.model_dim,), dtype)
        self.positions = PositionalTable.create(
            seq, cfg.model_dim, learned=cfg.learned_positions, rng=rng, dtype=dtype)

        self.encoder: List[CamLayerParams] = []
        for _ in range(cfg.layers):
            attention = AttentionParams.create(cfg.model_dim, cfg.heads, rng, dtype)
            if cfg.ablation == "no-graph-conv":
                graph, dense = None, glorot_uniform(rng, (cfg.model_dim, cfg.model_dim), dtype)
            else:
                graph = GraphConvParams.create(
                    cfg.model_dim, seq, cfg.local_dim, cfg.retain, rng, dtype)
                dense = None
            self.encoder.append(CamLayerParams(
                attention=attention, graph=graph, dense=dense,
                use_local=cfg.ablation != "no-local-graph",
                ln_attn_gain=ones((cfg.model_dim,), dtype),
                ln_attn_bias=zeros((cfg.model_dim,), dtype),
                ln_graph_gain=ones((cfg.model_dim,), dtype),
                ln_graph_bias=zeros((cfg.model_dim,), dtype),
            ))

        self.bottleneck = None if cfg.ablation == "no-ae" else BottleneckParams.create(
            cfg.model_dim, rng, dtype)

        self.pre_decoder = [self._decoder_layer(rng) for _ in range(cfg.layers)]
        if cfg.ablation == "no-rec-decoder":
            self.rec_decoder = None
        else:
            self.rec_decoder = [self._decoder_layer(rng) for _ in range(cfg.layers)]

        self.pred_weight = glorot_uniform(rng, (cfg.model_dim, 1), dtype)
        self.pred_bias = zeros((1,), dtype)
        if self.rec_decoder is None:
            self.rec_weight = self.rec_bias = None
        else:
            self.rec_weight = glorot_uniform(rng, (cfg.model_dim, 1), dtype)
            self.rec_bias = zeros((1,), dtype)

    def _decoder_layer(self, rng) -> DecoderLayerParams:
        cfg = self.config
        return DecoderLayerParams(
            attention=AttentionParams.create(cfg.model_dim, cfg.heads, rng, self.dtype),
            ln_gain=ones((cfg.model_dim,), self.dtype),
            ln_bias=zeros((cfg.model_dim,), self.dtype),
        )

    def named_parameters(self):
        yield "embedding", self.embedding
        yield "input.weight", self.input_weight
        yield "input.bias", self.input_bias
        yield from self.positions.named("positions")
        for i, layer in enumerate(self.encoder):
            yield from layer.named(f"encoder.{i}")
        if self.bottleneck is not None:
            yield from self.bottleneck.named("bottleneck")
        for i, layer in enumerate(self.pre_decoder):
            yield from layer.named(f"pre_decoder.{i}")
        if self.rec_decoder is not None:
            for i, layer in enumerate(self.rec_decoder):
                yield from layer.named(f"rec_decoder.{i}")
        yield "pred_head.weight", self.pred_weight
        yield "pred_head.bias", self.pred_bias
        if self.rec_weight is not None:
            yield "rec_head.weight", self.rec_weight
            yield "rec_head.bias", self.rec_bias

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def _as_input(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        n, k = x.shape[-2], x.shape[-1]
        if n != self.config.n_sensors or k != self.config.window:
            raise ShapeError(
                f"input shape {x.shape} does not match model "
                f"(n_sensors={self.config.n_sensors}, window={self.config.window})")
        return x

    def _lift(self, columns: Tensor, seq_len: int) -> Tensor:
        """Project scalar slots to model width and add position rows."""
        projected = matmul(columns, self.input_weight) + self.input_bias
        return projected + self.positions.take(seq_len)


def cam_forward(features: Tensor, layer: CamLayerParams, graph: SensorGraph) -> Tensor:
    """One coupled attention layer on (..., n_sensors, seq, width)."""
    attended = multi_head_attention(features, layer.attention, causal=False)
    h1 = layer_norm(features + attended, layer.ln_attn_gain, layer.ln_attn_bias)
    if layer.dense is not None:
        sub = matmul(h1, layer.dense)
    else:
        local = local_adjacency(h1, layer.graph) if layer.use_local else None
        sub = global_local_conv(h1, graph, local, layer.graph)
    return layer_norm(h1 + sub, layer.ln_graph_gain, layer.ln_graph_bias)


def encoder_forward(x, model: CanModel):
    """Run the encoder over a window; returns per-layer states and the
    per-layer placeholder embeddings.

    The window is extended by a zero-valued placeholder occupying the final
    time slot; each layer's embedding is its state at that slot.
    """
    x = model._as_input(x)
    lead = x.shape[:-2]
    n, k = x.shape[-2], x.shape[-1]
    expanded = x.reshape(x.shape + (1,))
    placeholder = Tensor(np.zeros(lead + (n, 1, 1), dtype=x.dtype))
    h = model._lift(concat([expanded, placeholder], axis=-2), k + 1)

    needs_graph = any(layer.dense is None for layer in model.encoder)
    graph = build_sensor_graph(model.embedding, model.config.neighbor_k,
                               model.config.adjacency_norm) if needs_graph else None
    states, embeddings = [], []
    for layer in model.encoder:
        h = cam_forward(h, layer, graph)
        states.append(h)
        embeddings.append(h[..., -1, :])
    return states, embeddings


def bottleneck_ae(embedding: Tensor, params: BottleneckParams) -> Tensor:
    """width -> 8 -> 4 -> 8 -> width with relu between layers, linear last."""
    out = embedding
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        out = matmul(out, w) + b
        if i < last:
            out = relu(out)
    return out


def decoder_forward(seed: Tensor, layer_embeddings: List[Tensor],
                    layers: List[DecoderLayerParams], crop_len: int) -> Tensor:
    """Causal decoder: each layer prepends its encoder embedding as one time
    slot, attends with a lower-triangular mask, and the final sequence is
    cropped to its last ``crop_len`` slots."""
    if len(layer_embeddings) != len(layers):
        raise ShapeError(
            f"{len(layer_embeddings)} embeddings for {len(layers)} decoder layers")
    running = seed
    for emb, layer in zip(layer_embeddings, layers):
        slot = emb.reshape(emb.shape[:-1] + (1, emb.shape[-1]))
        running = concat([slot, running], axis=-2)
        attended = multi_head_attention(running, layer.attention, causal=True)
        running = layer_norm(running + attended, layer.ln_gain, layer.ln_bias)
    if crop_len > running.shape[-2]:
        raise ShapeError(
            f"crop length {crop_len} exceeds sequence length {running.shape[-2]}")
    return running[..., -crop_len:, :]


def can_forward(x, model: CanModel) -> ForwardOutput:
    """Full forward pass: next-step prediction and window reconstruction."""
    x = model._as_input(x)
    lead = x.shape[:-2]
    n, k = x.shape[-2], x.shape[-1]

    _, embeddings = encoder_forward(x, model)
    if model.bottleneck is None:
        squeezed = list(embeddings)
    else:
        squeezed = [bottleneck_ae(e, model.bottleneck) for e in embeddings]

    zero_slot = Tensor(np.zeros(lead + (n, 1, 1), dtype=x.dtype))
    pre_seed = model._lift(zero_slot, 1)
    pre_out = decoder_forward(pre_seed, squeezed, model.pre_decoder, crop_len=1)
    y_pred = (matmul(pre_out, model.pred_weight) + model.pred_bias).reshape(lead + (n,))

    y_rec = None
    if model.rec_decoder is not None:
        if k > 1:
            history = x[..., : k - 1].reshape(lead + (n, k - 1, 1))
            rec_cols = concat([zero_slot, history], axis=-2)
        else:
            rec_cols = zero_slot
        rec_seed = model._lift(rec_cols, k)
        rec_out = decoder_forward(rec_seed, squeezed, model.rec_decoder, crop_len=k)
        y_rec = (matmul(rec_out, model.rec_weight) + model.rec_bias).reshape(lead + (n, k))

    return ForwardOutput(y_pred=y_pred, y_rec=y_rec, embeddings=embeddings)
