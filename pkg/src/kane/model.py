"""Attention-based embedding propagation over relation and attribute triples.

An entity's vector at layer ``l`` is an attention-weighted sum of messages
from its outgoing neighbors. For a neighbor reached via relation ``r`` with
vector ``n`` (either the tail entity's layer ``l-1`` vector or the encoded
attribute value), each head computes

    message  = W (r + n)
    logit    = LeakyReLU((W r)^T W (r + n))          # "bilinear" attention
    weights  = softmax over the entity's neighbors

and the head output is the weighted message sum. Head outputs are merged
either by concatenation followed by a learned projection, or by averaging
(which requires head_dim == dim). Entities with no outgoing neighbors keep
their previous-layer vector. Relation embeddings and attribute encodings
are read fresh at every layer; only entity vectors propagate.

With ``layers == 0`` and attributes off, scoring degenerates to plain
translation scoring on the raw embedding tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import LstmParams, bow_encode, init_lstm_params, lstm_encode
from .errors import ConfigError
from .kgdata import GraphView

AGGREGATORS = ("concat", "average")
ENCODERS = ("bow", "lstm")
NORMS = ("l1", "l2")
ATTENTION_FORMS = ("bilinear", "translational")


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``attention`` selects the logit form: "bilinear" is the product form
    above; "translational" uses -||h + r - n|| with the configured norm.
    """

    dim: int = 64
    head_dim: int = 64
    heads: int = 2
    layers: int = 2
    aggregator: str = "concat"
    encoder: str = "bow"
    attention: str = "bilinear"
    norm: str = "l1"
    leaky_slope: float = 0.2
    use_attributes: bool = True

    def validate(self) -> None:
        if self.dim < 1 or self.head_dim < 1:
            raise ConfigError(f"dim and head_dim must be >= 1, got {self.dim}, {self.head_dim}")
        if self.heads < 1:
            raise ConfigError(f"heads must be >= 1, got {self.heads}")
        if self.layers < 0:
            raise ConfigError(f"layers must be >= 0, got {self.layers}")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"aggregator must be one of {AGGREGATORS}, got {self.aggregator!r}")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.norm not in NORMS:
            raise ConfigError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.attention not in ATTENTION_FORMS:
            raise ConfigError(f"attention must be one of {ATTENTION_FORMS}, got {self.attention!r}")
        if self.aggregator == "average" and self.head_dim != self.dim:
            raise ConfigError(
                f"average aggregation needs head_dim == dim, got {self.head_dim} != {self.dim}"
            )
        if not 0.0 <= self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must be in [0, 1), got {self.leaky_slope}")


def is_translation_mode(config: ModelConfig) -> bool:
    """True when the model degenerates to plain translation scoring."""
    return config.layers == 0 and not config.use_attributes


@dataclass
class ModelParams:
    """All trainable tensors, with a fixed naming/ordering for checkpoints."""

    entity: Tensor
    relation: Tensor
    word: Tensor | None = None
    lstm: LstmParams | None = None
    head_w: list[list[Tensor]] = field(default_factory=list)  # [layer][head], (head_dim, dim)
    out_w: list[Tensor] = field(default_factory=list)  # [layer], (dim, heads * head_dim)
    cls_w: Tensor | None = None  # (classes, dim)
    cls_b: Tensor | None = None  # (classes,)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("entity", self.entity), ("relation", self.relation)]
        if self.word is not None:
            out.append(("word", self.word))
        if self.lstm is not None:
            out.extend(self.lstm.named())
        for l, heads in enumerate(self.head_w):
            for i, w in enumerate(heads):
                out.append((f"head_w.{l}.{i}", w))
        for l, w in enumerate(self.out_w):
            out.append((f"out_w.{l}", w))
        if self.cls_w is not None:
            out.append(("cls_w", self.cls_w))
            out.append(("cls_b", self.cls_b))
        return out

    def all_tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, t in self.named_parameters():
            t.data = snap[name].copy()


def init_params(
    entity_count: int,
    relation_count: int,
    vocab_size: int,
    class_count: int,
    config: ModelConfig,
    rng: np.random.Generator,
) -> ModelParams:
    """Embedding tables start uniform in [-6/sqrt(dim), 6/sqrt(dim)] with
    entity and relation rows L2-normalized once; linear transforms use
    fan-based (Glorot) uniform bounds so propagation preserves vector
    magnitude instead of amplifying it layer over layer. Draw order is
    fixed so a seed pins every value."""
    config.validate()
    if entity_count < 1 or relation_count < 1:
        raise ConfigError("need at least one entity and one relation")
    bound = 6.0 / np.sqrt(config.dim)

    def uniform(shape) -> np.ndarray:
        return rng.uniform(-bound, bound, size=shape)

    def fan_uniform(shape) -> np.ndarray:
        limit = np.sqrt(6.0 / (shape[0] + shape[1]))
        return rng.uniform(-limit, limit, size=shape)

    def normalized(mat: np.ndarray) -> np.ndarray:
        norms = np.sqrt((mat * mat).sum(axis=1, keepdims=True))
        return mat / np.where(norms == 0.0, 1.0, norms)

    entity = ad.parameter(normalized(uniform((entity_count, config.dim))), "entity")
    relation = ad.parameter(normalized(uniform((relation_count, config.dim))), "relation")
    word = ad.parameter(uniform((vocab_size, config.dim)), "word") if vocab_size > 0 else None
    lstm = None
    if config.encoder == "lstm" and word is not None:
        lstm = init_lstm_params(config.dim, rng)

    head_w = [
        [ad.parameter(fan_uniform((config.head_dim, config.dim)), f"head_w.{l}.{i}")
         for i in range(config.heads)]
        for l in range(config.layers)
    ]
    out_w = []
    if config.aggregator == "concat":
        out_w = [
            ad.parameter(fan_uniform((config.dim, config.heads * config.head_dim)), f"out_w.{l}")
            for l in range(config.layers)
        ]
    cls_w = cls_b = None
    if class_count > 0:
        cls_w = ad.parameter(fan_uniform((class_count, config.dim)), "cls_w")
        cls_b = ad.parameter(np.zeros(class_count), "cls_b")
    return ModelParams(
        entity=entity, relation=relation, word=word, lstm=lstm,
        head_w=head_w, out_w=out_w, cls_w=cls_w, cls_b=cls_b,
    )


def params_from_arrays(
    arrays: dict[str, np.ndarray], config: ModelConfig, class_count: int, vocab_size: int
) -> ModelParams:
    """Rebuild ModelParams from named arrays (checkpoint loading)."""
    def p(name: str) -> Tensor:
        return ad.parameter(arrays[name].copy(), name)

    word = p("word") if vocab_size > 0 else None
    lstm = None
    if config.encoder == "lstm" and vocab_size > 0:
        lstm = LstmParams(**{
            fname: p(f"lstm.{fname}")
            for fname in (
                "w_in_input", "w_hid_input", "b_input",
                "w_in_forget", "w_hid_forget", "b_forget",
                "w_in_output", "w_hid_output", "b_output",
                "w_in_cell", "w_hid_cell", "b_cell",
            )
        })
    head_w = [
        [p(f"head_w.{l}.{i}") for i in range(config.heads)] for l in range(config.layers)
    ]
    out_w = []
    if config.aggregator == "concat":
        out_w = [p(f"out_w.{l}") for l in range(config.layers)]
    cls_w = p("cls_w") if class_count > 0 else None
    cls_b = p("cls_b") if class_count > 0 else None
    return ModelParams(
        entity=p("entity"), relation=p("relation"), word=word, lstm=lstm,
        head_w=head_w, out_w=out_w, cls_w=cls_w, cls_b=cls_b,
    )


# ---------------------------------------------------------------------------
# attribute value encoding

def encode_value(
    value_id: int,
    view: GraphView,
    params: ModelParams,
    config: ModelConfig,
    cache: dict[int, Tensor] | None = None,
) -> Tensor:
    """Encode one attribute value; memoized per forward pass via ``cache``."""
    if cache is not None and value_id in cache:
        return cache[value_id]
    if params.word is None:
        raise ConfigError("model has no word table but attribute encoding was requested")
    tokens = view.kg.value_tokens[value_id]
    if config.encoder == "bow":
        enc = bow_encode(tokens, params.word)
    else:
        if params.lstm is None:
            raise ConfigError("encoder is 'lstm' but the model has no LSTM parameters")
        enc = lstm_encode(tokens, params.word, params.lstm)
    if cache is not None:
        cache[value_id] = enc
    return enc


# ---------------------------------------------------------------------------
# attention and propagation

def attention_logit(
    head_vec: Tensor,
    rel_vec: Tensor,
    neighbor_vec: Tensor,
    transform: Tensor,
    config: ModelConfig,
) -> Tensor:
    """Unnormalized attention score for a single neighbor."""
    if config.attention == "bilinear":
        q = ad.matvec(transform, rel_vec)
        m = ad.matvec(transform, ad.add(rel_vec, neighbor_vec))
        return ad.leaky_relu(ad.dot(q, m), config.leaky_slope)
    diff = ad.sub(ad.add(head_vec, rel_vec), neighbor_vec)
    d = ad.l1_norm(diff) if config.norm == "l1" else ad.l2_norm(diff)
    return ad.scale(d, -1.0)


def _head_attention(
    head_vec: Tensor,
    rel_vecs: list[Tensor],
    neigh_vecs: list[Tensor],
    transform_t: Tensor,
    config: ModelConfig,
) -> tuple[Tensor, Tensor]:
    """Weights and messages for one (entity, head): ((n,), (n, head_dim)).

    ``transform_t`` is the head transform already transposed, shared across
    entities within a layer.
    """
    rel_mat = ad.stack_rows(rel_vecs)
    neigh_mat = ad.stack_rows(neigh_vecs)
    summed = ad.add(rel_mat, neigh_mat)
    messages = ad.matmul(summed, transform_t)
    if config.attention == "bilinear":
        queries = ad.matmul(rel_mat, transform_t)
        raw = ad.sum_cols(ad.elementwise_mul(queries, messages))
        logits = ad.leaky_relu(raw, config.leaky_slope)
    else:
        head_mat = ad.stack_rows([head_vec] * len(rel_vecs))
        diff = ad.sub(ad.add(head_mat, rel_mat), neigh_mat)
        logits = ad.scale(ad.rowwise_norm(diff, config.norm), -1.0)
    return ad.softmax_over_group(logits), messages


def _neighbor_inputs(
    entity_id: int,
    view: GraphView,
    layer_vecs: list[Tensor],
    params: ModelParams,
    config: ModelConfig,
    rel_cache: dict[int, Tensor],
    value_cache: dict[int, Tensor],
) -> tuple[list[Tensor], list[Tensor]]:
    rel_vecs: list[Tensor] = []
    neigh_vecs: list[Tensor] = []
    for nb in view.neighborhood[entity_id]:
        rv = rel_cache.get(nb.relation)
        if rv is None:
            rv = ad.row(params.relation, nb.relation)
            rel_cache[nb.relation] = rv
        rel_vecs.append(rv)
        if nb.is_attribute:
            neigh_vecs.append(encode_value(nb.target, view, params, config, value_cache))
        else:
            neigh_vecs.append(layer_vecs[nb.target])
    return rel_vecs, neigh_vecs


def attention_weights(
    entity_id: int,
    view: GraphView,
    params: ModelParams,
    config: ModelConfig,
    layer: int = 0,
    head: int = 0,
    layer_vecs: list[Tensor] | None = None,
    value_cache: dict[int, Tensor] | None = None,
) -> Tensor:
    """Normalized attention over one entity's neighbors at a given layer/head.

    ``layer_vecs`` are the previous layer's entity vectors (raw embedding
    rows by default). Raises ValueError for an entity with no neighbors.
    """
    config.validate()
    if not view.neighborhood[entity_id]:
        raise ValueError(f"entity {entity_id} has no outgoing neighbors")
    if layer_vecs is None:
        layer_vecs = [ad.row(params.entity, e) for e in range(view.entity_count)]
    rel_vecs, neigh_vecs = _neighbor_inputs(
        entity_id, view, layer_vecs, params, config, {}, value_cache if value_cache is not None else {}
    )
    weights, _ = _head_attention(
        layer_vecs[entity_id], rel_vecs, neigh_vecs,
        ad.transpose(params.head_w[layer][head]), config,
    )
    return weights


def propagate_head(
    entity_id: int,
    view: GraphView,
    params: ModelParams,
    config: ModelConfig,
    layer: int = 0,
    head: int = 0,
    layer_vecs: list[Tensor] | None = None,
    value_cache: dict[int, Tensor] | None = None,
) -> Tensor:
    """One head's output for one entity: the attention-weighted message sum."""
    config.validate()
    if not view.neighborhood[entity_id]:
        raise ValueError(f"entity {entity_id} has no outgoing neighbors")
    if layer_vecs is None:
        layer_vecs = [ad.row(params.entity, e) for e in range(view.entity_count)]
    rel_vecs, neigh_vecs = _neighbor_inputs(
        entity_id, view, layer_vecs, params, config, {}, value_cache if value_cache is not None else {}
    )
    weights, messages = _head_attention(
        layer_vecs[entity_id], rel_vecs, neigh_vecs,
        ad.transpose(params.head_w[layer][head]), config,
    )
    return ad.vecmat(weights, messages)


def aggregate(head_outputs: list[Tensor], params: ModelParams, config: ModelConfig, layer: int) -> Tensor:
    """Merge per-head outputs into one dim-sized vector."""
    if len(head_outputs) != config.heads:
        raise ConfigError(f"expected {config.heads} head outputs, got {len(head_outputs)}")
    if config.aggregator == "concat":
        merged = ad.matvec(params.out_w[layer], ad.concat(head_outputs))
    else:
        total = head_outputs[0]
        for h in head_outputs[1:]:
            total = ad.add(total, h)
        merged = ad.scale(total, 1.0 / config.heads)
    return ad.leaky_relu(merged, config.leaky_slope)


def forward_all(
    view: GraphView,
    params: ModelParams,
    config: ModelConfig,
    value_cache: dict[int, Tensor] | None = None,
) -> list[Tensor]:
    """Final entity vectors after ``layers`` rounds of propagation.

    Layer 0 is the raw embedding rows. Pass ``value_cache`` to share the
    per-pass attribute encodings with loss code running on the same tape.
    """
    config.validate()
    vecs: list[Tensor] = [ad.row(params.entity, e) for e in range(view.entity_count)]
    if config.layers == 0:
        return vecs
    cache = value_cache if value_cache is not None else {}
    rel_cache: dict[int, Tensor] = {}
    for layer in range(config.layers):
        transforms_t = [ad.transpose(w) for w in params.head_w[layer]]
        new_vecs: list[Tensor] = []
        for e in range(view.entity_count):
            if not view.neighborhood[e]:
                new_vecs.append(vecs[e])  # isolated: keep previous vector
                continue
            rel_vecs, neigh_vecs = _neighbor_inputs(e, view, vecs, params, config, rel_cache, cache)
            outs = []
            for i in range(config.heads):
                weights, messages = _head_attention(
                    vecs[e], rel_vecs, neigh_vecs, transforms_t[i], config
                )
                outs.append(ad.vecmat(weights, messages))
            new_vecs.append(aggregate(outs, params, config, layer))
        vecs = new_vecs
    return vecs


# ---------------------------------------------------------------------------
# scoring

def score(head_vec: Tensor, rel_vec: Tensor, tail_vec: Tensor, norm: str = "l1") -> Tensor:
    """Translation distance ||h + r - t||; lower means more plausible."""
    diff = ad.sub(ad.add(head_vec, rel_vec), tail_vec)
    return ad.l1_norm(diff) if norm == "l1" else ad.l2_norm(diff)


def classify(entity_vec: Tensor, params: ModelParams) -> Tensor:
    """Per-class scores for one entity vector."""
    if params.cls_w is None or params.cls_b is None:
        raise ConfigError("model has no classifier head")
    return ad.add(ad.matvec(params.cls_w, entity_vec), params.cls_b)
