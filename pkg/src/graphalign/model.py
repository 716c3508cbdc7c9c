"""Early-interaction GNN forward passes with alignment-gated cross-graph signals.

Two alignment granularities (node / edge) cross two refinement schedules:

* lazy: run a fresh K-layer GNN per round; embeddings re-initialize every
  round, the alignment stays frozen within a round and is refined from the
  last-layer embeddings, T times in total. Cross-graph terms always read the
  previous round's same-layer embeddings of the paired graph.
* eager: one K-layer pass, refining the alignment from the current layer's
  embeddings before every propagation (the layer-0 alignment is all zeros),
  plus once more at the end for the distance.

The relevance distance is the summed positive part of the query embeddings
minus the alignment-transported corpus embeddings, so it vanishes when the
alignment transports the corpus onto the query exactly.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Value
from .aligner import AlignerParams, edge_aligner_refine, node_aligner_refine
from .graphs import Graph, GraphPair
from .params import ParamStore


class ConfigError(ValueError):
    pass


VARIANTS = ("node", "edge")
SCHEDULES = ("lazy", "eager")
INTERACTIONS = ("npp", "post", "uonly", "monly")

NODE_DIM = 10
EDGE_DIM = 20


@dataclass
class ModelConfig:
    variant: str = "node"
    schedule: str = "lazy"
    interaction: str = "npp"
    rounds: int = 3
    layers: int = 5
    temperature: float = 0.1
    sinkhorn_iters: int = 20
    noise: bool = False
    margin: float = 0.5
    # the edge update reads its cross signal at the current layer by default;
    # the toggle reads it one layer later instead
    edge_cross_next_layer: bool = False

    def validate(self) -> "ModelConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.interaction not in INTERACTIONS:
            raise ConfigError(
                f"interaction must be one of {INTERACTIONS}, got {self.interaction!r}"
            )
        if self.variant == "edge" and self.interaction != "npp":
            raise ConfigError("edge variant only supports the npp interaction")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.schedule == "lazy" and self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.sinkhorn_iters < 1:
            raise ConfigError(f"sinkhorn_iters must be >= 1, got {self.sinkhorn_iters}")
        return self

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "schedule": self.schedule,
            "interaction": self.interaction,
            "rounds": self.rounds,
            "layers": self.layers,
            "temperature": self.temperature,
            "sinkhorn_iters": self.sinkhorn_iters,
            "noise": self.noise,
            "margin": self.margin,
            "edge_cross_next_layer": self.edge_cross_next_layer,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d).validate()


@dataclass
class ForwardTrace:
    """Everything one forward pass produced, for training and instrumentation."""

    delta: Value
    alignments: list[Value]
    node_layers_query: list[list[Value]]
    node_layers_corpus: list[list[Value]]
    edge_layers_query: list[list[Value]] = field(default_factory=list)
    edge_layers_corpus: list[list[Value]] = field(default_factory=list)
    aligner_refinements: int = 0
    message_layers: int = 0

    def alignment_arrays(self) -> list[np.ndarray]:
        return [a.data.copy() for a in self.alignments]


def build_params(cfg: ModelConfig, rng: np.random.Generator) -> ParamStore:
    """Allocate all trainable weights for a config; shared across rounds and layers."""
    cfg.validate()
    store = ParamStore()
    store.create("enc.w", (1, NODE_DIM), rng)
    store.create("enc.b", (1, NODE_DIM), rng, fan_in=1)
    if cfg.variant == "edge":
        store.create("enc_edge.w", (1, EDGE_DIM), rng)
        store.create("enc_edge.b", (1, EDGE_DIM), rng, fan_in=1)

    if cfg.interaction != "post":
        width = 2 * NODE_DIM if cfg.variant == "node" else 2 * EDGE_DIM
        out = NODE_DIM if cfg.variant == "node" else EDGE_DIM
        store.create("inter.w1", (width, width), rng)
        store.create("inter.b1", (1, width), rng, fan_in=width)
        store.create("inter.w2", (width, out), rng)
        store.create("inter.b2", (1, out), rng, fan_in=width)

    msg_in = 2 * NODE_DIM + 1 if cfg.variant == "node" else 2 * NODE_DIM + EDGE_DIM
    store.create("msg.w", (msg_in, EDGE_DIM), rng)
    store.create("msg.b", (1, EDGE_DIM), rng, fan_in=msg_in)

    comb_in = EDGE_DIM + (NODE_DIM if cfg.interaction == "post" else 0)
    for gate in ("r", "z", "n"):
        store.create(f"comb.w_x{gate}", (comb_in, NODE_DIM), rng)
        store.create(f"comb.b_x{gate}", (1, NODE_DIM), rng, fan_in=comb_in)
        store.create(f"comb.w_h{gate}", (NODE_DIM, NODE_DIM), rng)
        store.create(f"comb.b_h{gate}", (1, NODE_DIM), rng, fan_in=NODE_DIM)

    align_in = NODE_DIM if cfg.variant == "node" else EDGE_DIM
    store.create("align.w1", (align_in, 16), rng)
    store.create("align.b1", (1, 16), rng, fan_in=align_in)
    store.create("align.w2", (16, 16), rng)
    store.create("align.b2", (1, 16), rng, fan_in=16)
    return store


def aligner_params(store: ParamStore, cfg: ModelConfig) -> AlignerParams:
    return AlignerParams(
        lrl_w1=store["align.w1"], lrl_b1=store["align.b1"],
        lrl_w2=store["align.w2"], lrl_b2=store["align.b2"],
        temperature=cfg.temperature, sinkhorn_iters=cfg.sinkhorn_iters,
        noise_enabled=cfg.noise,
    )


# ---------------------------------------------------------------------------
# static per-graph message-passing structure


class _GraphOps:
    """Constant index arrays and matrices for vectorized message passing.

    Instances are cached per Graph object (graphs are immutable), so repeated
    forwards over the same pairs skip the structure rebuild.
    """

    def __init__(self, graph: Graph):
        self.n = graph.n_nodes
        self.n_edges = graph.n_edges
        self.feats = ad.constant(graph.node_feat.reshape(-1, 1))
        self.edge_feats = ad.constant(graph.edge_feat.reshape(-1, 1))
        src = [u for u, _ in graph.edges] + [v for _, v in graph.edges]
        dst = [v for _, v in graph.edges] + [u for u, _ in graph.edges]
        self.dir_src = np.array(src, dtype=np.intp)
        self.dir_dst = np.array(dst, dtype=np.intp)
        self.edge_of_directed = np.concatenate(
            [np.arange(graph.n_edges), np.arange(graph.n_edges)]
        ).astype(np.intp)
        agg = np.zeros((self.n, 2 * graph.n_edges))
        for j, (a, b) in enumerate(zip(src, dst)):
            agg[a, j] += 1.0
            agg[b, j] += 1.0
        self.aggregate = ad.constant(agg)
        self.dir_edge_feats = ad.constant(
            np.concatenate([graph.edge_feat, graph.edge_feat]).reshape(-1, 1)
        )


_GRAPH_OPS_CACHE: "weakref.WeakKeyDictionary[Graph, _GraphOps]" = weakref.WeakKeyDictionary()


def _graph_ops(graph: Graph) -> _GraphOps:
    ops = _GRAPH_OPS_CACHE.get(graph)
    if ops is None:
        ops = _GraphOps(graph)
        _GRAPH_OPS_CACHE[graph] = ops
    return ops


def _linear(x: Value, w: Value, b: Value) -> Value:
    return ad.add_bias(ad.matmul(x, w), b)


def _lrl(x: Value, store: ParamStore, prefix: str) -> Value:
    hidden = ad.relu(_linear(x, store[f"{prefix}.w1"], store[f"{prefix}.b1"]))
    return _linear(hidden, store[f"{prefix}.w2"], store[f"{prefix}.b2"])


def _gru(x: Value, state: Value, store: ParamStore) -> Value:
    def gate(name):
        return ad.add(
            _linear(x, store[f"comb.w_x{name}"], store[f"comb.b_x{name}"]),
            _linear(state, store[f"comb.w_h{name}"], store[f"comb.b_h{name}"]),
        )

    reset = ad.sigmoid(gate("r"))
    update = ad.sigmoid(gate("z"))
    cand = ad.tanh(ad.add(
        _linear(x, store["comb.w_xn"], store["comb.b_xn"]),
        ad.mul(reset, _linear(state, store["comb.w_hn"], store["comb.b_hn"])),
    ))
    ones = ad.constant(np.ones(update.shape))
    return ad.add(ad.mul(ad.sub(ones, update), cand), ad.mul(update, state))


def _node_messages(gops: _GraphOps, per_node: Value, store: ParamStore) -> Value:
    """Aggregated symmetric messages: each undirected edge contributes both orders."""
    src = ad.gather_rows(per_node, gops.dir_src)
    dst = ad.gather_rows(per_node, gops.dir_dst)
    per_edge = _linear(ad.concat_cols(src, dst, gops.dir_edge_feats),
                       store["msg.w"], store["msg.b"])
    return ad.matmul(gops.aggregate, per_edge)


def _edge_node_messages(gops: _GraphOps, node_emb: Value, edge_z: Value,
                        store: ParamStore) -> Value:
    src = ad.gather_rows(node_emb, gops.dir_src)
    dst = ad.gather_rows(node_emb, gops.dir_dst)
    ze = ad.gather_rows(edge_z, gops.edge_of_directed)
    per_edge = _linear(ad.concat_cols(src, dst, ze), store["msg.w"], store["msg.b"])
    return ad.matmul(gops.aggregate, per_edge)


def _edge_update(gops: _GraphOps, node_emb: Value, edge_z: Value,
                 store: ParamStore) -> Value:
    """Fresh per-edge embeddings from endpoint embeddings, symmetrized over order."""
    src = ad.gather_rows(node_emb, gops.dir_src)
    dst = ad.gather_rows(node_emb, gops.dir_dst)
    ze = ad.gather_rows(edge_z, gops.edge_of_directed)
    per_dir = _linear(ad.concat_cols(src, dst, ze), store["msg.w"], store["msg.b"])
    e = gops.n_edges
    return ad.add(ad.gather_rows(per_dir, np.arange(e)),
                  ad.gather_rows(per_dir, np.arange(e, 2 * e)))


def _pad_rows(x: Value, total: int) -> Value:
    if x.shape[0] == total:
        return x
    pad = np.zeros((total, x.shape[0]))
    pad[: x.shape[0], : x.shape[0]] = np.eye(x.shape[0])
    return ad.matmul(ad.constant(pad), x)


# ---------------------------------------------------------------------------
# relevance distances


def _as_value(x) -> Value:
    return x if isinstance(x, Value) else ad.constant(x)


def relevance_distance_node(query_emb, corpus_emb, alignment) -> Value:
    """Summed positive gap between query rows and alignment-transported corpus rows."""
    q, c, p = _as_value(query_emb), _as_value(corpus_emb), _as_value(alignment)
    if q.shape != c.shape:
        raise ShapeError(f"embedding shapes {q.shape} vs {c.shape}")
    return ad.relu_sum(ad.sub(q, ad.matmul(p, c)))


def relevance_distance_edge(query_edge_emb, corpus_edge_emb, alignment) -> Value:
    return relevance_distance_node(query_edge_emb, corpus_edge_emb, alignment)


# ---------------------------------------------------------------------------
# node variant


def encode_init(graph: Graph, store: ParamStore, cfg: ModelConfig) -> tuple[Value, Value | None]:
    """Initial embeddings from the scalar features (pad rows see feature 0)."""
    gops = _graph_ops(graph)
    node0 = _linear(gops.feats, store["enc.w"], store["enc.b"])
    edge0 = None
    if cfg.variant == "edge":
        edge0 = _linear(gops.edge_feats, store["enc_edge.w"], store["enc_edge.b"])
    return node0, edge0


def late_pass(graph: Graph, store: ParamStore, layers: int) -> list[Value]:
    """Within-graph message passing only; returns embeddings for layers 0..K."""
    gops = _graph_ops(graph)
    h = _linear(gops.feats, store["enc.w"], store["enc.b"])
    out = [h]
    for _ in range(layers):
        h = _gru(_node_messages(gops, h, store), h, store)
        out.append(h)
    return out


def _node_interaction_layers(q_ops: _GraphOps, c_ops: _GraphOps, store: ParamStore,
                             cfg: ModelConfig, alignment: Value | None,
                             prev_q: list[Value] | None,
                             prev_c: list[Value] | None) -> tuple[list[Value], list[Value]]:
    """One lazy round with a frozen alignment; cross terms read previous-round
    layers. `alignment=None` is the first round of the post mode: no prior
    alignment exists, so the cross slot is zero and messages read the current
    round's own embeddings."""
    hq = _linear(q_ops.feats, store["enc.w"], store["enc.b"])
    hc = _linear(c_ops.feats, store["enc.w"], store["enc.b"])
    qs, cs = [hq], [hc]
    for k in range(cfg.layers):
        if alignment is None:
            cross_q = ad.constant(np.zeros((q_ops.n, NODE_DIM)))
            cross_c = ad.constant(np.zeros((c_ops.n, NODE_DIM)))
        else:
            cross_q = ad.matmul(alignment, prev_c[k])
            cross_c = ad.matmul(ad.transpose(alignment), prev_q[k])
        if cfg.interaction == "post":
            msg_src_q = qs[-1] if prev_q is None else prev_q[k]
            msg_src_c = cs[-1] if prev_c is None else prev_c[k]
            x_q = ad.concat_cols(_node_messages(q_ops, msg_src_q, store), cross_q)
            x_c = ad.concat_cols(_node_messages(c_ops, msg_src_c, store), cross_c)
            hq = _gru(x_q, hq, store)
            hc = _gru(x_c, hc, store)
        else:
            zq = _lrl(ad.concat_cols(hq, cross_q), store, "inter")
            zc = _lrl(ad.concat_cols(hc, cross_c), store, "inter")
            if cfg.interaction == "npp":
                hq = _gru(_node_messages(q_ops, zq, store), zq, store)
                hc = _gru(_node_messages(c_ops, zc, store), zc, store)
            elif cfg.interaction == "uonly":
                hq = _gru(_node_messages(q_ops, qs[-1], store), zq, store)
                hc = _gru(_node_messages(c_ops, cs[-1], store), zc, store)
            else:  # monly
                hq = _gru(_node_messages(q_ops, zq, store), qs[-1], store)
                hc = _gru(_node_messages(c_ops, zc, store), cs[-1], store)
        qs.append(hq)
        cs.append(hc)
    return qs, cs


def run_node_lazy(pair: GraphPair, store: ParamStore, cfg: ModelConfig,
                  rng: np.random.Generator | None = None) -> ForwardTrace:
    cfg.validate()
    q_ops, c_ops = _graph_ops(pair.query), _graph_ops(pair.corpus)
    aparams = aligner_params(store, cfg)

    if cfg.interaction == "post":
        # the three-input combine has no plain-GNN form; its first round runs
        # with a zeroed cross slot instead
        qs, cs = _node_interaction_layers(q_ops, c_ops, store, cfg, None, None, None)
    else:
        qs = late_pass(pair.query, store, cfg.layers)
        cs = late_pass(pair.corpus, store, cfg.layers)
    rounds_q, rounds_c = [qs], [cs]
    alignment = node_aligner_refine(qs[-1], cs[-1], aparams, rng)
    alignments = [alignment]

    for _ in range(cfg.rounds - 1):
        qs, cs = _node_interaction_layers(q_ops, c_ops, store, cfg, alignment, qs, cs)
        rounds_q.append(qs)
        rounds_c.append(cs)
        alignment = node_aligner_refine(qs[-1], cs[-1], aparams, rng)
        alignments.append(alignment)

    delta = relevance_distance_node(rounds_q[-1][-1], rounds_c[-1][-1], alignment)
    return ForwardTrace(
        delta=delta, alignments=alignments,
        node_layers_query=rounds_q, node_layers_corpus=rounds_c,
        aligner_refinements=len(alignments),
        message_layers=cfg.rounds * cfg.layers,
    )


def run_node_eager(pair: GraphPair, store: ParamStore, cfg: ModelConfig,
                   rng: np.random.Generator | None = None) -> ForwardTrace:
    cfg.validate()
    q_ops, c_ops = _graph_ops(pair.query), _graph_ops(pair.corpus)
    aparams = aligner_params(store, cfg)
    hq = _linear(q_ops.feats, store["enc.w"], store["enc.b"])
    hc = _linear(c_ops.feats, store["enc.w"], store["enc.b"])
    qs, cs = [hq], [hc]
    alignments: list[Value] = []
    zero_align = ad.constant(np.zeros((pair.n_pad, pair.n_pad)))
    for k in range(cfg.layers):
        if k == 0:
            alignment = zero_align
        else:
            alignment = node_aligner_refine(hq, hc, aparams, rng)
            alignments.append(alignment)
        cross_q = ad.matmul(alignment, hc)
        cross_c = ad.matmul(ad.transpose(alignment), hq)
        if cfg.interaction == "post":
            x_q = ad.concat_cols(_node_messages(q_ops, hq, store), cross_q)
            x_c = ad.concat_cols(_node_messages(c_ops, hc, store), cross_c)
            hq, hc = _gru(x_q, hq, store), _gru(x_c, hc, store)
        else:
            zq = _lrl(ad.concat_cols(hq, cross_q), store, "inter")
            zc = _lrl(ad.concat_cols(hc, cross_c), store, "inter")
            if cfg.interaction == "npp":
                hq, hc = _gru(_node_messages(q_ops, zq, store), zq, store), \
                         _gru(_node_messages(c_ops, zc, store), zc, store)
            elif cfg.interaction == "uonly":
                hq, hc = _gru(_node_messages(q_ops, qs[-1], store), zq, store), \
                         _gru(_node_messages(c_ops, cs[-1], store), zc, store)
            else:  # monly
                hq, hc = _gru(_node_messages(q_ops, zq, store), qs[-1], store), \
                         _gru(_node_messages(c_ops, zc, store), cs[-1], store)
        qs.append(hq)
        cs.append(hc)
    alignment = node_aligner_refine(hq, hc, aparams, rng)
    alignments.append(alignment)
    delta = relevance_distance_node(hq, hc, alignment)
    return ForwardTrace(
        delta=delta, alignments=alignments,
        node_layers_query=[qs], node_layers_corpus=[cs],
        aligner_refinements=len(alignments), message_layers=cfg.layers,
    )


# ---------------------------------------------------------------------------
# edge variant


def _edge_cross(alignment: Value | None, own_edges: int, other_m: Value,
                e_pad: int, transpose_align: bool) -> Value:
    if alignment is None:
        return ad.constant(np.zeros((own_edges, EDGE_DIM)))
    a = ad.transpose(alignment) if transpose_align else alignment
    padded = ad.matmul(a, _pad_rows(other_m, e_pad))
    return ad.gather_rows(padded, np.arange(own_edges))


def _edge_round(q_ops: _GraphOps, c_ops: _GraphOps, store: ParamStore, cfg: ModelConfig,
                e_pad: int, alignment: Value | None,
                prev_mq: list[Value] | None, prev_mc: list[Value] | None):
    """One K-layer pass guided by a frozen edge alignment (None = zero cross)."""
    hq = _linear(q_ops.feats, store["enc.w"], store["enc.b"])
    hc = _linear(c_ops.feats, store["enc.w"], store["enc.b"])
    mq = _linear(q_ops.edge_feats, store["enc_edge.w"], store["enc_edge.b"])
    mc = _linear(c_ops.edge_feats, store["enc_edge.w"], store["enc_edge.b"])
    hqs, hcs, mqs, mcs = [hq], [hc], [mq], [mc]
    for k in range(cfg.layers):
        other_mc = prev_mc[k] if alignment is not None else mc
        other_mq = prev_mq[k] if alignment is not None else mq
        cross_q = _edge_cross(alignment, q_ops.n_edges, other_mc, e_pad, False)
        cross_c = _edge_cross(alignment, c_ops.n_edges, other_mq, e_pad, True)
        zq = _lrl(ad.concat_cols(mq, cross_q), store, "inter")
        zc = _lrl(ad.concat_cols(mc, cross_c), store, "inter")
        hq = _gru(_edge_node_messages(q_ops, hq, zq, store), hq, store)
        hc = _gru(_edge_node_messages(c_ops, hc, zc, store), hc, store)
        if cfg.edge_cross_next_layer and alignment is not None:
            # prose reading: the edge update's cross side sits one layer later
            cq = _edge_cross(alignment, q_ops.n_edges, prev_mc[k + 1], e_pad, False)
            cc = _edge_cross(alignment, c_ops.n_edges, prev_mq[k + 1], e_pad, True)
            zq = _lrl(ad.concat_cols(mq, cq), store, "inter")
            zc = _lrl(ad.concat_cols(mc, cc), store, "inter")
        mq = _edge_update(q_ops, hq, zq, store)
        mc = _edge_update(c_ops, hc, zc, store)
        hqs.append(hq)
        hcs.append(hc)
        mqs.append(mq)
        mcs.append(mc)
    return hqs, hcs, mqs, mcs


def run_edge_lazy(pair: GraphPair, store: ParamStore, cfg: ModelConfig,
                  rng: np.random.Generator | None = None) -> ForwardTrace:
    cfg.validate()
    if pair.e_pad == 0:
        raise ConfigError("edge variant needs at least one edge in the pair")
    q_ops, c_ops = _graph_ops(pair.query), _graph_ops(pair.corpus)
    aparams = aligner_params(store, cfg)

    hqs, hcs, mqs, mcs = _edge_round(q_ops, c_ops, store, cfg, pair.e_pad, None, None, None)
    rounds = [(hqs, hcs, mqs, mcs)]
    alignment = edge_aligner_refine(_pad_rows(mqs[-1], pair.e_pad),
                                    _pad_rows(mcs[-1], pair.e_pad), aparams, rng)
    alignments = [alignment]
    for _ in range(cfg.rounds - 1):
        hqs, hcs, mqs, mcs = _edge_round(q_ops, c_ops, store, cfg, pair.e_pad,
                                         alignment, mqs, mcs)
        rounds.append((hqs, hcs, mqs, mcs))
        alignment = edge_aligner_refine(_pad_rows(mqs[-1], pair.e_pad),
                                        _pad_rows(mcs[-1], pair.e_pad), aparams, rng)
        alignments.append(alignment)
    delta = relevance_distance_edge(_pad_rows(mqs[-1], pair.e_pad),
                                    _pad_rows(mcs[-1], pair.e_pad), alignment)
    return ForwardTrace(
        delta=delta, alignments=alignments,
        node_layers_query=[r[0] for r in rounds],
        node_layers_corpus=[r[1] for r in rounds],
        edge_layers_query=[r[2] for r in rounds],
        edge_layers_corpus=[r[3] for r in rounds],
        aligner_refinements=len(alignments),
        message_layers=cfg.rounds * cfg.layers,
    )


def run_edge_eager(pair: GraphPair, store: ParamStore, cfg: ModelConfig,
                   rng: np.random.Generator | None = None) -> ForwardTrace:
    cfg.validate()
    if pair.e_pad == 0:
        raise ConfigError("edge variant needs at least one edge in the pair")
    q_ops, c_ops = _graph_ops(pair.query), _graph_ops(pair.corpus)
    aparams = aligner_params(store, cfg)
    hq = _linear(q_ops.feats, store["enc.w"], store["enc.b"])
    hc = _linear(c_ops.feats, store["enc.w"], store["enc.b"])
    mq = _linear(q_ops.edge_feats, store["enc_edge.w"], store["enc_edge.b"])
    mc = _linear(c_ops.edge_feats, store["enc_edge.w"], store["enc_edge.b"])
    hqs, hcs, mqs, mcs = [hq], [hc], [mq], [mc]
    alignments: list[Value] = []
    for k in range(cfg.layers):
        if k == 0:
            alignment = None
        else:
            alignment = edge_aligner_refine(_pad_rows(mq, pair.e_pad),
                                            _pad_rows(mc, pair.e_pad), aparams, rng)
            alignments.append(alignment)
        cross_q = _edge_cross(alignment, q_ops.n_edges, mc, pair.e_pad, False)
        cross_c = _edge_cross(alignment, c_ops.n_edges, mq, pair.e_pad, True)
        zq = _lrl(ad.concat_cols(mq, cross_q), store, "inter")
        zc = _lrl(ad.concat_cols(mc, cross_c), store, "inter")
        hq = _gru(_edge_node_messages(q_ops, hq, zq, store), hq, store)
        hc = _gru(_edge_node_messages(c_ops, hc, zc, store), hc, store)
        mq = _edge_update(q_ops, hq, zq, store)
        mc = _edge_update(c_ops, hc, zc, store)
        hqs.append(hq)
        hcs.append(hc)
        mqs.append(mq)
        mcs.append(mc)
    alignment = edge_aligner_refine(_pad_rows(mq, pair.e_pad),
                                    _pad_rows(mc, pair.e_pad), aparams, rng)
    alignments.append(alignment)
    delta = relevance_distance_edge(_pad_rows(mq, pair.e_pad),
                                    _pad_rows(mc, pair.e_pad), alignment)
    return ForwardTrace(
        delta=delta, alignments=alignments,
        node_layers_query=[hqs], node_layers_corpus=[hcs],
        edge_layers_query=[mqs], edge_layers_corpus=[mcs],
        aligner_refinements=len(alignments), message_layers=cfg.layers,
    )


def forward_pair(pair: GraphPair, store: ParamStore, cfg: ModelConfig,
                 rng: np.random.Generator | None = None) -> ForwardTrace:
    """Dispatch on the configured variant and schedule."""
    cfg.validate()
    if cfg.variant == "node":
        run = run_node_lazy if cfg.schedule == "lazy" else run_node_eager
    else:
        run = run_edge_lazy if cfg.schedule == "lazy" else run_edge_eager
    return run(pair, store, cfg, rng)


def _probe_is_diff_friendly(loss: Value, store: ParamStore,
                            kink_clearance: float, grad_floor: float) -> bool:
    """Central differences are only a valid referee when no ReLU input sits at
    its kink and no gradient coordinate falls into the band where the finite
    difference is pure float cancellation noise (exactly-masked zeros are fine,
    the perturbed run is then bit-for-bit identical)."""
    if ad.min_kink_distance(loss) <= kink_clearance:
        return False
    for _, param in store.items():
        nonzero = np.abs(param.grad[param.grad != 0.0])
        if nonzero.size and nonzero.min() < grad_floor:
            return False
    return True


def model_grad_check(cfg: ModelConfig, seed: int = 0, eps: float = 3e-5,
                     pair: GraphPair | None = None,
                     store: ParamStore | None = None,
                     kink_clearance: float = 2e-3,
                     grad_floor: float = 1e-6) -> float:
    """Central-difference check of d(distance)/d(parameter) over every weight.

    Returns the max relative error |analytic - numeric| / (|numeric| + 1e-8).
    Random probes are re-drawn until the check is numerically meaningful at
    the probe point (see _probe_is_diff_friendly); a pinned pair+store is
    checked as given.
    """
    from .datagen import random_connected_graph
    from .graphs import pad_pair

    pinned = pair is not None and store is not None
    for attempt in range(200):
        rng = np.random.default_rng([seed, 7, attempt])
        probe_pair = pair if pair is not None else pad_pair(
            random_connected_graph(4, rng), random_connected_graph(4, rng))
        probe_store = store if store is not None else build_params(cfg, rng)
        probe_store.zero_grads()
        loss = forward_pair(probe_pair, probe_store, cfg, rng=None).delta
        ad.backward(loss)
        if pinned or _probe_is_diff_friendly(loss, probe_store, kink_clearance, grad_floor):
            break
    else:
        raise ConfigError("no finite-difference-friendly probe found in 200 attempts")
    pair, store = probe_pair, probe_store

    def distance() -> Value:
        return forward_pair(pair, store, cfg, rng=None).delta

    store.zero_grads()
    ad.backward(distance())
    analytic = store.grads()
    worst = 0.0
    for name, param in store.items():
        for idx in np.ndindex(*param.shape):
            orig = param.data[idx]
            param.data[idx] = orig + eps
            f_plus = distance().item()
            param.data[idx] = orig - eps
            f_minus = distance().item()
            param.data[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(analytic[name][idx] - numeric) / (abs(numeric) + 1e-8)
            worst = max(worst, err)
    return worst
