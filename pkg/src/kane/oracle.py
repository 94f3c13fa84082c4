"""Naive reference implementations used only by tests.

Everything here is written with plain Python floats, lists and explicit
loops, allocating fresh lists at every step. It deliberately shares no
code with the model, encoder or evaluation modules (it imports only the
graph data types and ``math``), so agreement between the two routes is
meaningful evidence rather than a tautology.

Parameters arrive as a plain ``{name: nested lists}`` dict and the
configuration as a plain dict of values.
"""

from __future__ import annotations

import math

from .kgdata import GraphView


def params_to_lists(named_parameters) -> dict[str, list]:
    """Convert ``ModelParams.named_parameters()`` output to nested lists."""
    return {name: tensor.data.tolist() for name, tensor in named_parameters}


def _matvec(m: list[list[float]], v: list[float]) -> list[float]:
    out = []
    for row_vals in m:
        acc = 0.0
        for a, b in zip(row_vals, v):
            acc += a * b
        out.append(acc)
    return out


def _vadd(u: list[float], v: list[float]) -> list[float]:
    return [a + b for a, b in zip(u, v)]


def _vsub(u: list[float], v: list[float]) -> list[float]:
    return [a - b for a, b in zip(u, v)]


def _dot(u: list[float], v: list[float]) -> float:
    acc = 0.0
    for a, b in zip(u, v):
        acc += a * b
    return acc


def _norm(v: list[float], kind: str) -> float:
    if kind == "l1":
        acc = 0.0
        for x in v:
            acc += abs(x)
        return acc
    acc = 0.0
    for x in v:
        acc += x * x
    return math.sqrt(acc)


def _leaky(x: float, slope: float) -> float:
    return x if x > 0.0 else slope * x


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _softmax(logits: list[float]) -> list[float]:
    top = max(logits)
    exps = [math.exp(x - top) for x in logits]
    total = sum(exps)
    return [e / total for e in exps]


def _encode_bow(tokens: list[int], word: list[list[float]]) -> list[float]:
    dim = len(word[0])
    acc = [0.0] * dim
    for w in tokens:
        acc = _vadd(acc, word[w])
    return acc


def _encode_lstm(tokens: list[int], word: list[list[float]], arrays: dict) -> list[float]:
    dim = len(word[0])
    h = [0.0] * dim
    c = [0.0] * dim
    for w in tokens:
        x = word[w]
        gate_i = [_sigmoid(a + b + bb) for a, b, bb in zip(
            _matvec(arrays["lstm.w_in_input"], x), _matvec(arrays["lstm.w_hid_input"], h),
            arrays["lstm.b_input"])]
        gate_f = [_sigmoid(a + b + bb) for a, b, bb in zip(
            _matvec(arrays["lstm.w_in_forget"], x), _matvec(arrays["lstm.w_hid_forget"], h),
            arrays["lstm.b_forget"])]
        gate_o = [_sigmoid(a + b + bb) for a, b, bb in zip(
            _matvec(arrays["lstm.w_in_output"], x), _matvec(arrays["lstm.w_hid_output"], h),
            arrays["lstm.b_output"])]
        cand = [math.tanh(a + b + bb) for a, b, bb in zip(
            _matvec(arrays["lstm.w_in_cell"], x), _matvec(arrays["lstm.w_hid_cell"], h),
            arrays["lstm.b_cell"])]
        c = [f * cc + i * g for f, cc, i, g in zip(gate_f, c, gate_i, cand)]
        h = [o * math.tanh(cc) for o, cc in zip(gate_o, c)]
    return h


def _encoded_value(value_id: int, view: GraphView, arrays: dict, cfg: dict) -> list[float]:
    tokens = view.kg.value_tokens[value_id]
    if cfg["encoder"] == "bow":
        return _encode_bow(tokens, arrays["word"])
    return _encode_lstm(tokens, arrays["word"], arrays)


def naive_entity_vectors(view: GraphView, arrays: dict, cfg: dict) -> list[list[float]]:
    """Layer-by-layer propagation with explicit dense loops."""
    vecs = [list(map(float, row_vals)) for row_vals in arrays["entity"]]
    for layer in range(cfg["layers"]):
        new_vecs = []
        for e in range(view.entity_count):
            neighbors = view.neighborhood[e]
            if not neighbors:
                new_vecs.append(list(vecs[e]))
                continue
            head_outs = []
            for head in range(cfg["heads"]):
                transform = arrays[f"head_w.{layer}.{head}"]
                logits = []
                messages = []
                for nb in neighbors:
                    r_vec = arrays["relation"][nb.relation]
                    if nb.is_attribute:
                        n_vec = _encoded_value(nb.target, view, arrays, cfg)
                    else:
                        n_vec = vecs[nb.target]
                    combined = _vadd(r_vec, n_vec)
                    message = _matvec(transform, combined)
                    if cfg["attention"] == "bilinear":
                        query = _matvec(transform, r_vec)
                        logits.append(_leaky(_dot(query, message), cfg["leaky_slope"]))
                    else:
                        diff = _vsub(_vadd(vecs[e], r_vec), n_vec)
                        logits.append(-_norm(diff, cfg["norm"]))
                    messages.append(message)
                weights = _softmax(logits)
                out = [0.0] * len(messages[0])
                for w, msg in zip(weights, messages):
                    out = _vadd(out, [w * x for x in msg])
                head_outs.append(out)
            if cfg["aggregator"] == "concat":
                flat = [x for out in head_outs for x in out]
                merged = _matvec(arrays[f"out_w.{layer}"], flat)
            else:
                merged = [0.0] * len(head_outs[0])
                for out in head_outs:
                    merged = _vadd(merged, out)
                merged = [x / cfg["heads"] for x in merged]
            new_vecs.append([_leaky(x, cfg["leaky_slope"]) for x in merged])
        vecs = new_vecs
    return vecs


def naive_distance(head_vec: list[float], rel_vec: list[float], tail_vec: list[float], norm: str) -> float:
    return _norm(_vsub(_vadd(head_vec, rel_vec), tail_vec), norm)


def _naive_rank(distances: list[float], true_idx: int, excluded: set[int], setting: str) -> int:
    true_d = distances[true_idx]
    better = 0
    for i, d in enumerate(distances):
        if setting == "filter" and i in excluded and i != true_idx:
            continue
        if d < true_d:
            better += 1
    return 1 + better


def naive_rank_tail(
    triple, vectors: list[list[float]], relations: list[list[float]],
    known_triples, norm: str, setting: str,
) -> int:
    h, r, t = triple
    excluded = {kt for kh, kr, kt in known_triples if kh == h and kr == r}
    distances = [
        naive_distance(vectors[h], relations[r], vectors[cand], norm)
        for cand in range(len(vectors))
    ]
    return _naive_rank(distances, t, excluded, setting)


def naive_rank_head(
    triple, vectors: list[list[float]], relations: list[list[float]],
    known_triples, norm: str, setting: str,
) -> int:
    h, r, t = triple
    excluded = {kh for kh, kr, kt in known_triples if kr == r and kt == t}
    distances = [
        naive_distance(vectors[cand], relations[r], vectors[t], norm)
        for cand in range(len(vectors))
    ]
    return _naive_rank(distances, h, excluded, setting)


def naive_rank_relation(
    triple, vectors: list[list[float]], relations: list[list[float]],
    known_triples, norm: str, setting: str,
) -> int:
    h, r, t = triple
    excluded = {kr for kh, kr, kt in known_triples if kh == h and kt == t}
    distances = [
        naive_distance(vectors[h], relations[cand], vectors[t], norm)
        for cand in range(len(relations))
    ]
    return _naive_rank(distances, r, excluded, setting)
