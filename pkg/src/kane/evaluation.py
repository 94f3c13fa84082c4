"""Link-prediction ranking and entity-classification evaluation.

Ranking protocol: for each test triple, score every candidate entity as
replacement head and as replacement tail (and every candidate relation),
rank the true answer, and aggregate Mean Rank and Hits@k. A rank is
1 + the number of strictly better candidates, so exact ties take the
optimistic rank. The "filter" setting drops candidates that form a known
positive triple (train + valid + test) other than the answer itself;
a filtered rank can never be worse than the raw rank.

Candidates are scored against the final propagated entity vectors; the
propagation runs over the training graph so held-out edges never leak
into the messages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .kgdata import DatasetSplit, GraphView, KnowledgeGraph, RelationTriple
from .model import ModelConfig, ModelParams, forward_all, is_translation_mode

SETTINGS = ("raw", "filter")


@dataclass
class FilterIndex:
    """Known-positive lookups for the filtered setting, over all splits."""

    tails: dict[tuple[int, int], set[int]] = field(default_factory=dict)  # (h, r) -> {t}
    heads: dict[tuple[int, int], set[int]] = field(default_factory=dict)  # (r, t) -> {h}
    relations: dict[tuple[int, int], set[int]] = field(default_factory=dict)  # (h, t) -> {r}


def build_filter_index(kg: KnowledgeGraph) -> FilterIndex:
    idx = FilterIndex()
    for t in kg.relation_triples:
        idx.tails.setdefault((t.head, t.relation), set()).add(t.tail)
        idx.heads.setdefault((t.relation, t.tail), set()).add(t.head)
        idx.relations.setdefault((t.head, t.tail), set()).add(t.relation)
    return idx


def entity_matrix(view: GraphView, params: ModelParams, config: ModelConfig) -> np.ndarray:
    """Final entity vectors as one (entities, dim) array (no tape recorded)."""
    return np.stack([v.data for v in forward_all(view, params, config)])


def _distances(batch: np.ndarray, target: np.ndarray, norm: str) -> np.ndarray:
    diff = batch - target
    if norm == "l1":
        return np.abs(diff).sum(axis=1)
    return np.sqrt((diff * diff).sum(axis=1))


def _rank_from_distances(dist: np.ndarray, true_idx: int, excluded: set[int], setting: str) -> int:
    if setting not in SETTINGS:
        raise ConfigError(f"setting must be one of {SETTINGS}, got {setting!r}")
    true_d = dist[true_idx]
    if setting == "raw":
        return 1 + int((dist < true_d).sum())
    better = dist < true_d
    for e in excluded:
        if e != true_idx:
            better[e] = False
    return 1 + int(better.sum())


def rank_tail(
    triple: RelationTriple,
    ent: np.ndarray,
    rel: np.ndarray,
    norm: str,
    filt: FilterIndex,
    setting: str,
) -> int:
    dist = _distances(ent[triple.head] + rel[triple.relation], ent, norm)
    known = filt.tails.get((triple.head, triple.relation), set())
    return _rank_from_distances(dist, triple.tail, known, setting)


def rank_head(
    triple: RelationTriple,
    ent: np.ndarray,
    rel: np.ndarray,
    norm: str,
    filt: FilterIndex,
    setting: str,
) -> int:
    dist = _distances(ent + rel[triple.relation], ent[triple.tail], norm)
    known = filt.heads.get((triple.relation, triple.tail), set())
    return _rank_from_distances(dist, triple.head, known, setting)


def rank_relation(
    triple: RelationTriple,
    ent: np.ndarray,
    rel: np.ndarray,
    norm: str,
    filt: FilterIndex,
    setting: str,
) -> int:
    dist = _distances(ent[triple.head] + rel, ent[triple.tail], norm)
    known = filt.relations.get((triple.head, triple.tail), set())
    return _rank_from_distances(dist, triple.relation, known, setting)


def aggregate_metrics(ranks: list[int], k: int) -> tuple[float, float]:
    """(mean rank, fraction of ranks <= k). Empty input is an error."""
    if not ranks:
        raise ConfigError("no ranks to aggregate")
    arr = np.asarray(ranks, dtype=np.float64)
    return float(arr.mean()), float((arr <= k).mean())


@dataclass
class RankingReport:
    """Raw and filtered metrics for one prediction task."""

    task: str
    hits_k: int
    queries: int
    candidates: int
    mean_rank_raw: float
    hits_raw: float
    mean_rank_filtered: float
    hits_filtered: float

    def rows(self) -> list[tuple[str, str, str, float]]:
        return [
            (self.task, "raw", "mean_rank", self.mean_rank_raw),
            (self.task, "raw", f"hits_at_{self.hits_k}", self.hits_raw),
            (self.task, "filter", "mean_rank", self.mean_rank_filtered),
            (self.task, "filter", f"hits_at_{self.hits_k}", self.hits_filtered),
        ]


def evaluate_completion(
    kg: KnowledgeGraph,
    split: DatasetSplit,
    params: ModelParams,
    config: ModelConfig,
    triples: list[RelationTriple] | None = None,
    view: GraphView | None = None,
) -> dict[str, RankingReport]:
    """Entity prediction (head + tail queries pooled, Hits@10) and relation
    prediction (Hits@1) over the test triples."""
    if triples is None:
        triples = split.test
    if not triples:
        raise ConfigError("no evaluation triples")
    if view is None:
        view = GraphView.restricted(kg, split.train, config.use_attributes)
    ent = entity_matrix(view, params, config)
    rel = params.relation.data
    filt = build_filter_index(kg)

    ent_ranks = {"raw": [], "filter": []}
    rel_ranks = {"raw": [], "filter": []}
    for trip in triples:
        for setting in SETTINGS:
            ent_ranks[setting].append(rank_tail(trip, ent, rel, config.norm, filt, setting))
            ent_ranks[setting].append(rank_head(trip, ent, rel, config.norm, filt, setting))
            rel_ranks[setting].append(rank_relation(trip, ent, rel, config.norm, filt, setting))

    def report(task: str, ranks: dict[str, list[int]], k: int, candidates: int) -> RankingReport:
        mr_raw, hits_raw = aggregate_metrics(ranks["raw"], k)
        mr_f, hits_f = aggregate_metrics(ranks["filter"], k)
        return RankingReport(
            task=task, hits_k=k, queries=len(ranks["raw"]), candidates=candidates,
            mean_rank_raw=mr_raw, hits_raw=hits_raw,
            mean_rank_filtered=mr_f, hits_filtered=hits_f,
        )

    return {
        "entity_prediction": report("entity_prediction", ent_ranks, 10, kg.num_entities),
        "relation_prediction": report("relation_prediction", rel_ranks, 1, kg.num_relations),
    }


def hits_fraction_for_triples(
    triples: list[RelationTriple],
    ent: np.ndarray,
    rel: np.ndarray,
    norm: str,
    filt: FilterIndex,
    k: int,
) -> float:
    """Filtered entity-prediction Hits@k (used as the validation metric)."""
    if not triples:
        raise ConfigError("no triples for validation metric")
    hits = 0
    for trip in triples:
        hits += rank_tail(trip, ent, rel, norm, filt, "filter") <= k
        hits += rank_head(trip, ent, rel, norm, filt, "filter") <= k
    return hits / (2 * len(triples))


# ---------------------------------------------------------------------------
# classification

def classification_accuracy(
    ent: np.ndarray, params: ModelParams, entities: list[int], labels: dict[int, int]
) -> float:
    """Accuracy of argmax class prediction (ties resolve to the lowest index)."""
    if not entities:
        raise ConfigError("no entities to classify")
    if params.cls_w is None or params.cls_b is None:
        raise ConfigError("model has no classifier head")
    for e in entities:
        if e not in labels:
            raise ConfigError(f"entity {e} has no label")
    scores = ent[entities] @ params.cls_w.data.T + params.cls_b.data
    pred = scores.argmax(axis=1)
    truth = np.array([labels[e] for e in entities])
    return float((pred == truth).mean())


def evaluate_classification(
    kg: KnowledgeGraph,
    split: DatasetSplit,
    params: ModelParams,
    config: ModelConfig,
    entities: list[int] | None = None,
    view: GraphView | None = None,
) -> dict[str, float | int]:
    if split.labels is None:
        raise ConfigError("dataset has no labels")
    if entities is None:
        entities = split.label_test
    if view is None:
        view = GraphView.restricted(kg, split.train, config.use_attributes)
    ent = entity_matrix(view, params, config)
    acc = classification_accuracy(ent, params, entities, split.labels)
    return {"accuracy": acc, "entities": len(entities), "classes": split.class_count}


# ---------------------------------------------------------------------------
# report rendering

def completion_report_text(reports: dict[str, RankingReport], config: ModelConfig) -> str:
    lines = ["link prediction results"]
    if is_translation_mode(config):
        lines.append("mode: transe-mode (no propagation layers, no attributes)")
    for name in ("entity_prediction", "relation_prediction"):
        r = reports[name]
        lines.append(f"\n{name} ({r.queries} queries over {r.candidates} candidates)")
        lines.append(f"  raw     mean rank {r.mean_rank_raw:.2f}   hits@{r.hits_k} {r.hits_raw:.4f}")
        lines.append(f"  filter  mean rank {r.mean_rank_filtered:.2f}   hits@{r.hits_k} {r.hits_filtered:.4f}")
    return "\n".join(lines) + "\n"


def completion_report_tsv(reports: dict[str, RankingReport], config: ModelConfig) -> str:
    lines = ["task\tsetting\tmetric\tvalue"]
    if is_translation_mode(config):
        lines.append("meta\t-\tmode\ttranse-mode")
    for name in ("entity_prediction", "relation_prediction"):
        for task, setting, metric, value in reports[name].rows():
            lines.append(f"{task}\t{setting}\t{metric}\t{value!r}")
    return "\n".join(lines) + "\n"


def classification_report_text(result: dict, config: ModelConfig) -> str:
    lines = ["entity classification results"]
    if is_translation_mode(config):
        lines.append("mode: transe-mode (no propagation layers, no attributes)")
    lines.append(
        f"accuracy {result['accuracy']:.4f} over {result['entities']} entities, "
        f"{result['classes']} classes"
    )
    return "\n".join(lines) + "\n"


def classification_report_tsv(result: dict, config: ModelConfig) -> str:
    lines = ["task\tsetting\tmetric\tvalue"]
    if is_translation_mode(config):
        lines.append("meta\t-\tmode\ttranse-mode")
    lines.append(f"entity_classification\t-\taccuracy\t{result['accuracy']!r}")
    lines.append(f"entity_classification\t-\tentities\t{result['entities']}")
    return "\n".join(lines) + "\n"
