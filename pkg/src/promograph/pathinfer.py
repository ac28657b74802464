"""Path inference over the promotion inference graph.

A DistMult embedding supplies soft rewards; a recurrent policy network
(3-layer LSTM over the rollout history) is trained with REINFORCE to walk
the bidirectional, PageRank-pruned triple store from a query's source entity
toward destination entities. Beam decoding with unique-destination
post-processing produces ranked predictions with explanatory paths.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .errors import EntityNotFoundError, SplitError
from .pig import (INV_SUFFIX, Pig, R_CREATE, R_DEVURL, R_MANIFEST, R_SIG,
                  R_URL)

Triple = tuple[str, str, str]

STAY = "STAY"
START = "START"


# ---------------------------------------------------------------------------
# Split

def split_pig(pig: Pig, seed: int,
              ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
              ) -> tuple[list[Triple], list[Triple], list[Triple]]:
    """Disjoint train/valid/test triple split; valid/test triples whose
    entities never occur in train are moved back to train."""
    triples = sorted((t.head, t.relation, t.tail) for t in pig.triples)
    if len(triples) < 10:
        raise SplitError(f"only {len(triples)} triples")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(triples))
    shuffled = [triples[i] for i in order]
    n = len(shuffled)
    n_train = round(ratios[0] * n)
    n_valid = round(ratios[1] * n)
    train = shuffled[:n_train]
    valid = shuffled[n_train:n_train + n_valid]
    test = shuffled[n_train + n_valid:]
    seen = {e for h, _, t in train for e in (h, t)}
    def filter_split(split: list[Triple]) -> list[Triple]:
        kept = []
        for tri in split:
            if tri[0] in seen and tri[2] in seen:
                kept.append(tri)
            else:
                train.append(tri)
                seen.update((tri[0], tri[2]))
        return kept
    valid = filter_split(valid)
    test = filter_split(test)
    return train, valid, test


# ---------------------------------------------------------------------------
# DistMult

@dataclass
class KgConfig:
    dim: int = 200
    epochs: int = 200
    lr: float = 0.01
    negatives_per_positive: int = 4
    weight_decay: float = 1e-5


class KgEmbedding(nn.Module):
    """DistMult: score(h, r, t) = sum_i e_h[i] * w_r[i] * e_t[i]."""

    def __init__(self, entities: list[str], relations: list[str], dim: int):
        super().__init__()
        self.entities = sorted(entities)
        self.relations = sorted(relations)
        self.ent_index = {e: i for i, e in enumerate(self.entities)}
        self.rel_index = {r: i for i, r in enumerate(self.relations)}
        self.ent = nn.Embedding(len(self.entities), dim)
        self.rel = nn.Embedding(len(self.relations), dim)
        nn.init.xavier_uniform_(self.ent.weight)
        nn.init.xavier_uniform_(self.rel.weight)

    def score_idx(self, h: torch.Tensor, r: torch.Tensor,
                  t: torch.Tensor) -> torch.Tensor:
        return (self.ent(h) * self.rel(r) * self.ent(t)).sum(dim=-1)

    def _lookup(self, name: str, index: dict[str, int]) -> int:
        if name not in index:
            raise EntityNotFoundError(name)
        return index[name]


def score_triple(kg: KgEmbedding, head: str, relation: str, tail: str) -> float:
    h = kg._lookup(head, kg.ent_index)
    r = kg._lookup(relation, kg.rel_index)
    t = kg._lookup(tail, kg.ent_index)
    with torch.no_grad():
        return float(kg.score_idx(torch.tensor([h]), torch.tensor([r]),
                                  torch.tensor([t]))[0])


def soft_reward(kg: KgEmbedding, head: str, relation: str, tail: str) -> float:
    return 1.0 / (1.0 + math.exp(-score_triple(kg, head, relation, tail)))


def distmult_loss(kg: KgEmbedding, pos: torch.Tensor,
                  neg: torch.Tensor) -> torch.Tensor:
    logits_pos = kg.score_idx(pos[:, 0], pos[:, 1], pos[:, 2])
    logits_neg = kg.score_idx(neg[:, 0], neg[:, 1], neg[:, 2])
    logits = torch.cat([logits_pos, logits_neg])
    labels = torch.cat([torch.ones_like(logits_pos),
                        torch.zeros_like(logits_neg)])
    return nn.functional.binary_cross_entropy_with_logits(logits, labels)


def train_distmult(train_triples: Sequence[Triple], config: KgConfig, seed: int,
                   entities: Optional[list[str]] = None,
                   relations: Optional[list[str]] = None) -> KgEmbedding:
    """Negative-sampling training (corrupt head or tail), BCE loss."""
    if not train_triples:
        raise SplitError("no training triples")
    if entities is None:
        entities = sorted({e for h, _, t in train_triples for e in (h, t)})
    if relations is None:
        relations = sorted({r for _, r, _ in train_triples})
    torch.manual_seed(seed)
    kg = KgEmbedding(entities, relations, config.dim)
    pos = torch.tensor([[kg.ent_index[h], kg.rel_index[r], kg.ent_index[t]]
                        for h, r, t in train_triples], dtype=torch.long)
    opt = torch.optim.Adam(kg.parameters(), lr=config.lr,
                           weight_decay=config.weight_decay)
    gen = torch.Generator().manual_seed(seed)
    n_ent = len(kg.entities)
    k = config.negatives_per_positive
    for _ in range(config.epochs):
        neg = pos.repeat_interleave(k, dim=0).clone()
        corrupt_tail = torch.rand(len(neg), generator=gen) < 0.5
        rand_ent = torch.randint(n_ent, (len(neg),), generator=gen)
        neg[corrupt_tail, 2] = rand_ent[corrupt_tail]
        neg[~corrupt_tail, 0] = rand_ent[~corrupt_tail]
        opt.zero_grad()
        loss = distmult_loss(kg, pos, neg)
        loss.backward()
        opt.step()
    kg.eval()
    return kg


# ---------------------------------------------------------------------------
# Neighbor pruning

def pig_pagerank(pig: Pig) -> dict[str, float]:
    """PageRank over the bidirectional traversal view of the triple store."""
    from .graph import pagerank
    return pagerank({e: [n for _, n in moves]
                     for e, moves in pig.adjacency().items()})


def prune_neighbors(pig: Pig, pagerank_scores: dict[str, float],
                    limit: int = 256) -> dict[str, list[tuple[str, str]]]:
    """Keep at most `limit` outgoing moves per entity, ranked by the
    neighbor's PageRank score (ties by entity id, then relation)."""
    adj = pig.adjacency()
    pruned: dict[str, list[tuple[str, str]]] = {}
    for entity, moves in adj.items():
        ranked = sorted(moves, key=lambda m: (-pagerank_scores[m[1]], m[1], m[0]))
        pruned[entity] = ranked[:limit]
    return pruned


# ---------------------------------------------------------------------------
# Policy network

@dataclass
class PolicyConfig:
    dim: int = 200
    lstm_layers: int = 3
    horizon: int = 3
    dropout: float = 0.1
    action_dropout: float = 0.1
    lr: float = 0.001
    batch_size: int = 32
    epochs: int = 20
    beam_width: int = 128


class PolicyNet(nn.Module):
    """Recurrent policy over (relation, entity) moves.

    App entities' input vectors carry their pre-trained graph embedding as a
    trailing block; every other entity gets zeros there.
    """

    def __init__(self, entities: list[str], relations: list[str],
                 config: PolicyConfig,
                 agg_table: Optional[dict[str, np.ndarray]] = None):
        super().__init__()
        self.config = config
        self.entities = sorted(entities)
        self.relations = sorted(set(relations) | {STAY, START})
        self.ent_index = {e: i for i, e in enumerate(self.entities)}
        self.rel_index = {r: i for i, r in enumerate(self.relations)}
        dim = config.dim
        self.agg_dim = 0
        agg = None
        if agg_table:
            self.agg_dim = len(next(iter(agg_table.values())))
            agg = torch.zeros(len(self.entities), self.agg_dim)
            for ent, vec in agg_table.items():
                i = self.ent_index.get(ent)
                if i is not None:
                    agg[i] = torch.tensor(vec, dtype=torch.float32)
        self.register_buffer("agg", agg if agg is not None
                             else torch.zeros(len(self.entities), 0))
        self.ent_emb = nn.Embedding(len(self.entities), dim)
        self.rel_emb = nn.Embedding(len(self.relations), dim)
        nn.init.xavier_uniform_(self.ent_emb.weight)
        nn.init.xavier_uniform_(self.rel_emb.weight)
        ent_repr_dim = dim + self.agg_dim
        self.action_dim = dim + ent_repr_dim
        self.lstm = nn.LSTM(input_size=self.action_dim, hidden_size=dim,
                            num_layers=config.lstm_layers, batch_first=True)
        self.scorer = nn.Sequential(
            nn.Linear(dim + dim, dim),
            nn.ReLU(),
            nn.Dropout(config.dropout),
            nn.Linear(dim, self.action_dim),
        )

    def ent_repr(self, idx: torch.Tensor) -> torch.Tensor:
        e = self.ent_emb(idx)
        if self.agg_dim:
            return torch.cat([e, self.agg[idx]], dim=-1)
        return e

    def action_repr(self, rel_idx: torch.Tensor, ent_idx: torch.Tensor) -> torch.Tensor:
        return torch.cat([self.rel_emb(rel_idx), self.ent_repr(ent_idx)], dim=-1)

    def step(self, rel_idx: torch.Tensor, ent_idx: torch.Tensor,
             state: Optional[tuple[torch.Tensor, torch.Tensor]]):
        inp = self.action_repr(rel_idx, ent_idx).unsqueeze(1)
        out, state = self.lstm(inp, state)
        return out.squeeze(1), state

    def action_scores(self, hidden: torch.Tensor, rq_idx: torch.Tensor,
                      rel_idx: torch.Tensor, ent_idx: torch.Tensor) -> torch.Tensor:
        """hidden: (B, dim); rq_idx: (B,); rel/ent_idx: (B, A) padded actions."""
        query = self.scorer(torch.cat([hidden, self.rel_emb(rq_idx)], dim=-1))
        actions = self.action_repr(rel_idx, ent_idx)  # (B, A, action_dim)
        return (actions * query.unsqueeze(1)).sum(dim=-1)


@dataclass
class ActionSpace:
    """Padded per-entity move tables for batched rollouts."""
    rel_ids: torch.Tensor   # (n_ent, max_actions)
    ent_ids: torch.Tensor
    mask: torch.Tensor      # True where a real action exists
    moves: dict[str, list[tuple[str, str]]]


def build_action_space(policy: PolicyNet,
                       pruned_adj: dict[str, list[tuple[str, str]]]) -> ActionSpace:
    moves: dict[str, list[tuple[str, str]]] = {}
    for ent in policy.entities:
        moves[ent] = [(STAY, ent)] + [
            (r, t) for r, t in pruned_adj.get(ent, []) if t in policy.ent_index]
    max_a = max(len(m) for m in moves.values())
    n = len(policy.entities)
    rel_ids = torch.zeros((n, max_a), dtype=torch.long)
    ent_ids = torch.zeros((n, max_a), dtype=torch.long)
    mask = torch.zeros((n, max_a), dtype=torch.bool)
    for ent, ms in moves.items():
        i = policy.ent_index[ent]
        for j, (r, t) in enumerate(ms):
            rel_ids[i, j] = policy.rel_index[r]
            ent_ids[i, j] = policy.ent_index[t]
            mask[i, j] = True
    return ActionSpace(rel_ids=rel_ids, ent_ids=ent_ids, mask=mask, moves=moves)


@dataclass
class Rollout:
    path: tuple[str, ...]  # e_s, r_1, e_1, ..., r_T, e_T
    query_relation: str
    reward: float = 0.0

    @property
    def destination(self) -> str:
        return self.path[-1]


@dataclass
class RankedPrediction:
    destination: str
    score: float
    best_path: Rollout


def _rollout_batch(policy: PolicyNet, space: ActionSpace,
                   sources: torch.Tensor, rq: torch.Tensor,
                   gen: Optional[torch.Generator], sample: bool,
                   action_dropout: float = 0.0
                   ) -> tuple[torch.Tensor, torch.Tensor, list[list[int]]]:
    """Run T steps for a batch; returns (log_probs, final entities, action
    index paths). Greedy when sample=False."""
    batch = sources.shape[0]
    start_rel = torch.full((batch,), policy.rel_index[START], dtype=torch.long)
    hidden, state = policy.step(start_rel, sources, None)
    cur = sources
    log_prob = torch.zeros(batch)
    choices: list[list[int]] = [[] for _ in range(batch)]
    for _ in range(policy.config.horizon):
        rel_ids = space.rel_ids[cur]
        ent_ids = space.ent_ids[cur]
        mask = space.mask[cur]
        scores = policy.action_scores(hidden, rq, rel_ids, ent_ids)
        scores = scores.masked_fill(~mask, float("-inf"))
        logp = torch.log_softmax(scores, dim=-1)
        if sample:
            sample_scores = scores
            if action_dropout > 0 and gen is not None:
                drop = torch.rand(scores.shape, generator=gen) < action_dropout
                drop &= mask
                # never mask out every action of a row
                keep_all = (mask & ~drop).sum(dim=-1) == 0
                drop[keep_all] = False
                sample_scores = scores.masked_fill(drop, float("-inf"))
            probs = torch.softmax(sample_scores, dim=-1)
            picked = torch.multinomial(probs, 1, generator=gen).squeeze(1)
        else:
            picked = torch.argmax(logp, dim=-1)
        log_prob = log_prob + logp[torch.arange(batch), picked]
        for b in range(batch):
            choices[b].append(int(picked[b]))
        next_rel = rel_ids[torch.arange(batch), picked]
        cur = ent_ids[torch.arange(batch), picked]
        hidden, state = policy.step(next_rel, cur, state)
    return log_prob, cur, choices


def _reward(pig: Pig, kg: KgEmbedding, head: str, relation: str,
            tail: str) -> float:
    if pig.has(head, relation, tail):
        return 1.0
    try:
        return soft_reward(kg, head, relation, tail)
    except EntityNotFoundError:
        return 0.0


def train_policy(pig: Pig, kg: KgEmbedding, train_triples: Sequence[Triple],
                 pruned_adj: dict[str, list[tuple[str, str]]],
                 config: PolicyConfig, seed: int,
                 embeddings: Optional[dict[str, np.ndarray]] = None
                 ) -> tuple[PolicyNet, ActionSpace]:
    """REINFORCE over rollouts; observed destinations earn reward 1, others
    the sigmoid DistMult score. A running-mean baseline reduces variance."""
    torch.manual_seed(seed)
    entities = sorted(pig.entities)
    relations = sorted({r for m in pruned_adj.values() for r, _ in m})
    agg_table = None
    if embeddings:
        from .pig import K_APP, entity_id
        agg_table = {entity_id(K_APP, app): vec for app, vec in embeddings.items()}
    policy = PolicyNet(entities, relations, config, agg_table)
    space = build_action_space(policy, pruned_adj)
    opt = torch.optim.Adam(policy.parameters(), lr=config.lr)
    gen = torch.Generator().manual_seed(seed)
    triples = list(train_triples)
    baseline = 0.0
    policy.train()
    rng = np.random.default_rng(seed)
    for _ in range(config.epochs):
        order = rng.permutation(len(triples))
        for start in range(0, len(triples), config.batch_size):
            batch = [triples[i] for i in order[start:start + config.batch_size]]
            sources = torch.tensor([policy.ent_index[h] for h, _, _ in batch])
            rq = torch.tensor([policy.rel_index[r] for _, r, _ in batch])
            log_prob, final, _ = _rollout_batch(
                policy, space, sources, rq, gen, sample=True,
                action_dropout=config.action_dropout)
            rewards = torch.tensor([
                _reward(pig, kg, h, r, policy.entities[int(f)])
                for (h, r, _), f in zip(batch, final)])
            advantage = rewards - baseline
            baseline = 0.95 * baseline + 0.05 * float(rewards.mean())
            loss = -(advantage * log_prob).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
    policy.eval()
    return policy, space


# ---------------------------------------------------------------------------
# Beam decoding and evaluation

def beam_decode(policy: PolicyNet, space: ActionSpace, source: str,
                relation: str, width: int = 128) -> list[RankedPrediction]:
    """Beam search over the horizon; per-destination max-score dedup;
    descending score, ties by entity id."""
    if source not in policy.ent_index:
        raise EntityNotFoundError(source)
    policy.eval()
    with torch.no_grad():
        rq_idx = policy.rel_index[relation]
        start_rel = torch.tensor([policy.rel_index[START]])
        src_idx = torch.tensor([policy.ent_index[source]])
        hidden, state = policy.step(start_rel, src_idx, None)
        # beam entries: (neg cum logp, path tuple, entity idx, hidden, state)
        beams = [(0.0, (source,), int(src_idx[0]), hidden[0],
                  tuple(s[:, 0] for s in state))]
        for _ in range(policy.config.horizon):
            candidates = []
            for logp0, path, ent, h, st in beams:
                moves = space.moves[policy.entities[ent]]
                rel_ids = space.rel_ids[ent][: len(moves)].unsqueeze(0)
                ent_ids = space.ent_ids[ent][: len(moves)].unsqueeze(0)
                scores = policy.action_scores(
                    h.unsqueeze(0), torch.tensor([rq_idx]), rel_ids, ent_ids)
                step_logp = torch.log_softmax(scores, dim=-1)[0]
                for j, (r, t) in enumerate(moves):
                    candidates.append((logp0 + float(step_logp[j]),
                                       path + (r, t),
                                       int(ent_ids[0, j]),
                                       int(rel_ids[0, j]), st))
            candidates.sort(key=lambda c: (-c[0], c[1]))
            kept = candidates[:width]
            new_beams = []
            for logp0, path, ent, rel, st in kept:
                h_state = tuple(s.unsqueeze(1).contiguous() for s in st)
                hidden, state = policy.step(torch.tensor([rel]),
                                            torch.tensor([ent]), h_state)
                new_beams.append((logp0, path, ent, hidden[0],
                                  tuple(s[:, 0] for s in state)))
            beams = new_beams
    best: dict[str, tuple[float, tuple[str, ...]]] = {}
    for logp0, path, ent, _, _ in beams:
        dst = policy.entities[ent]
        if dst not in best or logp0 > best[dst][0]:
            best[dst] = (logp0, path)
    ranked = sorted(best.items(), key=lambda kv: (-kv[1][0], kv[0]))
    return [RankedPrediction(destination=dst, score=score,
                             best_path=Rollout(path=path, query_relation=relation,
                                               reward=0.0))
            for dst, (score, path) in ranked]


@dataclass
class RankingMetrics:
    hit_at_1: float
    hit_at_10: float
    mrr: float


def _rank_metrics(ranks: list[Optional[int]]) -> RankingMetrics:
    n = len(ranks)
    h1 = sum(1 for r in ranks if r == 1)
    h10 = sum(1 for r in ranks if r is not None and r <= 10)
    mrr = sum(1.0 / r for r in ranks if r is not None)
    return RankingMetrics(hit_at_1=100.0 * h1 / n, hit_at_10=100.0 * h10 / n,
                          mrr=100.0 * mrr / n)


def known_answers(triple_sets: Sequence[Sequence[Triple]]) -> dict[tuple[str, str], set[str]]:
    known: dict[tuple[str, str], set[str]] = {}
    for triples in triple_sets:
        for h, r, t in triples:
            known.setdefault((h, r), set()).add(t)
    return known


def evaluate(policy: PolicyNet, space: ActionSpace,
             test_triples: Sequence[Triple],
             known: dict[tuple[str, str], set[str]],
             width: int = 128) -> RankingMetrics:
    """Filtered ranking of each test destination among decoded predictions;
    ground truth absent from the beam contributes zero reciprocal rank."""
    ranks: list[Optional[int]] = []
    for h, r, t in test_triples:
        preds = beam_decode(policy, space, h, r, width=width)
        others = known.get((h, r), set()) - {t}
        rank = None
        pos = 0
        for p in preds:
            if p.destination in others or p.destination == h:
                continue
            pos += 1
            if p.destination == t:
                rank = pos
                break
        ranks.append(rank)
    return _rank_metrics(ranks)


def evaluate_distmult(kg: KgEmbedding, test_triples: Sequence[Triple],
                      known: dict[tuple[str, str], set[str]],
                      candidates: Optional[list[str]] = None) -> RankingMetrics:
    """Embedding-only baseline: rank every candidate entity by DistMult
    score for (h, r, ?), filtered."""
    if candidates is None:
        candidates = kg.entities
    cand_idx = torch.tensor([kg.ent_index[c] for c in candidates])
    ranks: list[Optional[int]] = []
    with torch.no_grad():
        for h, r, t in test_triples:
            h_i = kg.ent_index.get(h)
            r_i = kg.rel_index.get(r)
            t_pos = kg.ent_index.get(t)
            if h_i is None or r_i is None or t_pos is None or t not in candidates:
                ranks.append(None)
                continue
            scores = kg.score_idx(
                torch.full((len(candidates),), h_i, dtype=torch.long),
                torch.full((len(candidates),), r_i, dtype=torch.long),
                cand_idx)
            others = known.get((h, r), set()) - {t}
            order = sorted(range(len(candidates)),
                           key=lambda i: (-float(scores[i]), candidates[i]))
            pos = 0
            rank = None
            for i in order:
                if candidates[i] in others or candidates[i] == h:
                    continue
                pos += 1
                if candidates[i] == t:
                    rank = pos
                    break
            ranks.append(rank)
    return _rank_metrics(ranks)


# ---------------------------------------------------------------------------
# Explanations and export

CUSTOM_MADE_RELATIONS = {R_SIG, R_MANIFEST, R_CREATE}
AD_LIBRARY_RELATIONS = {R_URL, R_DEVURL}


def classify_mechanism(path: tuple[str, ...]) -> str:
    """Promotion mechanism suggested by an inference path's relations."""
    rels = {path[i].removesuffix(INV_SUFFIX) for i in range(1, len(path), 2)}
    if rels & CUSTOM_MADE_RELATIONS:
        return "custom-made"
    if rels & AD_LIBRARY_RELATIONS:
        return "ad-library"
    return "other"


def export_predictions(path: str, source: str, relation: str,
                       predictions: Sequence[RankedPrediction]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for rank, p in enumerate(predictions, start=1):
            steps = [(p.best_path.path[i], p.best_path.path[i + 1])
                     for i in range(1, len(p.best_path.path) - 1, 2)]
            fh.write(json.dumps({
                "source": source, "relation": relation, "rank": rank,
                "destination": p.destination, "score": p.score,
                "path": steps, "mechanism": classify_mechanism(p.best_path.path),
            }, sort_keys=True) + "\n")
