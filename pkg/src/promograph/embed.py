"""Two-layer mean-aggregator graph network over the promotion graph.

Per layer: h = ReLU(W2 . CONCAT(h_self, ReLU(W1 . MEAN(h_neighbors)))), with
the undirected (in + out) neighborhood and a zero vector standing in for the
neighbor mean of isolated nodes. Pretraining is unsupervised link
prediction: promotion edges are positives, uniform non-edges negatives,
binary cross-entropy on output dot products.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import NodeNotFoundError, PretrainError
from .graph import PromotionGraph


@dataclass
class SageConfig:
    hidden_dim: int = 128
    out_dim: int = 128
    dropout: float = 0.5
    lr: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 100
    negatives_per_positive: int = 5
    plateau_window: int = 10
    plateau_tol: float = 1e-4


class MeanSageLayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.w_neigh = nn.Linear(in_dim, out_dim, bias=False)   # W1
        self.w_comb = nn.Linear(in_dim + out_dim, out_dim, bias=False)  # W2

    def forward(self, x: torch.Tensor, mean_adj: torch.Tensor) -> torch.Tensor:
        neigh = torch.relu(self.w_neigh(mean_adj @ x))
        return torch.relu(self.w_comb(torch.cat([x, neigh], dim=1)))


class SageModel(nn.Module):
    def __init__(self, in_dim: int, config: SageConfig):
        super().__init__()
        self.config = config
        self.layer1 = MeanSageLayer(in_dim, config.hidden_dim)
        self.layer2 = MeanSageLayer(config.hidden_dim, config.out_dim)
        self.drop = nn.Dropout(config.dropout)

    def forward(self, x: torch.Tensor, mean_adj: torch.Tensor) -> torch.Tensor:
        h = self.layer1(self.drop(x), mean_adj)
        return self.layer2(self.drop(h), mean_adj)


def _node_order(graph: PromotionGraph) -> list[str]:
    return sorted(graph.nodes)


def mean_adjacency(graph: PromotionGraph, order: list[str]) -> torch.Tensor:
    """Row-normalized undirected neighborhood matrix; isolated rows are zero."""
    index = {n: i for i, n in enumerate(order)}
    n = len(order)
    adj = torch.zeros((n, n))
    neighbors: dict[str, set[str]] = {v: set() for v in order}
    for src, dst in graph.unique_pairs():
        neighbors[src].add(dst)
        neighbors[dst].add(src)
    for v, ns in neighbors.items():
        if ns:
            w = 1.0 / len(ns)
            for u in ns:
                adj[index[v], index[u]] = w
    return adj


def _feature_matrix(order: list[str], features: dict[str, np.ndarray]) -> torch.Tensor:
    return torch.tensor(np.stack([features[v] for v in order]), dtype=torch.float32)


def link_prediction_loss(z: torch.Tensor, pos: torch.Tensor,
                         neg: torch.Tensor) -> torch.Tensor:
    """BCE over dot products. Positive and negative terms are averaged
    separately and weighted equally; since the encoder output is
    non-negative, a negative-heavy average would collapse every embedding
    to the zero vector."""
    logits_pos = (z[pos[:, 0]] * z[pos[:, 1]]).sum(dim=1)
    logits_neg = (z[neg[:, 0]] * z[neg[:, 1]]).sum(dim=1)
    bce = nn.functional.binary_cross_entropy_with_logits
    return (bce(logits_pos, torch.ones_like(logits_pos))
            + bce(logits_neg, torch.zeros_like(logits_neg)))


def _sample_negatives(n: int, count: int, edge_set: set[tuple[int, int]],
                      gen: torch.Generator) -> torch.Tensor:
    out: list[tuple[int, int]] = []
    while len(out) < count:
        u = int(torch.randint(n, (1,), generator=gen))
        v = int(torch.randint(n, (1,), generator=gen))
        if u != v and (u, v) not in edge_set:
            out.append((u, v))
    return torch.tensor(out, dtype=torch.long)


def pretrain(graph: PromotionGraph, features: dict[str, np.ndarray],
             config: SageConfig, seed: int) -> tuple[SageModel, list[float]]:
    """Returns the trained model and the per-epoch loss history."""
    pairs = graph.unique_pairs()
    if not pairs:
        raise PretrainError("graph has no edges")
    torch.manual_seed(seed)
    order = _node_order(graph)
    index = {v: i for i, v in enumerate(order)}
    x = _feature_matrix(order, features)
    adj = mean_adjacency(graph, order)
    pos = torch.tensor([(index[s], index[d]) for s, d in pairs], dtype=torch.long)
    edge_set = {(int(a), int(b)) for a, b in pos}
    edge_set |= {(b, a) for a, b in edge_set}

    model = SageModel(x.shape[1], config)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr,
                           weight_decay=config.weight_decay)
    gen = torch.Generator().manual_seed(seed)
    history: list[float] = []
    model.train()
    for _ in range(config.epochs):
        neg = _sample_negatives(len(order),
                                len(pairs) * config.negatives_per_positive,
                                edge_set, gen)
        opt.zero_grad()
        z = model(x, adj)
        loss = link_prediction_loss(z, pos, neg)
        loss.backward()
        opt.step()
        history.append(float(loss.item()))
        w = config.plateau_window
        if len(history) >= 2 * w:
            recent = sum(history[-w:]) / w
            prev = sum(history[-2 * w:-w]) / w
            if prev - recent < config.plateau_tol:
                break
    model.eval()
    return model, history


def embed_all(model: SageModel, graph: PromotionGraph,
              features: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    order = _node_order(graph)
    model.eval()
    with torch.no_grad():
        z = model(_feature_matrix(order, features), mean_adjacency(graph, order))
    table = {v: z[i].numpy().copy() for i, v in enumerate(order)}
    assert all(np.all(np.isfinite(vec)) for vec in table.values())
    return table


def aggregate(model: SageModel, graph: PromotionGraph,
              features: dict[str, np.ndarray], node: str) -> np.ndarray:
    if node not in graph.nodes:
        raise NodeNotFoundError(node)
    return embed_all(model, graph, features)[node]
