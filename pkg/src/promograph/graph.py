"""App promotion graph: nodes are apps, edges are observed promotion ads.

Also hosts the pure graph algorithms (hop reachability, PageRank) that the
statistics and path-inference stages reuse.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

from .errors import EmptyGraphError, SelfPromotionError

_PACKAGE_RE = re.compile(r"^[A-Za-z0-9_.]+$")


def is_valid_package(package: str) -> bool:
    return bool(package) and "." in package and _PACKAGE_RE.match(package) is not None


def validate_package(package: str) -> str:
    if not is_valid_package(package):
        raise ValueError(f"invalid package name: {package!r}")
    return package


class AppClass(Enum):
    BENIGN = "benign"
    PUA = "pua"
    MALWARE = "malware"
    UNKNOWN = "unknown"


class AdKind(Enum):
    INHERENT = "inherent"
    POPUP = "popup"
    CUSTOM = "custom"


@dataclass(frozen=True)
class PromotionEdge:
    src: str
    dst: str
    ad_kind: AdKind
    epoch: int = 0
    click_trace: tuple[str, ...] = ()

    def __post_init__(self):
        if self.src == self.dst:
            raise SelfPromotionError(f"{self.src} promotes itself")


@dataclass
class NodeInfo:
    app_class: AppClass = AppClass.UNKNOWN
    record_ref: Optional[str] = None


@dataclass
class PromotionGraph:
    """Directed multigraph of app promotions.

    Edges are observation-level: the same (src, dst) pair may repeat across
    epochs or ad kinds, but is stored once per (epoch, ad_kind). Construction
    is single-writer; treat instances as immutable once built.
    """

    nodes: dict[str, NodeInfo] = field(default_factory=dict)
    edges: list[PromotionEdge] = field(default_factory=list)
    _seen: set[tuple[str, str, AdKind, int]] = field(default_factory=set, repr=False)

    def add_node(self, app_id: str, app_class: AppClass = AppClass.UNKNOWN,
                 record_ref: Optional[str] = None) -> None:
        validate_package(app_id)
        info = self.nodes.get(app_id)
        if info is None:
            self.nodes[app_id] = NodeInfo(app_class, record_ref)
        else:
            if app_class is not AppClass.UNKNOWN:
                info.app_class = app_class
            if record_ref is not None:
                info.record_ref = record_ref

    def out_neighbors(self, app_id: str) -> list[str]:
        return sorted({e.dst for e in self.edges if e.src == app_id})

    def unique_pairs(self) -> list[tuple[str, str]]:
        return sorted({(e.src, e.dst) for e in self.edges})

    def adjacency(self) -> dict[str, list[str]]:
        adj: dict[str, list[str]] = {n: [] for n in self.nodes}
        seen: set[tuple[str, str]] = set()
        for e in self.edges:
            if (e.src, e.dst) not in seen:
                seen.add((e.src, e.dst))
                adj[e.src].append(e.dst)
        for lst in adj.values():
            lst.sort()
        return adj

    def node_class(self, app_id: str) -> AppClass:
        return self.nodes[app_id].app_class


def add_promotion(graph: PromotionGraph, edge: PromotionEdge) -> PromotionGraph:
    """Add an observed promotion, auto-registering unknown endpoints.

    Within one (epoch, ad_kind) a (src, dst) pair is kept once; repeats across
    epochs are separate observations.
    """
    if edge.src == edge.dst:
        raise SelfPromotionError(f"{edge.src} promotes itself")
    for endpoint in (edge.src, edge.dst):
        if endpoint not in graph.nodes:
            graph.add_node(endpoint)
    key = (edge.src, edge.dst, edge.ad_kind, edge.epoch)
    if key not in graph._seen:
        graph._seen.add(key)
        graph.edges.append(edge)
    return graph


def hop_pairs(graph: PromotionGraph, max_hop: int) -> set[tuple[str, str, int]]:
    """All ordered (src, dst, min_hop) pairs with min_hop <= max_hop, src != dst."""
    if max_hop < 1:
        raise ValueError("max_hop must be >= 1")
    adj = graph.adjacency()
    pairs: set[tuple[str, str, int]] = set()
    for src in graph.nodes:
        dist = {src: 0}
        q = deque([src])
        while q:
            cur = q.popleft()
            if dist[cur] >= max_hop:
                continue
            for nxt in adj[cur]:
                if nxt not in dist:
                    dist[nxt] = dist[cur] + 1
                    pairs.add((src, nxt, dist[nxt]))
                    q.append(nxt)
    return pairs


def pagerank(adjacency: Mapping[str, Sequence[str]], damping: float = 0.85,
             eps: float = 1e-8, max_iter: int = 100) -> dict[str, float]:
    """Power-iteration PageRank over a directed adjacency map.

    Dangling mass is redistributed uniformly. Scores sum to 1 within eps (L1).
    """
    if not 0.0 < damping < 1.0:
        raise ValueError("damping must be in (0, 1)")
    nodes = sorted(set(adjacency) | {v for vs in adjacency.values() for v in vs})
    if not nodes:
        raise EmptyGraphError("pagerank of an empty graph")
    n = len(nodes)
    index = {v: i for i, v in enumerate(nodes)}
    out: list[list[int]] = [[] for _ in range(n)]
    for src, dsts in adjacency.items():
        out[index[src]] = [index[d] for d in dsts]
    score = [1.0 / n] * n
    for _ in range(max_iter):
        nxt = [(1.0 - damping) / n] * n
        dangling = 0.0
        for i in range(n):
            if out[i]:
                share = damping * score[i] / len(out[i])
                for j in out[i]:
                    nxt[j] += share
            else:
                dangling += score[i]
        if dangling:
            spread = damping * dangling / n
            nxt = [x + spread for x in nxt]
        delta = sum(abs(a - b) for a, b in zip(nxt, score))
        score = nxt
        if delta < eps:
            break
    return {v: score[index[v]] for v in nodes}
