"""Promotion inference graph: entity/relation triples derived from the
promotion graph and per-app records.

Nine relations connect apps, signatures, manifest components, URLs,
categories, security engines, and developers. Every edge is traversable in
both directions; the reverse direction uses the relation name with an
``_inv`` suffix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .graph import PromotionGraph
from .records import AppRecordBundle, select_sha

log = logging.getLogger(__name__)

R_PROMOTE = "promote-app"
R_SIG = "has-sig"
R_MANIFEST = "has-manifest"
R_URL = "access-URL"
R_CATEGORY = "isin-category"
R_VTFLAG = "VT-flag"
R_CREATE = "create-app"
R_DEVCAT = "develop-category"
R_DEVURL = "use-URL"

RELATIONS = (R_PROMOTE, R_SIG, R_MANIFEST, R_URL, R_CATEGORY,
             R_VTFLAG, R_CREATE, R_DEVCAT, R_DEVURL)

INV_SUFFIX = "_inv"

# entity kind tags
K_APP = "app"
K_SIG = "signature"
K_COMPONENT = "manifest-component"
K_URL = "url"
K_CATEGORY = "category"
K_ENGINE = "engine"
K_DEVELOPER = "developer"

_KIND_PREFIX = {
    K_APP: "app:", K_SIG: "sig:", K_COMPONENT: "cmp:", K_URL: "url:",
    K_CATEGORY: "cat:", K_ENGINE: "eng:", K_DEVELOPER: "dev:",
}


def entity_id(kind: str, name: str) -> str:
    return _KIND_PREFIX[kind] + name


def entity_kind(entity: str) -> str:
    prefix = entity.split(":", 1)[0] + ":"
    for kind, p in _KIND_PREFIX.items():
        if p == prefix:
            return kind
    raise ValueError(f"unknown entity namespace: {entity!r}")


@dataclass(frozen=True)
class PigTriple:
    head: str
    relation: str
    tail: str

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation: {self.relation!r}")


@dataclass
class Pig:
    entities: dict[str, str] = field(default_factory=dict)  # entity -> kind
    triples: set[PigTriple] = field(default_factory=set)

    def add(self, head: str, relation: str, tail: str) -> None:
        self.triples.add(PigTriple(head, relation, tail))
        self.entities.setdefault(head, entity_kind(head))
        self.entities.setdefault(tail, entity_kind(tail))

    def has(self, head: str, relation: str, tail: str) -> bool:
        return PigTriple(head, relation, tail) in self.triples

    def adjacency(self) -> dict[str, list[tuple[str, str]]]:
        """Bidirectional traversal view: entity -> sorted (relation, neighbor)
        moves, inverse edges carrying the ``_inv`` relation suffix."""
        adj: dict[str, set[tuple[str, str]]] = {e: set() for e in self.entities}
        for t in self.triples:
            adj[t.head].add((t.relation, t.tail))
            adj[t.tail].add((t.relation + INV_SUFFIX, t.head))
        return {e: sorted(moves) for e, moves in adj.items()}

    def undirected_neighbors(self) -> dict[str, list[str]]:
        adj: dict[str, set[str]] = {e: set() for e in self.entities}
        for t in self.triples:
            adj[t.head].add(t.tail)
            adj[t.tail].add(t.head)
        return {e: sorted(ns) for e, ns in adj.items()}


def build_pig(graph: PromotionGraph,
              records: dict[str, AppRecordBundle]) -> Pig:
    """Expand the promotion graph into the triple store.

    Apps without a record bundle contribute only promote-app triples; a
    warning is logged for labeled nodes that are missing one.
    """
    pig = Pig()
    for app_id in graph.nodes:
        pig.entities.setdefault(entity_id(K_APP, app_id), K_APP)
    for src, dst in graph.unique_pairs():
        pig.add(entity_id(K_APP, src), R_PROMOTE, entity_id(K_APP, dst))
    for app_id in sorted(graph.nodes):
        bundle = records.get(app_id)
        if bundle is None:
            if graph.nodes[app_id].record_ref is not None:
                log.warning("no record bundle for %s; only promote-app triples", app_id)
            continue
        app = entity_id(K_APP, app_id)
        urls: list[str] = []
        if bundle.vt:
            report = select_sha(bundle.vt)
            urls = list(dict.fromkeys(report.urls))
            for url in urls:
                pig.add(app, R_URL, entity_id(K_URL, url))
            for engine, flagged in sorted(report.engine_verdicts.items()):
                if flagged:
                    pig.add(entity_id(K_ENGINE, engine), R_VTFLAG, app)
        if bundle.code is not None:
            if bundle.code.signature:
                pig.add(app, R_SIG, entity_id(K_SIG, bundle.code.signature))
            for kind, name in bundle.code.manifest_components:
                pig.add(app, R_MANIFEST, entity_id(K_COMPONENT, f"{kind}/{name}"))
        if bundle.market is not None and bundle.market.category:
            pig.add(app, R_CATEGORY, entity_id(K_CATEGORY, bundle.market.category))
        if bundle.market is not None and bundle.market.developer_name:
            dev = entity_id(K_DEVELOPER, bundle.market.developer_name)
            pig.add(dev, R_CREATE, app)
            if bundle.market.category:
                pig.add(dev, R_DEVCAT, entity_id(K_CATEGORY, bundle.market.category))
            for url in urls:
                pig.add(dev, R_DEVURL, entity_id(K_URL, url))
    return pig


def export_triples(pig: Pig, path: str) -> None:
    """Tab-separated head<TAB>relation<TAB>tail, UTF-8, one triple per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in sorted(pig.triples, key=lambda t: (t.head, t.relation, t.tail)):
            fh.write(f"{t.head}\t{t.relation}\t{t.tail}\n")


def load_triples(path: str) -> Pig:
    pig = Pig()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            head, relation, tail = line.split("\t")
            pig.add(head, relation, tail)
    return pig
