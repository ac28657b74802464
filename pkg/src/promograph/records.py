"""Offline per-app records: market metadata, VirusTotal reports, code attributes.

All external services are modeled as pre-fetched JSONL files; a thin fetcher
interface is declared but only the file-backed implementation ships.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol

from .errors import IoError, NoReportsError, ParseError, SnapshotVersionError
from .graph import (AdKind, AppClass, PromotionEdge, PromotionGraph,
                    add_promotion)

SNAPSHOT_VERSION = 1

MALWARE_FLAG_THRESHOLD = 10  # flagged by at least this many engines


@dataclass(frozen=True)
class VtReport:
    sha: str
    timestamp: int  # UTC epoch seconds
    flags: int
    engine_verdicts: dict[str, bool] = field(default_factory=dict)
    urls: tuple[str, ...] = ()


@dataclass(frozen=True)
class MarketRecord:
    app_name: str = ""
    developer_name: str = ""
    description: str = ""
    reviews: int = 0
    downloads: int = 0
    star: float = 0.0
    rating: str = ""
    category: str = ""


@dataclass(frozen=True)
class CodeRecord:
    manifest_components: tuple[tuple[str, str], ...] = ()  # (kind, name)
    api_call_sequence: tuple[str, ...] = ()
    signature: str = ""


@dataclass
class AppRecordBundle:
    app_id: str
    market: Optional[MarketRecord] = None
    vt: list[VtReport] = field(default_factory=list)
    code: Optional[CodeRecord] = None

    def __post_init__(self):
        self.vt.sort(key=lambda r: r.timestamp, reverse=True)


class RecordFetcher(Protocol):
    """Hook for live-market/VT integrations; only files are implemented here."""

    def fetch(self, app_id: str) -> Optional[AppRecordBundle]: ...


def _bundle_from_obj(obj: dict) -> AppRecordBundle:
    market = None
    if obj.get("market") is not None:
        m = obj["market"]
        market = MarketRecord(
            app_name=m.get("appName", ""),
            developer_name=m.get("developerName", ""),
            description=m.get("description", ""),
            reviews=int(m.get("reviews", 0)),
            downloads=int(m.get("downloads", 0)),
            star=float(m.get("star", 0.0)),
            rating=m.get("rating", ""),
            category=m.get("category", ""),
        )
    vt = [
        VtReport(
            sha=r["sha"],
            timestamp=int(r["timestamp"]),
            flags=int(r["flags"]),
            engine_verdicts={k: bool(v) for k, v in r.get("engineVerdicts", {}).items()},
            urls=tuple(r.get("urls", [])),
        )
        for r in obj.get("vt", [])
    ]
    code = None
    if obj.get("code") is not None:
        c = obj["code"]
        code = CodeRecord(
            manifest_components=tuple((k, n) for k, n in c.get("manifestComponents", [])),
            api_call_sequence=tuple(c.get("apiCallSequence", [])),
            signature=c.get("signature", ""),
        )
    return AppRecordBundle(app_id=obj["appId"], market=market, vt=vt, code=code)


def _bundle_to_obj(b: AppRecordBundle) -> dict:
    obj: dict = {"appId": b.app_id, "market": None, "vt": [], "code": None}
    if b.market is not None:
        m = b.market
        obj["market"] = {
            "appName": m.app_name, "developerName": m.developer_name,
            "description": m.description, "reviews": m.reviews,
            "downloads": m.downloads, "star": m.star,
            "rating": m.rating, "category": m.category,
        }
    obj["vt"] = [
        {"sha": r.sha, "timestamp": r.timestamp, "flags": r.flags,
         "engineVerdicts": r.engine_verdicts, "urls": list(r.urls)}
        for r in b.vt
    ]
    if b.code is not None:
        obj["code"] = {
            "manifestComponents": [list(c) for c in b.code.manifest_components],
            "apiCallSequence": list(b.code.api_call_sequence),
            "signature": b.code.signature,
        }
    return obj


def load_records(path: str) -> dict[str, AppRecordBundle]:
    """Load a JSONL record store, one AppRecordBundle per line."""
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    store: dict[str, AppRecordBundle] = {}
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                bundle = _bundle_from_obj(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(lineno, str(exc)) from exc
            store[bundle.app_id] = bundle
    return store


def save_records(store: dict[str, AppRecordBundle], path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for app_id in sorted(store):
                fh.write(json.dumps(_bundle_to_obj(store[app_id]), sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def select_sha(reports: list[VtReport]) -> VtReport:
    """Pick the report to label from: among the five most recent, the one
    with the most flags; ties broken by newer timestamp."""
    if not reports:
        raise NoReportsError("no VirusTotal reports")
    recent = sorted(reports, key=lambda r: r.timestamp, reverse=True)[:5]
    return max(recent, key=lambda r: (r.flags, r.timestamp))


def derive_label(report: Optional[VtReport]) -> AppClass:
    if report is None:
        return AppClass.UNKNOWN
    if report.flags >= MALWARE_FLAG_THRESHOLD:
        return AppClass.MALWARE
    if report.flags >= 1:
        return AppClass.PUA
    return AppClass.BENIGN


def label_bundle(bundle: Optional[AppRecordBundle]) -> AppClass:
    if bundle is None or not bundle.vt:
        return AppClass.UNKNOWN
    return derive_label(select_sha(bundle.vt))


def assemble_graph(records: dict[str, AppRecordBundle],
                   ad_events: Iterable[PromotionEdge]) -> PromotionGraph:
    """Build the promotion graph from observed ad events plus record labels.

    Only ad-connected apps enter the graph; record-bearing apps without any
    promotion involvement are omitted.
    """
    graph = PromotionGraph()
    for edge in ad_events:
        add_promotion(graph, edge)
    for app_id, info in graph.nodes.items():
        bundle = records.get(app_id)
        info.app_class = label_bundle(bundle)
        info.record_ref = app_id if bundle is not None else None
    return graph


def save_snapshot(graph: PromotionGraph, path: str) -> None:
    """Persist a graph snapshot directory: meta.json, nodes.jsonl, edges.jsonl."""
    try:
        os.makedirs(path, exist_ok=True)
        with open(os.path.join(path, "meta.json"), "w", encoding="utf-8") as fh:
            json.dump({"version": SNAPSHOT_VERSION}, fh)
        with open(os.path.join(path, "nodes.jsonl"), "w", encoding="utf-8") as fh:
            for app_id in sorted(graph.nodes):
                info = graph.nodes[app_id]
                fh.write(json.dumps({"package": app_id,
                                     "class": info.app_class.value,
                                     "recordRef": info.record_ref}) + "\n")
        with open(os.path.join(path, "edges.jsonl"), "w", encoding="utf-8") as fh:
            for e in graph.edges:
                fh.write(json.dumps({"src": e.src, "dst": e.dst,
                                     "adKind": e.ad_kind.value, "epoch": e.epoch,
                                     "clickTrace": list(e.click_trace)}) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_snapshot(path: str) -> PromotionGraph:
    try:
        with open(os.path.join(path, "meta.json"), "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(1, str(exc)) from exc
    if meta.get("version") != SNAPSHOT_VERSION:
        raise SnapshotVersionError(f"snapshot version {meta.get('version')!r}, "
                                   f"expected {SNAPSHOT_VERSION}")
    graph = PromotionGraph()
    try:
        with open(os.path.join(path, "nodes.jsonl"), "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    graph.add_node(obj["package"], AppClass(obj["class"]),
                                   obj.get("recordRef"))
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    raise ParseError(lineno, str(exc)) from exc
        with open(os.path.join(path, "edges.jsonl"), "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    edge = PromotionEdge(obj["src"], obj["dst"],
                                         AdKind(obj["adKind"]), int(obj["epoch"]),
                                         tuple(obj.get("clickTrace", [])))
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    raise ParseError(lineno, str(exc)) from exc
                add_promotion(graph, edge)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return graph
