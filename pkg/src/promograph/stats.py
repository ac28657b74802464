"""Statistical analyses over promotion graphs.

Hop-k promotion probability tables, Pearson's chi-square association test
(p-value via an in-repo regularized incomplete gamma), temporal snapshot
diffing, and deterministic report emission.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ChiSquareError, IoError
from .graph import AppClass, PromotionGraph, hop_pairs

LABELED_CLASSES = (AppClass.BENIGN, AppClass.PUA, AppClass.MALWARE)


@dataclass
class PromotionStatsTable:
    """Per hop: counts and probabilities per (source class, destination class).

    The probability of a source class promoting a destination class is that
    pair's count divided by the total count over all destination classes for
    the same source."""
    counts: dict[int, dict[tuple[str, str], int]] = field(default_factory=dict)
    probabilities: dict[int, dict[tuple[str, str], float]] = field(default_factory=dict)


def probabilities_from_counts(counts: dict[tuple[str, str], int]
                              ) -> dict[tuple[str, str], float]:
    """Percentage share of each destination class per source class."""
    totals: dict[str, int] = {}
    for (src, _), n in counts.items():
        totals[src] = totals.get(src, 0) + n
    return {pair: (100.0 * n / totals[pair[0]] if totals[pair[0]] else 0.0)
            for pair, n in counts.items()}


def promotion_probabilities(graph: PromotionGraph,
                            max_hop: int = 5) -> PromotionStatsTable:
    """Hop-1 counts are ad observation counts per class pair; hop-k counts
    (k >= 2) are distinct ordered pairs within min-hop <= k. Pairs touching
    Unknown-labeled nodes are dropped."""
    table = PromotionStatsTable()
    hop1: dict[tuple[str, str], int] = {}
    for e in graph.edges:
        s_cls = graph.node_class(e.src)
        d_cls = graph.node_class(e.dst)
        if s_cls is AppClass.UNKNOWN or d_cls is AppClass.UNKNOWN:
            continue
        key = (s_cls.value, d_cls.value)
        hop1[key] = hop1.get(key, 0) + 1
    table.counts[1] = hop1
    table.probabilities[1] = probabilities_from_counts(hop1)
    if max_hop >= 2:
        pairs = hop_pairs(graph, max_hop)
        for k in range(2, max_hop + 1):
            counts: dict[tuple[str, str], int] = {}
            for src, dst, hop in pairs:
                if hop > k:
                    continue
                s_cls = graph.node_class(src)
                d_cls = graph.node_class(dst)
                if s_cls is AppClass.UNKNOWN or d_cls is AppClass.UNKNOWN:
                    continue
                key = (s_cls.value, d_cls.value)
                counts[key] = counts.get(key, 0) + 1
            table.counts[k] = counts
            table.probabilities[k] = probabilities_from_counts(counts)
    return table


# ---------------------------------------------------------------------------
# Chi-square

def _gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x); series / continued
    fraction split at x = a + 1."""
    if x < 0 or a <= 0:
        raise ValueError("invalid arguments")
    if x == 0:
        return 0.0
    lg = math.lgamma(a)
    if x < a + 1.0:
        # series expansion
        term = 1.0 / a
        total = term
        n = a
        for _ in range(500):
            n += 1.0
            term *= x / n
            total += term
            if abs(term) < abs(total) * 1e-15:
                break
        return total * math.exp(-x + a * math.log(x) - lg)
    # Lentz continued fraction for Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 500):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    q = math.exp(-x + a * math.log(x) - lg) * h
    return 1.0 - q


def chi2_sf(stat: float, dof: int) -> float:
    """Survival function of the chi-square distribution."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    return max(0.0, min(1.0, 1.0 - _gamma_p(dof / 2.0, stat / 2.0)))


def chi_square(table: Sequence[Sequence[float]]) -> tuple[float, int, float]:
    """Pearson's chi-square test on an r x c contingency table."""
    rows = len(table)
    cols = len(table[0]) if rows else 0
    if rows < 2 or cols < 2:
        raise ChiSquareError("table must be at least 2x2")
    if any(len(row) != cols for row in table):
        raise ChiSquareError("ragged table")
    if any(v < 0 for row in table for v in row):
        raise ChiSquareError("negative counts")
    row_sums = [sum(row) for row in table]
    col_sums = [sum(table[i][j] for i in range(rows)) for j in range(cols)]
    total = sum(row_sums)
    if total == 0 or any(s == 0 for s in row_sums) or any(s == 0 for s in col_sums):
        raise ChiSquareError("zero marginal sum")
    stat = 0.0
    for i in range(rows):
        for j in range(cols):
            expected = row_sums[i] * col_sums[j] / total
            stat += (table[i][j] - expected) ** 2 / expected
    dof = (rows - 1) * (cols - 1)
    return stat, dof, chi2_sf(stat, dof)


# ---------------------------------------------------------------------------
# Temporal diffing

@dataclass
class TemporalDiff:
    removed_edges: set[tuple[str, str]]
    added_edges: set[tuple[str, str]]
    zero_day_resolved: set[str]   # Unknown at A, labeled at B
    late_detection: set[str]      # Benign at A, PUA or Malware at B


def temporal_diff(snap_a: PromotionGraph, snap_b: PromotionGraph) -> TemporalDiff:
    edges_a = set(snap_a.unique_pairs())
    edges_b = set(snap_b.unique_pairs())
    zero_day: set[str] = set()
    late: set[str] = set()
    for app, info in snap_a.nodes.items():
        if app not in snap_b.nodes:
            continue
        cls_b = snap_b.node_class(app)
        if info.app_class is AppClass.UNKNOWN and cls_b is not AppClass.UNKNOWN:
            zero_day.add(app)
        if info.app_class is AppClass.BENIGN and cls_b in (AppClass.PUA,
                                                           AppClass.MALWARE):
            late.add(app)
    return TemporalDiff(removed_edges=edges_a - edges_b,
                        added_edges=edges_b - edges_a,
                        zero_day_resolved=zero_day, late_detection=late)


# ---------------------------------------------------------------------------
# Report emission

def stats_table_rows(table: PromotionStatsTable) -> list[dict[str, object]]:
    classes = [c.value for c in LABELED_CLASSES]
    rows = []
    for hop in sorted(table.counts):
        for src in classes:
            for dst in classes:
                rows.append({
                    "hop": hop, "src": src, "dst": dst,
                    "count": table.counts[hop].get((src, dst), 0),
                    "probability": round(
                        table.probabilities[hop].get((src, dst), 0.0), 4),
                })
    return rows


def emit_report(rows: Iterable[dict[str, object]], path: str,
                fmt: str = "json") -> None:
    """Write rows with a stable field order; identical inputs produce
    byte-identical files."""
    rows = list(rows)
    try:
        if fmt == "json":
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(rows, fh, sort_keys=True, indent=1)
                fh.write("\n")
        elif fmt == "csv":
            fieldnames = sorted({k for row in rows for k in row})
            with open(path, "w", encoding="utf-8", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=fieldnames)
                writer.writeheader()
                for row in rows:
                    writer.writerow(row)
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise IoError(str(exc)) from exc
