"""Seeded synthetic benchmarks.

Generates class-conditioned app record bundles, homophilous promotion
graphs for the detection benchmark, and a rule-based promotion inference
graph where promote-app links follow shared-signature / shared-URL rules.
All generators are deterministic in (config, seed).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .adsim import SimConfig
from .features import API_FAMILIES
from .graph import (AdKind, AppClass, PromotionEdge, PromotionGraph,
                    add_promotion)
from .pig import K_APP, K_SIG, K_URL, Pig, R_PROMOTE, R_SIG, R_URL, entity_id
from .records import (AppRecordBundle, CodeRecord, MarketRecord, VtReport,
                      label_bundle)

_WORDS_COMMON = ["app", "tool", "photo", "video", "game", "music", "chat",
                 "fast", "pro", "lite", "plus", "smart", "mobile", "daily"]
_WORDS_BENIGN = ["calendar", "notes", "weather", "fitness", "recipe",
                 "learning", "budget", "travel"]
_WORDS_BAD = ["cleaner", "booster", "battery", "saver", "free", "coins",
              "lucky", "spin", "reward", "cash"]

_ENGINES = [f"engine{i:02d}" for i in range(40)]
_RATINGS = ["Everyone", "Teen", "Mature"]
_CATEGORIES = ["Tools", "Games", "Social", "Finance", "Media"]

_COMPONENTS_COMMON = [("activity", "MainActivity"), ("service", "SyncService"),
                      ("receiver", "BootReceiver"), ("permission", "INTERNET")]
_COMPONENTS_BAD = [("activity", "AdWallActivity"), ("service", "PushAdService"),
                   ("receiver", "InstallReferrerReceiver"),
                   ("permission", "SYSTEM_ALERT_WINDOW")]


@dataclass
class RecordSynthConfig:
    missing_record_fraction: float = 0.1
    signature_cluster_size: int = 3
    feature_strength: float = 0.5  # 0 = pure noise, 1 = fully separable


def synth_records(classes: dict[str, str], seed: int,
                  config: RecordSynthConfig = RecordSynthConfig()
                  ) -> dict[str, AppRecordBundle]:
    """Record bundles whose attributes correlate with the app class only
    partially, so node features alone do not solve detection."""
    rng = random.Random(f"records:{seed}")
    apps = sorted(classes)
    # apps share developer signatures in small clusters within their own
    # class, so sharing per se does not reveal the class
    signatures: dict[str, str] = {}
    for group in (
            [a for a in apps if classes[a] in ("pua", "malware")],
            [a for a in apps if classes[a] == "benign"]):
        cluster: list[str] = []
        for a in group:
            cluster.append(a)
            if len(cluster) == config.signature_cluster_size:
                sig = f"sig{rng.randrange(16**8):08x}"
                for m in cluster:
                    signatures[m] = sig
                cluster = []
        for m in cluster:
            signatures[m] = f"sig{rng.randrange(16**8):08x}"

    shared_urls = [f"http://ads{i}.example.net/serve" for i in range(8)]
    out: dict[str, AppRecordBundle] = {}
    for a in apps:
        cls = classes[a]
        if rng.random() < config.missing_record_fraction:
            out[a] = AppRecordBundle(app_id=a)  # never scanned
            continue
        bad = cls in ("pua", "malware")
        strength = config.feature_strength
        own = _WORDS_BAD if bad else _WORDS_BENIGN
        other = _WORDS_BENIGN if bad else _WORDS_BAD
        pool = (_WORDS_COMMON * 2 + other
                + own * (1 + round(2 * strength)))
        name = " ".join(rng.choice(pool) for _ in range(2))
        desc = " ".join(rng.choice(pool) for _ in range(12))
        downloads = int(10 ** (rng.uniform(2, 7) - strength * bad))
        market = MarketRecord(
            app_name=name, developer_name=f"dev {rng.randrange(40)}",
            description=desc, reviews=rng.randrange(0, 5000),
            downloads=downloads, star=round(rng.uniform(1.5, 5.0), 1),
            rating=rng.choice(_RATINGS), category=rng.choice(_CATEGORIES))
        if cls == "malware":
            flags = rng.randint(10, 35)
        elif cls == "pua":
            flags = rng.randint(1, 9)
        else:
            flags = 0
        verdicts = {e: False for e in _ENGINES}
        for e in rng.sample(_ENGINES, flags):
            verdicts[e] = True
        urls = []
        if bad and rng.random() < 0.7:
            urls.append(rng.choice(shared_urls))
        if rng.random() < 0.3:
            urls.append(f"http://site{rng.randrange(100)}.example.com/")
        vt = [VtReport(sha=f"{rng.randrange(16**12):012x}",
                       timestamp=1_700_000_000 + rng.randrange(10**6),
                       flags=flags, engine_verdicts=verdicts, urls=tuple(urls))]
        components = rng.sample(_COMPONENTS_COMMON, 2)
        p_adware = (0.2 + 0.6 * strength) if bad else 0.2
        if rng.random() < p_adware:
            components += rng.sample(_COMPONENTS_BAD, 2)
        seq_pool = list(API_FAMILIES)
        favored = ("ads", "network", "reflection") if bad else ("ui", "storage")
        weights = [1.0 + 2.0 * strength if f in favored else 1.0
                   for f in seq_pool]
        seq = tuple(rng.choices(seq_pool, weights=weights,
                                k=rng.randint(10, 40)))
        code = CodeRecord(manifest_components=tuple(components),
                          api_call_sequence=seq, signature=signatures[a])
        out[a] = AppRecordBundle(app_id=a, market=market, vt=[*vt], code=code)
    return out


@dataclass
class DetectionBenchConfig:
    app_count: int = 110
    malicious_fraction: float = 0.45
    homophily: float = 0.6        # P(dst malicious | src malicious)
    background: float = 0.2       # P(dst malicious | src benign)
    mean_out_degree: float = 6.0
    records: RecordSynthConfig = field(
        default_factory=lambda: RecordSynthConfig(missing_record_fraction=0.0,
                                                  feature_strength=0.2))


def build_detection_benchmark(config: DetectionBenchConfig, seed: int
                              ) -> tuple[PromotionGraph, dict[str, AppRecordBundle]]:
    """Homophilous promotion graph plus partially informative records."""
    rng = random.Random(f"detbench:{seed}")
    apps = [f"com.bench.app{i:04d}" for i in range(config.app_count)]
    classes: dict[str, str] = {}
    for a in apps:
        if rng.random() < config.malicious_fraction:
            classes[a] = "malware" if rng.random() < 0.4 else "pua"
        else:
            classes[a] = "benign"
    bad = [a for a in apps if classes[a] != "benign"]
    good = [a for a in apps if classes[a] == "benign"]
    graph = PromotionGraph()
    for src in apps:
        p_bad = config.homophily if classes[src] != "benign" else config.background
        degree = 1 + int(rng.expovariate(1.0 / max(config.mean_out_degree - 1, 0.5)))
        for _ in range(degree):
            dst_pool = bad if (bad and rng.random() < p_bad) else good
            dst = rng.choice(dst_pool)
            if dst == src:
                continue
            add_promotion(graph, PromotionEdge(src, dst, AdKind.INHERENT, 0))
    records = synth_records(classes, seed, config.records)
    for app_id, info in graph.nodes.items():
        info.app_class = label_bundle(records.get(app_id))
        info.record_ref = app_id if app_id in records else None
    return graph, records


@dataclass
class PigBenchConfig:
    app_count: int = 150
    sig_group_count: int = 25
    url_group_count: int = 25
    promote_per_rule_pair: float = 0.7  # fraction of implied pairs realized


def build_rule_pig(config: PigBenchConfig, seed: int) -> Pig:
    """Rule-based PIG: promote-app(a, b) holds (for a sampled subset) exactly
    when a and b share a signature or share a URL."""
    rng = random.Random(f"pigbench:{seed}")
    apps = [f"com.pig.app{i:03d}" for i in range(config.app_count)]
    pig = Pig()
    sig_of: dict[str, str] = {}
    urls_of: dict[str, list[str]] = {a: [] for a in apps}
    for a in apps:
        sig = f"s{rng.randrange(config.sig_group_count):02d}"
        sig_of[a] = sig
        pig.add(entity_id(K_APP, a), R_SIG, entity_id(K_SIG, sig))
        for u in rng.sample(range(config.url_group_count),
                            rng.randint(1, 2)):
            url = f"http://u{u:02d}.example.net/"
            urls_of[a].append(url)
            pig.add(entity_id(K_APP, a), R_URL, entity_id(K_URL, url))
    for i, a in enumerate(apps):
        for b in apps:
            if a == b:
                continue
            share_sig = sig_of[a] == sig_of[b]
            share_url = bool(set(urls_of[a]) & set(urls_of[b]))
            if (share_sig or share_url) and rng.random() < config.promote_per_rule_pair:
                pig.add(entity_id(K_APP, a), R_PROMOTE, entity_id(K_APP, b))
    return pig


def explorer_benchmark_config() -> SimConfig:
    """50-app simulator benchmark with rotating pools and a meaningful share
    of ad units behind navigation."""
    return SimConfig(app_count=50, screens_per_app=6, inherent_units=1,
                     popup_units=1, custom_units=1, pool_size=4,
                     served_per_epoch=2, homophily=0.5,
                     deep_unit_fraction=0.45, fillers_per_screen=6)
