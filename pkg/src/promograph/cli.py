"""Command line entry point.

Subcommands cover each pipeline stage plus an end-to-end `pipeline` run.
Exit codes: 0 success, 2 configuration error, 3 data error. Logs go to
stderr; artifacts to the chosen output directory. Metric artifacts never
embed wall-clock time, so a rerun with the same config and seed is
byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields, is_dataclass
from typing import Any, Optional

import numpy as np

from . import adsim, benchmarks, detect, embed, explorer, features, pathinfer
from . import pig as pig_mod
from . import records as records_mod
from . import stats as stats_mod
from .errors import ConfigError, PromographError
from .graph import AppClass

log = logging.getLogger("promograph")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


# --------------------------------------------------------------------------
# configuration


@dataclasses.dataclass
class ExploreConfig:
    strategy: str = "dfs"           # dfs | bfs | random
    budget: int = 200
    no_new_limit: int = 3
    max_restarts: int = 20
    session_budget: int = 200


@dataclasses.dataclass
class DetectConfig:
    folds: int = 10
    max_vocab: int = 2000


@dataclasses.dataclass
class InferConfig:
    beam_width: int = 32
    prune_limit: int = 256


@dataclasses.dataclass
class PipelineConfig:
    """Desk-scale defaults: small embedding dims, narrow beams, and modest
    tree counts keep a full pipeline run under ten minutes on a laptop."""
    seed: int = 0
    sim: adsim.SimConfig = dataclasses.field(default_factory=adsim.SimConfig)
    records: benchmarks.RecordSynthConfig = dataclasses.field(
        default_factory=benchmarks.RecordSynthConfig)
    bench: benchmarks.DetectionBenchConfig = dataclasses.field(
        default_factory=benchmarks.DetectionBenchConfig)
    explore: ExploreConfig = dataclasses.field(default_factory=ExploreConfig)
    sage: embed.SageConfig = dataclasses.field(
        default_factory=lambda: embed.SageConfig(hidden_dim=32, out_dim=32))
    forest: detect.ForestConfig = dataclasses.field(
        default_factory=lambda: detect.ForestConfig(tree_count=50))
    detect: DetectConfig = dataclasses.field(
        default_factory=lambda: DetectConfig(folds=5))
    kg: pathinfer.KgConfig = dataclasses.field(
        default_factory=lambda: pathinfer.KgConfig(dim=32, epochs=150))
    policy: pathinfer.PolicyConfig = dataclasses.field(
        default_factory=lambda: pathinfer.PolicyConfig(dim=32, epochs=15,
                                                       beam_width=32))
    infer: InferConfig = dataclasses.field(default_factory=InferConfig)


def _apply_section(obj: Any, section: dict[str, Any], path: str) -> None:
    known = {f.name: f for f in fields(obj)}
    for key, value in section.items():
        if key not in known:
            raise ConfigError(f"unknown key '{path}.{key}'")
        current = getattr(obj, key)
        if is_dataclass(current) and isinstance(value, dict):
            _apply_section(current, value, f"{path}.{key}")
        else:
            setattr(obj, key, value)


def load_config(path: Optional[str]) -> PipelineConfig:
    config = PipelineConfig()
    if path is None:
        return config
    try:
        import tomllib  # Python >= 3.11
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad TOML: {exc}") from exc
    _apply_section(config, raw, "")
    return config


# --------------------------------------------------------------------------
# helpers


def _json_default(obj: Any) -> Any:
    if is_dataclass(obj) and not isinstance(obj, type):
        return dataclasses.asdict(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj)!r}")


def write_json(path: str, payload: Any) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=_json_default)
        fh.write("\n")


def _strategy(name: str) -> explorer.Strategy:
    table = {"dfs": explorer.Strategy.AD_ORIENTED_DFS,
             "bfs": explorer.Strategy.BREADTH_FIRST,
             "random": explorer.Strategy.UNIFORM_RANDOM}
    if name not in table:
        raise ConfigError(f"unknown strategy '{name}'")
    return table[name]


def _restart_policy(cfg: ExploreConfig) -> explorer.RestartPolicy:
    return explorer.RestartPolicy(no_new_limit=cfg.no_new_limit,
                                  max_restarts=cfg.max_restarts,
                                  session_budget=cfg.session_budget)


def _load_ecosystem(path: str) -> adsim.SimEcosystem:
    with open(path, "r", encoding="utf-8") as fh:
        return adsim.ecosystem_from_json(fh.read())


# --------------------------------------------------------------------------
# stage runners (shared by per-stage subcommands and `pipeline`)


def stage_explore(eco: adsim.SimEcosystem, config: PipelineConfig,
                  strategy_name: Optional[str] = None):
    strategy = _strategy(strategy_name or config.explore.strategy)
    seeds = sorted(eco.apps)
    graph, logs = explorer.run_campaign(
        eco, seeds, strategy, per_app_budget=config.explore.budget,
        restart_policy=_restart_policy(config.explore), seed=config.seed)
    report = explorer.coverage_report(
        logs, eco.ground_truth(),
        unit_kinds={u.id: u.kind for a in eco.apps.values()
                    for u in a.ad_units.values()})
    return graph, logs, report


def stage_records(config: PipelineConfig
                  ) -> dict[str, records_mod.AppRecordBundle]:
    classes = adsim.sim_app_classes(config.sim, config.seed)
    return benchmarks.synth_records(classes, config.seed, config.records)


def stage_detect(graph, records, config: PipelineConfig, seed: int,
                 ablate: bool = False,
                 node_noise: Optional[detect.MutationSpec] = None,
                 folds: Optional[dict[str, int]] = None) -> detect.CvResult:
    task = detect.DetectionTask(graph=graph, records=records,
                                sage_config=config.sage,
                                forest_config=config.forest,
                                max_vocab=config.detect.max_vocab)
    return detect.cross_validate(task, k=config.detect.folds, seed=seed,
                                 ablate_promotion=ablate,
                                 node_noise=node_noise, folds=folds)


def stage_infer(pig: pig_mod.Pig, config: PipelineConfig, seed: int,
                embeddings: Optional[dict[str, np.ndarray]] = None
                ) -> dict[str, Any]:
    train, valid, test = pathinfer.split_pig(pig, seed)
    kg = pathinfer.train_distmult(train, config.kg, seed,
                                  entities=sorted(pig.entities),
                                  relations=None)
    scores = pathinfer.pig_pagerank(pig)
    pruned = pathinfer.prune_neighbors(pig, scores, config.infer.prune_limit)
    policy, space = pathinfer.train_policy(pig, kg, train, pruned,
                                           config.policy, seed,
                                           embeddings=embeddings)
    known = pathinfer.known_answers([train, valid, test])
    policy_metrics = pathinfer.evaluate(policy, space, test, known,
                                        width=config.infer.beam_width)
    kg_metrics = pathinfer.evaluate_distmult(kg, test, known)
    return {"policy": dataclasses.asdict(policy_metrics),
            "distmult": dataclasses.asdict(kg_metrics),
            "train": len(train), "valid": len(valid), "test": len(test)}


# --------------------------------------------------------------------------
# subcommands


def cmd_gen(args, config: PipelineConfig) -> int:
    eco = adsim.generate_ecosystem(config.sim, config.seed)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(adsim.ecosystem_to_json(eco))
    log.info("ecosystem with %d apps -> %s", len(eco.apps), args.out)
    return EXIT_OK


def cmd_explore(args, config: PipelineConfig) -> int:
    eco = _load_ecosystem(args.eco)
    graph, logs, report = stage_explore(eco, config, args.strategy)
    os.makedirs(args.out, exist_ok=True)
    records_mod.save_snapshot(graph, os.path.join(args.out, "snapshot"))
    write_json(os.path.join(args.out, "coverage.json"),
               dataclasses.asdict(report))
    log.info("%d edges, %d/%d ad units covered", len(graph.edges),
             report.ad_units_found, report.ad_units_total)
    return EXIT_OK


def cmd_graph(args, config: PipelineConfig) -> int:
    records = records_mod.load_records(args.records)
    graph = records_mod.load_snapshot(args.snapshot)
    graph = records_mod.assemble_graph(records, graph.edges)
    records_mod.save_snapshot(graph, args.out)
    log.info("relabeled snapshot -> %s", args.out)
    return EXIT_OK


def cmd_features(args, config: PipelineConfig) -> int:
    records = records_mod.load_records(args.records)
    encoder = features.fit_encoder(sorted(records.values(),
                                          key=lambda b: b.app_id),
                                   max_vocab=config.detect.max_vocab)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(encoder.to_json())
    log.info("encoder dim=%d fingerprint=%s", encoder.dim,
             encoder.fingerprint()[:12])
    return EXIT_OK


def cmd_embed(args, config: PipelineConfig) -> int:
    records = records_mod.load_records(args.records)
    graph = records_mod.load_snapshot(args.snapshot)
    encoder = features.fit_encoder(sorted(records.values(),
                                          key=lambda b: b.app_id),
                                   max_vocab=config.detect.max_vocab)
    vecs = features.encode_all(encoder, sorted(graph.nodes), records)
    model, losses = embed.pretrain(graph, vecs, config.sage, config.seed)
    agg = embed.embed_all(model, graph, vecs)
    order = sorted(agg)
    np.savez(args.out, apps=np.array(order),
             agg=np.stack([agg[a] for a in order]))
    log.info("pretrained %d epochs, final loss %.4f", len(losses), losses[-1])
    return EXIT_OK


def cmd_detect(args, config: PipelineConfig) -> int:
    if args.snapshot:
        graph = records_mod.load_snapshot(args.snapshot)
        records = records_mod.load_records(args.records)
    else:
        graph, records = benchmarks.build_detection_benchmark(
            config.bench, config.seed)
    result = stage_detect(graph, records, config, config.seed,
                          ablate=args.ablate_promotion)
    payload = {"mean_f1": result.mean_f1(), "std_f1": result.std_f1(),
               "folds": [dataclasses.asdict(m) for m in result.fold_metrics],
               "seed": config.seed, "ablate_promotion": args.ablate_promotion}
    write_json(args.out, payload)
    log.info("mean F1 %.2f (ablate=%s)", result.mean_f1(),
             args.ablate_promotion)
    return EXIT_OK


def cmd_pig(args, config: PipelineConfig) -> int:
    records = records_mod.load_records(args.records)
    graph = records_mod.load_snapshot(args.snapshot)
    pig = pig_mod.build_pig(graph, records)
    pig_mod.export_triples(pig, args.out)
    log.info("%d entities, %d triples -> %s", len(pig.entities),
             len(pig.triples), args.out)
    return EXIT_OK


def cmd_infer(args, config: PipelineConfig) -> int:
    pig = pig_mod.load_triples(args.pig)
    payload = stage_infer(pig, config, config.seed)
    payload["seed"] = config.seed
    write_json(args.out, payload)
    log.info("policy Hit@1 %.1f vs DistMult %.1f",
             payload["policy"]["hit_at_1"], payload["distmult"]["hit_at_1"])
    return EXIT_OK


def cmd_stats(args, config: PipelineConfig) -> int:
    graph = records_mod.load_snapshot(args.snapshot)
    table = stats_mod.promotion_probabilities(graph, max_hop=args.max_hop)
    rows = stats_mod.stats_table_rows(table)
    stats_mod.emit_report(rows, args.out, fmt=args.format)
    for row in rows:
        if row["hop"] == 1:
            print(f"{row['src']:>8} -> {row['dst']:<8}"
                  f" {row['count']:>7}  {row['probability']:6.2f}%")
    return EXIT_OK


def cmd_mutate(args, config: PipelineConfig) -> int:
    rates = [float(r) / 100.0 for r in args.rates.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    graph, records = benchmarks.build_detection_benchmark(
        config.bench, config.seed)

    def one(rate: float, seed: int) -> dict[str, Any]:
        if args.kind == "link":
            mutated = detect.mutate_links(graph, rate, seed)
            result = stage_detect(mutated, records, config, seed)
        elif args.kind == "node":
            spec = detect.MutationSpec("node-noise", rate, args.sigma, seed)
            result = stage_detect(graph, records, config, seed,
                                  node_noise=spec)
        else:
            raise ConfigError(f"unknown mutation kind '{args.kind}'")
        return {"kind": args.kind, "rate": rate, "seed": seed,
                "f1": result.mean_f1()}

    jobs = [(r, s) for r in rates for s in seeds]
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        rows = list(pool.map(lambda j: one(*j), jobs))
    rows.sort(key=lambda r: (r["rate"], r["seed"]))
    stats_mod.emit_report(rows, args.out, fmt="csv")
    log.info("%d mutation runs -> %s", len(rows), args.out)
    return EXIT_OK


def cmd_report(args, config: PipelineConfig) -> int:
    manifest_path = os.path.join(args.run, "manifest.json")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    print(json.dumps(manifest, indent=1, sort_keys=True))
    for name in sorted(manifest.get("artifacts", [])):
        print(f"  artifact: {name}")
    return EXIT_OK


def cmd_pipeline(args, config: PipelineConfig) -> int:
    run_dir = args.out or time.strftime("run-%Y%m%d-%H%M%S")
    os.makedirs(run_dir, exist_ok=True)
    artifacts: list[str] = []

    log.info("stage 1/6: simulate + explore")
    eco = adsim.generate_ecosystem(config.sim, config.seed)
    graph, logs, coverage = stage_explore(eco, config)
    write_json(os.path.join(run_dir, "coverage.json"),
               dataclasses.asdict(coverage))
    artifacts.append("coverage.json")

    log.info("stage 2/6: records + graph assembly")
    records = stage_records(config)
    graph = records_mod.assemble_graph(records, graph.edges)
    records_mod.save_snapshot(graph, os.path.join(run_dir, "snapshot"))
    artifacts.append("snapshot")

    log.info("stage 3/6: detection CV (%d labeled nodes, %d edges)",
             sum(1 for n in graph.nodes.values()
                 if n.app_class is not AppClass.UNKNOWN), len(graph.edges))
    bench_graph, bench_records = benchmarks.build_detection_benchmark(
        config.bench, config.seed)
    result = stage_detect(bench_graph, bench_records, config, config.seed)
    ablated = stage_detect(bench_graph, bench_records, config, config.seed,
                           ablate=True)
    write_json(os.path.join(run_dir, "detection.json"),
               {"mean_f1": result.mean_f1(), "std_f1": result.std_f1(),
                "ablated_mean_f1": ablated.mean_f1(),
                "folds": [dataclasses.asdict(m) for m in result.fold_metrics],
                "seed": config.seed})
    artifacts.append("detection.json")

    log.info("stage 4/6: promotion inference graph")
    pig = pig_mod.build_pig(graph, records)
    pig_mod.export_triples(pig, os.path.join(run_dir, "pig.tsv"))
    artifacts.append("pig.tsv")

    log.info("stage 5/6: path inference")
    rule_pig = benchmarks.build_rule_pig(benchmarks.PigBenchConfig(),
                                         config.seed)
    ranking = stage_infer(rule_pig, config, config.seed)
    write_json(os.path.join(run_dir, "ranking.json"), ranking)
    artifacts.append("ranking.json")

    log.info("stage 6/6: promotion statistics")
    table = stats_mod.promotion_probabilities(graph, max_hop=3)
    stats_mod.emit_report(stats_mod.stats_table_rows(table),
                          os.path.join(run_dir, "stats.json"), fmt="json")
    artifacts.append("stats.json")

    write_json(os.path.join(run_dir, "manifest.json"),
               {"seed": config.seed, "artifacts": artifacts,
                "config": dataclasses.asdict(config)})
    log.info("pipeline complete -> %s", run_dir)
    print(f"detection mean F1 {result.mean_f1():.2f} "
          f"(- promotion {ablated.mean_f1():.2f}); "
          f"policy Hit@1 {ranking['policy']['hit_at_1']:.1f} "
          f"vs DistMult {ranking['distmult']['hit_at_1']:.1f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promograph",
        description="app-promotion collection, detection, and inference")
    parser.add_argument("--config", help="TOML pipeline configuration")
    parser.add_argument("--seed", type=int, help="global seed override")
    parser.add_argument("--workers", type=int, default=1,
                        help="parallelism bound (results independent of N)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a simulated app ecosystem")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("explore", help="run an exploration campaign")
    p.add_argument("--eco", required=True)
    p.add_argument("--strategy", choices=["dfs", "bfs", "random"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("graph", help="relabel a snapshot from records")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("features", help="fit the feature encoder")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("embed", help="pretrain graph embeddings")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("detect", help="cross-validated detection")
    p.add_argument("--snapshot")
    p.add_argument("--records")
    p.add_argument("--ablate-promotion", action="store_true",
                   help="zero the aggregated-neighborhood blocks")
    p.add_argument("--out", default="detection.json")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("pig", help="export the promotion inference graph")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pig)

    p = sub.add_parser("infer", help="train and evaluate path inference")
    p.add_argument("--pig", required=True)
    p.add_argument("--out", default="ranking.json")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("stats", help="promotion probability tables")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--max-hop", type=int, default=3)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("mutate", help="robustness sweep over mutation rates")
    p.add_argument("--kind", choices=["link", "node"], required=True)
    p.add_argument("--rates", default="1,5,10,20,30",
                   help="percentages, comma separated")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--out", default="mutation.csv")
    p.set_defaults(func=cmd_mutate)

    p = sub.add_parser("report", help="print a run directory summary")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="end-to-end desk-scale run")
    p.add_argument("--out", help="run directory (default: timestamped)")
    p.set_defaults(func=cmd_pipeline)

    return parser


def run(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr,
                        level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        return args.func(args, config)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (PromographError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
