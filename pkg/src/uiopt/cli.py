"""Command line entry point: ``uiopt <command> [options]``.

Exit codes: 0 success, 1 configuration error, 2 stage failure (stage named
on stderr).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from uiopt import clustering, features, fsm, fuzzy, optimizer, pipeline
from uiopt.classifier import train as train_classifier
from uiopt.ingest import export_normalized, extract_raw_matrix, minmax_normalize, parse_session_files
from uiopt.pipeline import ConfigError, PipelineConfig, StageError
from uiopt.synthetic import generate_synthetic_sessions, read_truth

logger = logging.getLogger("uiopt")


def _config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out_dir = str(args.out)
    if getattr(args, "profile", None):
        try:
            cfg.profile = json.loads(Path(args.profile).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read profile {args.profile}: {exc}") from exc
    cfg.validate()
    return cfg


def _out(args: argparse.Namespace) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _records(paths: Sequence[str]):
    for p in paths:
        if not Path(p).exists():
            raise ConfigError(f"path does not exist: {p}")
    parsed = parse_session_files(paths)
    if parsed.skipped:
        logger.warning("skipped %d malformed or duplicate sessions", parsed.skipped)
    return parsed.records


def cmd_generate(args: argparse.Namespace) -> None:
    cfg = _config(args)
    ds = generate_synthetic_sessions(cfg.synthetic_profile())
    out = _out(args)
    ds.write(out / "sessions.jsonl", out / "truth.jsonl")
    print(f"wrote {len(ds.records)} sessions to {out / 'sessions.jsonl'}")


def cmd_ingest(args: argparse.Namespace) -> None:
    records = _records(args.sessions)
    out = _out(args)
    raw = extract_raw_matrix(records)
    export_normalized(minmax_normalize(raw), out / "raw_normalized.csv")
    features.export_features(features.extract_features(records), out / "features.csv")
    print(f"ingested {len(records)} sessions")


def cmd_cluster(args: argparse.Namespace) -> None:
    ids, matrix = features.load_features(args.features)
    points = matrix * features.grouping_weights()
    if args.min_cluster_size is not None:
        params = clustering.ClusterParams(args.min_cluster_size, args.min_samples or args.min_cluster_size)
    else:
        params = clustering.persistence_select_params(points)
    hierarchy, result = clustering.cluster(points, params, features=matrix)
    out = _out(args)
    clustering.export_clusters(ids, result, out / "clusters.csv")
    (out / "hierarchy.json").write_text(hierarchy.to_json() + "\n", encoding="utf-8")
    print(f"min_cluster_size={params.min_cluster_size} min_samples={params.min_samples}: {result.n_clusters} clusters, {result.noise_count} noise")


def cmd_assess(args: argparse.Namespace) -> None:
    records = _records(args.sessions)
    machine = fsm.load_machine(args.machine) if args.machine else fsm.default_machine()
    traces = [fsm.trace_session(machine, r) for r in records]
    truth = {t.session_id: t.injected_loops for t in read_truth(args.truth)} if args.truth else None
    result = fsm.assess(traces, machine, outcomes=fsm.session_outcomes(records), ground_truth_loops=truth)
    out = _out(args)
    fsm.write_traces(traces, out / "traces.jsonl")
    (out / "assessment.json").write_text(result.to_json() + "\n", encoding="utf-8")
    print(f"coverage {result.state_coverage_pct:.2f}%  efficiency {result.transition_efficiency_pct:.2f}%")


def _phi(records, cfg: PipelineConfig) -> np.ndarray:
    return np.array([features.compute_uicpi(m, cfg.uicpi()) for m in features.dataset_interaction_metrics(records)])


def cmd_label(args: argparse.Namespace) -> None:
    cfg = _config(args)
    records = _records(args.sessions)
    out = _out(args)
    lines = ["session_id,phi,fuzzified,crisp,label"]
    for r, p in zip(records, _phi(records, cfg)):
        lab = fuzzy.label(float(p), cfg.fuzzy_config())
        lines.append(f"{r.session_id},{p!r},{lab.fuzzified_input!r},{lab.crisp_score!r},{lab.label.value}")
    (out / "labels.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"labeled {len(records)} sessions")


def cmd_train(args: argparse.Namespace) -> None:
    cfg = _config(args)
    records = _records(args.sessions)
    ids, labels = clustering.load_clusters(args.clusters)
    if ids != [r.session_id for r in records]:
        raise ConfigError("cluster file does not match the session log")
    matrix = features.feature_matrix(features.extract_features(records))
    clusters = clustering.BehaviorClusterSet(labels, clustering.summarize_clusters(labels, matrix))
    machine = fsm.load_machine(cfg.machine_path) if cfg.machine_path else fsm.default_machine()
    assessment = fsm.assess([fsm.trace_session(machine, r) for r in records], machine, outcomes=fsm.session_outcomes(records))
    phi = _phi(records, cfg)
    y = np.array([pipeline.SEVERITY_INDEX[fuzzy.label(float(p), cfg.fuzzy_config()).label.value] for p in phi])
    result = train_classifier(pipeline.build_sequences(records, phi, clusters, assessment), y, cfg.train_config())
    out = _out(args)
    result.params.save(out / "model.json")
    (out / "training_log.csv").write_text(result.log_csv(), encoding="utf-8")
    print(f"trained {len(result.log)} epochs, best epoch {result.best_epoch}")


def cmd_optimize(args: argparse.Namespace) -> None:
    cfg = _config(args)
    result = optimizer.optimize(cfg.cost(), cfg.qndsoa_config(), seed=cfg.seed)
    out = _out(args)
    result.write_history(out / "optimizer_history.csv")
    optimizer.write_best(result, out / "best_candidate.json")
    print(result.best_json(), end="")


def cmd_run(args: argparse.Namespace) -> None:
    cfg = _config(args)
    report = pipeline.run_pipeline(cfg)
    print(report.summary_table(), end="")


def cmd_loop(args: argparse.Namespace) -> None:
    cfg = _config(args)
    if args.rounds < 1:
        raise ConfigError("--rounds must be at least 1")
    reports = pipeline.feedback_loop(cfg, args.rounds)
    if cfg.out_dir:
        rows = ["round,mean_uicpi,optimizer_ran"] + [f"{r.round_index},{r.mean_uicpi!r},{r.optimizer_ran}" for r in reports]
        (Path(cfg.out_dir) / "loop.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    for r in reports:
        print(f"round {r.round_index}: mean UICPI {r.mean_uicpi:.4f}  optimizer {'ran' if r.optimizer_ran else 'skipped'}")


def cmd_config(args: argparse.Namespace) -> None:
    cfg = _config(args)
    if args.dump:
        print(json.dumps(cfg.effective_dict(), indent=2, sort_keys=True))
    else:
        print("config OK")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uiopt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, fn, help_text: str, config: bool = True, sessions: bool = False):
        p = sub.add_parser(name, help=help_text)
        if config:
            p.add_argument("--config", metavar="PATH")
            p.add_argument("--seed", type=int, metavar="N")
        p.add_argument("--out", metavar="DIR")
        if sessions:
            p.add_argument("sessions", nargs="+", help="session log files (JSON lines)")
        p.set_defaults(func=fn)
        return p

    p = add("generate", cmd_generate, "write a synthetic session log")
    p.add_argument("--profile", metavar="PATH")
    add("ingest", cmd_ingest, "parse logs, export normalized raw and feature matrices", config=False, sessions=True)
    p = add("cluster", cmd_cluster, "cluster a feature CSV", config=False)
    p.add_argument("features")
    p.add_argument("--min-cluster-size", type=int)
    p.add_argument("--min-samples", type=int)
    p = add("assess", cmd_assess, "replay sessions through the layout machine", config=False, sessions=True)
    p.add_argument("--machine", metavar="PATH")
    p.add_argument("--truth", metavar="PATH", help="ground-truth loop counts from `generate`")
    add("label", cmd_label, "UICPI and fuzzy severity per session", sessions=True)
    p = add("train", cmd_train, "train the sequence classifier", sessions=True)
    p.add_argument("--clusters", required=True, metavar="PATH")
    add("optimize", cmd_optimize, "run the swarm optimizer on the surrogate cost")
    p = add("run", cmd_run, "full pipeline")
    p.add_argument("--profile", metavar="PATH")
    p = add("loop", cmd_loop, "pipeline with feedback rounds")
    p.add_argument("--profile", metavar="PATH")
    p.add_argument("--rounds", type=int, default=3, metavar="N")
    p = add("config", cmd_config, "validate or print the configuration")
    p.add_argument("--dump", action="store_true", help="print the effective config with all defaults")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        print(f"stage failure [{exc.stage}]: {exc.cause}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"stage failure [{args.command}]: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
