"""End-to-end orchestration, feedback loop and configuration.

Stage order: ingest, features, clustering, responsiveness assessment, UICPI,
fuzzy labels, classifier, then the optimizer gate. Every stage output is a
JSON-ready dict stamped with the sha256 of its canonical serialization and of
the previous stage's stamp, so a report is byte-identical for the same config.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from uiopt import classifier, clustering, features, fsm, fuzzy, optimizer
from uiopt.ingest import EventKind, SessionRecord, parse_session_files, write_session_log
from uiopt.synthetic import SessionTruth, SyntheticProfile, generate_synthetic_sessions

logger = logging.getLogger(__name__)

INTERVAL_MS = 5000
WINDOW_FEATURES = ("clicks", "scrolls", "pointer_moves", "errors", "mean_latency_ms", "max_scroll_depth")
SEVERITY_INDEX = {s.value: i for i, s in enumerate(fuzzy.Severity)}
# The layout shipped before any optimization round.
BASELINE_CANDIDATE = optimizer.UICandidate(font_size=12.0, theme_mode=0.9, letter_spacing=0.45, text_alignment=3.5)


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    seed: int = 0
    input_paths: list[str] = field(default_factory=list)  # empty: generate from `profile`
    profile: dict[str, Any] = field(default_factory=dict)
    uicpi_weights: dict[str, float] = field(default_factory=lambda: dataclasses.asdict(features.UICPIWeights()))
    fuzzy: dict[str, Any] = field(default_factory=lambda: {"G": 10.0, "J": 0.45, "centroids": [0.15, 0.45, 0.80]})
    machine_path: str | None = None
    cluster_params: dict[str, int] | None = None  # None: persistence search
    classifier: dict[str, Any] = field(default_factory=lambda: {"hidden_size": 16, "max_epochs": 60, "patience": 10})
    optimizer: dict[str, Any] = field(default_factory=dict)
    cost_model: dict[str, float] = field(default_factory=lambda: {"w_js": 0.4, "w_err": 0.3, "w_mem": 0.3})
    gate_fraction: float = 0.5
    feedback_gain: float = 0.3
    out_dir: str | None = None

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        for p in [*self.input_paths, *([self.machine_path] if self.machine_path else [])]:
            if not Path(p).exists():
                raise ConfigError(f"path does not exist: {p}")
        if not 0.0 < self.gate_fraction <= 1.0:
            raise ConfigError("gate_fraction must lie in (0, 1]")
        if not 0.0 <= self.feedback_gain <= 1.0:
            raise ConfigError("feedback_gain must lie in [0, 1]")
        try:
            self.uicpi()
            self.fuzzy_config()
            self.train_config()
            self.qndsoa_config()
            self.cost()
            self.synthetic_profile()
            if self.cluster_params is not None:
                clustering.ClusterParams(**self.cluster_params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def uicpi(self) -> features.UICPIWeights:
        return features.UICPIWeights(**self.uicpi_weights)

    def fuzzy_config(self) -> fuzzy.FuzzyConfig:
        raw = dict(self.fuzzy)
        if "centroids" in raw:
            raw["centroids"] = tuple(raw["centroids"])
        return fuzzy.FuzzyConfig(**raw)

    def train_config(self) -> classifier.TrainConfig:
        return classifier.TrainConfig(**{**self.classifier, "seed": self.seed})

    def qndsoa_config(self) -> optimizer.QndsoaConfig:
        return optimizer.QndsoaConfig(**self.optimizer)

    def cost(self) -> optimizer.CostModel:
        return optimizer.CostModel(**self.cost_model)

    def synthetic_profile(self) -> SyntheticProfile:
        return SyntheticProfile.from_dict({**self.profile, "seed": self.seed})

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def effective_dict(self) -> dict[str, Any]:
        """Like :meth:`to_dict` with every nested default spelled out."""
        d = self.to_dict()
        d["profile"] = {k: v for k, v in self.synthetic_profile().to_dict().items() if k != "seed"}
        d["classifier"] = {k: v for k, v in dataclasses.asdict(self.train_config()).items() if k != "seed"}
        d["optimizer"] = dataclasses.asdict(self.qndsoa_config())
        d["cost_model"] = {k: v for k, v in dataclasses.asdict(self.cost()).items()}
        return d

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> PipelineConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in raw:
            raise ConfigError("config must set a seed")
        return cls(**raw)

    @classmethod
    def load(cls, path: str | Path) -> PipelineConfig:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_of(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


@dataclass
class StageRecord:
    name: str
    output: dict[str, Any]
    input_sha256: str
    sha256: str

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "output": self.output, "input_sha256": self.input_sha256, "sha256": self.sha256}


@dataclass
class PipelineReport:
    round_index: int
    stages: list[StageRecord] = field(default_factory=list)
    optimizer_ran: bool = False
    chosen_candidate: dict[str, Any] | None = None
    mean_uicpi: float = float("nan")
    candidate: optimizer.UICandidate | None = field(default=None, repr=False, compare=False)

    def stage(self, name: str) -> dict[str, Any]:
        for s in self.stages:
            if s.name == name:
                return s.output
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "round": self.round_index,
            "stages": [s.to_dict() for s in self.stages],
            "optimizer_ran": self.optimizer_ran,
            "chosen_candidate": self.chosen_candidate,
            "mean_uicpi": self.mean_uicpi,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def summary_table(self) -> str:
        rows = [("round", str(self.round_index)), ("mean_uicpi", f"{self.mean_uicpi:.4f}")]
        rows.append(("clusters", str(self.stage("clustering")["n_clusters"])))
        a = self.stage("assessment")
        rows.append(("state_coverage_pct", f"{a['state_coverage_pct']:.2f}"))
        rows.append(("transition_efficiency_pct", f"{a['transition_efficiency_pct']:.2f}"))
        rows.append(("labels", ", ".join(f"{k}={v}" for k, v in sorted(self.stage("labels")["distribution"].items()))))
        c = self.stage("classifier")
        rows.append(("classifier_holdout_acc", "n/a" if c["holdout_accuracy"] is None else f"{c['holdout_accuracy']:.4f}"))
        rows.append(("predicted_class", self.stage("gate")["predicted_class"]))
        if self.optimizer_ran and self.chosen_candidate:
            cand = self.chosen_candidate
            rows.append(("ui_candidate", f"{cand['font_size_px']:.2f}px {cand['theme']} {cand['letter_spacing_em']:.3f}em {cand['text_alignment']}"))
        else:
            rows.append(("optimizer", "skipped (predicted class Low)"))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows) + "\n"


def build_sequences(
    records: Sequence[SessionRecord],
    phi: Sequence[float],
    clusters: clustering.BehaviorClusterSet,
    assessment: fsm.CRAssessment,
    interval_ms: int = INTERVAL_MS,
) -> list[classifier.ClassifierInput]:
    """One step per ``interval_ms`` window of each session, all entries in [0, 1].

    Window columns (:data:`WINDOW_FEATURES`) are scaled by their dataset
    maximum. Every step also carries the session context: a one-hot of its
    cluster (all zeros for noise) with that cluster's mean scroll rate and
    click depth, the assessment of its device's layout (task success,
    friction relative to the worst layout, mean ECC weight), and its UICPI.
    """
    labels = clusters.labels
    n_clusters = clusters.n_clusters
    friction_max = max((v.friction_count for v in assessment.per_layout.values()), default=0) or 1
    windows = []
    for rec in records:
        steps = max(1, math.ceil(rec.duration_ms / interval_ms))
        w = np.zeros((steps, len(WINDOW_FEATURES)))
        lat_sum, lat_n = np.zeros(steps), np.zeros(steps)
        for e in rec.events:
            k = min(e.timestamp_ms // interval_ms, steps - 1)
            if e.kind is EventKind.CLICK:
                w[k, 0] += 1
            elif e.kind is EventKind.SCROLL:
                w[k, 1] += 1
            elif e.kind in (EventKind.MOUSE_MOVE, EventKind.TOUCH_GESTURE):
                w[k, 2] += 1
            elif e.kind is EventKind.ERROR:
                w[k, 3] += 1
            if e.latency_ms is not None:
                lat_sum[k] += e.latency_ms
                lat_n[k] += 1
            if e.scroll_depth_pct is not None:
                w[k, 5] = max(w[k, 5], e.scroll_depth_pct)
        w[:, 4] = np.divide(lat_sum, lat_n, out=np.zeros(steps), where=lat_n > 0)
        windows.append(w)
    scale = np.max([w.max(axis=0) for w in windows], axis=0)
    scale[scale == 0] = 1.0
    out = []
    for rec, w, p, lab in zip(records, windows, phi, labels):
        onehot = np.zeros(n_clusters)
        stats = [0.0, 0.0]
        if lab >= 0:
            onehot[lab] = 1.0
            summary = clusters.summaries[int(lab)]
            stats = [summary.mean_scroll_rate, summary.mean_click_depth]
        layout = assessment.per_layout.get(rec.device_class.value.lower())
        cr = [0.0, 0.0, 0.0] if layout is None else [
            layout.task_success_rate,
            layout.friction_count / friction_max,
            assessment.mean_ecc.get(rec.device_class.value.lower(), 0.0),
        ]
        ctx = np.concatenate([onehot, stats, cr, [p]])
        seq = np.hstack([w / scale, np.tile(ctx, (w.shape[0], 1))])
        out.append(classifier.ClassifierInput(np.clip(seq, 0.0, 1.0)))
    return out


def _stage(report: PipelineReport, name: str, fn: Callable[[], dict[str, Any]]) -> dict[str, Any]:
    try:
        output = fn()
    except StageError:
        raise
    except Exception as exc:  # any stage failure is reported with its stage name
        raise StageError(name, exc) from exc
    prev = report.stages[-1].sha256 if report.stages else sha256_of(None)
    report.stages.append(StageRecord(name, output, prev, sha256_of({"input": prev, "output": output})))
    return output


def run_pipeline(
    config: PipelineConfig,
    records: Sequence[SessionRecord] | None = None,
    truth: Sequence[SessionTruth] | None = None,
    round_index: int = 0,
    out_dir: str | Path | None = None,
) -> PipelineReport:
    """Run every stage once. ``records`` bypasses ingest (used by the feedback loop)."""
    config.validate()
    out = Path(out_dir or config.out_dir) if (out_dir or config.out_dir) else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    report = PipelineReport(round_index=round_index)
    state: dict[str, Any] = {}

    def ingest() -> dict[str, Any]:
        nonlocal records, truth
        skipped = 0
        if records is None:
            if config.input_paths:
                parsed = parse_session_files(config.input_paths)
                records, skipped = parsed.records, parsed.skipped
            else:
                ds = generate_synthetic_sessions(config.synthetic_profile())
                records, truth = ds.records, ds.truth
        if len(records) < 4:
            raise ValueError("insufficient data: need at least 4 sessions")
        if out:
            write_session_log(records, out / "sessions.jsonl")
        return {
            "n_sessions": len(records),
            "skipped": skipped,
            "source": "files" if config.input_paths else "synthetic",
            "records_sha256": sha256_of([r.to_dict() for r in records]),
        }

    def feats() -> dict[str, Any]:
        vecs = features.extract_features(records)
        state["features"] = features.feature_matrix(vecs)
        if out:
            features.export_features(vecs, out / "features.csv")
        return {"n_features": len(features.FEATURE_NAMES), "matrix_sha256": sha256_of(state["features"].tolist())}

    def clusters() -> dict[str, Any]:
        points = state["features"] * features.grouping_weights()
        if config.cluster_params is None:
            params = clustering.persistence_select_params(points)
        else:
            params = clustering.ClusterParams(**config.cluster_params)
        _, result = clustering.cluster(points, params, features=state["features"])
        state["clusters"] = result
        if out:
            clustering.export_clusters([r.session_id for r in records], result, out / "clusters.csv")
        return {
            "params": dataclasses.asdict(params),
            "n_clusters": result.n_clusters,
            "noise_count": result.noise_count,
            "summaries": {str(k): dataclasses.asdict(v) for k, v in result.summaries.items()},
        }

    def assessment() -> dict[str, Any]:
        machine = fsm.load_machine(config.machine_path) if config.machine_path else fsm.default_machine()
        traces = [fsm.trace_session(machine, r) for r in records]
        loops = {t.session_id: t.injected_loops for t in truth} if truth else None
        result = fsm.assess(traces, machine, outcomes=fsm.session_outcomes(records), ground_truth_loops=loops)
        state["assessment"] = result
        if out:
            fsm.write_traces(traces, out / "traces.jsonl")
            (out / "assessment.json").write_text(result.to_json() + "\n", encoding="utf-8")
        d = result.to_dict()
        d.pop("loops_per_trace")
        d["total_loops"] = int(sum(result.loops_per_trace))
        return d

    def uicpi() -> dict[str, Any]:
        metrics = features.dataset_interaction_metrics(records)
        phi = np.array([features.compute_uicpi(m, config.uicpi()) for m in metrics])
        state["phi"] = phi
        means = np.mean([m.as_array() for m in metrics], axis=0)
        return {
            "mean_uicpi": float(phi.mean()),
            "mean_error_rate": float(means[0]),
            "mean_task_time": float(means[1]),
            "mean_drop_off": float(means[2]),
            "mean_click_confusion": float(means[3]),
        }

    def labels() -> dict[str, Any]:
        cfg = config.fuzzy_config()
        labs = [fuzzy.label(float(p), cfg) for p in state["phi"]]
        state["labels"] = np.array([SEVERITY_INDEX[l.label.value] for l in labs])
        if out:
            lines = ["session_id,phi,fuzzified,crisp,label"]
            lines += [f"{r.session_id},{p!r},{l.fuzzified_input!r},{l.crisp_score!r},{l.label.value}" for r, p, l in zip(records, state["phi"], labs)]
            (out / "labels.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        counts = Counter(l.label.value for l in labs)
        return {"distribution": {s.value: counts.get(s.value, 0) for s in fuzzy.Severity}}

    def model() -> dict[str, Any]:
        seqs = build_sequences(records, state["phi"], state["clusters"], state["assessment"])
        result = classifier.train(seqs, state["labels"], config.train_config())
        pred = classifier.predict_proba(seqs, result.params).argmax(axis=1)
        state["predicted"] = pred
        if out:
            result.params.save(out / "model.json")
            (out / "training_log.csv").write_text(result.log_csv(), encoding="utf-8")
        counts = Counter(classifier.CLASS_NAMES[i] for i in pred)
        best = result.log[result.best_epoch - 1] if result.log else None
        return {
            "epochs": len(result.log),
            "best_epoch": result.best_epoch,
            "holdout_accuracy": None if best is None or best.accuracy is None else best.accuracy,
            "train_accuracy": float(np.mean(pred == state["labels"])),
            "predicted_distribution": {c: counts.get(c, 0) for c in classifier.CLASS_NAMES},
            "params_sha256": sha256_of(result.params.to_dict()),
        }

    def gate() -> dict[str, Any]:
        pred = state["predicted"]
        share = float(np.mean(pred >= 1))
        if share >= config.gate_fraction:
            medium, high = int(np.sum(pred == 1)), int(np.sum(pred == 2))
            cls = "High" if high > medium else "Medium"
        else:
            cls = "Low"
        state["predicted_class"] = cls
        return {"predicted_class": cls, "medium_or_high_share": share, "threshold": config.gate_fraction, "optimizer_runs": cls != "Low"}

    def optimize() -> dict[str, Any]:
        if state["predicted_class"] == "Low":
            return {"skipped": True, "reason": "predicted class Low"}
        cost = config.cost()
        result = optimizer.optimize(cost, config.qndsoa_config(), seed=config.seed)
        state["candidate"] = result.best
        if out:
            result.write_history(out / "optimizer_history.csv")
            optimizer.write_best(result, out / "best_candidate.json")
        return {
            "skipped": False,
            "best_fitness": result.best_fitness,
            "average_fitness_pct": result.average_fitness_pct,
            "iterations": len(result.history) - 1,
            "history": [[r.iteration, r.best_fitness, r.mean_fitness] for r in result.history],
            "candidate": result.best.decoded(),
        }

    for name, fn in (
        ("ingest", ingest),
        ("features", feats),
        ("clustering", clusters),
        ("assessment", assessment),
        ("uicpi", uicpi),
        ("labels", labels),
        ("classifier", model),
        ("gate", gate),
        ("optimizer", optimize),
    ):
        _stage(report, name, fn)

    report.mean_uicpi = float(state["phi"].mean())
    report.candidate = state.get("candidate")
    report.optimizer_ran = report.candidate is not None
    report.chosen_candidate = report.candidate.decoded() if report.candidate else None
    if out:
        (out / "report.json").write_text(report.to_json(), encoding="utf-8")
        (out / "summary.txt").write_text(report.summary_table(), encoding="utf-8")
    return report


def closeness(candidate: optimizer.UICandidate, cost_model: optimizer.CostModel, radius: float = 0.5) -> float:
    """1 at the surrogate optimum, falling linearly to 0 at distance ``radius``."""
    d = optimizer.candidate_distance(candidate, optimizer.surrogate_optimum(cost_model))
    return max(0.0, 1.0 - d / radius)


def next_friction_scale(scale: float, candidate: optimizer.UICandidate, cost_model: optimizer.CostModel, gain: float) -> float:
    """Generator response: friction and latency shrink by ``gain * closeness`` per round."""
    return scale * (1.0 - gain * closeness(candidate, cost_model))


def feedback_loop(
    config: PipelineConfig,
    rounds: int,
    forced_candidate: optimizer.UICandidate | None = None,
) -> list[PipelineReport]:
    """Re-run the pipeline on regenerated sessions after each deployment.

    The deployed layout starts as :data:`BASELINE_CANDIDATE`, is replaced by
    each optimizer result (or ``forced_candidate`` when given) and persists
    through rounds where the optimizer is skipped. Friction and latency
    scales compound across rounds. Input files, if configured, feed round 0
    only; later rounds use the synthetic generator.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    config.validate()
    base = config.synthetic_profile()
    factor = 1.0
    deployed = BASELINE_CANDIDATE
    reports: list[PipelineReport] = []
    records = truth = None
    for r in range(rounds):
        out = Path(config.out_dir) / f"round_{r}" if config.out_dir else None
        report = run_pipeline(config, records=records, truth=truth, round_index=r, out_dir=out)
        reports.append(report)
        if forced_candidate is not None:
            deployed = forced_candidate
        elif report.optimizer_ran:
            deployed = report.candidate
        factor = next_friction_scale(factor, deployed, config.cost(), config.feedback_gain)
        profile = dataclasses.replace(base, friction_scale=base.friction_scale * factor, latency_scale=base.latency_scale * factor)
        ds = generate_synthetic_sessions(profile)
        records, truth = ds.records, ds.truth
    return reports
