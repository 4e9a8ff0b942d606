"""Experiment driver: run to a target accuracy, export traces, compare runs."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import statistics
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterable, Sequence

import yaml

from .cost import CostConstants, OverheadLedger, Overheads, accrue
from .errors import ComparisonRefused, ConfigError, FLTuneError
from .flcore import AggregatorState, HyperParams, RoundRecord, TrainSettings, run_round
from .model import Architecture, ModelParams, descriptor, evaluate, init_model
from .population import ClientPopulation, PopulationSpec, generate_population, split_train_test
from .tuner import Decision, Preference, TunerState, overall_improvement, tuner_step

log = logging.getLogger(__name__)

TRACE_FORMAT_VERSION = 1
OUTPUT_DIR_ENV = "FLTUNE_OUTPUT_DIR"

CSV_HEADER = [
    "round", "M", "E", "accuracy", "ct", "tt", "cl", "tl",
    "cum_t", "cum_q", "cum_z", "cum_v",
    "decision_flag", "dM_sign", "dE_sign", "I_value",
]  # fmt: skip


@dataclass(frozen=True)
class ExperimentConfig:
    population: PopulationSpec = field(default_factory=PopulationSpec)
    test_fraction: float = 0.2
    arch: str = "mlp"
    hidden: int = 32
    cost_preset: str | None = None
    costs: CostConstants | None = None
    aggregator: str = "fedavg"
    server_lr: float = 0.1
    beta1: float = 0.0
    tau: float = 1e-3
    batch_size: int = 5
    lr: float = 0.01
    momentum: float = 0.9
    target_accuracy: float = 0.7
    round_cap: int = 2000
    mode: str = "fixed"
    M: int = 20
    E: float = 20
    preference: Preference = field(default_factory=lambda: Preference(0.25, 0.25, 0.25, 0.25))
    epsilon: float = 0.01
    penalty: float = 10.0
    E_max: int = 100
    seeds: tuple[int, ...] = (0,)
    output: str = "runs"

    def validate(self) -> None:
        self.population.validate()
        if not 0 <= self.target_accuracy <= 1:
            raise ConfigError("must lie in [0, 1]", "target_accuracy")
        if self.round_cap < 1:
            raise ConfigError("must be >= 1", "round_cap")
        if self.mode not in ("fixed", "fedtune"):
            raise ConfigError(f"unknown mode {self.mode!r}", "mode")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", "batch_size")
        if not self.E > 0:
            raise ConfigError("must be > 0", "E")
        if self.M < 1:
            raise ConfigError("must be >= 1", "M")
        if not self.seeds:
            raise ConfigError("at least one seed required", "seeds")
        if self.mode == "fedtune" and self.E != int(self.E):
            raise ConfigError("fedtune mode needs an integer initial E", "E")
        self.architecture()
        self.cost_constants()
        AggregatorState(self.aggregator, self.server_lr, self.beta1, self.tau)

    def architecture(self) -> Architecture:
        p = self.population
        return Architecture(self.arch, p.feature_dim, p.num_classes, self.hidden if self.arch == "mlp" else 0)

    def cost_constants(self) -> CostConstants:
        if self.costs is not None:
            return self.costs
        if self.cost_preset is not None:
            return CostConstants.from_descriptor(descriptor(self.cost_preset))
        return CostConstants.from_descriptor(descriptor(self.architecture()))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["preference"] = list(self.preference.weights)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> ExperimentConfig:
        raw = dict(raw)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", "config")
        if "population" in raw:
            pop = raw["population"] or {}
            bad = set(pop) - {f.name for f in fields(PopulationSpec)}
            if bad:
                raise ConfigError(f"unknown keys {sorted(bad)}", "population")
            raw["population"] = PopulationSpec(**pop)
        if raw.get("costs") is not None:
            raw["costs"] = CostConstants(**raw["costs"])
        if "preference" in raw:
            raw["preference"] = Preference.parse(raw["preference"])
        if "seeds" in raw:
            raw["seeds"] = tuple(int(s) for s in raw["seeds"])
        return cls(**raw)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}", "config") from exc
    cfg = ExperimentConfig.from_dict(raw)
    cfg.validate()
    return cfg


def reference_config(**overrides: Any) -> ExperimentConfig:
    """The desk-scale reference task used by the trend and tuner checks.

    Momentum is off here: the buffer restarts every round, so with momentum
    short local runs are disproportionately weak and extra passes pay off
    more than linearly, which hides the computation-cost trend in E.
    """
    base = ExperimentConfig(
        population=PopulationSpec(
            seed=7,
            K=100,
            min_points=1,
            max_points=316,
            shape=1.5,
            label_skew=1.0,
            feature_dim=16,
            num_classes=10,
            class_separation=5.0,
        ),
        test_fraction=0.2,
        arch="mlp",
        hidden=32,
        batch_size=10,
        lr=1e-4,
        momentum=0.0,
        target_accuracy=0.7,
        round_cap=20000,
    )
    return replace(base, **overrides)


@dataclass
class Trace:
    config: ExperimentConfig
    seed: int
    initial_accuracy: float
    records: list[RoundRecord] = field(default_factory=list)
    decisions: list[tuple[int, Decision]] = field(default_factory=list)
    ledger: OverheadLedger = field(default_factory=OverheadLedger)
    reached_target: bool = False

    @property
    def rounds_used(self) -> int:
        return len(self.records)

    @property
    def final_hyper(self) -> HyperParams:
        if self.records:
            return self.records[-1].hyper
        return HyperParams(self.config.M, self.config.E)

    @property
    def name(self) -> str:
        c = self.config
        tag = f"fedtune_{c.preference.label()}" if c.mode == "fedtune" else f"fixed_M{c.M}_E{c.E:g}"
        return f"{tag}_{c.aggregator}_seed{self.seed}"


@lru_cache(maxsize=8)
def _split(spec: PopulationSpec, test_fraction: float) -> tuple[ClientPopulation, ClientPopulation]:
    return split_train_test(generate_population(spec), test_fraction, spec.seed)


def run_experiment(config: ExperimentConfig, seed: int | None = None) -> Trace:
    """Train until the test accuracy reaches the target or the round cap."""
    config.validate()
    seed = config.seeds[0] if seed is None else seed
    train, test = _split(config.population, config.test_fraction)
    K = train.num_clients
    hyper = HyperParams(config.M, config.E)
    hyper.validate(K)
    costs = config.cost_constants()
    settings = TrainSettings(config.batch_size, config.lr, config.momentum, seed)
    agg = AggregatorState(config.aggregator, config.server_lr, config.beta1, config.tau)

    params: ModelParams = init_model([seed, 0], config.architecture())
    trace = Trace(config=config, seed=seed, initial_accuracy=evaluate(params, test))
    tuner = None
    if config.mode == "fedtune":
        tuner = TunerState.start(
            config.preference,
            HyperParams(config.M, int(config.E)),
            trace.initial_accuracy,
            M_max=K,
            E_max=config.E_max,
            epsilon=config.epsilon,
            penalty=config.penalty,
        )

    for r in range(1, config.round_cap + 1):
        params, agg, record = run_round(r, params, hyper, train, test, agg, costs, settings)
        trace.records.append(record)
        trace.ledger = accrue(trace.ledger, record)
        if record.accuracy >= config.target_accuracy:
            trace.reached_target = True
            break
        if tuner is not None:
            decision = tuner_step(tuner, record.accuracy, record.overheads)
            if decision is not None:
                trace.decisions.append((r, decision))
                hyper = decision.next
    return trace


# ---------------------------------------------------------------- export


def _num(x: float | int) -> str:
    if isinstance(x, int) or (isinstance(x, float) and x.is_integer() and abs(x) < 1e15):
        return str(int(x))
    return repr(float(x))


def _sign(x: float) -> int:
    return 1 if x > 0 else -1


def trace_csv(trace: Trace) -> str:
    by_round = dict(trace.decisions)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    ledger = OverheadLedger()
    for rec in trace.records:
        ledger = accrue(ledger, rec)
        d = by_round.get(rec.round)
        o = rec.overheads
        w.writerow(
            [
                rec.round, rec.hyper.M, _num(rec.hyper.E), repr(rec.accuracy),
                repr(o.t), repr(o.q), repr(o.z), repr(o.v),
                repr(ledger.t), repr(ledger.q), repr(ledger.z), repr(ledger.v),
                1 if d else 0,
                _sign(d.delta_m) if d else 0,
                _sign(d.delta_e) if d else 0,
                "" if d is None or d.comparison is None else repr(d.comparison),
            ]
        )  # fmt: skip
    return buf.getvalue()


def _hp(h: HyperParams) -> dict[str, Any]:
    return {"M": h.M, "E": h.E}


def trace_json(trace: Trace) -> dict[str, Any]:
    return {
        "version": TRACE_FORMAT_VERSION,
        "config": trace.config.to_dict(),
        "seed": trace.seed,
        "initial_accuracy": trace.initial_accuracy,
        "reached_target": trace.reached_target,
        "rounds_used": trace.rounds_used,
        "final": _hp(trace.final_hyper),
        "ledger": asdict(trace.ledger),
        "decisions": [
            {
                "round": r,
                "previous": _hp(d.previous),
                "current": _hp(d.current),
                "next": _hp(d.next),
                "gain": d.gain,
                "normalized": list(d.normalized),
                "I": d.comparison,
                "delta_m": d.delta_m,
                "delta_e": d.delta_e,
                "penalized": d.penalized,
                "eta": list(d.eta),
                "zeta": list(d.zeta),
            }
            for r, d in trace.decisions
        ],
    }


def _artifact(path: str | Path, ext: str) -> Path:
    # Names carry dotted preference labels, so Path.with_suffix would clip them.
    path = Path(path)
    stem = path.name
    for known in (".csv", ".json"):
        if stem.endswith(known):
            stem = stem[: -len(known)]
    return path.with_name(stem + ext)


def export_trace(trace: Trace, path: str | Path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and the ``<path>.json`` sidecar; returns both paths."""
    csv_path, json_path = _artifact(path, ".csv"), _artifact(path, ".json")
    base = csv_path.with_name(csv_path.name[: -len(".csv")])
    try:
        base.parent.mkdir(parents=True, exist_ok=True)
        csv_path.write_text(trace_csv(trace))
        json_path.write_text(json.dumps(trace_json(trace), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise FLTuneError(f"cannot write trace to {base}: {exc}") from exc
    return csv_path, json_path


@dataclass(frozen=True)
class TraceSummary:
    """What comparison needs from a trace; reconstructible from the JSON sidecar alone."""

    seed: int
    mode: str
    preference: Preference
    totals: Overheads
    reached_target: bool
    rounds_used: int
    final: HyperParams

    @classmethod
    def of(cls, trace: Trace) -> TraceSummary:
        return cls(
            trace.seed,
            trace.config.mode,
            trace.config.preference,
            trace.ledger.totals,
            trace.reached_target,
            trace.rounds_used,
            trace.final_hyper,
        )


def load_trace_summary(path: str | Path) -> TraceSummary:
    doc = json.loads(_artifact(path, ".json").read_text())
    if doc.get("version") != TRACE_FORMAT_VERSION:
        raise ConfigError(f"unsupported trace version {doc.get('version')!r}", "version")
    led = doc["ledger"]
    return TraceSummary(
        seed=int(doc["seed"]),
        mode=doc["config"]["mode"],
        preference=Preference(*doc["config"]["preference"]),
        totals=Overheads(led["t"], led["q"], led["z"], led["v"]),
        reached_target=bool(doc["reached_target"]),
        rounds_used=int(doc["rounds_used"]),
        final=HyperParams(int(doc["final"]["M"]), doc["final"]["E"]),
    )


def read_trace_csv(path: str | Path) -> list[dict[str, str]]:
    with open(_artifact(path, ".csv"), newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- comparison


@dataclass(frozen=True)
class ComparisonReport:
    preference: Preference
    improvements: tuple[float, ...]
    mean: float
    std: float
    excluded: int


def compare_runs(
    baseline: Sequence[Trace | TraceSummary],
    tuned: Sequence[Trace | TraceSummary],
    pref: Preference,
) -> ComparisonReport:
    """Per-seed improvement of tuned over baseline, then mean and population std.

    Seeds are paired by value; pairs where either run missed its target are
    dropped and counted in ``excluded``.
    """
    base = {s.seed: s for s in (_summary(t) for t in baseline)}
    improvements, excluded = [], 0
    for t in (_summary(t) for t in tuned):
        b = base.get(t.seed)
        if b is None:
            raise ConfigError(f"no baseline trace for seed {t.seed}", "baseline")
        try:
            improvements.append(
                overall_improvement(
                    b.totals, t.totals, pref, baseline_reached=b.reached_target, tuned_reached=t.reached_target
                )
            )
        except ComparisonRefused:
            excluded += 1
    if excluded:
        log.warning("%d run pair(s) excluded: target accuracy not reached", excluded)
    if not improvements:
        return ComparisonReport(pref, (), math.nan, math.nan, excluded)
    return ComparisonReport(
        pref, tuple(improvements), statistics.fmean(improvements), statistics.pstdev(improvements), excluded
    )


def _summary(t: Trace | TraceSummary) -> TraceSummary:
    return t if isinstance(t, TraceSummary) else TraceSummary.of(t)


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepResult:
    traces: list[Trace]
    rows: list[dict[str, Any]]
    failures: list[tuple[dict[str, Any], str]]


def sweep(template: ExperimentConfig, grid: Iterable[dict[str, Any]]) -> SweepResult:
    """One run per (grid point, seed). Failed runs are recorded and skipped."""
    points = list(grid)
    if not points:
        raise ConfigError("grid is empty", "grid")
    result = SweepResult([], [], [])
    for point in points:
        cfg = replace(template, **point)
        for seed in cfg.seeds:
            try:
                trace = run_experiment(cfg, seed)
            except FLTuneError as exc:
                log.error("run %s seed=%s failed: %s", point, seed, exc)
                result.failures.append(({**point, "seed": seed}, str(exc)))
                continue
            result.traces.append(trace)
            led = trace.ledger
            result.rows.append(
                {
                    **{k: (v.label() if isinstance(v, Preference) else v) for k, v in point.items()},
                    "seed": seed,
                    "rounds": trace.rounds_used,
                    "reached": trace.reached_target,
                    "final_M": trace.final_hyper.M,
                    "final_E": trace.final_hyper.E,
                    "t": led.t,
                    "q": led.q,
                    "z": led.z,
                    "v": led.v,
                }
            )
    return result


def grid_m(values: Sequence[int]) -> list[dict[str, Any]]:
    return [{"M": int(m)} for m in values]


def grid_e(values: Sequence[float]) -> list[dict[str, Any]]:
    return [{"E": e} for e in values]


def grid_preferences(prefs: Sequence[Preference]) -> list[dict[str, Any]]:
    return [{"mode": "fedtune", "preference": p} for p in prefs]


def median_by(rows: Sequence[dict[str, Any]], key: str, metric: str) -> dict[Any, float]:
    groups: dict[Any, list[float]] = {}
    for row in rows:
        groups.setdefault(row[key], []).append(row[metric])
    return {k: statistics.median(v) for k, v in groups.items()}


def monotone_ok(values: Sequence[float], increasing: bool, slack: float = 0.05) -> bool:
    """Monotone up to at most one adjacent-pair violation of relative size < ``slack``."""
    violations = 0
    for a, b in zip(values, values[1:]):
        bad = b < a if increasing else b > a
        if bad:
            violations += 1
            if abs(b - a) >= slack * abs(a) or violations > 1:
                return False
    return True


def output_dir(config: ExperimentConfig, override: str | None = None) -> Path:
    return Path(override or os.environ.get(OUTPUT_DIR_ENV) or config.output)
