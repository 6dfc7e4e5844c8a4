"""Experiment orchestration: JSON configs, per-trial seeding, Monte Carlo
sweeps, JSON reports and CSV figure data.

A report is a plain dict. Everything in it except ``timing`` is a pure
function of the config, whatever the number of worker threads.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import __version__
from .adversary import (
    OPTIMAL_POVM, RANDOM_BB84_BASIS, ChannelModel, EveStrategy, mdep_curve, steganalyze,
)
from .cv import (
    CV_B92, CV_BB84_PASCS, E4, O4, PROTOCOLS, cv_reverse_run, efficiency_measure, make_spec,
    reverse_extract_cv,
)
from .cvstate import VACUUM_SD, Quadrature
from .dv import DvConfig, bb84_reverse_run, mqs_run, reverse_extract_dv, sifted_qber, transmit
from .errors import ConfigError, EmbeddingFailure, ProtocolError
from .qstate import EmbeddingParams
from .seeding import trial_rng

SCHEMA_VERSION = 1
EXPERIMENTS = ("dv_direct", "dv_reverse", "cv_run", "steganalysis_sweep", "mdep_curve",
               "efficiency_table")
FIGURES = ("mdep_vs_E", "power_vs_E", "quadrature_histogram", "efficiency_bars")
Z99 = 2.5758293035489004


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    trials: int = 100
    workers: int = 1
    # discrete-variable runs
    m: int = 64
    delta: Optional[int] = None
    abort_qber: float = 0.11
    flip_probability: float = 0.0
    variant: str = "B"
    # continuous-variable runs
    protocol: str = E4
    alpha: float = 0.8
    x0: float = 0.4
    n_signals: int = 1000
    # steganalysis
    rates: list = field(default_factory=lambda: [round(0.1 * i, 10) for i in range(11)])
    bias: float = 1.0
    intercept_fraction: float = 1.0
    measurement: str = RANDOM_BB84_BASIS
    significance: float = 0.01
    samples: int = 10_000
    out_dir: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def bad(name, why):
            raise ConfigError(f"invalid config field '{name}': {why}")

        if self.schema_version != SCHEMA_VERSION:
            bad("schema_version", f"expected {SCHEMA_VERSION}, got {self.schema_version!r}")
        if self.experiment not in EXPERIMENTS:
            bad("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2 ** 64:
            bad("seed", "must be an integer in [0, 2^64)")
        for name in ("trials", "workers", "n_signals", "samples"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                bad(name, "must be a positive integer")
        if not isinstance(self.m, int) or self.m < 2:
            bad("m", "must be an integer >= 2")
        if self.delta is not None and (not isinstance(self.delta, int) or self.delta < 0):
            bad("delta", "must be a non-negative integer or null")
        for name in ("abort_qber", "flip_probability", "bias", "intercept_fraction"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                bad(name, "must be in [0, 1]")
        if not 0.0 < self.significance < 1.0:
            bad("significance", "must be in (0, 1)")
        if self.variant not in ("A", "B"):
            bad("variant", "must be 'A' or 'B'")
        if self.protocol not in PROTOCOLS:
            bad("protocol", f"must be one of {', '.join(PROTOCOLS)}")
        if not self.alpha > 0:
            bad("alpha", "must be positive")
        if self.x0 < 0:
            bad("x0", "must be non-negative")
        if self.measurement not in (RANDOM_BB84_BASIS, OPTIMAL_POVM):
            bad("measurement", f"must be {RANDOM_BB84_BASIS} or {OPTIMAL_POVM}")
        if not isinstance(self.rates, list) or not self.rates:
            bad("rates", "must be a non-empty list")
        if any(not isinstance(e, (int, float)) or not 0.0 <= e <= 1.0 for e in self.rates):
            bad("rates", "every rate must be in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"invalid config field '{sorted(unknown)[0]}': unknown field")
        for required in ("experiment", "seed"):
            if required not in data:
                raise ConfigError(f"invalid config field '{required}': missing")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        data = json.loads(Path(path).read_text()) if path else {}
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)


def wilson_ci(successes: int, n: int, z: float = Z99) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, centre - half), min(1.0, centre + half))


def mean_ci(values, z: float = Z99) -> dict:
    v = np.asarray([x for x in values if x is not None and not math.isnan(x)], dtype=float)
    if len(v) == 0:
        return {"mean": None, "ci": [None, None], "n": 0}
    mean = float(v.mean())
    half = float(z * v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return {"mean": mean, "ci": [mean - half, mean + half], "n": int(len(v))}


def rate_summary(flags) -> dict:
    flags = [bool(f) for f in flags]
    k = sum(flags)
    lo, hi = wilson_ci(k, len(flags))
    return {"rate": k / len(flags) if flags else None, "count": k, "n": len(flags), "ci": [lo, hi]}


def _map_trials(cfg: ExperimentConfig, tag: str, fn: Callable[[int, np.random.Generator], dict]) -> list:
    def one(i):
        return fn(i, trial_rng(cfg.seed, tag, i))

    if cfg.workers == 1:
        return [one(i) for i in range(cfg.trials)]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(one, range(cfg.trials)))


def _dv_config(cfg: ExperimentConfig) -> DvConfig:
    channel = ChannelModel.depolarizing(cfg.flip_probability) if cfg.flip_probability > 0 else ChannelModel()
    return DvConfig(cfg.m, cfg.delta, cfg.abort_qber, channel)


def _run_dv_direct(cfg: ExperimentConfig) -> dict:
    dvc = _dv_config(cfg)

    def trial(i, rng):
        message = int(rng.integers(0, 2))
        d = int(rng.integers(1, cfg.m + 1))
        try:
            res = mqs_run(dvc, message, d, rng)
        except EmbeddingFailure:
            return {"index": i, "message": message, "d": d, "status": "embedding_failure"}
        except ProtocolError:
            return {"index": i, "message": message, "d": d, "status": "aborted"}
        return {"index": i, "message": message, "d": d, "status": "ok", "recovered": res.recovered_bit,
                "qber": res.qber, "abort": res.aborted}

    rows = _map_trials(cfg, "dv_direct", trial)
    ok = [r for r in rows if r["status"] == "ok"]
    return {
        "trials": rows,
        "aggregates": {
            "stego_error": rate_summary(r["recovered"] != r["message"] for r in ok),
            "check_qber": mean_ci(r["qber"] for r in ok),
            "qber_abort": rate_summary(r["abort"] for r in ok),
            "embedding_failures": sum(r["status"] == "embedding_failure" for r in rows),
            "sift_aborts": sum(r["status"] == "aborted" for r in rows),
        },
    }


def _run_dv_reverse(cfg: ExperimentConfig) -> dict:
    dvc = _dv_config(cfg)

    def trial(i, rng):
        message = int(rng.integers(0, 2))
        d = int(rng.integers(1, cfg.m + 1))
        try:
            tr, ann = bb84_reverse_run(dvc, message, d, rng, cfg.variant)
        except EmbeddingFailure:
            return {"index": i, "message": message, "d": d, "status": "embedding_failure"}
        except ProtocolError:
            return {"index": i, "message": message, "d": d, "status": "aborted"}
        return {"index": i, "message": message, "d": d, "status": "ok",
                "recovered": reverse_extract_dv(tr, ann, d, cfg.variant), "sifted_qber": sifted_qber(tr)}

    rows = _map_trials(cfg, "dv_reverse", trial)
    ok = [r for r in rows if r["status"] == "ok"]
    return {
        "trials": rows,
        "aggregates": {
            "stego_error": rate_summary(r["recovered"] != r["message"] for r in ok),
            "sifted_qber": mean_ci(r["sifted_qber"] for r in ok),
            "embedding_failures": sum(r["status"] == "embedding_failure" for r in rows),
            "sift_aborts": sum(r["status"] == "aborted" for r in rows),
        },
    }


def _histogram_edges(alpha: float) -> np.ndarray:
    half = abs(alpha) * math.sqrt(2.0) + 8 * VACUUM_SD
    return np.linspace(-half, half, 81)


def _run_cv(cfg: ExperimentConfig) -> dict:
    spec = make_spec(cfg.protocol, cfg.alpha, cfg.x0, cfg.n_signals)
    edges = _histogram_edges(cfg.alpha)

    def trial(i, rng):
        message = int(rng.integers(0, 2))
        d = int(rng.integers(1, cfg.n_signals + 1))
        try:
            tr = cv_reverse_run(spec, message, d, rng)
        except EmbeddingFailure:
            return {"index": i, "message": message, "d": d, "status": "embedding_failure"}
        own = tr.sender_bits
        pick = (tr.sent == 0) & (tr.settings == Quadrature.POSITION)
        hist = np.histogram(tr.raw_values[pick], edges)[0]
        return {"index": i, "message": message, "d": d, "status": "ok",
                "recovered": reverse_extract_cv(tr.announced_conclusive, d, own),
                "usable_fraction": tr.usable_fraction(), "conclusive_fraction": tr.conclusive_fraction(),
                "agreement": tr.agreement(), "_hist": hist}

    rows = _map_trials(cfg, "cv_run", trial)
    ok = [r for r in rows if r["status"] == "ok"]
    counts = sum((r.pop("_hist") for r in ok), np.zeros(len(edges) - 1, dtype=np.int64))
    width = edges[1] - edges[0]
    total = int(counts.sum())
    centres = 0.5 * (edges[1:] + edges[:-1])
    dens = counts / (total * width) if total else np.zeros_like(centres)
    return {
        "trials": rows,
        "aggregates": {
            "stego_error": rate_summary(r["recovered"] != r["message"] for r in ok),
            "usable_fraction": mean_ci(r["usable_fraction"] for r in ok),
            "conclusive_fraction": mean_ci(r["conclusive_fraction"] for r in ok),
            "key_agreement": mean_ci(r["agreement"] for r in ok),
            "embedding_failures": sum(r["status"] == "embedding_failure" for r in rows),
        },
        "series": {
            "quadrature_histogram": {
                "columns": ["bin_centre", "density", "count"],
                "rows": [[float(c), float(p), int(k)] for c, p, k in zip(centres, dens, counts)],
                "state": "index 0, position quadrature",
            },
        },
    }


def _run_steganalysis(cfg: ExperimentConfig) -> dict:
    eve = EveStrategy(cfg.intercept_fraction, cfg.measurement)
    per_rate = []
    all_rows = []
    for k, e in enumerate(cfg.rates):
        params = EmbeddingParams(float(e), cfg.bias)

        def trial(i, rng, params=params, e=e):
            tr = transmit(cfg.samples, 0, rng, params, None, eve)
            rep = steganalyze(tr.eve, cfg.significance, sifted_qber(tr))
            return {"index": i, "E": float(e), "verdict": rep.verdict, "p_value": rep.p_value,
                    "estimated_rate": rep.estimated_rate, "induced_qber": rep.induced_qber}

        rows = _map_trials(cfg, f"steganalysis/{k}", trial)
        all_rows.extend(rows)
        power = rate_summary(r["verdict"] for r in rows)
        per_rate.append({
            "E": float(e),
            "power": power,
            "estimated_rate": mean_ci(r["estimated_rate"] for r in rows),
            "induced_qber": mean_ci(r["induced_qber"] for r in rows),
        })
    return {
        "trials": all_rows,
        "aggregates": {"per_rate": per_rate},
        "series": {
            "power_vs_E": {
                "columns": ["E", "power", "ci_low", "ci_high"],
                "rows": [[p["E"], p["power"]["rate"], *p["power"]["ci"]] for p in per_rate],
            },
        },
    }


def _run_mdep_curve(cfg: ExperimentConfig) -> dict:
    rows = mdep_curve(cfg.rates, cfg.bias)
    mdeps = [r["mdep"] for r in rows]
    monotone = all(b <= a + 1e-9 for a, b in zip(mdeps, mdeps[1:]))
    return {
        "trials": [],
        "aggregates": {"curve": rows, "monotone_non_increasing": monotone,
                       "all_converged": all(r["converged"] for r in rows)},
        "series": {"mdep_vs_E": {"columns": ["E", "mdep"], "rows": [[r["E"], r["mdep"]] for r in rows]}},
    }


# Protocols drawn as bars; CV-BB84 over PASCS stays in the aggregate table only.
BAR_PROTOCOLS = (O4, E4, CV_B92)


def _run_efficiency(cfg: ExperimentConfig) -> dict:
    table = []
    for k, (name, alpha, x0) in enumerate([(O4, cfg.alpha, cfg.x0), (E4, cfg.alpha, cfg.x0),
                                           (CV_BB84_PASCS, cfg.alpha, cfg.x0), (CV_B92, cfg.alpha, cfg.x0)]):
        spec = make_spec(name, alpha, x0, cfg.n_signals)
        rep = efficiency_measure(spec, cfg.n_signals, trial_rng(cfg.seed, f"efficiency/{name}", 0))
        table.append({"protocol": name, "empirical_pe": rep.empirical_pe, "analytic_pe": rep.analytic_pe,
                      "formula_pe": rep.formula_pe, "signals": rep.trials,
                      "ci": list(wilson_ci(round(rep.empirical_pe * rep.trials), rep.trials))})
    return {
        "trials": [],
        "aggregates": {"efficiency": table},
        "series": {
            "efficiency_bars": {
                "columns": ["protocol", "empirical_pe", "analytic_pe"],
                "rows": [[t["protocol"], t["empirical_pe"], t["analytic_pe"]] for t in table
                         if t["protocol"] in BAR_PROTOCOLS],
            },
        },
    }


_DISPATCH = {
    "dv_direct": _run_dv_direct,
    "dv_reverse": _run_dv_reverse,
    "cv_run": _run_cv,
    "steganalysis_sweep": _run_steganalysis,
    "mdep_curve": _run_mdep_curve,
    "efficiency_table": _run_efficiency,
}


def run_experiment(config: ExperimentConfig, write: bool = True) -> dict:
    config.validate()
    start = time.perf_counter()
    body = _DISPATCH[config.experiment](config)
    report = {
        "schema_version": SCHEMA_VERSION,
        "config": config.to_dict(),
        "provenance": {"seed": config.seed, "experiment": config.experiment, "version": __version__},
        "trials": body.get("trials", []),
        "aggregates": body.get("aggregates", {}),
        "series": body.get("series", {}),
        "timing": {"seconds": time.perf_counter() - start},
    }
    if write and config.out_dir:
        write_report(report, config.out_dir)
    return report


def embedding_failures(report: dict) -> int:
    return int(report.get("aggregates", {}).get("embedding_failures", 0))


# Config fields that change how a run executes but never what it computes.
EXECUTION_ONLY = ("workers", "out_dir")


def numeric_content(report: dict) -> dict:
    """What the determinism contract covers: no timing, no execution-only config."""
    out = {k: v for k, v in report.items() if k != "timing"}
    out["config"] = {k: v for k, v in report["config"].items() if k not in EXECUTION_ONLY}
    return out


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=True)


def write_report(report: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{report['config']['experiment']}_report.json"
    path.write_text(dumps_report(report) + "\n")
    for name in report.get("series", {}):
        (out / f"{name}.csv").write_bytes(emit_figure_data(report, name).encode("ascii"))
    return path


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())


def _fmt(v: Any) -> str:
    if v is None:
        return "nan"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_figure_data(report: dict, figure: str) -> str:
    """CSV text for one figure: a header line then one row per point, LF endings."""
    if figure not in FIGURES:
        raise ConfigError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    series = report.get("series", {}).get(figure)
    if series is None:
        raise ConfigError(f"report has no '{figure}' series (experiment "
                          f"{report.get('config', {}).get('experiment')!r})")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(series["columns"])
    for row in series["rows"]:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()
