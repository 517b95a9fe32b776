"""Experiment configuration, the build -> attack -> spectral -> quantum pipeline,
and result records.

A record's ``payload`` depends only on the configuration (and package
version); wall-clock numbers live in a separate ``timing`` field.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .adversaries import SuiteConfig, TrialStats, one_sided_drop_pvalue, run_suite
from .graph_core import BuildParams, InstanceLayout, MultiGraph, decorate, forecast_counts, obfuscate
from .quantum_sim import adiabatic_exit_probability, exit_scan
from .serialize import load_instance, save_instance
from .spectral import (
    adiabatic_sweep,
    decoration_norm,
    equitable_quotient,
    predict_decorated_eigenpair,
    top_eigenpair,
    weight_report,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdversarySpec:
    name: str
    budget: int
    trials: int


@dataclass(frozen=True)
class SpectralSettings:
    s_grid: int = 201
    endpoint_weight: float | None = None
    weights: bool = True


@dataclass(frozen=True)
class QuantumSettings:
    scan_tmax: float | None = None  # None: 10 ell / m on the collapsed operator
    scan_samples: int = 2000
    adiabatic_times: tuple[float, ...] = ()
    endpoint_weight: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on.  Empty sections skip their stage."""

    name: str
    params: BuildParams | None
    rounds: tuple[int, ...] = ()
    adversaries: tuple[AdversarySpec, ...] = ()
    spectral: SpectralSettings | None = None
    quantum: QuantumSettings | None = None
    master_seed: int = 0
    label_bits: int | None = None
    out_dir: str | None = None
    cache_dir: str | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "params": self.params.to_dict() if self.params is not None else None,
            "rounds": list(self.rounds),
            "adversaries": [asdict(a) for a in self.adversaries],
            "spectral": asdict(self.spectral) if self.spectral is not None else None,
            "quantum": _quantum_dict(self.quantum),
            "master_seed": self.master_seed,
            "label_bits": self.label_bits,
            "out_dir": self.out_dir,
            "cache_dir": self.cache_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        q = d.get("quantum")
        if q is not None:
            q = dict(q)
            q["adiabatic_times"] = tuple(q.get("adiabatic_times", ()))
            q = QuantumSettings(**q)
        sp_ = d.get("spectral")
        return cls(
            name=d.get("name", "experiment"),
            params=BuildParams.from_dict(d["params"]) if d.get("params") is not None else None,
            rounds=tuple(d.get("rounds", ())),
            adversaries=tuple(AdversarySpec(**a) for a in d.get("adversaries", ())),
            spectral=SpectralSettings(**sp_) if sp_ is not None else None,
            quantum=q,
            master_seed=int(d.get("master_seed", 0)),
            label_bits=d.get("label_bits"),
            out_dir=d.get("out_dir"),
            cache_dir=d.get("cache_dir"),
        )

    def content_hash(self) -> str:
        body = self.to_dict()
        # output locations do not change results
        body.pop("out_dir")
        body.pop("cache_dir")
        blob = json.dumps({"config": body, "version": __version__}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def _quantum_dict(q: QuantumSettings | None) -> dict | None:
    if q is None:
        return None
    d = asdict(q)
    d["adiabatic_times"] = list(q.adiabatic_times)
    return d


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


@dataclass
class ResultRecord:
    config_hash: str
    name: str
    variants: dict[str, dict] = field(default_factory=dict)
    comparisons: dict[str, Any] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)
    timing: dict[str, float] = field(default_factory=dict)

    def payload(self) -> dict:
        """All non-timing fields."""
        return {
            "config_hash": self.config_hash,
            "name": self.name,
            "variants": self.variants,
            "comparisons": self.comparisons,
            "errors": self.errors,
        }

    def payload_json(self) -> str:
        return json.dumps(_jsonable(self.payload()), sort_keys=True, indent=1)

    def to_json(self) -> str:
        return json.dumps(_jsonable({**self.payload(), "timing": self.timing}), sort_keys=True, indent=1)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# ---------------------------------------------------------------------------
# instance cache


class InstanceCache:
    """Builds each (params, rounds) instance once; optionally persisted as TWG1."""

    def __init__(self, directory: str | None = None):
        self.directory = Path(directory) if directory else None
        self._base: dict[str, tuple[MultiGraph, InstanceLayout]] = {}
        self._mem: dict[str, tuple[MultiGraph, InstanceLayout]] = {}

    @staticmethod
    def _key(params: BuildParams) -> str:
        return hashlib.sha256(json.dumps(params.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def get(self, params: BuildParams) -> tuple[MultiGraph, InstanceLayout]:
        key = self._key(params)
        if key in self._mem:
            return self._mem[key]
        path = self.directory / f"{key}.twg" if self.directory else None
        if path is not None and path.exists():
            g, layout, _ = load_instance(path)
            self._mem[key] = (g, layout)
            return g, layout
        base_key = self._key(params.with_rounds(0))
        if base_key not in self._base:
            self._base[base_key] = obfuscate(params.with_rounds(0))
        g, layout = decorate(*self._base[base_key], params)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_instance(path, g, layout, params.seed)
        self._mem[key] = (g, layout)
        return g, layout


# ---------------------------------------------------------------------------
# stages


def _instance_summary(g: MultiGraph, layout: InstanceLayout, params: BuildParams) -> dict:
    fc = forecast_counts(params)
    return {
        "vertex_count": g.vertex_count,
        "edge_count": g.edge_count,
        "max_degree": int(g.degrees.max()),
        "digest": g.digest(),
        "forecast_vertex_count": fc.vertex_count,
        "forecast_matches": fc.vertex_count == g.vertex_count,
    }


def _adversary_stage(cfg: ExperimentConfig, params, instance) -> dict:
    out = {}
    for spec in cfg.adversaries:
        suite = SuiteConfig(spec.name, params, spec.budget, spec.trials, cfg.master_seed, cfg.label_bits)
        stats = run_suite(suite, instance)
        out[spec.name] = {"budget": spec.budget, **stats.to_dict(budget=spec.budget), "_stats": stats}
    return out


def _spectral_stage(cfg: ExperimentConfig, g, layout, out_dir: Path | None, tag: str) -> dict:
    st = cfg.spectral
    q = equitable_quotient(g, layout=layout)
    lam_q, _ = top_eigenpair(q)
    res: dict[str, Any] = {"cells": q.length, "top_eigenvalue_quotient": lam_q}
    if st.s_grid:
        sweep = adiabatic_sweep(q, st.s_grid, st.endpoint_weight)
        res["min_gap"] = sweep.min_gap
        res["argmin_s"] = float(sweep.s[int(np.argmin(sweep.gap))])
        if out_dir is not None:
            with open(out_dir / f"sweep_{tag}.csv", "w") as fh:
                sweep.write_csv(fh)
    if st.weights:
        pred = predict_decorated_eigenpair(g, layout)
        res["top_eigenvalue_predicted"] = pred.eigenvalue
        res["prediction_residual_ok"] = bool(pred.residual <= 1e-8)
        res["gammas"] = [fp.gamma for fp in pred.fixed_points]
        res["weights"] = weight_report(pred.vector, layout).to_dict()
        res["decoration_norm"] = decoration_norm(g, layout)
    return res


def _quantum_stage(cfg: ExperimentConfig, g, layout, out_dir: Path | None, tag: str) -> dict:
    qs = cfg.quantum
    q = equitable_quotient(g, layout=layout)
    tmax = qs.scan_tmax if qs.scan_tmax is not None else 10.0 * layout.ell / layout.m
    scan = exit_scan(q, tmax, qs.scan_samples)
    if out_dir is not None:
        with open(out_dir / f"scan_{tag}.csv", "w") as fh:
            scan.write_csv(fh)
    res: dict[str, Any] = {"scan_tmax": tmax, "best_t": scan.best_t, "best_probability": scan.best_probability}
    res["adiabatic"] = {
        repr(float(T)): adiabatic_exit_probability(q, float(T), endpoint_weight=qs.endpoint_weight)
        for T in qs.adiabatic_times
    }
    return res


def _err(e: BaseException) -> str:
    return f"{type(e).__name__}: {e}"


def run(config: ExperimentConfig) -> ResultRecord:
    """Run every configured stage for every variant, isolating stage failures."""
    rec = ResultRecord(config.content_hash(), config.name)
    if config.params is None:
        return rec
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    cache = InstanceCache(config.cache_dir)
    rounds = config.rounds or (config.params.r,)
    stats_by_variant: dict[str, dict[str, TrialStats]] = {}
    for r in rounds:
        tag = f"r{r}"
        params = config.params.with_rounds(r)
        entry: dict[str, Any] = {"rounds": r}
        rec.variants[tag] = entry
        t0 = time.perf_counter()
        try:
            g, layout = cache.get(params)
            entry["instance"] = _instance_summary(g, layout, params)
        except Exception as e:  # noqa: BLE001 - recorded, later stages skipped
            rec.errors[f"{tag}/build"] = _err(e)
            continue
        rec.timing[f"{tag}/build"] = time.perf_counter() - t0
        stages = [
            ("adversaries", bool(config.adversaries), lambda: _adversary_stage(config, params, (g, layout))),
            ("spectral", config.spectral is not None, lambda: _spectral_stage(config, g, layout, out_dir, tag)),
            ("quantum", config.quantum is not None, lambda: _quantum_stage(config, g, layout, out_dir, tag)),
        ]
        for stage, enabled, fn in stages:
            if not enabled:
                entry[stage] = {}
                continue
            t0 = time.perf_counter()
            try:
                entry[stage] = fn()
            except Exception as e:  # noqa: BLE001
                rec.errors[f"{tag}/{stage}"] = _err(e)
                entry[stage] = {}
                log.warning("stage %s/%s failed: %s", tag, stage, e)
            rec.timing[f"{tag}/{stage}"] = time.perf_counter() - t0
        stats_by_variant[tag] = {k: v.pop("_stats") for k, v in entry.get("adversaries", {}).items()}
    rec.comparisons = _compare(rec, stats_by_variant)
    if out_dir is not None:
        (out_dir / "record.json").write_text(rec.to_json())
    return rec


def _compare(rec: ResultRecord, stats: dict[str, dict[str, TrialStats]]) -> dict:
    tags = list(rec.variants)
    if len(tags) < 2:
        return {}
    first, last = tags[0], tags[-1]
    out: dict[str, Any] = {"before": first, "after": last, "classical": {}, "quantum": {}}
    for name, before in stats.get(first, {}).items():
        after = stats.get(last, {}).get(name)
        if after is None:
            continue
        out["classical"][name] = {
            "hit_rate_before": before.hit_rate,
            "hit_rate_after": after.hit_rate,
            "drop": before.hit_rate - after.hit_rate,
            "p_value": one_sided_drop_pvalue(before, after),
        }
    qa = rec.variants[first].get("quantum", {}).get("adiabatic", {})
    qb = rec.variants[last].get("quantum", {}).get("adiabatic", {})
    for T in qa:
        if T in qb:
            out["quantum"][T] = {"before": qa[T], "after": qb[T], "change": abs(qa[T] - qb[T])}
    return out


# ---------------------------------------------------------------------------
# presets


def separation_params(seed: int = 0) -> BuildParams:
    return BuildParams(
        m=4, k=2, ell=9, rounds=1, trees_per_round=2, depth_override=(1,), expander_threshold=math.inf, seed=seed
    )


SEPARATION_BUDGET = 25_000


def preset(name: str, trials: int = 1000, seed: int = 0) -> ExperimentConfig:
    if name == "separation":
        return ExperimentConfig(
            name="separation",
            params=separation_params(seed),
            rounds=(0, 1),
            adversaries=(
                AdversarySpec("random_walk", SEPARATION_BUDGET, trials),
                AdversarySpec("bfs", SEPARATION_BUDGET, trials),
            ),
            spectral=SpectralSettings(s_grid=201),
            quantum=QuantumSettings(scan_samples=2000, adiabatic_times=(16.0, 256.0)),
            master_seed=seed,
        )
    if name == "smoke":
        return ExperimentConfig(
            name="smoke",
            params=BuildParams(m=2, k=1, ell=5, delta=0.0, rounds=1, depth_override=(1,), seed=seed),
            rounds=(0, 1),
            adversaries=(AdversarySpec("random_walk", 2000, min(trials, 50)), AdversarySpec("bfs", 2000, min(trials, 50))),
            spectral=SpectralSettings(s_grid=21),
            quantum=QuantumSettings(scan_samples=200, adiabatic_times=(8.0,)),
            master_seed=seed,
        )
    raise KeyError(f"unknown preset {name!r}")


def with_trials(cfg: ExperimentConfig, trials: int) -> ExperimentConfig:
    return replace(cfg, adversaries=tuple(replace(a, trials=trials) for a in cfg.adversaries))
