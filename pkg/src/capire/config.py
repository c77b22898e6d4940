"""Configuration resolution and input loading.

A flat key-value text file (`key = value`, `#` comments) names every CSV
input by path and carries the experiment settings.  Resolution order is
command-line flag, then file, then built-in default; relative paths are
resolved against the config file's directory.  The shipped defaults live in
capire/data/capire.cfg.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace
from importlib import resources

from capire.curriculum import apply_redesign, load_curriculum, load_redesign
from capire.engine import EngineParams, load_engine_params
from capire.policy import load_policy_params, parse_scenario_id, enumerate_factorial
from capire.population import (GROUP_STABLE, GROUP_VULNERABLE, Archetype,
                               load_archetypes)


class ConfigError(ValueError):
    pass


_PATH_KEYS = ("courses", "edges", "redesign_a1", "reassign", "archetypes",
              "policy_params", "engine_params", "course_pass", "targets", "bounds")

_ALL_SCENARIOS = tuple(s.scenario_id for s in enumerate_factorial())


@dataclass(frozen=True)
class Settings:
    """Fully resolved run settings plus absolute input paths."""
    paths: dict
    master_seed: int = 20250823
    n_students: int = 1343
    n_replications: int = 100
    scenarios: tuple = _ALL_SCENARIOS
    horizon: int = 12
    workers: int = 1
    compress: bool = True
    bottleneck_min_in_degree: int = 3
    bottleneck_quantile: float = 0.1
    calibration_n_students: int = 300
    calibration_replications: int = 10
    calibration_budget: int = 200
    out_dir: str = "out"
    param_overrides: str = ""

    def as_dict(self) -> dict:
        out = {}
        for key in ("master_seed", "n_students", "n_replications", "horizon",
                    "workers", "compress", "bottleneck_min_in_degree",
                    "bottleneck_quantile", "calibration_n_students",
                    "calibration_replications", "calibration_budget",
                    "out_dir", "param_overrides"):
            out[key] = getattr(self, key)
        out["scenarios"] = ",".join(self.scenarios)
        for key in sorted(self.paths):
            out[f"path_{key}"] = self.paths[key]
        return out


@dataclass(frozen=True)
class Inputs:
    base_graph: object
    a1_graph: object
    archetypes: tuple
    policy_params: object
    engine_params: EngineParams


def default_cfg_path() -> str:
    return str(resources.files("capire").joinpath("data/capire.cfg"))


def parse_cfg(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, val = text.partition("=")
            values[key.strip()] = val.strip()
    return values


def _parse_scenarios(text: str) -> tuple:
    if text.strip().lower() == "all":
        return _ALL_SCENARIOS
    ids = [t.strip() for t in text.replace(";", ",").split(",") if t.strip()]
    parsed = [parse_scenario_id(t) for t in ids]
    # canonical table order, duplicates collapsed
    unique = sorted({s.index for s in parsed})
    by_index = {s.index: s.scenario_id for s in parsed}
    return tuple(by_index[i] for i in unique)


def _parse_workers(text: str) -> int:
    if text.strip().lower() == "auto":
        return os.cpu_count() or 1
    n = int(text)
    if n < 1:
        raise ConfigError(f"workers must be >= 1, got {n}")
    return n


def _parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in {"1", "true", "yes"}:
        return True
    if t in {"0", "false", "no"}:
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def load_settings(cfg_path=None, overrides=None) -> Settings:
    """Resolve settings: override dict beats the file, the file beats defaults.

    Override values may be strings (as from flags) or already-typed values.
    """
    if cfg_path is None:
        cfg_path = default_cfg_path()
    raw = parse_cfg(cfg_path)
    if overrides:
        for key, val in overrides.items():
            if val is not None:
                raw[key] = val
    base = os.path.dirname(os.path.abspath(cfg_path))

    paths = {}
    for key in _PATH_KEYS:
        if key not in raw:
            raise ConfigError(f"config missing required path key: {key}")
        paths[key] = os.path.normpath(os.path.join(base, str(raw[key])))

    def get(key, parse, default):
        if key in raw:
            return parse(raw[key])
        return default

    out_default = os.environ.get("CAPIRE_OUT", "out")
    settings = Settings(
        paths=paths,
        master_seed=get("master_seed", int, 20250823),
        n_students=get("n_students", int, 1343),
        n_replications=get("n_replications", int, 100),
        scenarios=get("scenarios", _parse_scenarios, _ALL_SCENARIOS),
        horizon=get("horizon", int, 12),
        workers=get("workers", _parse_workers, 1),
        compress=get("compress", _parse_bool, True),
        bottleneck_min_in_degree=get("bottleneck_min_in_degree", int, 3),
        bottleneck_quantile=get("bottleneck_quantile", float, 0.1),
        calibration_n_students=get("calibration_n_students", int, 300),
        calibration_replications=get("calibration_replications", int, 10),
        calibration_budget=get("calibration_budget", int, 200),
        out_dir=get("out_dir", str, out_default),
        param_overrides=get("param_overrides", str, ""),
    )
    if settings.n_students < 1 or settings.n_replications < 1:
        raise ConfigError("n_students and n_replications must be >= 1")
    if settings.horizon < 1:
        raise ConfigError("horizon must be >= 1")
    return settings


def load_inputs(settings: Settings) -> Inputs:
    base_graph = load_curriculum(
        settings.paths["courses"], settings.paths["edges"],
        plan_length=settings.horizon,
        bottleneck_min_in_degree=settings.bottleneck_min_in_degree,
        bottleneck_quantile=settings.bottleneck_quantile)
    spec = load_redesign(settings.paths["redesign_a1"], settings.paths["reassign"])
    a1_graph = apply_redesign(base_graph, spec)
    archetypes = tuple(load_archetypes(settings.paths["archetypes"]))
    policy_params = load_policy_params(settings.paths["policy_params"])
    engine_params = load_engine_params(settings.paths["engine_params"],
                                       settings.paths["course_pass"])
    if settings.param_overrides:
        path = settings.param_overrides
        if not os.path.isabs(path):
            path = os.path.normpath(os.path.join(
                os.path.dirname(settings.paths["courses"]), path))
        overrides = read_param_overrides(path)
        engine_params, archetypes = apply_param_overrides(
            engine_params, archetypes, overrides)
    return Inputs(base_graph=base_graph, a1_graph=a1_graph, archetypes=archetypes,
                  policy_params=policy_params, engine_params=engine_params)


def read_param_overrides(path) -> dict:
    values = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0].strip() in ("parameter", "key"):
                continue
            if len(row) != 2:
                raise ConfigError(f"bad override row in {path}: {row}")
            values[row[0].strip()] = float(row[1])
    return values


_GROUP_PARAMS = {
    "pass_shift_vulnerable": (GROUP_VULNERABLE, "pass_logit_shift"),
    "pass_shift_stable": (GROUP_STABLE, "pass_logit_shift"),
    "hazard_sens_vulnerable": (GROUP_VULNERABLE, "hazard_sensitivity"),
    "hazard_sens_stable": (GROUP_STABLE, "hazard_sensitivity"),
}


def apply_param_overrides(engine_params: EngineParams, archetypes, values: dict):
    """Map calibrated parameter names onto engine fields and archetype groups."""
    table = list(archetypes)
    engine_kwargs = {}
    for key, val in values.items():
        if key in _GROUP_PARAMS:
            group, attr = _GROUP_PARAMS[key]
            table = [replace(a, **{attr: val}) if a.group == group else a
                     for a in table]
        elif key in EngineParams.__dataclass_fields__ and key not in (
                "base_pass_prob", "friction"):
            engine_kwargs[key] = int(val) if key == "horizon" else val
        else:
            raise ConfigError(f"unknown calibration parameter: {key}")
    if engine_kwargs:
        engine_params = engine_params.replace(**engine_kwargs)
    return engine_params, tuple(table)
