"""Experiment configuration: a JSON document checked against built-in defaults.

Every key of a user document must exist in the defaults (unknown keys are
rejected with their dotted path) and carry a value of the default's type.
Missing keys take the default; ``name`` and ``scenario`` are required.
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from importlib import resources

from .adm import AeConfig, GbtConfig, SEVERITY_CELLS
from .adversary import AttackSpec
from .errors import ConfigurationError, ParseError
from .mrfm import MrfmParams, RegionalRule, parse_rate_range
from .radio_model import NetworkLayout, PathlossParams, ShadowingParams, grid_layout
from .scenario import ScenarioConfig

REQUIRED = object()
FREEFORM = object()  # any JSON object; checked when it is used
ANY = object()  # any JSON value, including null

_pl, _sh = PathlossParams(), ShadowingParams()

DEFAULTS = {
    "name": REQUIRED,
    "seed": 0,
    "output_dir": ANY,
    "layout": {
        "rows": 3,
        "cols": 3,
        "area": [1000.0, 1000.0],
        "tx_power_dbm": 33.0,
        "bandwidth_rb": 50,
        "noise_dbm_per_rb": NetworkLayout.__dataclass_fields__["noise_dbm_per_rb"].default,
        "pathloss": {"intercept_db": _pl.intercept_db, "slope_db": _pl.slope_db,
                     "min_distance_m": _pl.min_distance_m},
        "shadowing": {"sigma_db": _sh.sigma_db, "decorrelation_m": _sh.decorrelation_m,
                      "site_correlation": _sh.site_correlation, "lattice_m": _sh.lattice_m},
    },
    "scenario": {
        "n_ues": 1000,
        "n_reports": 7500,
        "outage_cells": [],
        "malicious_fraction": 0.01,
        "reporting_mode": "immediate",
        "logged_period": 4,
        "measurement_noise_db": 1.0,
        "outage_reporting": "camped",
        "max_ticks": 10000,
    },
    "attack": {
        "strategy": "forge_low_rsrp",
        "target_region": ANY,
        "forge_band_dbm": [-140.0, -120.0],
        "neighbor_margin_db": 3.0,
        "coverage_margin_db": 5.0,
    },
    "split": {"test_fraction": 0.3},
    "ae": {"widths": [16, 8, 4, 8, 16], "epochs": 60, "learning_rate": 0.005, "batch_size": 64},
    "gbt": {"n_rounds": 100, "learning_rate": 0.1, "max_depth": 3, "n_bins": 32, "reg_lambda": 1.0,
            "standardized": False},
    "mrfm": {"n_neighbors": 15, "contamination": 0.15, "pca_k": 2},
    "regional_rule": {"eta": 10, "region_radius_m": 100.0},
    "fdt": {"k": 3, "speed_mps": 10.0, "threshold_fraction": 0.05, "floor_dbm": -120.0,
            "grid_resolution_m": 25.0},
    "grid": {"sizes": [2500, 5000, 7500], "severities": [1, 2, 3],
             "severity_cells": FREEFORM, "replicates": 1},
    "sweep": {"rates": "0.05:0.90:0.05"},
    "sonlab": {
        "real_outage_cells": [4],
        "fake_target_region": [500.0, 500.0, 160.0],
        "fake_fraction": 0.002,
        "fake_strategy": "mimic_outage_distribution",
        "training_outage_cells": [0],
        "resolution_m": 20.0,
        "power_boost_db": 3.0,
        "rsrp_floor_dbm": -120.0,
        "min_reports": 5,
        "n_compensating": 3,
    },
}

_FILLED_FREEFORM = {("grid", "severity_cells"): {str(k): list(v) for k, v in SEVERITY_CELLS.items()}}


def _type_ok(default, value) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def _type_name(default) -> str:
    return {bool: "boolean", int: "integer", float: "number", str: "string", list: "array"}.get(
        type(default), "value")


def _merge(defaults: dict, user: dict, path: str) -> dict:
    if not isinstance(user, dict):
        raise ConfigurationError(f"{path or 'config'}: expected an object")
    unknown = sorted(set(user) - set(defaults))
    if unknown:
        raise ConfigurationError(f"{path + '.' if path else ''}{unknown[0]}: unknown key")
    out = {}
    for key, default in defaults.items():
        where = f"{path}.{key}" if path else key
        if key not in user:
            if default is REQUIRED:
                raise ConfigurationError(f"{where}: required field missing")
            if default is FREEFORM:
                out[key] = copy.deepcopy(_FILLED_FREEFORM[tuple(where.split("."))])
            elif default is ANY:
                out[key] = None
            elif isinstance(default, dict):
                out[key] = _merge(default, {}, where)
            else:
                out[key] = copy.deepcopy(default)
            continue
        value = user[key]
        if default is REQUIRED or default is FREEFORM or default is ANY:
            if default is FREEFORM and not isinstance(value, dict):
                raise ConfigurationError(f"{where}: expected an object")
            out[key] = copy.deepcopy(value)
        elif isinstance(default, dict):
            out[key] = _merge(default, value, where)
        elif not _type_ok(default, value):
            raise ConfigurationError(f"{where}: expected {_type_name(default)}, got {json.dumps(value)}")
        else:
            out[key] = float(value) if isinstance(default, float) else copy.deepcopy(value)
    return out


def validate(document: dict) -> dict:
    """Fully resolved configuration (defaults filled) or ConfigurationError."""
    if isinstance(document, dict) and "scenario" not in document:
        raise ConfigurationError("scenario: required field missing")
    resolved = _merge(DEFAULTS, document, "")
    if not isinstance(resolved["name"], str) or not resolved["name"]:
        raise ConfigurationError("name: expected a non-empty string")
    ExperimentConfig(resolved).build_all()
    return resolved


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("mdtguard").joinpath("presets").iterdir()
                  if p.name.endswith(".json"))


def load_text(text: str, source: str = "<config>") -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: {exc.msg} (column {exc.colno})", exc.lineno) from None
    return validate(doc)


def load(path_or_preset: str) -> dict:
    """Read a config file, or a bundled preset when the name has no file behind it."""
    if os.path.exists(path_or_preset):
        with open(path_or_preset) as fh:
            return load_text(fh.read(), path_or_preset)
    if path_or_preset in preset_names():
        text = resources.files("mdtguard").joinpath("presets", path_or_preset + ".json").read_text()
        return load_text(text, path_or_preset)
    raise ConfigurationError(f"config: no file or preset named {path_or_preset!r} "
                             f"(presets: {', '.join(preset_names())})")


@dataclass(frozen=True)
class ExperimentConfig:
    """Typed views over a resolved configuration document."""

    doc: dict

    @property
    def name(self) -> str:
        return self.doc["name"]

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    def with_seed(self, seed: int) -> "ExperimentConfig":
        d = copy.deepcopy(self.doc)
        d["seed"] = int(seed)
        return ExperimentConfig(d)

    def layout(self) -> NetworkLayout:
        lay = self.doc["layout"]
        try:
            return grid_layout(lay["rows"], lay["cols"], tuple(lay["area"]), lay["tx_power_dbm"],
                               lay["bandwidth_rb"], noise_dbm_per_rb=lay["noise_dbm_per_rb"],
                               pathloss=PathlossParams(**lay["pathloss"]),
                               shadowing=ShadowingParams(**lay["shadowing"]))
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"layout: {exc}") from None

    def scenario(self, **overrides) -> ScenarioConfig:
        s = dict(self.doc["scenario"])
        s["outage_cells"] = tuple(s["outage_cells"])
        s["rng_seed"] = self.seed
        s.update(overrides)
        try:
            return ScenarioConfig(layout=self.layout(), **s)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"scenario: {exc}") from None

    def attack(self, **overrides) -> AttackSpec:
        a = dict(self.doc["attack"])
        a.setdefault("malicious_fraction", self.doc["scenario"]["malicious_fraction"])
        a["seed"] = self.seed
        a.update(overrides)
        try:
            return AttackSpec.from_dict(a)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"attack: {exc}") from None

    def ae(self) -> AeConfig:
        a = dict(self.doc["ae"])
        try:
            return AeConfig(widths=tuple(a.pop("widths")), seed=self.seed, **a)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"ae: {exc}") from None

    def gbt(self) -> GbtConfig:
        g = {k: v for k, v in self.doc["gbt"].items() if k != "standardized"}
        return GbtConfig(**g)

    @property
    def gbt_standardized(self) -> bool:
        return bool(self.doc["gbt"]["standardized"])

    def mrfm(self) -> MrfmParams:
        try:
            return MrfmParams(**self.doc["mrfm"])
        except ValueError as exc:
            raise ConfigurationError(f"mrfm: {exc}") from None

    def rule(self) -> RegionalRule:
        try:
            return RegionalRule(**self.doc["regional_rule"])
        except ValueError as exc:
            raise ConfigurationError(f"regional_rule: {exc}") from None

    @property
    def test_fraction(self) -> float:
        f = self.doc["split"]["test_fraction"]
        if not 0.0 < f < 1.0:
            raise ConfigurationError("split.test_fraction: must be in (0, 1)")
        return f

    def severity_cells(self) -> dict[int, tuple[int, ...]]:
        raw = self.doc["grid"]["severity_cells"]
        try:
            return {int(k): tuple(int(c) for c in v) for k, v in raw.items()}
        except (TypeError, ValueError):
            raise ConfigurationError("grid.severity_cells: expected {severity: [cell ids]}") from None

    def build_all(self) -> None:
        """Construct every typed object once so bad values fail before any run."""
        self.scenario()
        self.attack()
        self.ae()
        self.gbt()
        self.mrfm()
        self.rule()
        _ = self.test_fraction
        cells = self.severity_cells()
        missing = [s for s in self.doc["grid"]["severities"] if s not in cells]
        if missing:
            raise ConfigurationError(f"grid.severities: no outage cells for severity {missing[0]}")
        try:
            parse_rate_range(self.doc["sweep"]["rates"])
        except ValueError as exc:
            raise ConfigurationError(f"sweep.rates: {exc}") from None


def dump(doc: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
