"""Scenario configuration: a strict, versioned key/value schema.

Configs are YAML (JSON is valid YAML) with unknown keys rejected at every
level, so gain typos fail loudly instead of running with defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

CONFIG_VERSION = 1

SCENARIOS = (
    "passive-compass",
    "hzd-compass-opt",
    "hzd-compass-track",
    "lipm-zmp",
    "capture-point",
    "slip-orbit",
    "clf-track",
    "idqp-track",
)


class ConfigError(ValueError):
    """Invalid scenario configuration."""


def _check_keys(section: dict, allowed, where: str):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}; "
                          f"allowed: {sorted(allowed)}")


def _positive(value, name):
    value = float(value)
    if not value > 0:
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


@dataclass
class ScenarioConfig:
    scenario: str
    seed: int = 0
    output_dir: str = "out"
    rtol: float = 1e-10
    atol: float = 1e-10
    compass: dict = field(default_factory=dict)
    lipm: dict = field(default_factory=dict)
    slip: dict = field(default_factory=dict)
    controller: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config document must be a mapping")
        _check_keys(raw, {"config_version", "scenario", "seed", "output_dir",
                          "tolerances", "model", "controller", "options"}, "config")
        version = raw.get("config_version")
        if version != CONFIG_VERSION:
            raise ConfigError(f"config_version must be {CONFIG_VERSION}, got {version!r}")
        scenario = raw.get("scenario")
        if scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {scenario!r}; pick one of {SCENARIOS}")

        tol = raw.get("tolerances", {}) or {}
        _check_keys(tol, {"rtol", "atol"}, "tolerances")
        model = raw.get("model", {}) or {}
        _check_keys(model, {"compass", "lipm", "slip"}, "model")
        compass = model.get("compass", {}) or {}
        _check_keys(compass, {"m", "m_hip", "length", "hip_to_com", "com_to_foot",
                              "slope_deg", "g"}, "model.compass")
        for key in ("m", "m_hip", "length", "hip_to_com", "com_to_foot", "g"):
            if key in compass:
                _positive(compass[key], f"model.compass.{key}")
        lipm = model.get("lipm", {}) or {}
        _check_keys(lipm, {"m", "z_c", "g"}, "model.lipm")
        for key in lipm:
            _positive(lipm[key], f"model.lipm.{key}")
        slip = model.get("slip", {}) or {}
        _check_keys(slip, {"m", "l0", "k", "g", "aoa"}, "model.slip")
        for key in slip:
            _positive(slip[key], f"model.slip.{key}")

        controller = raw.get("controller", {}) or {}
        _check_keys(controller, {"kind", "kp", "kd", "eps", "gamma", "u_max",
                                 "mu_friction", "relax_weight", "regulator_kp",
                                 "regulator_kd"}, "controller")
        if "eps" in controller and not (0.0 < float(controller["eps"]) <= 1.0):
            raise ConfigError("controller.eps must lie in (0, 1]")
        for key in ("kp", "kd", "u_max", "mu_friction"):
            if key in controller:
                _positive(controller[key], f"controller.{key}")

        options = raw.get("options", {}) or {}
        if not isinstance(options, dict):
            raise ConfigError("options must be a mapping")

        seed = int(raw.get("seed", 0))
        rtol = _positive(tol.get("rtol", 1e-10), "tolerances.rtol")
        atol = _positive(tol.get("atol", 1e-10), "tolerances.atol")
        return cls(scenario=scenario, seed=seed,
                   output_dir=str(raw.get("output_dir", "out")),
                   rtol=rtol, atol=atol, compass=compass, lipm=lipm, slip=slip,
                   controller=controller, options=options)

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            try:
                raw = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return cls.from_dict(raw)

    def compass_params(self, actuated: bool = False):
        from gaitlab.compass import CompassParams

        kw = dict(self.compass)
        slope_deg = kw.pop("slope_deg", None)
        params = CompassParams(
            m=kw.get("m", 5.0),
            m_hip=kw.get("m_hip", 10.0),
            length=kw.get("length", 1.0),
            hip_to_com=kw.get("hip_to_com", 0.3),
            com_to_foot=kw.get("com_to_foot", 0.7),
            slope=np.deg2rad(slope_deg) if slope_deg is not None else 0.0,
            g=kw.get("g", 9.81),
            actuated=actuated,
        )
        return params.validate()

    def lipm_params(self):
        from gaitlab.lipm import LipmParams

        return LipmParams(
            m=self.lipm.get("m", 40.0),
            z_c=self.lipm.get("z_c", 0.9),
            g=self.lipm.get("g", 9.81),
        ).validate()

    def slip_params(self):
        from gaitlab.slip import SlipParams

        return SlipParams(
            m=self.slip.get("m", 80.0),
            l0=self.slip.get("l0", 1.0),
            k=self.slip.get("k", 14000.0),
            g=self.slip.get("g", 9.81),
            aoa=self.slip.get("aoa", 0.42),
        ).validate()

    def pd_gains(self, kp=100.0, kd=20.0, eps=0.25):
        from gaitlab.controllers import PdGains

        return PdGains(
            kp=[float(self.controller.get("kp", kp))],
            kd=[float(self.controller.get("kd", kd))],
            eps=float(self.controller.get("eps", eps)),
        )
