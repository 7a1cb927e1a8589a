"""Experiment configuration files.

INI-style key-value files with a fixed schema. Unknown sections or keys
are rejected; values are typed on parsing and serialised so that
``parse(to_text(cfg)) == cfg``.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Tuple

from .errors import ConfigError, InvalidPotential, PotentialVanishesInside
from .potential import PotentialModel, get_potential


def _floats(s: str):
    s = s.strip()
    if not s:
        return ()
    return tuple(float(v) for v in s.split(","))


def _pairs(s: str):
    s = s.strip()
    if not s:
        return ()
    out = []
    for item in s.split(","):
        a, w = item.split(":")
        out.append((float(a), float(w)))
    return tuple(out)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _show(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ", ".join(f"{a!r}:{w!r}" for a, w in v)
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


_STR: Callable[[str], Any] = lambda s: s.strip()

SCHEMA: Dict[str, Dict[str, Callable[[str], Any]]] = {
    "experiment": {"name": _STR, "potential": _STR, "seed": int, "output": _STR, "criterion": _STR},
    "potential": {"name": _STR, "poly": _floats, "cosines": _pairs},
    "profile": {"half_width": float, "step": float},
    "grid": {"dx": float, "dt": float},
    "statics": {"gaps": _floats, "force_constant": float, "energy_constant": float,
                "residual_constant": float, "step": float},
    "evolve": {"t_end": float, "multikink": _floats, "velocities": _floats, "track": _bool,
               "backward": _bool, "stride": float, "boost": float},
    "cluster": {"positions": _floats, "L": float, "T": float, "l0": float, "stride": float,
                "T_check": float, "L_sweep": _floats, "spread": float},
    "modulation": {"g_constant": float, "velocity_constant": float, "force_constant": float},
    "asymptotics": {"t_start": float, "t_end": float, "gap_tol": float, "velocity_tol": float},
    "toda": {"n": int, "t0": float, "t1": float, "tol": float, "center": float, "perturb": float},
    "coercivity": {"gaps": _floats, "gap": float, "n_max": int, "floor": float},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Typed contents of a configuration file, keyed by section then key."""

    data: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    def get(self, section: str, key: str, default=None):
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"[{section}] {key} is not a known setting")
        return self.data.get(section, {}).get(key, default)

    def section(self, name: str) -> Dict[str, Any]:
        return dict(self.data.get(name, {}))

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None
        data: Dict[str, Dict[str, Any]] = {}
        for sec in cp.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"{source}: unknown section [{sec}]")
            data[sec] = {}
            for key, raw in cp.items(sec):
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"{source}: unknown key {key!r} in [{sec}]")
                try:
                    data[sec][key] = SCHEMA[sec][key](raw)
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"{source}: bad value for [{sec}] {key}: {exc}") from None
        return cls(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {p}: {exc}") from None
        return cls.parse(text, str(p))

    def to_text(self) -> str:
        lines = []
        for sec in self.data:
            lines.append(f"[{sec}]")
            for key, v in self.data[sec].items():
                lines.append(f"{key} = {_show(v)}")
            lines.append("")
        return "\n".join(lines)

    def potential(self) -> PotentialModel:
        """The configured potential: a custom table if given, else a registry name."""
        custom = self.data.get("potential")
        if custom:
            try:
                return PotentialModel(custom.get("name", "custom"), custom.get("poly", ()),
                                      custom.get("cosines", ()))
            except (InvalidPotential, PotentialVanishesInside) as exc:
                raise ConfigError(f"invalid custom potential: {exc}") from None
        name = self.data.get("experiment", {}).get("potential", "phi4")
        try:
            return get_potential(name)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
