"""
Run configuration. A TOML file may hold the sections [ste], [priors], [flow],
[repair] and [synth] plus the top level keys threads, seed and progress;
anything else is rejected. Command line flags override the file.
"""
from __future__ import annotations
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ste_deflick.errors import ConfigError
from ste_deflick.flow import FlowParams
from ste_deflick.priors import PriorParams
from ste_deflick.repair import RepairParams
from ste_deflick.ste import SteParams
from ste_deflick.synth import FlickerSpec

SECTIONS: Dict[str, type] = {
    "ste": SteParams,
    "priors": PriorParams,
    "flow": FlowParams,
    "repair": RepairParams,
    "synth": FlickerSpec,
}
TOP_LEVEL: Dict[str, type] = {"threads": int, "seed": int, "progress": bool}
# the single top level seed drives every random draw
RESERVED: Dict[str, set] = {"synth": {"seed"}}


@dataclass(frozen=True)
class Config:
    ste: SteParams = field(default_factory=SteParams)
    priors: PriorParams = field(default_factory=PriorParams)
    flow: FlowParams = field(default_factory=FlowParams)
    repair: RepairParams = field(default_factory=RepairParams)
    synth: FlickerSpec = field(default_factory=FlickerSpec)
    threads: int = 0  # 0 = auto
    seed: int = 0
    progress: bool = True

    def __post_init__(self) -> None:
        if self.threads < 0:
            raise ConfigError("Invalid threads:{}".format(self.threads))
        if self.synth.seed != self.seed:
            object.__setattr__(self, "synth", replace(self.synth, seed=self.seed))

    def override(self, section: str, **values: Any) -> Config:
        """
        Replace fields of one section; None values are left alone so unset
        command line flags fall through to the file.
        """
        changes: Dict[str, Any] = {k: v for k, v in values.items() if v is not None}
        if not changes:
            return self
        if section not in SECTIONS:
            raise ConfigError("Unknown config section:{}".format(section))
        try:
            updated = replace(getattr(self, section), **changes)
        except (TypeError, ValueError) as error:
            raise ConfigError("[{}]: {}".format(section, error))
        return replace(self, **{section: updated})

    def with_top_level(self, **values: Any) -> Config:
        changes: Dict[str, Any] = {k: v for k, v in values.items() if v is not None}
        return replace(self, **changes) if changes else self


def _tuples(values: Mapping[str, Any]) -> Dict[str, Any]:
    # TOML arrays arrive as lists, range fields are tuples; [] stands for None
    return {
        k: (tuple(v) or None) if isinstance(v, list) else v for k, v in values.items()
    }


def _section(name: str, values: Any) -> Any:
    cls: type = SECTIONS[name]
    if not isinstance(values, Mapping):
        raise ConfigError("[{}] must be a table".format(name))
    known = {f.name for f in fields(cls)} - RESERVED.get(name, set())
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError("Unknown keys in [{}]: {}".format(name, ", ".join(unknown)))
    try:
        return cls(**_tuples(values))
    except (TypeError, ValueError) as error:
        raise ConfigError("[{}]: {}".format(name, error))


def config_from_mapping(values: Mapping[str, Any]) -> Config:
    unknown = sorted(set(values) - set(SECTIONS) - set(TOP_LEVEL))
    if unknown:
        raise ConfigError("Unknown config keys: {}".format(", ".join(unknown)))
    kwargs: Dict[str, Any] = {}
    for name, value in values.items():
        if name in SECTIONS:
            kwargs[name] = _section(name, value)
            continue
        expected: type = TOP_LEVEL[name]
        # bool is an int subclass, reject it for the integer keys
        bool_for_int: bool = expected is int and isinstance(value, bool)
        if not isinstance(value, expected) or bool_for_int:
            raise ConfigError("Invalid {}:{!r}".format(name, value))
        kwargs[name] = value
    return Config(**kwargs)


def load_config(path: Optional[Union[str, Path]] = None) -> Config:
    if path is None:
        return Config()
    file: Path = Path(path)
    if not file.is_file():
        raise ConfigError("No such config file: {}".format(file))
    try:
        with open(file, "rb") as stream:
            values: Dict[str, Any] = tomllib.load(stream)
    except tomllib.TOMLDecodeError as error:
        raise ConfigError("Invalid TOML in {}: {}".format(file, error))
    return config_from_mapping(values)
