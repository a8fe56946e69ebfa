"""
shelfscan
~~~~~~~~~

:license: MIT, see LICENSE for more details.
"""

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union, get_args, get_type_hints

from shelfscan.engine import exception
from shelfscan.engine.features import ExtractorConfig
from shelfscan.engine.filtercascade import CascadeConfig
from shelfscan.engine.matching import MatchConfig


@dataclass(frozen=True)
class PipelineConfig:
    """Detection loop and consolidation parameters.

    Attributes:
        min_dim (int): Smallest larger-dimension of a size cascade entry.
        upscale_steps (int): Doubled pattern entries added to the cascade.
        shrink (float): Envelope scale bounding the pass-two flood fill.
        iou_threshold (float): Bounding box overlap that merges detections.
        max_propositions (int): Propositions examined per pattern entry.
        quality (float): Proposition threshold relative to the strongest.
        phase2_scale_quotient_range (Tuple[float, float]): Scale gate used
            with the scene-extracted pattern.
        two_phase (bool): Redetect with a pattern cut from the scene.
        workers (int): Threads used across patterns and cascade entries.
    """

    min_dim: int = 64
    upscale_steps: int = 1
    shrink: float = 0.8
    iou_threshold: float = 0.5
    max_propositions: int = 64
    quality: float = 0.01
    phase2_scale_quotient_range: Tuple[float, float] = (0.75, 1.5)
    two_phase: bool = True
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "phase2_scale_quotient_range", tuple(self.phase2_scale_quotient_range)
        )
        low, high = self.phase2_scale_quotient_range
        if not 0 < low < high:
            raise exception.InvalidValueError("phase2_scale_quotient_range needs 0 < lower < upper")
        if self.upscale_steps < 0:
            raise exception.InvalidValueError("upscale_steps must be >= 0")
        if self.min_dim < 1 or self.max_propositions < 1 or self.workers < 1:
            raise exception.InvalidValueError("min_dim, max_propositions and workers must be >= 1")
        if not 0 < self.shrink <= 1:
            raise exception.InvalidValueError("shrink must be in (0, 1]")
        if not 0 < self.iou_threshold <= 1 or not 0 < self.quality <= 1:
            raise exception.InvalidValueError("iou_threshold and quality must be in (0, 1]")


@dataclass(frozen=True)
class DebugConfig:
    """Vote image rendering.

    Attributes:
        render_sigma (float): Blur applied to rendered vote images.
        vote_image_dir (str, optional): Directory receiving one PNG per
            pattern entry and phase.
    """

    render_sigma: float = 2.0
    vote_image_dir: Optional[str] = None

    def __post_init__(self) -> None:
        if self.render_sigma <= 0:
            raise exception.InvalidValueError("render_sigma must be positive")


@dataclass(frozen=True)
class RunConfig:
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    matching: MatchConfig = field(default_factory=MatchConfig)
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    debug: DebugConfig = field(default_factory=DebugConfig)


SECTIONS = {
    "extractor": ExtractorConfig,
    "matching": MatchConfig,
    "cascade": CascadeConfig,
    "pipeline": PipelineConfig,
    "debug": DebugConfig,
}


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _coerce(where: str, value: Any, default: Any, declared: Any = None) -> Any:
    """Check `value` against the type of the field default.

    Fields defaulting to None are checked against their declared
    `Optional[...]` type instead.
    """

    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(default, float):
        if _is_number(value):
            return float(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    elif isinstance(default, tuple):
        if isinstance(value, (list, tuple)):
            if len(default) == 2 and len(value) == 2 and all(_is_number(v) for v in value):
                return tuple(float(v) for v in value)
            if not default and all(isinstance(v, int) and not isinstance(v, bool) for v in value):
                return tuple(value)
    elif default is None:
        if value is None:
            return value
        for kind in get_args(declared):
            if kind is not type(None) and isinstance(value, kind) and not isinstance(value, bool):
                return value
    raise exception.InvalidValueError(f"{where} has an invalid value {value!r}")


class Config:
    """Reads, validates and stores the engine configuration.

    Configuration is JSON, one object per section. Effective settings
    are layered: shipped defaults, then the global user file at `PATH`,
    then an explicit file.

    Attributes:
        PATH (Path): Path to the global configuration file.
        DEFAULTS (Path): Path to the shipped defaults.

    Usage:

        >>> from shelfscan.utils.config import Config
        >>> Config.write("cascade", "ncc_threshold", 0.55)
        >>> Config.read("cascade", "ncc_threshold")
        0.55
        >>> cfg = Config.load("run.json")
    """

    PATH: Path = Path().home() / ".shelfscan.json"
    DEFAULTS: Path = Path(__file__).resolve().parent.parent / "defaults.json"

    @classmethod
    def read(cls, section: str, key: str) -> Any:
        """Read an effective option.

        Raises:
            UnknownKeyError: If the section or key does not exist.

        Returns:
            Any: The value from the global file, or its default.
        """

        cls._check_key(section, key)
        return cls.to_dict(cls.load())[section][key]

    @classmethod
    def write(cls, section: str, key: str, value: Any) -> None:
        """Validate and store an option in the global file.

        Raises:
            UnknownKeyError: If the section or key does not exist.
            InvalidValueError: If the value does not fit the option.
            OutputWriteError: If the global file cannot be written.
        """

        cls._check_key(section, key)
        stored = cls._read_json(cls.PATH) if cls.PATH.exists() else {}
        stored.setdefault(section, {})[key] = value
        cls.from_dict(cls._merge(cls._read_json(cls.DEFAULTS), stored))
        try:
            with open(cls.PATH, "w", encoding="utf-8") as configfile:
                json.dump(stored, configfile, indent=2, sort_keys=True)
        except OSError as exc:
            raise exception.OutputWriteError(f"cannot write {cls.PATH}") from exc

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None) -> RunConfig:
        """Build the effective configuration.

        Args:
            path (str | Path, optional): Explicit configuration file laid
                over the defaults and the global file.

        Raises:
            ConfigError: If a file cannot be parsed or holds invalid keys
                or values.
        """

        layers = [cls._read_json(cls.DEFAULTS)]
        if cls.PATH.exists():
            layers.append(cls._read_json(cls.PATH))
        if path is not None:
            layers.append(cls._read_json(Path(path)))
        merged: Dict[str, Dict[str, Any]] = {}
        for layer in layers:
            merged = cls._merge(merged, layer)
        return cls.from_dict(merged)

    @classmethod
    def dump(cls, cfg: RunConfig, path: Optional[Union[str, Path]] = None) -> str:
        """Serialize a configuration, optionally to a file.

        Returns:
            str: The JSON text.
        """

        text = json.dumps(cls.to_dict(cfg), indent=2, sort_keys=True)
        if path is not None:
            try:
                Path(path).write_text(text + "\n", encoding="utf-8")
            except OSError as exc:
                raise exception.OutputWriteError(f"cannot write {path}") from exc
        return text

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> RunConfig:
        """Validate a configuration document into a :class:`RunConfig`.

        Missing sections and keys take their defaults.

        Raises:
            UnknownKeyError: For an unknown section or key.
            InvalidValueError: For a value of the wrong type or range.
        """

        if not isinstance(document, dict):
            raise exception.InvalidValueError("configuration must be a JSON object")
        sections = {}
        for section, values in document.items():
            if section not in SECTIONS:
                raise exception.UnknownKeyError(f"unknown section '{section}'")
            if not isinstance(values, dict):
                raise exception.InvalidValueError(f"section '{section}' must be an object")
            base = SECTIONS[section]()
            declared = get_type_hints(SECTIONS[section])
            defaults = {f.name: getattr(base, f.name) for f in fields(base)}
            changes = {}
            for key, value in values.items():
                if key not in defaults:
                    raise exception.UnknownKeyError(f"unknown key '{section}.{key}'")
                changes[key] = _coerce(f"{section}.{key}", value, defaults[key], declared[key])
            sections[section] = replace(base, **changes)
        return RunConfig(**sections)

    @classmethod
    def to_dict(cls, cfg: RunConfig) -> Dict[str, Dict[str, Any]]:
        document = {}
        for section in SECTIONS:
            part = getattr(cfg, section)
            document[section] = {
                f.name: list(value) if isinstance(value, tuple) else value
                for f in fields(part)
                for value in (getattr(part, f.name),)
            }
        return document

    @classmethod
    def parse_assignment(cls, text: str) -> Tuple[str, str, Any]:
        """Split `section.key=value`; the value is JSON or a bare string.

        Raises:
            InvalidValueError: If `text` is not an assignment.
        """

        target, sep, raw = text.partition("=")
        section, dot, key = target.strip().partition(".")
        if not sep or not dot or not section or not key:
            raise exception.InvalidValueError(f"expected section.key=value, got {text!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        return section, key, value

    @classmethod
    def _check_key(cls, section: str, key: str) -> None:
        if section not in SECTIONS:
            raise exception.UnknownKeyError(f"unknown section '{section}'")
        if key not in {f.name for f in fields(SECTIONS[section])}:
            raise exception.UnknownKeyError(f"unknown key '{section}.{key}'")

    @classmethod
    def _merge(cls, base: Dict[str, Any], layer: Dict[str, Any]) -> Dict[str, Any]:
        if not isinstance(layer, dict):
            raise exception.InvalidValueError("configuration must be a JSON object")
        merged = {section: dict(values) for section, values in base.items()}
        for section, values in layer.items():
            if not isinstance(values, dict):
                raise exception.InvalidValueError(f"section '{section}' must be an object")
            merged.setdefault(section, {}).update(values)
        return merged

    @classmethod
    def _read_json(cls, path: Path) -> Dict[str, Any]:
        try:
            with open(path, "r", encoding="utf-8") as configfile:
                return json.load(configfile)
        except json.JSONDecodeError as exc:
            raise exception.InvalidValueError(f"{path} is not valid JSON") from exc
        except OSError as exc:
            raise exception.ConfigError(f"cannot read {path}") from exc
