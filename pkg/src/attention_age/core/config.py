"""Configuration management for YAML experiment files."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from .errors import ConfigError
from .paths import get_system_path

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_NAME = "default"
DEFAULT_CONFIG_PATH = get_system_path("config", "default.yaml")

PHASE1_MODES = ("region1", "hand", "erased")
REGION_CODES = ("O", "H", "R1", "R2", "E")
HEADS = ("expectation", "l1")

# Known configuration keys; anything not listed here triggers a warning.
# Keys map to None (leaf), a set of leaf names, or a nested dict.
_NETWORK_KEYS = {"channels", "kernel", "downsample"}
_MODE_KEYS = {"pool", "input_scale", "tau"}
NORMALIZE_MODES = ("none", "range", "deviation")
ERASE_FILLS = ("range", "local")
_KNOWN_KEYS: Dict[str, Any] = {
    "seed": None,
    "threads": None,
    "data": {
        "path": None,
        "generate": {
            "image_size", "n", "object_extent", "region1_size", "region2_size",
            "region1_share", "gender_effect", "noise_level", "max_rotation", "max_shift",
        },
        "split": {"n_val", "n_test"},
    },
    "labels": {"num_ages", "soft_label_width", "sigma", "lambda"},
    "phase1": {
        "batch_size": None,
        "epochs": None,
        "schedule": None,
        "normalize_maps": None,
        "network": _NETWORK_KEYS,
        "region1": _MODE_KEYS,
        "hand": _MODE_KEYS,
        "erased": _MODE_KEYS | {"fill", "margin"},
    },
    "phase2": {
        "regions": None,
        "head": None,
        "use_gender": None,
        "crop_size": None,
        "gender_units": None,
        "hidden_units": None,
        "batch_size": None,
        "epochs": None,
        "schedule": None,
        "network": _NETWORK_KEYS,
    },
}


def _check_keys(data: Dict[str, Any], known: Dict[str, Any], prefix: str) -> List[str]:
    """Return warnings for keys in *data* that are not in *known*."""
    warnings: List[str] = []
    if not isinstance(data, dict):
        return warnings
    for key in data:
        full = f"{prefix}.{key}" if prefix else key
        if key not in known:
            warnings.append(f"Unknown key '{full}'")
            continue
        spec = known[key]
        child = data[key]
        if spec is None or not isinstance(child, dict):
            continue
        if isinstance(spec, set):
            for sub in child:
                if sub not in spec:
                    warnings.append(f"Unknown key '{full}.{sub}'")
        else:
            warnings.extend(_check_keys(child, spec, full))
    return warnings


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Return *base* updated recursively with *override* (inputs untouched)."""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _read_yaml(path: Path) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    return data


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _optional_int(value: Any) -> Optional[int]:
    return None if value is None else int(value)


def _normalize_setting(value: Any) -> str:
    if value is True:
        return "range"
    if value is False or value is None:
        return "none"
    return str(value)


@dataclass(frozen=True)
class Phase1Settings:
    mode: str
    pool: str
    input_scale: float
    tau: float
    normalize_maps: str
    batch_size: int
    epochs: int
    schedule: Tuple[Tuple[int, float], ...]
    channels: Tuple[int, ...]
    kernel: int
    soft_label_width: int
    num_ages: int
    image_size: int
    downsample: Optional[int] = None

    @property
    def input_size(self) -> int:
        return max(1, int(round(self.image_size * self.input_scale)))


@dataclass(frozen=True)
class Phase2Settings:
    regions: Tuple[str, ...]
    head: str
    use_gender: bool
    crop_size: int
    gender_units: int
    hidden_units: int
    batch_size: int
    epochs: int
    schedule: Tuple[Tuple[int, float], ...]
    channels: Tuple[int, ...]
    kernel: int
    downsample: Optional[int] = None


class ConfigManager:
    """Loads the bundled defaults, merges a user file on top and validates."""

    def __init__(self, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None):
        if config_path in (None, "", DEFAULT_CONFIG_NAME):
            self.config_path: Optional[str] = None
        else:
            path = Path(config_path).expanduser()
            self.config_path = str(path if path.is_absolute() else path.resolve())
        self._overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        self._config: Optional[Dict[str, Any]] = None
        self.problems: List[str] = []

    @property
    def source(self) -> str:
        return self.config_path or DEFAULT_CONFIG_NAME

    def load_config(self) -> Dict[str, Any]:
        """Return the merged configuration (defaults, user file, overrides)."""
        if self._config is None:
            config = _read_yaml(DEFAULT_CONFIG_PATH)
            if self.config_path is not None:
                config = deep_merge(config, _read_yaml(Path(self.config_path)))
            self._config = deep_merge(config, self._overrides)
            logger.info("Loaded configuration from %s", self.source)
        return self._config

    def with_overrides(self, overrides: Dict[str, Any]) -> "ConfigManager":
        """A new manager on the same file with ``overrides`` merged over the current ones."""
        return ConfigManager(self.config_path, deep_merge(self._overrides, overrides))

    def get(self, dotted: str, default: Any = None) -> Any:
        value: Any = self.load_config()
        for key in dotted.split("."):
            if not isinstance(value, dict) or key not in value:
                return default
            value = value[key]
        return value

    def check_unknown_keys(self) -> List[str]:
        try:
            config = self.load_config()
        except ConfigError:
            return []
        return _check_keys(config, _KNOWN_KEYS, "")

    # -- validation ---------------------------------------------------------

    def _problems(self) -> List[str]:
        problems: List[str] = []
        add = problems.append

        seed = self.get("seed")
        if not _is_int(seed) or seed < 0:
            add("'seed' must be a non-negative integer")
        threads = self.get("threads")
        if not _is_int(threads) or threads < 1:
            add("'threads' must be an integer >= 1")

        num_ages = self.get("labels.num_ages")
        if not _is_int(num_ages) or num_ages < 2:
            add("'labels.num_ages' must be an integer >= 2")
        width = self.get("labels.soft_label_width")
        if not _is_int(width) or width < 1:
            add("'labels.soft_label_width' must be an integer >= 1")
        sigma = self.get("labels.sigma")
        if not _is_number(sigma) or sigma <= 0:
            add("'labels.sigma' must be a number > 0")
        lam = self.get("labels.lambda")
        if not _is_number(lam) or lam < 0:
            add("'labels.lambda' must be a number >= 0")

        data_path = self.get("data.path")
        if data_path not in (None, "") and not isinstance(data_path, str):
            add("'data.path' must be a string")
        if not problems:
            try:
                spec = self.gen_spec()
            except (TypeError, ValueError) as exc:
                add(f"'data.generate': {exc}")
                spec = None
            n_val, n_test = self.get("data.split.n_val"), self.get("data.split.n_test")
            if not _is_int(n_val) or not _is_int(n_test) or n_val < 0 or n_test < 0:
                add("'data.split.n_val' and 'data.split.n_test' must be integers >= 0")
            elif spec is not None and not data_path and n_val + n_test >= spec.n:
                add(f"'data.split' withholds {n_val + n_test} of {spec.n} samples; nothing left to train on")

        for phase in ("phase1", "phase2"):
            problems.extend(self._training_problems(phase))

        for mode in PHASE1_MODES:
            section = self.get(f"phase1.{mode}")
            if not isinstance(section, dict):
                add(f"'phase1.{mode}' section is missing")
                continue
            if section.get("pool") not in ("max", "avg"):
                add(f"'phase1.{mode}.pool' must be 'max' or 'avg'")
            scale = section.get("input_scale")
            if not _is_number(scale) or not 0 < scale <= 1:
                add(f"'phase1.{mode}.input_scale' must be in (0, 1]")
            if not _is_number(section.get("tau")):
                add(f"'phase1.{mode}.tau' must be a number")

        regions = self.get("phase2.regions")
        if not isinstance(regions, list) or not regions:
            add("'phase2.regions' must be a non-empty list")
        else:
            unknown = [r for r in regions if r not in REGION_CODES]
            if unknown:
                add(f"'phase2.regions' has unknown entries {unknown}; use {', '.join(REGION_CODES)}")
            if len(set(regions)) != len(regions):
                add("'phase2.regions' lists a region twice")
        if self.get("phase2.head") not in HEADS:
            add(f"'phase2.head' must be one of {', '.join(HEADS)}")
        if not isinstance(self.get("phase2.use_gender"), bool):
            add("'phase2.use_gender' must be true or false")
        for key, minimum in (("crop_size", 8), ("gender_units", 1), ("hidden_units", 1)):
            value = self.get(f"phase2.{key}")
            if not _is_int(value) or value < minimum:
                add(f"'phase2.{key}' must be an integer >= {minimum}")
        normalize = self.get("phase1.normalize_maps")
        if not isinstance(normalize, bool) and normalize not in NORMALIZE_MODES:
            add(f"'phase1.normalize_maps' must be true, false or one of {', '.join(NORMALIZE_MODES)}")
        if self.get("phase1.erased.fill", "range") not in ERASE_FILLS:
            add(f"'phase1.erased.fill' must be one of {', '.join(ERASE_FILLS)}")
        margin = self.get("phase1.erased.margin", 0)
        if not _is_int(margin) or margin < 0:
            add("'phase1.erased.margin' must be an integer >= 0")
        return problems

    def _training_problems(self, phase: str) -> List[str]:
        from ..nn.optim import normalize_schedule

        problems = []
        for key in ("batch_size", "epochs"):
            value = self.get(f"{phase}.{key}")
            if not _is_int(value) or value < 1:
                problems.append(f"'{phase}.{key}' must be an integer >= 1")
        schedule = self.get(f"{phase}.schedule")
        try:
            if not isinstance(schedule, list) or not all(isinstance(p, (list, tuple)) and len(p) == 2 for p in schedule):
                raise ValueError("expected a list of [epoch, learning_rate] pairs")
            normalize_schedule(schedule)
        except (TypeError, ValueError) as exc:
            problems.append(f"'{phase}.schedule': {exc}")
        channels = self.get(f"{phase}.network.channels")
        if not isinstance(channels, list) or not 1 <= len(channels) <= 5 or not all(
            _is_int(c) and c >= 1 for c in channels
        ):
            problems.append(f"'{phase}.network.channels' must list 1 to 5 positive integers")
        kernel = self.get(f"{phase}.network.kernel")
        if not _is_int(kernel) or kernel < 1 or kernel % 2 == 0:
            problems.append(f"'{phase}.network.kernel' must be an odd integer >= 1")
        downsample = self.get(f"{phase}.network.downsample")
        if downsample is not None and isinstance(channels, list) and (
            not _is_int(downsample) or not 0 <= downsample <= max(len(channels) - 1, 0)
        ):
            problems.append(
                f"'{phase}.network.downsample' must be an integer between 0 and the number of conv blocks minus one"
            )
        return problems

    def validate_config(self) -> bool:
        """Validate the merged configuration, logging every problem found."""
        try:
            self.problems = self._problems()
        except ConfigError as exc:
            self.problems = [str(exc)]
        for warning in self.check_unknown_keys():
            logger.warning(warning)
        if self.problems:
            for problem in self.problems:
                logger.error(problem)
            return False
        logger.info("Configuration validation passed")
        return True

    def require_valid(self) -> Dict[str, Any]:
        if not self.validate_config():
            raise ConfigError(f"invalid configuration ({self.source})", self.problems)
        return self.load_config()

    # -- typed accessors ----------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.get("seed", 0))

    @property
    def threads(self) -> int:
        return int(self.get("threads", 1))

    @property
    def num_ages(self) -> int:
        return int(self.get("labels.num_ages"))

    def gen_spec(self):
        from ..processors.synth import GenSpec

        params = dict(self.get("data.generate") or {})
        params["num_ages"] = self.get("labels.num_ages")
        params["seed"] = self.seed
        return GenSpec.from_dict(params)

    def loss_config(self, lam: Optional[float] = None):
        from ..processors.ldl import LossConfig

        return LossConfig(
            lam=float(self.get("labels.lambda") if lam is None else lam),
            sigma=float(self.get("labels.sigma")),
            num_ages=self.num_ages,
        )

    def phase1_settings(self, mode: str) -> Phase1Settings:
        if mode not in PHASE1_MODES:
            raise ValueError(f"mode must be one of {', '.join(PHASE1_MODES)}, got '{mode}'")
        section = self.get(f"phase1.{mode}")
        return Phase1Settings(
            mode=mode,
            pool=str(section["pool"]),
            input_scale=float(section["input_scale"]),
            tau=float(section["tau"]),
            normalize_maps=_normalize_setting(self.get("phase1.normalize_maps")),
            batch_size=int(self.get("phase1.batch_size")),
            epochs=int(self.get("phase1.epochs")),
            schedule=tuple((int(e), float(lr)) for e, lr in self.get("phase1.schedule")),
            channels=tuple(int(c) for c in self.get("phase1.network.channels")),
            kernel=int(self.get("phase1.network.kernel")),
            soft_label_width=int(self.get("labels.soft_label_width")),
            num_ages=self.num_ages,
            image_size=int(self.get("data.generate.image_size")),
            downsample=_optional_int(self.get("phase1.network.downsample")),
        )

    def phase2_settings(self) -> Phase2Settings:
        return Phase2Settings(
            regions=tuple(str(r) for r in self.get("phase2.regions")),
            head=str(self.get("phase2.head")),
            use_gender=bool(self.get("phase2.use_gender")),
            crop_size=int(self.get("phase2.crop_size")),
            gender_units=int(self.get("phase2.gender_units")),
            hidden_units=int(self.get("phase2.hidden_units")),
            batch_size=int(self.get("phase2.batch_size")),
            epochs=int(self.get("phase2.epochs")),
            schedule=tuple((int(e), float(lr)) for e, lr in self.get("phase2.schedule")),
            channels=tuple(int(c) for c in self.get("phase2.network.channels")),
            kernel=int(self.get("phase2.network.kernel")),
            downsample=_optional_int(self.get("phase2.network.downsample")),
        )

    def erase_policy(self):
        """How Region1 is erased for the erased classifier, the E crops and Region2 sweeps."""
        from ..processors.attention import ErasePolicy

        return ErasePolicy(
            fill=str(self.get("phase1.erased.fill", "range")),
            margin=int(self.get("phase1.erased.margin", 0)),
        )

    def config_hash(self, *sections: str) -> str:
        """sha256 of the canonical JSON of the given dotted sections (all if none)."""
        config = self.load_config()
        payload = {s: self.get(s) for s in sections} if sections else config
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def dump(self, path: Optional[Path] = None) -> str:
        text = yaml.safe_dump(self.load_config(), sort_keys=True, default_flow_style=None)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def stage_sections(stage: str) -> Sequence[str]:
    """Config sections whose values determine the output of ``stage``.

    Stages are ``gen-data``, ``phase1_<mode>``, ``localize`` and ``phase2``.
    """
    data = ("seed", "data", "labels.num_ages")
    if stage == "gen-data":
        return data
    training = data + (
        "labels.soft_label_width",
        "phase1.batch_size",
        "phase1.epochs",
        "phase1.schedule",
        "phase1.network",
    )
    if stage.startswith("phase1_"):
        mode = stage[len("phase1_"):]
        sections = training + (f"phase1.{mode}.pool", f"phase1.{mode}.input_scale")
        if mode == "erased":
            sections += ("phase1.erased.fill", "phase1.erased.margin", "phase1.region1", "phase1.normalize_maps")
        return sections
    if stage == "localize":
        return data + ("labels.soft_label_width", "phase1", "phase2.crop_size")
    return data + ("labels", "phase1", "phase2")


__all__ = [
    "ConfigManager",
    "Phase1Settings",
    "Phase2Settings",
    "DEFAULT_CONFIG_PATH",
    "PHASE1_MODES",
    "REGION_CODES",
    "HEADS",
    "NORMALIZE_MODES",
    "ERASE_FILLS",
    "deep_merge",
    "stage_sections",
]
