"""Run configuration: a YAML file with command-line overrides on top."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .analysis import CATEGORIES, TypeMapping
from .dataset import DEFAULT_EXTENSIONS, ExtensionFilter
from .errors import ConfigError
from .retrieval import ModelConfig
from .text import MarkupMode, PreprocessConfig

ALL_MODELS = ("vsm", "rvsm", "lsi-500", "lsi-1000", "bm25")

DEFAULTS: dict[str, Any] = {
    "repo": None,
    "head": "HEAD",
    "project": None,
    "issues": None,
    "output": "out",
    "workers": 1,
    "extensions": sorted(DEFAULT_EXTENSIONS),
    "preprocess": {"markup_mode": "keep_raw", "lowercase": True, "stem": True,
                   "subtoken_split": False, "marker_word": "CODEBLOCKMARKER"},
    "models": ["bm25"],
    "bm25": {"k1": 1.2, "b": 0.75, "delta": 1.0,
             "field_weights": {"name": 1.0, "content": 1.0}},
    "split": {"ratio": 0.5, "use": "test"},
    "grid": [],
    "type_mapping": {"Bug": "Bug", "New Feature": "New Feature",
                     "Improvement": "Improvement", "Task": "Task"},
    "analysis": {"model": "bm25", "categories": ["Bug", "New Feature", "Improvement", "Task"]},
    "top_k": 10,
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_model(label: str, bm25: dict) -> ModelConfig:
    """``vsm``, ``rvsm``, ``bm25``, ``lsi`` or ``lsi-<dims>``."""
    label = label.strip().lower()
    try:
        if label.startswith("lsi"):
            dims = int(label.split("-", 1)[1]) if "-" in label else 500
            return ModelConfig("lsi", lsi_dims=dims)
        if label == "bm25":
            return ModelConfig("bm25", k1=float(bm25["k1"]), b=float(bm25["b"]),
                               delta=float(bm25["delta"]),
                               field_weights={k: float(v) for k, v in bm25["field_weights"].items()})
        return ModelConfig(label)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad model {label!r}: {exc}") from exc


@dataclass
class RunConfig:
    repo: Path | None
    head: str
    project: str | None
    issues: Path | None
    output: Path
    workers: int
    extensions: ExtensionFilter
    preprocess: PreprocessConfig
    models: list[ModelConfig]
    split_ratio: float
    split_use: str
    grid: list[PreprocessConfig]
    type_mapping: TypeMapping
    analysis_model: str
    analysis_categories: list[str]
    top_k: int
    raw: dict = field(default_factory=dict, repr=False)

    def require(self, *names: str) -> None:
        for name in names:
            if getattr(self, name) in (None, ""):
                raise ConfigError(f"missing required setting: {name}")
        if "issues" in names and not Path(self.issues).is_file():
            raise ConfigError(f"issues file not found: {self.issues}")

    @property
    def model_labels(self) -> list[str]:
        return [m.label for m in self.models]


def _preprocess(section: dict) -> PreprocessConfig:
    try:
        return PreprocessConfig(MarkupMode(section["markup_mode"]), bool(section["lowercase"]),
                                bool(section["stem"]), bool(section["subtoken_split"]),
                                str(section["marker_word"]))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad preprocess settings: {exc}") from exc


def build_config(data: dict) -> RunConfig:
    cfg = _merge(DEFAULTS, data)
    models = cfg["models"]
    if isinstance(models, str):
        models = [m for m in models.split(",") if m]
    if models == ["all"]:
        models = list(ALL_MODELS)
    workers = int(cfg["workers"])
    if workers < 1:
        raise ConfigError("workers must be at least 1")
    ratio = float(cfg["split"]["ratio"])
    if not 0 < ratio < 1:
        raise ConfigError("split ratio must lie strictly between 0 and 1")
    use = cfg["split"]["use"]
    if use not in ("validation", "test", "all"):
        raise ConfigError(f"split.use must be validation, test or all, not {use!r}")
    project = cfg["project"]
    if project is not None and (not project or project != project.upper()):
        raise ConfigError(f"project prefix must be uppercase: {project!r}")
    exts = cfg["extensions"]
    if isinstance(exts, str):
        exts = exts.split(",")
    try:
        ext_filter = ExtensionFilter(frozenset(exts))
        mapping = TypeMapping(dict(cfg["type_mapping"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    categories = list(cfg["analysis"]["categories"])
    if set(categories) - set(CATEGORIES):
        raise ConfigError(f"analysis categories must be drawn from {CATEGORIES}")
    base_pre = cfg["preprocess"]
    return RunConfig(
        repo=Path(cfg["repo"]) if cfg["repo"] else None,
        head=str(cfg["head"]),
        project=project,
        issues=Path(cfg["issues"]) if cfg["issues"] else None,
        output=Path(cfg["output"]),
        workers=workers,
        extensions=ext_filter,
        preprocess=_preprocess(base_pre),
        models=[parse_model(m, cfg["bm25"]) for m in models],
        split_ratio=ratio,
        split_use=use,
        grid=[_preprocess(_merge(base_pre, g)) for g in cfg["grid"]],
        type_mapping=mapping,
        analysis_model=str(cfg["analysis"]["model"]),
        analysis_categories=categories,
        top_k=int(cfg["top_k"]),
        raw=cfg,
    )


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must contain a mapping")
    return build_config(_merge(data, overrides or {}))
