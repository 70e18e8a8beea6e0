"""Pipeline configuration: TOML file + dotted --set overrides.

All randomness in the pipeline flows from the single config seed through
stage-name-hashed substreams (see stage_seed), so stages are reproducible
independently of execution order.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import ValidationError
from .regress import FAMILIES

STAGES = ("tile", "features", "proxies", "train", "eval", "loco", "two-stage", "poi", "all")
DEFAULT_LOG_COLUMNS = ["activity_density", "land_use_mix", "building_height", "small_parks"]
POI_VARIABLES = [
    "activity_density",
    "land_use_mix",
    "building_height",
    "small_parks",
    "block_size",
    "intersection_density",
    "anisotropicity",
]


@dataclass
class PipelineConfig:
    seed: int
    out: str
    n_comp: int
    inputs: dict
    features: dict
    preprocess: dict
    regressor: dict
    eval: dict
    raster: dict
    activity: dict
    poi: dict
    base_dir: str = "."
    raw: dict = field(default_factory=dict)

    def path(self, key: str, city: str | None = None) -> str:
        """Resolves an input path relative to the config file's directory."""
        v = self.inputs.get(key)
        if isinstance(v, dict):
            v = v.get(city)
        if not v:
            return ""
        return v if os.path.isabs(v) else os.path.join(self.base_dir, v)

    def out_dir(self) -> str:
        return self.out if os.path.isabs(self.out) else os.path.join(self.base_dir, self.out)

    def cities(self) -> list[str]:
        return sorted((self.inputs.get("rasters") or {}).keys())


def _set_dotted(d: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    cur = d
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
        if not isinstance(cur, dict):
            raise ValidationError(f"--set {dotted}: {p} is not a table")
    cur[parts[-1]] = value


def parse_set_value(text: str):
    """Parses the value side of --set KEY=VALUE as a TOML literal, falling
    back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def load_config(
    path: str,
    overrides: list[str] | None = None,
    out: str | None = None,
    seed: int | None = None,
) -> tuple["PipelineConfig", list[str]]:
    """Returns (config, errors). All validation problems are collected, not
    raised one at a time."""
    errors: list[str] = []
    if not os.path.exists(path):
        return None, [f"config file not found: {path}"]
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            return None, [f"{path}: TOML parse error: {exc}"]

    for ov in overrides or []:
        if "=" not in ov:
            errors.append(f"--set needs KEY=VALUE, got {ov!r}")
            continue
        key, _, val = ov.partition("=")
        _set_dotted(raw, key.strip(), parse_set_value(val.strip()))
    if out is not None:
        raw["out"] = out
    if seed is not None:
        raw["seed"] = seed

    base_dir = os.path.dirname(os.path.abspath(path))
    cfg = PipelineConfig(
        seed=raw.get("seed", 0),
        out=raw.get("out", "run"),
        n_comp=raw.get("n_comp", 16),
        inputs=raw.get("inputs", {}),
        features={"pca_scope": "all", "pca_per_city": False, **raw.get("features", {})},
        preprocess={"log_columns": DEFAULT_LOG_COLUMNS, **raw.get("preprocess", {})},
        regressor={"family": "svr", **raw.get("regressor", {})},
        eval={
            "k": 5,
            "repeats": 100,
            "loco": False,
            "two_stage": {"stage1_family": "elasticnet", "stage2_family": "elasticnet",
                          "train_on_true_proxies": False,
                          **raw.get("eval", {}).get("two_stage", {})},
            **{k: v for k, v in raw.get("eval", {}).items() if k != "two_stage"},
        },
        raster={"emit_pngs": False, **raw.get("raster", {})},
        activity={"bound_margin": 0.10, **raw.get("activity", {})},
        poi={"variables": POI_VARIABLES, **raw.get("poi", {})},
        base_dir=base_dir,
        raw=raw,
    )

    if not isinstance(cfg.seed, int) or cfg.seed < 0 or cfg.seed >= 2**64:
        errors.append(f"seed must be a 64-bit unsigned integer, got {cfg.seed!r}")
    if not isinstance(cfg.n_comp, int) or not (1 <= cfg.n_comp <= 64):
        errors.append(f"n_comp must be an integer in [1, 64], got {cfg.n_comp!r}")
    if cfg.regressor.get("family") not in FAMILIES:
        errors.append(f"regressor.family must be one of {FAMILIES}")
    ts = cfg.eval["two_stage"]
    for key in ("stage1_family", "stage2_family"):
        if ts.get(key) not in FAMILIES:
            errors.append(f"eval.two_stage.{key} must be one of {FAMILIES}")
    if cfg.eval["k"] < 2:
        errors.append(f"eval.k must be >= 2, got {cfg.eval['k']}")
    if cfg.eval["repeats"] < 1:
        errors.append(f"eval.repeats must be >= 1, got {cfg.eval['repeats']}")
    if cfg.features["pca_scope"] not in ("all", "assigned"):
        errors.append("features.pca_scope must be 'all' or 'assigned'")
    for col in cfg.preprocess["log_columns"]:
        if col not in POI_VARIABLES:
            errors.append(f"preprocess.log_columns: unknown variable {col!r}")
    for var in cfg.poi["variables"]:
        if var not in POI_VARIABLES:
            errors.append(f"poi.variables: unknown variable {var!r}")

    required = [
        "districts",
        "land_use",
        "parks",
        "blocks",
        "intersections",
        "radio_sites",
        "building_heights",
        "height_mapping",
    ]
    for key in required:
        p = cfg.path(key)
        if not p:
            errors.append(f"inputs.{key} is required")
        elif not os.path.exists(p):
            errors.append(f"inputs.{key}: file not found: {p}")
    rasters = cfg.inputs.get("rasters") or {}
    if not rasters:
        errors.append("inputs.rasters must map at least one city to a raster path")
    for city in rasters:
        p = cfg.path("rasters", city)
        if not os.path.exists(p):
            errors.append(f"inputs.rasters.{city}: file not found: {p}")
    for city, _ in (cfg.inputs.get("boundaries") or {}).items():
        p = cfg.path("boundaries", city)
        if not os.path.exists(p):
            errors.append(f"inputs.boundaries.{city}: file not found: {p}")
    for opt in ("pois", "water", "embeddings"):
        p = cfg.path(opt)
        if p and not os.path.exists(p):
            errors.append(f"inputs.{opt}: file not found: {p}")
    return cfg, errors


def stage_seed(seed: int, stage: str) -> int:
    """Substream derivation: low 8 bytes of sha256('<seed>:<stage>')."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big")
