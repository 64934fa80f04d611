"""Run configuration: schema, YAML loading, environment overrides and hashing."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .data import CLIMATE_COLUMNS, SITE_COLUMNS
from .errors import ConfigError

ENV_PREFIX = "FIRSTARRIVAL_"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataConfig(_Section):
    sightings: str | None = None
    sites: str | None = None
    climate: str | None = None
    arrivals: str | None = None
    window_start: tuple[int, int] = (3, 20)
    window_end: tuple[int, int] = (7, 20)
    min_obs: int = Field(12, ge=1)
    standardize: bool = True


class ModelConfig(_Section):
    n_basis: int = Field(8, ge=2)
    scale_mode: Literal["gp", "linear"] = "linear"
    negation_constant: float = Field(123.0, gt=0)
    mu_site_covariates: list[str] = list(SITE_COLUMNS)
    mu_year_covariates: list[str] = list(CLIMATE_COLUMNS)
    gamma_site_covariates: list[str] = []
    gamma_year_covariates: list[str] = []


class PriorConfig(_Section):
    xi_var: float = Field(100.0, gt=0)
    theta_var: float = Field(100.0, gt=0)
    beta_var: float = Field(100.0, gt=0)
    gp_variance_var: float = Field(100.0, gt=0)
    gp_range_var: float | None = Field(None, gt=0)


class McmcSection(_Section):
    iterations: int = Field(110_900, ge=0)
    burn_in: int = Field(45_000, ge=0)
    thin: int = Field(50, ge=1)
    cluster_size: int = Field(10, ge=1)
    adapt: bool = True
    step_sizes: dict[str, float] = {}

    @model_validator(mode="after")
    def _burn(self):
        if self.iterations > 0 and self.burn_in >= self.iterations:
            raise ValueError("burn_in must be smaller than iterations")
        return self


class SelectionConfig(_Section):
    L_values: list[int] = [6, 8, 10, 12, 14]
    scale_modes: list[Literal["gp", "linear"]] = ["gp", "linear"]
    trim: float = Field(0.05, ge=0, lt=1)
    holdout_sites: list[str] = []
    holdout_count: int = Field(12, ge=1)


class SimulateConfig(_Section):
    n_sites: int = Field(20, ge=2)
    n_years: int = Field(8, ge=1)
    first_year: int = 2010
    n_basis: int = Field(4, ge=2)
    alpha: float = Field(0.5, gt=0, lt=1)
    theta: float = Field(1.0, ge=0)
    xi: float = -0.2
    mu_intercept: float = 80.0
    mu_site_effects: dict[str, float] = {"lat": -4.0, "elevation_m": -2.0}
    mu_year_effects: dict[str, float] = {"temp_anom": 3.0, "nao": 1.5}
    mu_gp_variance: float = Field(4.0, gt=0)
    mu_gp_range: float = Field(150.0, gt=0)
    log_sigma: float = 2.0
    latent_variance: float = Field(1.0, gt=0)
    latent_range: float = Field(150.0, gt=0)
    center_lon: float = -77.0
    center_lat: float = Field(41.0, ge=-80, le=80)
    extent_deg: float = Field(4.0, gt=0)
    missing_frac: float = Field(0.1, ge=0, lt=1)


class PredictConfig(_Section):
    years: list[int] = []
    target_sites: str | None = None
    n_draws: int | None = Field(None, ge=1)


class ProjectConfig(_Section):
    climate: str | None = None
    years: list[int] = []
    base_year: int | None = None


class PlotConfig(_Section):
    summaries: str | None = None
    column: str = "mean"


class RunConfig(_Section):
    seed: int = 0
    output_dir: str = "out"
    data: DataConfig = DataConfig()
    model: ModelConfig = ModelConfig()
    priors: PriorConfig = PriorConfig()
    mcmc: McmcSection = McmcSection()
    selection: SelectionConfig = SelectionConfig()
    simulate: SimulateConfig = SimulateConfig()
    predict: PredictConfig = PredictConfig()
    project: ProjectConfig = ProjectConfig()
    plot: PlotConfig = PlotConfig()

    def digest(self):
        """Stable hash of the validated configuration, excluding where outputs go."""
        doc = json.dumps(self.model_dump(mode="json", exclude={"output_dir"}), sort_keys=True,
                         separators=(",", ":"))
        return hashlib.sha256(doc.encode()).hexdigest()[:16]

    def header(self):
        """Provenance line written at the top of every output file."""
        return f"# config_hash={self.digest()} seed={self.seed}"

    def path(self, name):
        return Path(self.output_dir) / name


def _set_nested(doc, keys, value):
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError([f"cannot override below non-mapping key {k!r}"])
    node[keys[-1]] = value


def env_overrides(environ=None):
    """``FIRSTARRIVAL_MCMC__ITERATIONS=500`` sets ``mcmc.iterations``; values parse as YAML."""
    environ = os.environ if environ is None else environ
    out = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        keys = [k.lower() for k in name[len(ENV_PREFIX):].split("__") if k]
        if keys:
            _set_nested(out, keys, yaml.safe_load(raw))
    return out


def _merge(base, extra):
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _resolve_paths(doc, root):
    """Relative data paths are taken relative to the config file's directory."""
    for section, keys in (("data", ("sightings", "sites", "climate", "arrivals")),
                          ("predict", ("target_sites",)), ("project", ("climate",)),
                          ("plot", ("summaries",))):
        sec = doc.get(section)
        if not isinstance(sec, dict):
            continue
        for k in keys:
            v = sec.get(k)
            if isinstance(v, str) and not os.path.isabs(v):
                sec[k] = str(root / v)
    out = doc.get("output_dir")
    if isinstance(out, str) and not os.path.isabs(out):
        doc["output_dir"] = str(root / out)
    return doc


def load_config(path=None, seed=None, environ=None) -> RunConfig:
    """Read YAML, apply environment overrides and ``seed``, and validate.

    Every schema violation is reported in one :class:`ConfigError`.
    """
    doc = {}
    root = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except OSError as exc:
            raise ConfigError([f"cannot read config {path}: {exc.strerror}"]) from None
        except yaml.YAMLError as exc:
            raise ConfigError([f"config {path} is not valid YAML: {exc}".replace("\n", " ")]) from None
        if not isinstance(doc, dict):
            raise ConfigError([f"config {path} must be a mapping"])
        root = path.resolve().parent
    doc = _merge(doc, env_overrides(environ))
    if seed is not None:
        doc["seed"] = seed
    doc = _resolve_paths(doc, root)
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        violations = [f"{'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}"
                      for e in exc.errors()]
        raise ConfigError(violations) from None
