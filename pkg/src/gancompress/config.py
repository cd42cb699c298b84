"""Experiment manifests: JSON config parsing, validation, and defaults.

A manifest fully determines a run.  Every command writes the resolved
manifest (all defaults expanded) next to its outputs so results are
reproducible from artifacts alone.
"""

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .errors import ConfigError
from .losses import DEFAULT_DISCRIMINATIVE_WEIGHTS, DEFAULT_GENERATIVE_WEIGHTS
from .models import resolve_task
from .strategies import resolve_strategy

DEFAULT_S_INITIAL = 0.05
DEFAULT_RAMP_FRACTION = 0.5   # sparsity reaches its target halfway through the run
DEFAULT_BUDGET_FRACTION = 0.10  # compression steps as a fraction of baseline steps
DEFAULT_EVAL_SAMPLES = 10000


@dataclass
class ExperimentManifest:
    task: str
    recipe: str
    seed: int = 0
    steps: int | None = None          # explicit step budget
    epochs: int | None = None         # alternative: epochs over the train split
    budget_fraction: float = DEFAULT_BUDGET_FRACTION
    sparsity: float = 0.5
    granularity: str = "element"
    s_initial: float = DEFAULT_S_INITIAL
    ramp_fraction: float = DEFAULT_RAMP_FRACTION
    update_interval: int = 1
    lam: float = 0.5
    epsilon: float = 1e-8
    generative_weights: dict = field(default_factory=lambda: dict(DEFAULT_GENERATIVE_WEIGHTS))
    discriminative_weights: dict = field(default_factory=lambda: dict(DEFAULT_DISCRIMINATIVE_WEIGHTS))
    batch_size: int | None = None     # None: task default
    lr: float | None = None           # None: task default
    data_dir: str | None = None
    out_dir: str = "runs"
    dense_checkpoint: str | None = None
    checkpoint_every: int = 0         # 0: only the final checkpoint
    eval_samples: int = DEFAULT_EVAL_SAMPLES
    extractor: str | None = None      # None: task default

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    def write(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


_SCHEMA = {
    # key: (python type(s), human-readable type, validator or None)
    "task": (str, "string task id", lambda v: resolve_task(v) and None),
    "recipe": (str, "string recipe id a..n", lambda v: resolve_strategy(v) and None),
    "seed": (int, "integer", lambda v: None if v >= 0 else "must be >= 0"),
    "steps": (int, "integer > 0", lambda v: None if v > 0 else "must be > 0"),
    "epochs": (int, "integer > 0", lambda v: None if v > 0 else "must be > 0"),
    "budget_fraction": (float, "number in (0, 1]", lambda v: None if 0 < v <= 1 else "must be in (0, 1]"),
    "sparsity": (float, "number in [0, 1]", lambda v: None if 0 <= v <= 1 else "must be in [0, 1]"),
    "granularity": (str, "one of element|vector|kernel|filter",
                    lambda v: None if v in ("element", "vector", "kernel", "filter") else "unknown granularity"),
    "s_initial": (float, "number in [0, 1]", lambda v: None if 0 <= v <= 1 else "must be in [0, 1]"),
    "ramp_fraction": (float, "number in (0, 1]", lambda v: None if 0 < v <= 1 else "must be in (0, 1]"),
    "update_interval": (int, "integer >= 1", lambda v: None if v >= 1 else "must be >= 1"),
    "lambda": (float, "number >= 0", lambda v: None if v >= 0 else "must be >= 0"),
    "epsilon": (float, "number > 0", lambda v: None if v > 0 else "must be > 0"),
    "generative_weights": (dict, "object of term -> weight", None),
    "discriminative_weights": (dict, "object of term -> weight", None),
    "batch_size": (int, "integer > 1", lambda v: None if v > 1 else "must be > 1"),
    "lr": (float, "number > 0", lambda v: None if v > 0 else "must be > 0"),
    "data_dir": (str, "string path", None),
    "out_dir": (str, "string path", None),
    "dense_checkpoint": (str, "string path", None),
    "checkpoint_every": (int, "integer >= 0", lambda v: None if v >= 0 else "must be >= 0"),
    "eval_samples": (int, "integer >= 2", lambda v: None if v >= 2 else "must be >= 2"),
    "extractor": (str, "string extractor id", None),
}

_REQUIRED = ("task", "recipe")


def validate_config(raw: dict) -> ExperimentManifest:
    """Turn a raw config dict into a manifest; unknown keys are rejected."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be an object, got {type(raw).__name__}")
    unknown = sorted(set(raw) - set(_SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    for key in _REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required config key '{key}'")
    clean = {}
    for key, value in raw.items():
        expected, readable, check = _SCHEMA[key]
        if value is None:
            continue
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, expected) or isinstance(value, bool):
            raise ConfigError(
                f"config key '{key}': expected {readable}, got {value!r}"
            )
        if check is not None:
            problem = check(value)
            if problem:
                raise ConfigError(f"config key '{key}': {problem} (got {value!r})")
        clean[key] = value
    if "steps" in clean and "epochs" in clean:
        raise ConfigError("config keys 'steps' and 'epochs' are mutually exclusive")
    for side in ("generative_weights", "discriminative_weights"):
        for term, w in clean.get(side, {}).items():
            if not isinstance(w, (int, float)) or isinstance(w, bool) or w < 0:
                raise ConfigError(
                    f"config key '{side}.{term}': expected number >= 0, got {w!r}"
                )
    if "lambda" in clean:
        clean["lam"] = clean.pop("lambda")
    try:
        return ExperimentManifest(**clean)
    except TypeError as e:  # pragma: no cover - schema table covers the fields
        raise ConfigError(str(e)) from e


def parse_config(path) -> ExperimentManifest:
    """Load and validate a JSON config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    return validate_config(raw)
