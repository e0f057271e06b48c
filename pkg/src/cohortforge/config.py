"""Run configuration: typed parameters resolved from flags, env, file, defaults.

Config file grammar (see docs/formats.md)::

    # comment
    seed = 7
    [ga]
    k = 10          # same as "ga.k = 10" at top level

Precedence, highest first: command-line flag, ``COHORTFORGE_<KEY>``
environment variable (dots become underscores, upper case), config file,
built-in default.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Callable

from .errors import ConfigError

ENV_PREFIX = "COHORTFORGE_"


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).split(",") if x.strip())


PARSERS: dict[str, Callable[[Any], Any]] = {
    "int": int,
    "float": float,
    "str": str,
    "path": str,
    "bool": _bool,
    "floats": _floats,
}


@dataclass(frozen=True)
class Param:
    key: str
    type: str
    default: Any
    help: str
    choices: tuple = ()
    semantic: bool = True  # False: execution setting, kept out of manifests

    @property
    def flag(self) -> str:
        return "--" + self.key.replace(".", "-").replace("_", "-")

    @property
    def dest(self) -> str:
        return self.key.replace(".", "__")

    @property
    def env(self) -> str:
        return ENV_PREFIX + self.key.replace(".", "_").upper()

    def parse(self, raw, source: str):
        try:
            value = PARSERS[self.type](raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{self.key}: bad value {raw!r} from {source} ({exc})") from None
        if self.choices and value not in self.choices:
            raise ConfigError(f"{self.key}: {value!r} from {source} not in {list(self.choices)}")
        return value


COMMON = [
    Param("seed", "int", 0, "master random seed"),
    Param("threads", "int", 1, "worker threads (results do not depend on it)", semantic=False),
    Param("out", "path", "out", "output directory", semantic=False),
]

INDEX = [
    Param("index.kind", "str", "hermite_differential", "fitness/dissimilarity index",
          choices=("hermite_differential", "propensity_variance", "hermite_natural")),
    Param("index.mc_samples", "int", 10_000, "Monte Carlo draws for the natural Hermite index"),
    Param("index.ridge", "float", 1e-6, "ridge penalty for the propensity logistic fit"),
    Param("index.ps_replicates", "int", 1, "propensity fits averaged per evaluation"),
]

DATA = [
    Param("drop_missing", "bool", False, "drop rows with missing cells instead of failing"),
    Param("schema", "path", "", "optional column-kind schema file"),
    Param("max_levels", "int", 10, "max distinct values for categorical inference"),
]

PARAMS: dict[str, list[Param]] = {
    "preprocess": COMMON + DATA + [
        Param("clinical", "path", "", "clinical trial CSV"),
        Param("pool", "path", "", "external pool CSV"),
        Param("dim", "int", 5, "number of principal components d"),
        Param("max_dim", "int", 7, "cap on d for the pipeline and hull"),
        Param("bins", "int", 30, "histogram bins per component"),
    ],
    "index": COMMON + DATA + INDEX + [
        Param("treatment", "path", "", "first group CSV (treatment)"),
        Param("control", "path", "", "second group CSV (control); unused for hermite_natural"),
        Param("pipeline", "path", "", "optional fitted pipeline applied before indexing"),
    ],
    "match": COMMON + DATA + INDEX + [
        Param("treatment", "path", "", "treatment arm CSV (A)"),
        Param("control", "path", "", "trial control arm CSV (B)"),
        Param("pool", "path", "", "external pool CSV (R)"),
        Param("pipeline", "path", "", "optional fitted pipeline: search in transformed space"),
        Param("ga.m", "int", 0, "augmentation size m (required)"),
        Param("ga.k", "int", 10, "population size k"),
        Param("ga.s", "int", 50, "mutants per parent s"),
        Param("ga.max_generations", "int", 200, "generation cap"),
        Param("ga.stall", "int", 3, "generations without improvement before stopping"),
        Param("ga.incremental", "bool", True, "incremental Hermite swap evaluation"),
    ],
    "simulate": COMMON + [
        Param("sim.scale", "str", "desk", "preset: desk (pool 5,000, 20x20) or full (50,000, 100x100)",
              choices=("desk", "full")),
        Param("sim.n_treat", "int", 50, "treatment arm size"),
        Param("sim.n_control", "int", 10, "trial control arm size"),
        Param("sim.m_augment", "int", 40, "pool rows added to the control arm"),
        Param("sim.pool_size", "int", 0, "pool size (0: preset)"),
        Param("sim.n_datasets", "int", 0, "dataset replicates (0: preset)"),
        Param("sim.n_response_reps", "int", 0, "response replicates per dataset (0: preset)"),
        Param("sim.deltas", "floats", "0,0.05,0.1,0.15,0.2,0.25,0.3,0.4,0.5,1,2,5",
              "treatment effects (comma list)"),
        Param("sim.sigmas", "floats", "0.1,0.25,0.5", "noise standard deviations (comma list)"),
        Param("sim.alpha", "float", 0.05, "test level"),
        Param("sim.test", "str", "welch", "welch t-test or covariate-adjusted ols",
              choices=("welch", "ols")),
        Param("ga.k", "int", 10, "population size k"),
        Param("ga.s", "int", 50, "mutants per parent s"),
        Param("ga.max_generations", "int", 200, "generation cap"),
        Param("ga.stall", "int", 3, "generations without improvement before stopping"),
        Param("index.ridge", "float", 1e-6, "ridge penalty for the propensity logistic fit"),
    ],
    "report": COMMON + DATA + [
        Param("power_table", "path", "", "power table CSV to render"),
        Param("treatment", "path", "", "treatment CSV for a balance report"),
        Param("augmented", "path", "", "augmented control CSV for a balance report"),
    ],
}


def read_config_file(path) -> dict[str, str]:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    out, section = {}, ""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            out[f"{section}.{key}" if section else key] = value
    return out


def resolve(command: str, flags: dict[str, Any], config_path: str | None = None,
            environ: dict[str, str] | None = None) -> dict[str, Any]:
    """Merge the four sources for ``command``; returns ``{key: value}``."""
    params = PARAMS[command]
    environ = os.environ if environ is None else environ
    file_values = read_config_file(config_path) if config_path else {}
    known = {p.key for p in params}
    unknown = sorted(set(file_values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys for '{command}': {unknown}")
    out = {}
    for p in params:
        if flags.get(p.key) is not None:
            out[p.key] = p.parse(flags[p.key], f"flag {p.flag}")
        elif p.env in environ:
            out[p.key] = p.parse(environ[p.env], f"env {p.env}")
        elif p.key in file_values:
            out[p.key] = p.parse(file_values[p.key], f"config {config_path}")
        else:
            out[p.key] = p.parse(p.default, "default")
    return out


def semantic_config(command: str, resolved: dict[str, Any]) -> dict[str, Any]:
    keep = {p.key for p in PARAMS[command] if p.semantic}
    return {k: v for k, v in resolved.items() if k in keep}
