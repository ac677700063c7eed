"""Flat ``key=value`` run configuration with schema validation.

Lines are ``key = value``; blank lines and ``#`` comments are ignored.
Per-covariate basis sizes use a dotted suffix, e.g. ``K.2 = 10`` overrides
``K`` for functional covariate 2 (``K1.j``/``K2.j`` likewise for the value
and time directions of the nonlinear model).  Unknown keys are rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_bool(text: str):
    return None if text.strip().lower() in ("", "auto", "none") else _bool(text)


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _int_list(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _str_list(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise ValueError("must be >= 1")
    return v


# key -> (parser, default, allowed values or None)
SCHEMA = {
    # model and engine
    "model": (str, "normal", ("normal", "zimp")),
    "engine": (str, "gibbs", ("gibbs", "vb")),
    "link": (str, "logit", ("logit", "probit")),
    "functional_model": (str, "linear", ("linear", "nonlinear")),
    "K": (_pos_int, 8, None),
    "K1": (_pos_int, 4, None),
    "K2": (_pos_int, 6, None),
    "placement": (str, "equal", ("equal", "quantile")),
    "clip": (_bool, False, None),
    "standardize_curves": (_bool, False, None),
    # priors
    "tau0_sq": (float, 100.0, None),
    "tau1_sq": (float, 100.0, None),
    "a0": (float, 1.0, None),
    "b0": (float, 1.0, None),
    "a1": (float, 1.0, None),
    "b1": (float, 0.1, None),
    "a2": (float, 1.0, None),
    "b2": (float, 0.1, None),
    "coef_df": (float, 1.0, None),
    "coef_scale": (float, 2.5, None),
    "intercept_scale": (float, 10.0, None),
    "autoscale": (_bool, True, None),
    # sampler
    "iters": (_pos_int, 15000, None),
    "burnin": (int, 10000, None),
    "thin": (_pos_int, 100, None),
    "linearize_at": (str, "draw", ("draw", "mode")),
    "metropolis": (_opt_bool, None, None),
    # variational
    "max_sweeps": (_pos_int, 500, None),
    "tol": (float, 1e-6, None),
    "refresh_scales": (_bool, False, None),
    "backtrack_steps": (_pos_int, 30, None),
    # reporting
    "level": (float, 0.95, None),
    "seed": (int, 0, None),
    "output": (str, "run", None),
    "data": (str, "", None),
    # simulation
    "scenario": (str, "study1", ("study1", "study2")),
    "n": (_pos_int, 100, None),
    "base_n": (_pos_int, 500, None),
    "mu0": (float, 0.0, None),
    "mu1": (float, 9.0, None),
    "sigma2": (float, 18.0, None),
    "lam1": (_opt_float, None, None),
    "lam2": (_opt_float, None, None),
    "zero_weights": (_bool, False, None),
    # benchmark grid
    "bench_sizes": (_int_list, (100, 300, 500), None),
    "bench_models": (_str_list, ("normal", "zimp"), None),
    "bench_engines": (_str_list, ("gibbs", "vb"), None),
    "bench_reps": (_pos_int, 2, None),
    "threads": (_pos_int, 1, None),
}

_COVARIATE_KEY = re.compile(r"^(K|K1|K2)\.(\d+)$")


@dataclass
class RunConfig:
    """Validated settings; ``values`` holds every schema key, ``per_covariate``
    the dotted overrides as ``{(key, j): value}``."""

    values: dict = field(default_factory=dict)
    per_covariate: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {k: spec[1] for k, spec in SCHEMA.items()}
        merged.update(self.values)
        self.values = merged
        self.validate()

    def __getattr__(self, name):
        values = self.__dict__.get("values", {})
        if name in values:
            return values[name]
        raise AttributeError(name)

    def validate(self):
        for key, val in self.values.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            allowed = SCHEMA[key][2]
            if allowed is not None and val not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {val!r}")
        if self.values["burnin"] < 0 or self.values["burnin"] >= self.values["iters"]:
            raise ConfigError("need iters > burnin >= 0")
        if not 0 < self.values["level"] < 1:
            raise ConfigError("level must lie in (0, 1)")
        for eng in self.values["bench_engines"]:
            if eng not in ("gibbs", "vb"):
                raise ConfigError(f"unknown bench engine {eng!r}")
        for mdl in self.values["bench_models"]:
            if mdl not in ("normal", "zimp"):
                raise ConfigError(f"unknown bench model {mdl!r}")
        if self.values["model"] == "zimp" and self.values["link"] != "logit":
            raise ConfigError("the zero-inflated model supports the logit link only")

    def basis_size(self, key: str, covariate: int) -> int:
        return self.per_covariate.get((key, covariate), self.values[key])

    def updated(self, **changes) -> "RunConfig":
        return RunConfig({**self.values, **changes}, dict(self.per_covariate))

    def to_text(self) -> str:
        """Canonical ``key = value`` text that parses back to an equal config."""
        lines = [f"{k} = {_format(v)}" for k, v in sorted(self.values.items())]
        lines += [f"{k}.{j} = {v}" for (k, j), v in sorted(self.per_covariate.items())]
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        out = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.values.items()}
        out.update({f"{k}.{j}": v for (k, j), v in self.per_covariate.items()})
        return out


def _format(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(e) for e in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values, per_cov = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        m = _COVARIATE_KEY.match(key)
        base = m.group(1) if m else key
        if base not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            parsed = SCHEMA[base][0](val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
        if m:
            per_cov[(base, int(m.group(2)))] = parsed
        else:
            values[key] = parsed
    return RunConfig(values, per_cov)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
