"""Run configuration: flat ``key = value`` files merged with command-line flags."""
from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .amr import AmrConfig
from .problems import as_tensor


class ConfigError(ValueError):
    pass


def _int(v):
    if isinstance(v, bool) or float(v) != int(float(v)):
        raise ValueError(f"expected an integer, got {v!r}")
    return int(float(v))


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _opt_float(v):
    return None if str(v).strip().lower() in ("", "none", "default") else float(v)


def _opt_int(v):
    return None if str(v).strip().lower() in ("", "none", "default") else _int(v)


# file key -> (RunConfig attribute, parser)
KEYS = {
    "problem": ("problem", str),
    "degree": ("degree", _int),
    "discretization": ("discretization", str),
    "theta": ("theta", float),
    "tol": ("tol", float),
    "max_cells": ("max_cells", _int),
    "max_iters": ("max_iters", _int),
    "uniform_refines": ("uniform_refines", _int),
    "initial_refinement": ("initial_refinement", _int),
    "recovery.s": ("recovery_degree", _opt_int),
    "recovery_degree": ("recovery_degree", _opt_int),
    "recovery.averaging_degree": ("averaging_degree", str),
    "recovery.mode": ("recovery_mode", str),
    "dg.gamma": ("dg_gamma", _opt_float),
    "dg.delta": ("dg_delta", _int),
    "solver.tol": ("solver_tol", float),
    "solver.backend": ("solver_backend", str),
    "timing": ("timing", _bool),
    "seed": ("seed", _int),
    "out": ("out", str),
}
_REGION = re.compile(r"^region\.(\d+)\.tensor$")


@dataclass
class RunConfig:
    problem: str = "kellogg"
    degree: int = 1
    discretization: str = "cg"
    theta: float = 0.3
    tol: float = 0.01
    max_cells: int = 200_000
    max_iters: int = 200
    uniform_refines: int = 0
    initial_refinement: int = 1
    recovery_degree: int | None = None
    averaging_degree: str = "k-1"
    recovery_mode: str | None = None
    dg_gamma: float | None = None
    dg_delta: int = 1
    solver_tol: float = 1e-12
    solver_backend: str = "direct"
    timing: bool = True
    seed: int = 0
    out: str | None = None
    tensors: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.discretization not in ("cg", "dg"):
            raise ConfigError(f"discretization must be cg or dg, got {self.discretization!r}")
        if self.recovery_mode not in (None, "cg", "dg"):
            raise ConfigError(f"recovery mode must be cg or dg, got {self.recovery_mode!r}")
        if self.degree not in (1, 2, 3):
            raise ConfigError(f"degree must be 1, 2 or 3, got {self.degree}")
        if not 0 < self.theta < 1:
            raise ConfigError(f"theta must lie in (0, 1), got {self.theta}")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.uniform_refines < 0 or self.initial_refinement < 1:
            raise ConfigError("refinement counts must be nonnegative (initial level >= 1)")
        if self.dg_delta not in (-1, 0, 1):
            raise ConfigError(f"dg.delta must be -1, 0 or 1, got {self.dg_delta}")
        if self.dg_gamma is not None and not self.dg_gamma > 0:
            raise ConfigError("dg.gamma must be positive")
        if self.solver_backend not in ("direct", "cg"):
            raise ConfigError(f"solver.backend must be direct or cg, got {self.solver_backend!r}")
        try:
            self.amr_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def amr_config(self) -> AmrConfig:
        return AmrConfig(problem=self.problem, theta=self.theta, degree=self.degree,
                         recovery_degree=self.recovery_degree, averaging_degree=self.averaging_degree,
                         discretization=self.discretization, tol=self.tol, max_cells=self.max_cells,
                         max_iters=self.max_iters, initial_refinement=self.initial_refinement,
                         dg_gamma=self.dg_gamma, dg_delta=self.dg_delta, solver_tol=self.solver_tol,
                         solver_backend=self.solver_backend, timing=self.timing, tensors=dict(self.tensors))


def _parse_tensor(text: str):
    try:
        val = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        raise ValueError(f"cannot parse tensor {text!r}") from None
    t = as_tensor(np.atleast_1d(np.asarray(val, dtype=float)))
    return t


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into RunConfig attribute values.

    Blank lines and ``#`` comments are ignored; unknown keys are errors.
    """
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        try:
            m = _REGION.match(key)
            if m:
                out.setdefault("tensors", {})[int(m.group(1))] = _parse_tensor(val)
            elif key in KEYS:
                attr, conv = KEYS[key]
                out[attr] = conv(val)
            else:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return out


def load_config(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config_text(text, str(p))


def merge(file_values: dict, overrides: dict) -> RunConfig:
    """Config file values first, then non-``None`` overrides (command-line flags)."""
    names = {f.name for f in fields(RunConfig)}
    vals = {k: v for k, v in file_values.items() if k in names}
    vals.update({k: v for k, v in overrides.items() if v is not None and k in names})
    cfg = RunConfig(**vals)
    cfg.validate()
    return cfg
