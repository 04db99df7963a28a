"""Experiment configuration files.

A config is an INI file with fixed sections.  Every key has a default, so
a file only lists what it changes.  ``auto`` (or ``none`` for optional
integers) asks the factories to derive a value from the rest of the config.

Example::

    [problem]
    variant = strongly-convex
    lam = 0.2

    [step]
    rule = strongly-convex
    K = 1

    [schedule]
    c = 17.5
    max_level = 6
"""
from __future__ import annotations

import configparser
import dataclasses
import math
import typing
from dataclasses import dataclass, fields, replace
from typing import Optional

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config", "emit_config"]


class ConfigError(ValueError):
    pass


PROBLEM_VARIANTS = ("strongly-convex", "convex")
FIELD_FAMILIES = ("example1", "example2", "example3", "example3-modified")
RULES = ("strongly-convex", "constant", "variable")


@dataclass(frozen=True)
class ProblemSection:
    variant: str = "strongly-convex"
    lam: float = 0.2


@dataclass(frozen=True)
class FieldSection:
    family: str = "example1"
    # expansion overrides (auto keeps the family defaults); not used by example3
    a0: Optional[float] = None
    m: Optional[int] = None
    l: Optional[float] = None
    sigma: Optional[float] = None
    # regularity inputs for p = min(2s, t, 1); auto uses the family's values
    s: Optional[float] = None
    t: Optional[float] = None


@dataclass(frozen=True)
class StepSection:
    rule: str = "strongly-convex"
    theta: Optional[float] = None
    K: float = 1.0
    nu: Optional[float] = None
    d_ad: float = 1.0
    M: Optional[float] = None
    alpha: float = 0.5


@dataclass(frozen=True)
class ScheduleSection:
    c: float = 17.5
    p: Optional[float] = None
    refine: bool = True
    initial_level: int = 0
    max_level: Optional[int] = None


@dataclass(frozen=True)
class RunSection:
    n_steps: int = 300
    seed: int = 0
    ensemble: int = 5
    sweep: tuple = (25, 50, 75, 100, 125, 150, 175, 200, 225, 250)
    rules: tuple = ("constant", "variable")
    replicates: int = 1
    snapshots: int = 25
    fit_skip: float = 0.2
    levels: tuple = (2, 3, 4, 5, 6)


@dataclass(frozen=True)
class EstimateSection:
    samples: int = 200


@dataclass(frozen=True)
class SolverSection:
    method: str = "cg"
    tol: float = 1e-10
    estimate_method: str = "direct"


@dataclass(frozen=True)
class ReferenceSection:
    path: str = "reference"
    n_steps: int = 1000
    seed: int = 12345
    rule: Optional[str] = None
    theta: Optional[float] = None
    alpha: Optional[float] = None
    p: Optional[float] = None
    max_level: Optional[int] = None


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSection = dataclasses.field(default_factory=ProblemSection)
    field: FieldSection = dataclasses.field(default_factory=FieldSection)
    step: StepSection = dataclasses.field(default_factory=StepSection)
    schedule: ScheduleSection = dataclasses.field(default_factory=ScheduleSection)
    run: RunSection = dataclasses.field(default_factory=RunSection)
    estimate: EstimateSection = dataclasses.field(default_factory=EstimateSection)
    solver: SolverSection = dataclasses.field(default_factory=SolverSection)
    reference: ReferenceSection = dataclasses.field(default_factory=ReferenceSection)
    output: OutputSection = dataclasses.field(default_factory=OutputSection)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, seed=seed))

    def with_output(self, directory: str) -> "ExperimentConfig":
        return replace(self, output=replace(self.output, dir=directory))


_SECTION_TYPES = {f.name: f.default_factory for f in fields(ExperimentConfig)}


def _hints(cls):
    return typing.get_type_hints(cls)


def _parse_value(raw: str, tp, where: str):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        inner = [a for a in typing.get_args(tp) if a is not type(None)][0]
        if raw.lower() in ("auto", "none", ""):
            return None
        return _parse_value(raw, inner, where)
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("1", "yes", "true", "on"):
                return True
            if low in ("0", "no", "false", "off"):
                return False
            raise ValueError("expected yes/no")
        if tp is int:
            return int(raw)
        if tp is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError("must be finite")
            return v
        if tp is str:
            if not raw:
                raise ValueError("empty string")
            return raw
        if tp is tuple:
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if not items:
                raise ValueError("empty list")
            try:
                return tuple(int(s) for s in items)
            except ValueError:
                return tuple(items)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r}: {exc}") from None
    raise ConfigError(f"{where}: unsupported type {tp!r}")


def _format_value(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return str(v)


def _key_lines(text: str) -> dict:
    """(section, key) -> 1-based line number, for diagnostics."""
    out, section = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            out[(section, None)] = i
        elif section and s and s[0] not in "#;" and ("=" in s or ":" in s):
            key = s.replace(":", "=", 1).split("=", 1)[0].strip().lower()
            out.setdefault((section, key), i)
    return out


def _validate(cfg: ExperimentConfig, lines: dict) -> None:
    def fail(section, key, msg):
        line = lines.get((section, key.lower())) or lines.get((section, None))
        where = f"line {line}: " if line else ""
        raise ConfigError(f"{where}[{section}] {key}: {msg}")

    if cfg.problem.variant not in PROBLEM_VARIANTS:
        fail("problem", "variant", f"must be one of {PROBLEM_VARIANTS}")
    if cfg.problem.lam < 0:
        fail("problem", "lam", "must be >= 0")
    if cfg.problem.variant == "strongly-convex" and cfg.problem.lam <= 0:
        fail("problem", "lam", "the strongly convex variant needs lam > 0")
    if cfg.field.family not in FIELD_FAMILIES:
        fail("field", "family", f"must be one of {FIELD_FAMILIES}")
    if cfg.field.family.startswith("example3"):
        for key in ("a0", "m", "l", "sigma"):
            if getattr(cfg.field, key) is not None:
                fail("field", key, "the piecewise constant field has no expansion parameters")
    elif cfg.field.sigma is not None and cfg.field.family != "example2":
        fail("field", "sigma", "only example2 has a noise scale")
    if cfg.field.m is not None and cfg.field.m < 1:
        fail("field", "m", "must be >= 1")
    if cfg.field.l is not None and cfg.field.l <= 0:
        fail("field", "l", "must be > 0")
    if cfg.step.rule not in RULES:
        fail("step", "rule", f"must be one of {RULES}")
    if cfg.reference.rule is not None and cfg.reference.rule not in RULES:
        fail("reference", "rule", f"must be one of {RULES}")
    for r in cfg.run.rules:
        if r not in ("constant", "variable"):
            fail("run", "rules", "entries must be constant or variable")
    if cfg.step.theta is not None and cfg.step.theta <= 0:
        fail("step", "theta", "must be > 0")
    if cfg.step.d_ad <= 0:
        fail("step", "d_ad", "must be > 0")
    if cfg.step.M is not None and cfg.step.M <= 0:
        fail("step", "M", "must be > 0")
    if not 0 < cfg.step.alpha <= 1:
        fail("step", "alpha", "must lie in (0, 1]")
    if cfg.schedule.c <= 0:
        fail("schedule", "c", "must be > 0")
    for sec, p in (("schedule", cfg.schedule.p), ("reference", cfg.reference.p)):
        if p is not None and not 0 < p <= 1:
            fail(sec, "p", "must lie in (0, 1]")
    if cfg.run.n_steps < 1 or cfg.reference.n_steps < 1:
        fail("run", "n_steps", "must be >= 1")
    if cfg.run.ensemble < 1 or cfg.run.replicates < 1:
        fail("run", "ensemble", "ensemble and replicates must be >= 1")
    if any(not isinstance(n, int) or n < 1 for n in cfg.run.sweep):
        fail("run", "sweep", "must be positive integers")
    if not 0 <= cfg.run.fit_skip < 1:
        fail("run", "fit_skip", "must lie in [0, 1)")
    if cfg.estimate.samples < 1:
        fail("estimate", "samples", "must be >= 1")
    for key in ("method", "estimate_method"):
        if getattr(cfg.solver, key) not in ("cg", "direct"):
            fail("solver", key, "must be cg or direct")
    if cfg.solver.tol <= 0:
        fail("solver", "tol", "must be > 0")


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    lines = _key_lines(text)
    sections = {}
    for name in parser.sections():
        if name not in _SECTION_TYPES:
            raise ConfigError(f"line {lines.get((name, None))}: unknown section [{name}]")
        cls = type(_SECTION_TYPES[name]())
        hints = _hints(cls)
        by_lower = {f.name.lower(): f.name for f in fields(cls)}
        kwargs = {}
        for key, raw in parser.items(name):
            fname = by_lower.get(key)
            where = f"line {lines.get((name, key))}: [{name}] {key}"
            if fname is None:
                raise ConfigError(f"{where}: unknown key")
            kwargs[fname] = _parse_value(raw, hints[fname], where)
        try:
            sections[name] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from None
    cfg = ExperimentConfig(**sections)
    _validate(cfg, lines)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return parse_config(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def emit_config(cfg: ExperimentConfig) -> str:
    """Full config text; ``parse_config(emit_config(c)) == c``."""
    out = []
    for sec in fields(ExperimentConfig):
        out.append(f"[{sec.name}]")
        section = getattr(cfg, sec.name)
        for f in fields(section):
            out.append(f"{f.name} = {_format_value(getattr(section, f.name))}")
        out.append("")
    return "\n".join(out)


def as_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)
