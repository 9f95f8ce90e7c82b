"""Run configuration: a flat ``key = value`` text format.

Grammar, one entry per line::

    # comment                        (blank lines and '#' comments ignored)
    key = value                      (dotted keys, e.g. solver.tol)

Recognised keys and defaults:

    scenario            eikonal | eikonal-neg | controlled-diffusion
    problem             module.path:factory   (custom HJBProblem; excludes scenario)
    scheme              bdf2 (default) | euler | cn | bdf2-centered-drift
    ladder              N0, I0+1, levels       (required; N and I+1 double per level)
    cfl                 tau/h                  (required, > 0; checked against the ladder)
    norms               h1, l2, inf            (default all three)
    reference           exact (default) | euler
    reference.steps     Euler reference time steps     (default 65536)
    reference.i_plus_1  Euler reference intervals      (default 10240)
    reference.halving_check  true | false      (default true for euler references)
    error.min_step      first step included in max-over-time errors (default 2)
    solver.tol          1e-10
    solver.max_iter     10000
    solver.warm_start   extrapolate | previous
    output.csv          table.csv
    output.report       report.json
    output.profiles     false   (final-time profile CSV per row)
    output.matrices     false   (step systems of steps 1 and 2 per row)
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass, field
from typing import Optional

from .exceptions import ConfigError
from .problem import BUILTIN_PROBLEMS, HJBProblem, builtin_problem
from .stepper import SCHEMES

_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}
_NORMS = ("h1", "l2", "inf")


@dataclass(frozen=True)
class RunConfig:
    ladder: tuple
    cfl: float
    scenario: Optional[str] = None
    problem: Optional[str] = None
    scheme: str = "bdf2"
    norms: tuple = _NORMS
    reference: str = "exact"
    reference_steps: int = 65536
    reference_i_plus_1: int = 10240
    halving_check: Optional[bool] = None
    min_step: int = 2
    tol: float = 1e-10
    max_iter: int = 10000
    warm_start: str = "extrapolate"
    csv_name: str = "table.csv"
    report_name: str = "report.json"
    dump_profiles: bool = False
    dump_matrices: bool = False
    lines: dict = field(default_factory=dict, compare=False)

    @property
    def do_halving_check(self) -> bool:
        if self.halving_check is None:
            return self.reference == "euler"
        return self.halving_check

    def load_problem(self) -> HJBProblem:
        if self.scenario is not None:
            return builtin_problem(self.scenario)
        mod_name, _, attr = self.problem.partition(":")
        line = self.lines.get("problem")
        try:
            factory = getattr(importlib.import_module(mod_name), attr)
        except (ImportError, AttributeError) as exc:
            raise ConfigError(f"cannot load problem {self.problem!r}: {exc}", line=line) from exc
        prob = factory() if callable(factory) else factory
        if not isinstance(prob, HJBProblem):
            raise ConfigError(f"{self.problem!r} did not produce an HJBProblem", line=line)
        return prob

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario, "problem": self.problem, "scheme": self.scheme,
            "ladder": list(self.ladder), "cfl": self.cfl, "norms": list(self.norms),
            "reference": self.reference, "reference_steps": self.reference_steps,
            "reference_i_plus_1": self.reference_i_plus_1, "halving_check": self.do_halving_check,
            "min_step": self.min_step, "tol": self.tol, "max_iter": self.max_iter,
            "warm_start": self.warm_start,
        }


def _int(text, line, key, minimum=None):
    try:
        v = int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}", line=line) from None
    if minimum is not None and v < minimum:
        raise ConfigError(f"{key}: must be >= {minimum}, got {v}", line=line)
    return v


def _float(text, line, key):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}", line=line) from None


def _list(text):
    return [p.strip() for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration document."""
    raw: dict = {}
    lines: dict = {}
    for no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", line=no)
        key, value = (p.strip() for p in body.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=no)
        if key in raw:
            raise ConfigError(f"duplicate key {key!r} (first on line {lines[key]})", line=no)
        raw[key] = value
        lines[key] = no

    kw: dict = {"lines": lines}
    handlers = {
        "scenario": _scenario, "problem": _problem, "scheme": _scheme, "ladder": _ladder,
        "cfl": _cfl, "norms": _norms, "reference": _reference,
        "reference.steps": lambda v, l: {"reference_steps": _int(v, l, "reference.steps", 1)},
        "reference.i_plus_1": lambda v, l: {"reference_i_plus_1": _int(v, l, "reference.i_plus_1", 2)},
        "reference.halving_check": lambda v, l: {"halving_check": _bool(v, l, "reference.halving_check")},
        "error.min_step": lambda v, l: {"min_step": _int(v, l, "error.min_step", 0)},
        "solver.tol": _tol,
        "solver.max_iter": lambda v, l: {"max_iter": _int(v, l, "solver.max_iter", 1)},
        "solver.warm_start": _warm,
        "output.csv": lambda v, l: {"csv_name": _path(v, l, "output.csv")},
        "output.report": lambda v, l: {"report_name": _path(v, l, "output.report")},
        "output.profiles": lambda v, l: {"dump_profiles": _bool(v, l, "output.profiles")},
        "output.matrices": lambda v, l: {"dump_matrices": _bool(v, l, "output.matrices")},
    }
    for key, value in raw.items():
        handler = handlers.get(key)
        if handler is None:
            raise ConfigError(f"unknown key {key!r}", line=lines[key])
        kw.update(handler(value, lines[key]))

    if ("scenario" in kw) == ("problem" in kw):
        raise ConfigError("exactly one of 'scenario' or 'problem' is required",
                          line=lines.get("problem") or lines.get("scenario"))
    for required in ("ladder", "cfl"):
        if required not in kw:
            raise ConfigError(f"missing required key {required!r}")
    return RunConfig(**kw)


def _scenario(v, line):
    if v not in BUILTIN_PROBLEMS:
        raise ConfigError(f"unknown scenario {v!r}; expected one of {sorted(BUILTIN_PROBLEMS)}", line=line)
    return {"scenario": v}


def _problem(v, line):
    mod, sep, attr = v.partition(":")
    if not (mod and sep and attr):
        raise ConfigError(f"problem must be 'module:factory', got {v!r}", line=line)
    return {"problem": v}


def _scheme(v, line):
    if not v:
        return {"scheme": "bdf2"}
    if v not in SCHEMES:
        raise ConfigError(f"unknown scheme {v!r}; expected one of {list(SCHEMES)}", line=line)
    return {"scheme": v}


def _ladder(v, line):
    parts = _list(v)
    if len(parts) != 3:
        raise ConfigError(f"ladder must be 'N0, I0+1, levels', got {v!r}", line=line)
    n0 = _int(parts[0], line, "ladder N0", 1)
    i0 = _int(parts[1], line, "ladder I0+1", 2)
    levels = _int(parts[2], line, "ladder levels", 1)
    return {"ladder": (n0, i0, levels)}


def _cfl(v, line):
    c = _float(v, line, "cfl")
    if not c > 0:
        raise ConfigError(f"cfl must be > 0, got {c}", line=line)
    return {"cfl": c}


def _norms(v, line):
    names = tuple(_list(v))
    bad = [n for n in names if n not in _NORMS]
    if bad or not names:
        raise ConfigError(f"norms must be a subset of {list(_NORMS)}, got {v!r}", line=line)
    return {"norms": names}


def _reference(v, line):
    if v not in ("exact", "euler"):
        raise ConfigError(f"reference must be 'exact' or 'euler', got {v!r}", line=line)
    return {"reference": v}


def _tol(v, line):
    t = _float(v, line, "solver.tol")
    if not t > 0:
        raise ConfigError("solver.tol must be > 0", line=line)
    return {"tol": t}


def _warm(v, line):
    if v not in ("extrapolate", "previous"):
        raise ConfigError(f"solver.warm_start must be 'extrapolate' or 'previous', got {v!r}", line=line)
    return {"warm_start": v}


def _bool(v, line, key):
    try:
        return _BOOL[v.lower()]
    except KeyError:
        raise ConfigError(f"{key}: expected true/false, got {v!r}", line=line) from None


def _path(v, line, key):
    if not v:
        raise ConfigError(f"{key}: empty file name", line=line)
    return v
