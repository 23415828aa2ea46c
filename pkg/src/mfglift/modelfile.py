"""Sectioned key-value model files.

A model file is read with :mod:`configparser`. Coefficients are written as
sums of catalog terms (see :func:`mfglift.coefficients.parse_coefficient`)
so every coefficient stays inside the certifiable catalog. Errors carry the
line and column of the offending entry.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .coefficients import (
    CertificationError,
    Coefficient,
    CoefficientSet,
    MFGModel,
    affine_decompose,
    certify_set,
    parse_coefficient,
)
from .measures import GridMeasure
from .ncn_solver import default_grid

REQUIRED = {
    "dynamics": ("drift", "sigma"),
    "cost": ("running", "terminal"),
    "control": ("a_min", "a_max"),
    "initial": ("law",),
}


class ModelFileError(ValueError):
    def __init__(self, message: str, path=None, line: Optional[int] = None, column: Optional[int] = None):
        self.line, self.column = line, column
        where = str(path) if path is not None else "<model>"
        if line is not None:
            where += f":{line}"
            if column is not None:
                where += f":{column}"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class ModelFile:
    """A parsed model plus the numerics stored next to it."""

    model: MFGModel
    dt: float = 5e-4
    lift: bool = False
    name: str = ""


def _locate(lines: list, section: str, key: Optional[str]):
    """1-based ``(line, column)`` of ``key`` in ``section`` (or of the header)."""
    current = None
    for i, raw in enumerate(lines, 1):
        s = raw.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip().lower()
            if key is None and current == section:
                return i, raw.index("[") + 1
            continue
        if current == section and key is not None:
            m = re.match(r"\s*([^=:\s]+)\s*[=:]", raw)
            if m and m.group(1).lower() == key:
                eq = raw.index(m.group(0)[-1], m.start(1))
                return i, eq + 2 + (len(raw[eq + 1 :]) - len(raw[eq + 1 :].lstrip()))
    return None, None


_LAW = re.compile(r"^\s*normal\s*\(\s*([^,]+?)\s*,\s*([^,]+?)\s*\)\s*$")


def parse_law(text: str) -> tuple:
    """``normal(mean, var)`` -> ``(mean, var)``; the second argument is the variance."""
    m = _LAW.match(text)
    if m is None:
        raise ValueError(f"unknown initial law {text!r}; expected normal(mean, var)")
    mean, var = float(m.group(1)), float(m.group(2))
    if not var > 0:
        raise ValueError("variance must be positive")
    return mean, var


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _initial_grid(cs: CoefficientSet, mean: float, var: float, T: float, grid, where) -> GridMeasure:
    dx = float(where("grid", "dx", float, grid.get("dx", "0.02")))
    if not dx > 0:
        raise where.error("grid", "dx", "dx must be positive")
    lo_txt = grid.get("x_min", "auto").strip().lower()
    hi_txt = grid.get("x_max", "auto").strip().lower()
    if lo_txt == "auto" or hi_txt == "auto":
        # drift at zero control on the bulk of the initial law sets the margin
        std = math.sqrt(var)
        probe = GridMeasure.normal(mean, var, mean - 8 * std, 16 * std / 400, 401)
        xs = mean + std * np.linspace(-3.0, 3.0, 13)
        bound = float(np.max(np.abs(cs.b(0.0, xs, probe, 0.0))))
        x_min, dx, n = default_grid(mean, var, T, bound, dx=dx)
        if lo_txt != "auto":
            x_min = float(where("grid", "x_min", float, lo_txt))
        if hi_txt != "auto":
            n = int(round((float(where("grid", "x_max", float, hi_txt)) - x_min) / dx)) + 1
    else:
        x_min = float(where("grid", "x_min", float, lo_txt))
        x_max = float(where("grid", "x_max", float, hi_txt))
        n = int(round((x_max - x_min) / dx)) + 1
        if abs(x_min + (n - 1) * dx - x_max) > 1e-9 * max(1.0, abs(x_max)):
            raise where.error("grid", "x_max", "x_max - x_min must be a multiple of dx")
    if n < 2:
        raise where.error("grid", "x_max", "grid needs at least two nodes")
    return GridMeasure.normal(mean, var, x_min, dx, n)


class _Where:
    """Value conversion that reports the source position on failure."""

    def __init__(self, path, lines):
        self.path, self.lines = path, lines

    def error(self, section, key, message):
        line, col = _locate(self.lines, section, key)
        return ModelFileError(message, self.path, line, col)

    def __call__(self, section, key, conv, text):
        try:
            return conv(text)
        except ValueError as exc:
            raise self.error(section, key, f"[{section}] {key}: {exc}") from None


def parse_model_text(text: str, path=None, dx: Optional[float] = None, trials: int = 100) -> ModelFile:
    """Parse model-file text; ``dx`` overrides the grid spacing."""
    lines = text.splitlines()
    where = _Where(path, lines)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=str(path or "<model>"))
    except configparser.Error as exc:
        raise ModelFileError(str(exc).splitlines()[0], path, getattr(exc, "lineno", None)) from None
    for sec, keys in REQUIRED.items():
        if not cp.has_section(sec):
            raise ModelFileError(f"missing required section [{sec}]", path)
        for k in keys:
            if k not in cp[sec]:
                line, col = _locate(lines, sec, None)
                raise ModelFileError(f"missing required key {k!r} in [{sec}]", path, line, col)

    def coef(section, key, name, default=None):
        if not cp.has_section(section) or key not in cp[section]:
            return parse_coefficient(default, name)
        return where(section, key, lambda s: parse_coefficient(s, name), cp[section][key])

    meta = cp["model"] if cp.has_section("model") else {}
    T = where("model", "T", float, meta.get("T", "1.0"))
    lift = where("model", "lift", _bool, meta.get("lift", "false"))
    waiver = where("model", "lipschitz_waiver", _bool, meta.get("lipschitz_waiver", "false"))
    exps = {k: where("model", k, float, meta[k]) for k in ("p", "p_prime", "p_sigma") if k in meta}

    cs = CoefficientSet(
        b=coef("dynamics", "drift", "b"),
        sigma=coef("dynamics", "sigma", "sigma"),
        f=coef("cost", "running", "f"),
        g=coef("cost", "terminal", "g"),
        b0=coef("common_noise", "b0", "b0", "constant(0)"),
        sigma0=coef("common_noise", "sigma0", "sigma0", "constant(0)"),
    )
    a_min = where("control", "a_min", float, cp["control"]["a_min"])
    a_max = where("control", "a_max", float, cp["control"]["a_max"])
    if a_min > a_max:
        raise where.error("control", "a_max", "a_max must not be below a_min")
    law = cp["initial"]["law"].strip()
    mean, var = where("initial", "law", parse_law, law)
    grid = cp["grid"] if cp.has_section("grid") else {}
    if dx is not None:
        grid = dict(grid)
        grid["dx"] = repr(float(dx))
    dt = where("grid", "dt", float, grid.get("dt", "5e-4"))
    if "T" in grid:
        T = where("grid", "T", float, grid["T"])
    initial = _initial_grid(cs, mean, var, T, grid, where)

    a_range = (max(a_min, -5.0), min(a_max, 5.0))
    cs, reports = certify_set(cs, trials=trials, T=T, a_range=a_range)
    try:
        model = MFGModel(
            cs, T, a_min, a_max, initial, initial_law=f"normal({mean!r}, {var!r})", lipschitz_waiver=waiver, **exps
        )
    except ValueError as exc:
        raise ModelFileError(str(exc), path) from None

    if cp.has_section("affine"):
        aff = cp["affine"]
        Q, r_f, r_g = (where("affine", k, float, aff.get(k, "0")) for k in ("Q", "r_f", "r_g"))
        if not cs.certified:
            bad = next(k for k, r in reports.items() if not r.passed)
            raise CertificationError(
                f"affine block needs a certified base; {bad} failed: {reports[bad].describe()}", reports[bad]
            )
        model = affine_decompose(model, Q, r_f, r_g)
    elif lift and not cs.certified:
        bad = next(k for k, r in reports.items() if not r.passed)
        raise CertificationError(
            f"lift requested but {bad} is not translation invariant: {reports[bad].describe()}", reports[bad]
        )
    return ModelFile(model, dt, lift, meta.get("name", ""))


def load_model(path, dx: Optional[float] = None) -> ModelFile:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model file not found: {path}")
    return parse_model_text(path.read_text(encoding="utf-8"), path, dx)


def parse_model(path) -> MFGModel:
    """Read a model file and certify its coefficients."""
    return load_model(path).model


def _fmt(v: float) -> str:
    return repr(float(v))


def model_text(model: MFGModel, dt: float = 5e-4, lift: Optional[bool] = None, name: str = "") -> str:
    """Serialise ``model`` so that :func:`parse_model_text` reproduces it."""
    if model.initial_law is None:
        raise ValueError("only models with a named initial law can be written")
    cs = model.coefficients
    init = model.initial
    lift = model.lift_eligible if lift is None else lift
    head = ["[model]"] + ([f"name = {name}"] if name else [])
    out = head + [
        f"T = {_fmt(model.T)}",
        f"lift = {'true' if lift else 'false'}",
        f"lipschitz_waiver = {'true' if model.lipschitz_waiver else 'false'}",
        f"p = {_fmt(model.p)}",
        f"p_prime = {_fmt(model.p_prime)}",
        f"p_sigma = {_fmt(model.p_sigma)}",
        "",
        "[dynamics]",
        f"drift = {cs.b.spec()}",
        f"sigma = {cs.sigma.spec()}",
        "",
        "[cost]",
        f"running = {cs.f.spec()}",
        f"terminal = {cs.g.spec()}",
        "",
        "[common_noise]",
        f"b0 = {cs.b0.spec()}",
        f"sigma0 = {cs.sigma0.spec()}",
        "",
        "[control]",
        f"a_min = {_fmt(model.a_min)}",
        f"a_max = {_fmt(model.a_max)}",
        "",
        "[initial]",
        f"law = {model.initial_law}",
        "",
        "[grid]",
        f"x_min = {_fmt(init.x_min)}",
        f"x_max = {_fmt(init.x_min + (init.n - 1) * init.dx)}",
        f"dx = {_fmt(init.dx)}",
        f"dt = {_fmt(dt)}",
        "",
    ]
    return "\n".join(out)


def write_model(model: MFGModel, path, dt: float = 5e-4, lift: Optional[bool] = None, name: str = "") -> None:
    Path(path).write_text(model_text(model, dt, lift, name), encoding="utf-8", newline="\n")


def template_text(name: str = "lq") -> str:
    return resources.files("mfglift").joinpath("templates", f"{name}.cfg").read_text(encoding="utf-8")


def template_path(name: str = "lq") -> Path:
    return Path(str(resources.files("mfglift").joinpath("templates", f"{name}.cfg")))


def with_common_noise(mf: ModelFile, b0: Coefficient, sigma0: Coefficient) -> ModelFile:
    return replace(mf, model=mf.model.with_coefficients(b0=b0, sigma0=sigma0))
