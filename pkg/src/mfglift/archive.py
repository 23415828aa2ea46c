"""On-disk archives of solutions.

An NCN archive is a directory holding ``model.cfg``, ``flow.csv``
(``t,x,density``), ``feedback.csv`` (``t,x,alpha``), ``value.csv``
(``t,x,value``) and ``meta.csv`` (``key,value``). A CN archive adds
``noise.csv`` (``t,B,q``) and ``shifted-flow.csv``. Archives are
self-describing: the model file inside is enough to reload everything.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .lift import CNSolution, read_noise_csv, write_noise_csv
from .measures import MeasureFlow, read_grid_csv, write_flow_csv
from .modelfile import load_model, write_model
from .ncn_solver import FeedbackControl, GridField, NCNSolution, ValueFunction


class ArchiveError(FileNotFoundError):
    pass


def write_field_csv(field: GridField, path, column: str) -> None:
    j = np.arange(field.n)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", column])
        for k, t in enumerate(field.times):
            x = field.x_min + field.offset(k) + field.dx * j
            for xi, vi in zip(x, field.values[k]):
                w.writerow([f"{t:.17g}", f"{xi:.17g}", f"{vi:.17g}"])


def _read_field(path, cls, dx: float):
    times, x_mins, _, values = read_grid_csv(path)
    return cls(times, float(x_mins[0]), dx, values)


def write_meta(meta: dict, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        for k, v in meta.items():
            w.writerow([k, v])


def read_meta(path) -> dict:
    with Path(path).open(encoding="utf-8") as fh:
        return {row["key"]: row["value"] for row in csv.DictReader(fh)}


def save_ncn(sol: NCNSolution, directory, name: str = "") -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_model(sol.model, d / "model.cfg", dt=sol.dt, name=name)
    write_flow_csv(sol.flow, d / "flow.csv")
    write_field_csv(sol.feedback, d / "feedback.csv", "alpha")
    write_field_csv(sol.value, d / "value.csv", "value")
    write_meta(
        {
            "kind": "ncn",
            "method": sol.method,
            "converged": "true" if sol.converged else "false",
            "fp_tol": f"{sol.fp_tol:.17g}",
            "dx": f"{sol.flow.dx:.17g}",
            "dt": f"{sol.dt:.17g}",
            "iterations": len(sol.picard_residuals),
            "residuals": ";".join(f"{r:.6e}" for r in sol.picard_residuals),
        },
        d / "meta.csv",
    )
    return d


def _require(d: Path, *names):
    if not d.is_dir():
        raise ArchiveError(f"archive not found: {d}")
    for n in names:
        if not (d / n).is_file():
            raise ArchiveError(f"archive {d} is missing {n}")


def load_ncn(directory) -> NCNSolution:
    d = Path(directory)
    _require(d, "model.cfg", "flow.csv", "feedback.csv", "value.csv", "meta.csv")
    meta = read_meta(d / "meta.csv")
    dx = float(meta["dx"])
    model = load_model(d / "model.cfg").model
    times, x_mins, _, dens = read_grid_csv(d / "flow.csv")
    flow = MeasureFlow(times, list(x_mins), dx, dens / (dx * dens.sum(axis=1, keepdims=True)))
    res = [float(r) for r in meta.get("residuals", "").split(";") if r]
    return NCNSolution(
        model,
        flow,
        _read_field(d / "feedback.csv", FeedbackControl, dx),
        _read_field(d / "value.csv", ValueFunction, dx),
        res,
        meta.get("converged") == "true",
        float(meta.get("fp_tol", "nan")),
        meta.get("method", "picard"),
    )


def save_cn(sol: CNSolution, directory) -> Path:
    d = save_ncn(sol.base, directory)
    write_model(sol.model, d / "model.cfg", dt=sol.base.dt)
    write_noise_csv(sol.noise, sol.shift, d / "noise.csv")
    write_flow_csv(sol.flow, d / "shifted-flow.csv")
    meta = read_meta(d / "meta.csv")
    meta.update(kind="cn", seed=sol.noise.seed)
    write_meta(meta, d / "meta.csv")
    return d


def load_cn(directory) -> CNSolution:
    d = Path(directory)
    _require(d, "noise.csv", "shifted-flow.csv")
    base = load_ncn(d)
    meta = read_meta(d / "meta.csv")
    noise, shift = read_noise_csv(d / "noise.csv", int(meta.get("seed", -1)))
    flow = base.flow.shifted(shift.values)
    return CNSolution(base.model, base, noise, shift, flow)


def archive_kind(directory) -> str:
    d = Path(directory)
    _require(d, "meta.csv")
    return read_meta(d / "meta.csv").get("kind", "ncn")

