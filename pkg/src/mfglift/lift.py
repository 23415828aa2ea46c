"""Lifting no-common-noise equilibria to common-noise equilibria and back.

The common noise acts on the whole population through a scalar shift
process ``q`` solving ``dq = b0(t, mu_bar_t(. - q)) dt + sigma0(...) dB``.
The lifted state is ``X = Y + q``, the lifted flow ``mu_t = mu_bar_t(. - q_t)``
and the control is unchanged.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .coefficients import CertificationError, Coefficient, FunctionalTerm, MFGModel
from .measures import MeasureFlow, shift_measure, wasserstein
from .ncn_solver import FeedbackControl, NCNSolution


class ShiftPropagationError(FloatingPointError):
    pass


@dataclass(frozen=True)
class BrownianPath:
    times: np.ndarray
    values: np.ndarray
    seed: int

    def __post_init__(self):
        if self.values[0] != 0.0:
            raise ValueError("Brownian paths start at 0")

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def coarsen(self, factor: int) -> "BrownianPath":
        """The same path observed on every ``factor``-th node."""
        if (self.times.size - 1) % factor:
            raise ValueError("factor must divide the number of steps")
        return BrownianPath(self.times[::factor], self.values[::factor], self.seed)


def brownian_path(times, seed: int) -> BrownianPath:
    """Seeded path with independent ``N(0, dt_k)`` increments."""
    times = np.asarray(times, dtype=float)
    rng = np.random.default_rng(seed)
    dB = rng.standard_normal(times.size - 1) * np.sqrt(np.diff(times))
    return BrownianPath(times, np.concatenate(([0.0], np.cumsum(dB))), seed)


def zero_path(times) -> BrownianPath:
    times = np.asarray(times, dtype=float)
    return BrownianPath(times, np.zeros(times.size), -1)


@dataclass(frozen=True)
class ShiftPath:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values[0] != 0.0:
            raise ValueError("the shift starts at 0")


@dataclass
class CNSolution:
    """Strong common-noise equilibrium built from ``base`` and ``noise``."""

    model: MFGModel
    base: NCNSolution
    noise: BrownianPath
    shift: ShiftPath
    flow: MeasureFlow

    @property
    def feedback(self) -> FeedbackControl:
        """The base feedback read in lifted coordinates: ``alpha(t, x - q_t)``."""
        return self.base.feedback.shifted(self.shift.values)

    @property
    def times(self) -> np.ndarray:
        return self.flow.times


def _same_grid(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and bool(np.allclose(a, b, rtol=0.0, atol=1e-12))


def _check_finite(value: float, what: str, t: float, q: float) -> float:
    if not math.isfinite(value):
        raise ShiftPropagationError(f"non-finite {what} at t={t:.6g}, q={q:.6g}")
    return value


def solve_q_sde(flow: MeasureFlow, b0: Coefficient, sigma0: Coefficient, noise: BrownianPath) -> ShiftPath:
    """Euler-Maruyama for the shift process on the common time grid."""
    if not _same_grid(flow.times, noise.times):
        raise ValueError("flow and noise must share one time grid")
    t, dB = flow.times, noise.increments
    q = np.zeros(t.size)
    for k in range(t.size - 1):
        mu = shift_measure(flow[k], q[k])
        drift = _check_finite(float(b0(t[k], 0.0, mu, 0.0)), "drift", t[k], q[k])
        vol = _check_finite(float(sigma0(t[k], 0.0, mu, 0.0)), "volatility", t[k], q[k])
        q[k + 1] = q[k] + drift * (t[k + 1] - t[k]) + vol * dB[k]
        _check_finite(q[k + 1], "shift", t[k + 1], q[k])
    return ShiftPath(t.copy(), q)


def structural_lipschitz(c: Coefficient) -> float:
    """A W_p-Lipschitz bound readable off the terms, or inf when unknown."""
    total = 0.0
    for term in c.terms:
        if not isinstance(term, FunctionalTerm):
            return math.inf
        F = term.functional
        if F.kind == "constant":
            continue
        if F.kind == "mean_affine" and F.x_coef == 0.0:
            total += F.outer.lipschitz
            continue
        return math.inf
    return total


def lift_solution(base: NCNSolution, noise: BrownianPath, model: MFGModel | None = None) -> CNSolution:
    """Shift the base equilibrium along the solution of the q-SDE.

    ``model`` defaults to the base model and may differ from it only in the
    common-noise coefficients.
    """
    model = base.model if model is None else model
    if not base.converged:
        raise ValueError("base solution not converged")
    if not model.lift_eligible:
        raise CertificationError("lift needs translation-invariance certificates on b, sigma, f, g")
    cs = model.coefficients
    if not model.lipschitz_waiver:
        lip = structural_lipschitz(cs.b0) + structural_lipschitz(cs.sigma0)
        if not math.isfinite(lip):
            from .coefficients import validate_existence_assumptions

            rep = validate_existence_assumptions(model, samples=50)["8_common_lipschitz"]
            if not rep.passed:
                raise ValueError("common-noise coefficients failed the Lipschitz check; set a waiver to proceed")
    shift = solve_q_sde(base.flow, cs.b0, cs.sigma0, noise)
    return CNSolution(model, base, noise, shift, base.flow.shifted(shift.values))


def inverse_lift(model: MFGModel, flow: MeasureFlow, noise: BrownianPath):
    """Recover ``(q, mu_bar)`` from a common-noise flow.

    ``q`` is the left-point (Ito) quadrature of ``b0(t, mu_t) dt`` plus
    ``sigma0(t, mu_t) dB`` and ``mu_bar_t = mu_t(. + q_t)``.
    """
    if not _same_grid(flow.times, noise.times):
        raise ValueError("flow and noise must share one time grid")
    cs = model.coefficients
    t, dB = flow.times, noise.increments
    q = np.zeros(t.size)
    for k in range(t.size - 1):
        mu = flow[k]
        drift = _check_finite(float(cs.b0(t[k], 0.0, mu, 0.0)), "drift", t[k], q[k])
        vol = _check_finite(float(cs.sigma0(t[k], 0.0, mu, 0.0)), "volatility", t[k], q[k])
        q[k + 1] = q[k] + drift * (t[k + 1] - t[k]) + vol * dB[k]
    return ShiftPath(t.copy(), q), flow.shifted(-q)


@dataclass(frozen=True)
class RoundTripReport:
    max_w1: float
    q_max_err: float


def round_trip_check(base: NCNSolution, noise: BrownianPath, model: MFGModel | None = None) -> RoundTripReport:
    lifted = lift_solution(base, noise, model)
    q, recovered = inverse_lift(lifted.model, lifted.flow, noise)
    max_w1 = max(wasserstein(recovered[k], base.flow[k], 1.0) for k in range(len(recovered)))
    return RoundTripReport(float(max_w1), float(np.max(np.abs(q.values - lifted.shift.values))))


def refinement_errors(
    flow_for_dt: Callable[[float], MeasureFlow],
    b0: Coefficient,
    sigma0: Coefficient,
    dt: float,
    levels: int,
    seeds: Sequence[int],
    reference_extra: int = 2,
):
    """Mean absolute terminal error of the shift under step halving.

    The reference uses ``dt / 2**(levels + reference_extra)``; coarser paths
    are observations of the same Brownian path. Returns ``(steps, errors)``.
    """
    fine = dt / 2 ** (levels + reference_extra)
    ref_flow = flow_for_dt(fine)
    flows = [flow_for_dt(dt / 2**j) for j in range(levels + 1)]
    errs = np.zeros(levels + 1)
    for seed in seeds:
        B = brownian_path(ref_flow.times, seed)
        q_ref = solve_q_sde(ref_flow, b0, sigma0, B).values[-1]
        for j, fl in enumerate(flows):
            Bj = B.coarsen(2 ** (levels + reference_extra - j))
            errs[j] += abs(solve_q_sde(fl, b0, sigma0, Bj).values[-1] - q_ref)
    steps = np.array([dt / 2**j for j in range(levels + 1)])
    return steps, errs / len(seeds)


def log_log_slope(h, err) -> float:
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def write_noise_csv(noise: BrownianPath, shift: ShiftPath, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "B", "q"])
        for t, b, q in zip(noise.times, noise.values, shift.values):
            w.writerow([f"{t:.17g}", f"{b:.17g}", f"{q:.17g}"])


def read_noise_csv(path, seed: int = -1):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return BrownianPath(data[:, 0], data[:, 1], seed), ShiftPath(data[:, 0], data[:, 2])
