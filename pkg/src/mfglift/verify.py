"""Monte Carlo checks of the equilibrium conditions.

Particles are driven by Euler-Maruyama on the solver's time grid. A shared
common-noise path freezes ``B``, so the empirical law of the ensemble
estimates the conditional law given ``B``. All comparisons between controls
reuse the same random numbers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np

from .coefficients import MFGModel
from .lift import BrownianPath, CNSolution
from .measures import EmpiricalMeasure, MeasureFlow, wasserstein
from .ncn_solver import FeedbackControl, NCNSolution


class ParticleEscapeError(RuntimeError):
    def __init__(self, index: int, t: float, x: float):
        self.index = index
        super().__init__(f"particle {index} escaped the simulation domain at t={t:.6g} (x={x:.6g})")


@dataclass
class ParticleEnsemble:
    """Recorded particle states and applied controls (``N x recorded times``)."""

    times: np.ndarray
    paths: np.ndarray
    controls: np.ndarray
    seed: int
    common_seed: Optional[int] = None
    rewards: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None

    @property
    def N(self) -> int:
        return self.paths.shape[0]

    def empirical(self, i: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.paths[:, i])


def _streams(seed: int):
    init, noise = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init), np.random.default_rng(noise)


def simulate_particles(
    model: MFGModel,
    feedback: FeedbackControl,
    flow: MeasureFlow,
    n_particles: int,
    seed: int,
    common: Optional[BrownianPath] = None,
    record_every: int = 1,
    keep_noise: bool = False,
    observer: Optional[Callable] = None,
    track_rewards: bool = True,
) -> ParticleEnsemble:
    """Simulate ``N`` players against the fixed flow ``flow``.

    With ``common`` given the common drift and volatility are evaluated on
    ``flow`` and all particles see the same increments of ``B``. Rewards
    ``sum f dt + g`` are accumulated per particle. ``observer(k, X, a)`` is
    called at every time node before the step is taken. With
    ``track_rewards=False`` costs are not evaluated and ``rewards`` is None.
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    times = flow.times
    if feedback.values.shape[0] != times.size or not np.allclose(feedback.times, times, rtol=0, atol=1e-12):
        raise ValueError("feedback and flow must share one time grid")
    if common is not None and not np.allclose(common.times, times, rtol=0, atol=1e-12):
        raise ValueError("common noise must live on the flow's time grid")
    cs = model.coefficients
    init_rng, noise_rng = _streams(seed)
    K = times.size - 1
    rec = list(range(0, K + 1, record_every))
    if rec[-1] != K:
        rec.append(K)
    rec_pos = {k: i for i, k in enumerate(rec)}
    paths = np.empty((n_particles, len(rec)))
    controls = np.empty((n_particles, len(rec)))
    noise = np.empty((n_particles, K)) if keep_noise else None

    X = model.initial.sample(init_rng, n_particles)
    reward = np.zeros(n_particles)
    width = flow.dx * (flow.n - 1)
    for k in range(K + 1):
        t, mu = times[k], flow[k]
        a = np.clip(feedback.at(k, X), model.a_min, model.a_max)
        if k in rec_pos:
            paths[:, rec_pos[k]] = X
            controls[:, rec_pos[k]] = a
        if observer is not None:
            observer(k, X, a)
        if k == K:
            if track_rewards:
                reward += cs.g(t, X, mu, 0.0)
            break
        dt = times[k + 1] - t
        drift = cs.b(t, X, mu, a)
        vol = cs.sigma(t, X, mu, a)
        dW = noise_rng.standard_normal(n_particles) * math.sqrt(dt)
        if keep_noise:
            noise[:, k] = dW
        if track_rewards:
            reward += cs.f(t, X, mu, a) * dt
        X = X + drift * dt + vol * dW
        if common is not None:
            dB = common.values[k + 1] - common.values[k]
            X = X + float(cs.b0(t, 0.0, mu, 0.0)) * dt + float(cs.sigma0(t, 0.0, mu, 0.0)) * dB
        centre = flow.x_min(k + 1) + 0.5 * width
        bad = np.flatnonzero(np.abs(X - centre) > width)
        if bad.size:
            raise ParticleEscapeError(int(bad[0]), times[k + 1], float(X[bad[0]]))
    return ParticleEnsemble(
        times[rec].copy(),
        paths,
        controls,
        seed,
        None if common is None else common.seed,
        reward if track_rewards else None,
        noise,
    )


def _time_index(times: np.ndarray, t: float) -> int:
    k = int(np.argmin(np.abs(times - t)))
    if abs(times[k] - t) > 1e-9:
        raise ValueError(f"time {t} is not a node of the claimed flow")
    return k


def check_fixed_point(claimed: MeasureFlow, ensemble: ParticleEnsemble) -> float:
    """Sup over recorded times of W1 between the ensemble and the claimed flow."""
    worst = 0.0
    for i, t in enumerate(ensemble.times):
        k = _time_index(claimed.times, t)
        worst = max(worst, wasserstein(ensemble.empirical(i), claimed[k], 1.0))
    return worst


def sde_residual(model: MFGModel, ensemble: ParticleEnsemble, flow: MeasureFlow, common: Optional[BrownianPath] = None) -> float:
    """Largest per-step mismatch of the recorded paths with the state equation."""
    if ensemble.noise is None or ensemble.times.size != flow.times.size:
        raise ValueError("residuals need an ensemble recorded at every step with its noise")
    cs = model.coefficients
    worst = 0.0
    for k in range(flow.times.size - 1):
        t, mu, dt = flow.times[k], flow[k], flow.times[k + 1] - flow.times[k]
        X, a = ensemble.paths[:, k], ensemble.controls[:, k]
        pred = X + cs.b(t, X, mu, a) * dt + cs.sigma(t, X, mu, a) * ensemble.noise[:, k]
        if common is not None:
            dB = common.values[k + 1] - common.values[k]
            pred = pred + float(cs.b0(t, 0.0, mu, 0.0)) * dt + float(cs.sigma0(t, 0.0, mu, 0.0)) * dB
        worst = max(worst, float(np.max(np.abs(ensemble.paths[:, k + 1] - pred))))
    return worst


# --------------------------------------------------------------------------
# optimality against deviations


@dataclass(frozen=True)
class DeviationGap:
    name: str
    gap: float
    stderr: float


def default_deviations(
    feedback: FeedbackControl,
    model: MFGModel,
    eps=(0.01, 0.02, 0.04),
    adapted: Optional[BrownianPath] = None,
) -> dict:
    """Zero control, the endpoints of A, scaled and shifted feedback, small perturbations.

    With ``adapted`` given, the family also contains ``alpha* +- 0.1 B_t``,
    controls adapted to the common noise. They are off by default because
    such controls cannot improve on an equilibrium.
    """
    lo, hi = model.a_min, model.a_max
    devs = {
        "zero": FeedbackControl.constant(feedback, min(max(0.0, lo), hi)),
        "const_min": FeedbackControl.constant(feedback, lo),
        "const_max": FeedbackControl.constant(feedback, hi),
        "scaled_0.5": feedback.mapped(lambda v: 0.5 * v, lo, hi),
        "scaled_1.5": feedback.mapped(lambda v: 1.5 * v, lo, hi),
        "shifted_+0.1": feedback.mapped(lambda v: v + 0.1, lo, hi),
        "shifted_-0.1": feedback.mapped(lambda v: v - 0.1, lo, hi),
    }
    for e in eps:
        devs[f"eps_{e:g}"] = feedback.mapped(lambda v, e=e: v + e, lo, hi)
    if adapted is not None:
        if adapted.times.size != feedback.times.size or np.any(adapted.times != feedback.times):
            raise ValueError("common path and feedback use different time grids")
        B = adapted.values[:, None]
        devs["adapted_B_+0.1"] = feedback.mapped(lambda v: v + 0.1 * B, lo, hi)
        devs["adapted_B_-0.1"] = feedback.mapped(lambda v: v - 0.1 * B, lo, hi)
    return devs


def check_optimality_by_deviation(
    model: MFGModel,
    flow: MeasureFlow,
    feedback: FeedbackControl,
    deviations: Mapping[str, FeedbackControl],
    n_particles: int,
    seed: int,
    common: Optional[BrownianPath] = None,
) -> list:
    """``J(alpha*) - J(alpha')`` per deviation, with its Monte Carlo standard error.

    The flow stays fixed at the claimed equilibrium; every simulation uses
    the same seed and common path.
    """
    base = simulate_particles(model, feedback, flow, n_particles, seed, common, record_every=flow.times.size)
    out = []
    for name, dev in deviations.items():
        alt = simulate_particles(model, dev, flow, n_particles, seed, common, record_every=flow.times.size)
        diff = base.rewards - alt.rewards
        se = float(np.std(diff, ddof=1) / math.sqrt(n_particles)) if n_particles > 1 else 0.0
        out.append(DeviationGap(name, float(np.mean(diff)), se))
    return out


def feedback_lipschitz(feedback: FeedbackControl, flow: Optional[MeasureFlow] = None, rel_mass: float = 1e-8) -> float:
    """Largest grid slope of the feedback.

    With ``flow`` given only cells where the population has density above
    ``rel_mass`` times the peak count; boundary rows of the HJB grid carry
    no mass and their one-sided artefacts are ignored.
    """
    slope = np.abs(np.diff(feedback.values, axis=1)) / feedback.dx
    if flow is not None:
        if flow.densities.shape != feedback.values.shape:
            raise ValueError("flow and feedback grids differ")
        d = flow.densities
        live = np.maximum(d[:, 1:], d[:, :-1]) > rel_mass * d.max(axis=1, keepdims=True)
        slope = np.where(live, slope, 0.0)
    return float(np.max(slope))


def discretization_budget(feedback: FeedbackControl, dt: float, flow: Optional[MeasureFlow] = None) -> float:
    """``5 (dx + dt) L`` with ``L = 1 + sup |d alpha / dx|`` over the populated cells."""
    return 5.0 * (feedback.dx + dt) * (1.0 + feedback_lipschitz(feedback, flow))


# --------------------------------------------------------------------------
# objective equality under the lift


@dataclass(frozen=True)
class ObjectiveEquality:
    J_ncn: float
    J_cn: float

    @property
    def error(self) -> float:
        return abs(self.J_cn - self.J_ncn)


def check_objective_equality(base: NCNSolution, lifted: CNSolution, n_particles: int, seed: int) -> ObjectiveEquality:
    """Evaluate both objectives on the coupling ``X = Y + q``.

    Costs are integrated with the same left-point rule as the simulation, so
    the integrands agree pathwise up to evaluation round-off.
    """
    cs_n, cs_c = base.model.coefficients, lifted.model.coefficients
    times, q = base.flow.times, lifted.shift.values
    K = times.size - 1
    J_n = np.zeros(n_particles)
    J_c = np.zeros(n_particles)

    def accumulate(k, Y, a):
        if k == K:
            J_n[:] += cs_n.g(times[K], Y, base.flow[K], 0.0)
            J_c[:] += cs_c.g(times[K], Y + q[K], lifted.flow[K], 0.0)
            return
        dt = times[k + 1] - times[k]
        J_n[:] += cs_n.f(times[k], Y, base.flow[k], a) * dt
        J_c[:] += cs_c.f(times[k], Y + q[k], lifted.flow[k], a) * dt

    simulate_particles(base.model, base.feedback, base.flow, n_particles, seed, record_every=K, observer=accumulate, track_rewards=False)
    return ObjectiveEquality(float(np.mean(J_n)), float(np.mean(J_c)))


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class CheckResult:
    check: str
    value: float
    tolerance: float
    passed: bool
    sense: str = "<="


@dataclass
class VerificationReport:
    fixed_point_W1: float = math.nan
    optimality_gaps: list = field(default_factory=list)
    objective_equality_err: float = math.nan
    sde_residual: float = math.nan
    checks: list = field(default_factory=list)

    def add(self, check: str, value: float, tolerance: float, sense: str = "<=") -> CheckResult:
        if sense == "<=":
            ok = value <= tolerance
        else:
            ok = value >= tolerance
        res = CheckResult(check, float(value), float(tolerance), bool(ok and math.isfinite(value)), sense)
        self.checks.append(res)
        return res

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["check", "value", "tolerance", "pass"])
            for c in self.checks:
                w.writerow([c.check, f"{c.value:.17g}", f"{c.tolerance:.17g}", "true" if c.passed else "false"])

    def lines(self) -> list:
        return [
            f"{'PASS' if c.passed else 'FAIL'} {c.check}: {c.value:.6g} (tolerance {c.sense} {c.tolerance:.6g})"
            for c in self.checks
        ]


def read_report_csv(path) -> list:
    with Path(path).open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [CheckResult(r["check"], float(r["value"]), float(r["tolerance"]), r["pass"] == "true") for r in rows]
