"""Equilibria of the game without common noise on a uniform grid.

The best response is computed by a backward finite-difference HJB sweep and
the population law by a forward Fokker-Planck sweep; a damped Picard
iteration couples the two. A Riccati solver gives the closed-form
linear-quadratic benchmark.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .coefficients import (
    SIGMA_FLOOR,
    Coefficient,
    CoefficientSet,
    ControlCostTerm,
    ControlTerm,
    FunctionalTerm,
    Kernel,
    MeasureFunctional,
    MFGModel,
    Outer,
    certify_set,
    constant,
)
from .measures import GridMeasure, MeasureFlow, w1_same_grid

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_GOLDEN_ITERS = 80
_TIE_TOL = 1e-13


class StepSizeError(ValueError):
    """The explicit advection step violates the CFL bound."""

    def __init__(self, required_dt: float, cfl: float):
        self.required_dt = required_dt
        super().__init__(f"CFL number {cfl:.3g} > 1 in the HJB sweep; use dt <= {required_dt:.6g}")


class MassConservationError(RuntimeError):
    pass


class DegenerateDiffusionError(ValueError):
    pass


def time_grid(T: float, dt: float) -> np.ndarray:
    """Uniform grid ``0, dt, ..., T``; ``T / dt`` must be an integer."""
    K = int(round(T / dt))
    if K < 1 or abs(K * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    return np.linspace(0.0, T, K + 1)


def default_grid(mean: float, var: float, T: float = 1.0, drift_bound: float = 0.0, dx=None, n: int = 801):
    """``(x_min, dx, n)`` covering ``mean +- (8 std + T * drift_bound)``."""
    half = 8.0 * math.sqrt(var) + abs(T * drift_bound)
    if dx is None:
        dx = 2.0 * half / (n - 1)
    else:
        n = int(math.ceil(2.0 * half / dx - 1e-9)) + 1
    return mean - half, float(dx), n


# --------------------------------------------------------------------------
# grid fields


@dataclass(frozen=True)
class GridField:
    """Values on ``times x nodes``; node ``j`` at time ``k`` sits at
    ``x_min + offsets[k] + j * dx``."""

    times: np.ndarray
    x_min: float
    dx: float
    values: np.ndarray
    offsets: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.values.shape != (self.times.size, self.values.shape[1]):
            raise ValueError("field values must be (times, nodes)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def nodes(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    def offset(self, k: int) -> float:
        return 0.0 if self.offsets is None else float(self.offsets[k])

    def at(self, k: int, x) -> np.ndarray:
        """Linear interpolation in ``x`` at time node ``k``, clamped at the ends."""
        s = (np.asarray(x, dtype=float) - self.offset(k) - self.x_min) / self.dx
        s = np.clip(s, 0.0, self.n - 1)
        j = np.minimum(s.astype(np.int64), self.n - 2)
        w = s - j
        row = self.values[k]
        return (1.0 - w) * row[j] + w * row[j + 1]

    def __call__(self, t: float, x) -> np.ndarray:
        """Bilinear interpolation in ``(t, x)``."""
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2))
        lam = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        lam = min(max(lam, 0.0), 1.0)
        if lam == 0.0:
            return self.at(k, x)
        return (1.0 - lam) * self.at(k, x) + lam * self.at(k + 1, x)

    def shifted(self, q) -> "GridField":
        q = np.broadcast_to(np.asarray(q, dtype=float), self.times.shape)
        base = np.zeros(self.times.size) if self.offsets is None else self.offsets
        return type(self)(self.times, self.x_min, self.dx, self.values, base + q)


class FeedbackControl(GridField):
    """Feedback ``alpha(t, x)`` tabulated on the solver grid."""

    def mapped(self, fn, a_min: float, a_max: float, name: str = "") -> "FeedbackControl":
        """New feedback ``clip(fn(values))`` on the same grid."""
        return FeedbackControl(self.times, self.x_min, self.dx, np.clip(fn(self.values), a_min, a_max), self.offsets)

    @classmethod
    def constant(cls, like: GridField, value: float) -> "FeedbackControl":
        return cls(like.times, like.x_min, like.dx, np.full(like.values.shape, float(value)), like.offsets)


class ValueFunction(GridField):
    """Dynamic-programming value ``v(t, x)``."""


@dataclass
class NCNSolution:
    model: MFGModel
    flow: MeasureFlow
    feedback: FeedbackControl
    value: ValueFunction
    picard_residuals: list = field(default_factory=list)
    converged: bool = False
    fp_tol: float = 1e-4
    method: str = "picard"

    @property
    def times(self) -> np.ndarray:
        return self.flow.times

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


# --------------------------------------------------------------------------
# Hamiltonian maximisation


def maximise_hamiltonian(model: MFGModel, t: float, x: np.ndarray, mu: GridMeasure, p: np.ndarray) -> np.ndarray:
    """Pointwise argmax over ``[a_min, a_max]`` of ``b * p + f``.

    Closed form when ``b`` is affine and ``f`` quadratic in the control;
    golden-section search otherwise. Ties go to the smallest ``|a|``.
    """
    cs = model.coefficients
    lo, hi = model.a_min, model.a_max
    a0 = min(max(0.0, lo), hi)
    gain = cs.b.control_linear_gain()
    quad = cs.f.control_quadratic()
    if gain is not None and quad is not None:
        lin, k = quad
        slope = gain * p + lin
        if k > 0:
            return np.clip(slope / k, lo, hi)
        return np.where(slope > 0, hi, np.where(slope < 0, lo, a0))
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("golden-section search needs a bounded control interval")

    def H(a):
        return cs.b.control_part(t, x, mu, a) * p + cs.f.control_part(t, x, mu, a)

    left = np.full(x.shape, lo)
    right = np.full(x.shape, hi)
    for _ in range(_GOLDEN_ITERS):
        c = right - _GOLDEN * (right - left)
        d = left + _GOLDEN * (right - left)
        up = H(c) < H(d)
        left = np.where(up, c, left)
        right = np.where(up, right, d)
    a = 0.5 * (left + right)
    best, hbest = a, H(a)
    for cand in (lo, hi):
        hv = H(np.full(x.shape, cand))
        better = hv > hbest
        best, hbest = np.where(better, cand, best), np.where(better, hv, hbest)
    h0 = H(np.full(x.shape, a0))
    tie = h0 >= hbest - _TIE_TOL * (1.0 + np.abs(hbest))
    return np.where(tie, a0, best)


def _diffusion(model: MFGModel, t: float, x: np.ndarray, mu: GridMeasure) -> np.ndarray:
    sig = model.coefficients.sigma
    if sig.uses_control:
        raise ValueError("the grid solver needs a control-independent volatility")
    s = np.broadcast_to(sig.state_part(t, x, mu), x.shape)
    if np.any(s < SIGMA_FLOOR):
        raise DegenerateDiffusionError(f"volatility below the floor {SIGMA_FLOOR} at t={t:.6g}")
    return 0.5 * s * s


def _central_gradient(v: np.ndarray, dx: float) -> np.ndarray:
    g = np.zeros_like(v)
    g[1:-1] = (v[2:] - v[:-2]) / (2.0 * dx)
    return g


# --------------------------------------------------------------------------
# HJB


def solve_hjb(model: MFGModel, flow: MeasureFlow):
    """Backward sweep for the value and the optimal feedback on ``flow``'s time grid.

    Diffusion is implicit, advection explicit and upwinded, with zero-flux
    (Neumann) boundaries. Returns ``(ValueFunction, FeedbackControl)``.
    """
    mu0 = model.initial
    x, dx, n = mu0.nodes, mu0.dx, mu0.n
    times = flow.times
    K = times.size - 1
    cs = model.coefficients
    V = np.empty((K + 1, n))
    A = np.empty((K + 1, n))

    V[K] = np.broadcast_to(cs.g(times[K], x, flow[K], 0.0), (n,))
    A[K] = maximise_hamiltonian(model, times[K], x, flow[K], _central_gradient(V[K], dx))

    ab = np.zeros((3, n))
    for k in range(K - 1, -1, -1):
        t, mu, dt = times[k], flow[k], times[k + 1] - times[k]
        v = V[k + 1]
        a = maximise_hamiltonian(model, t, x, mu, _central_gradient(v, dx))
        drift = np.broadcast_to(cs.b(t, x, mu, a), (n,))
        bmax = float(np.max(np.abs(drift)))
        if bmax * dt / dx > 1.0:
            raise StepSizeError(0.9 * dx / bmax, bmax * dt / dx)
        fwd = np.zeros(n)
        bwd = np.zeros(n)
        fwd[:-1] = (v[1:] - v[:-1]) / dx
        bwd[1:] = fwd[:-1]
        rhs = v + dt * (drift * np.where(drift > 0, fwd, bwd) + cs.f(t, x, mu, a))
        r = dt * _diffusion(model, t, x, mu) / dx**2
        # (I - dt D d2/dx2) with mirrored ghost nodes
        ab[1] = 1.0 + 2.0 * r
        ab[0, 1:] = -r[:-1]
        ab[2, :-1] = -r[1:]
        ab[0, 1] = -2.0 * r[0]
        ab[2, -2] = -2.0 * r[-1]
        V[k] = solve_banded((1, 1), ab, rhs)
        A[k] = a
    return ValueFunction(times, mu0.x_min, dx, V), FeedbackControl(times, mu0.x_min, dx, A)


# --------------------------------------------------------------------------
# Fokker-Planck


def _bernoulli(z: np.ndarray) -> np.ndarray:
    """``z / (exp(z) - 1)`` with the removable singularity filled in."""
    small = np.abs(z) < 1e-8
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = z / np.expm1(np.where(small, 1.0, z))
    return np.where(small, 1.0 - 0.5 * z, out)


def fp_step(m: np.ndarray, drift: np.ndarray, diff: np.ndarray, dx: float, dt: float) -> np.ndarray:
    """One implicit step of the exponentially fitted (Chang-Cooper type) scheme.

    Fluxes vanish at both ends, so the column sums of the system matrix are
    exactly one and total mass is conserved up to round-off.
    """
    bh = 0.5 * (drift[:-1] + drift[1:])
    dh = 0.5 * (diff[:-1] + diff[1:])
    w = bh * dx / dh
    lo_w = dh / dx**2 * _bernoulli(-w)  # weight of the left cell in the face flux
    hi_w = dh / dx**2 * _bernoulli(w)  # weight of the right cell
    n = m.size
    ab = np.zeros((3, n))
    ab[1] = 1.0
    ab[1, :-1] += dt * lo_w
    ab[1, 1:] += dt * hi_w
    ab[0, 1:] = -dt * hi_w
    ab[2, :-1] = -dt * lo_w
    return solve_banded((1, 1), ab, m)


def solve_fp(model: MFGModel, feedback: FeedbackControl, flow: MeasureFlow, leak_tol: float = 1e-6) -> MeasureFlow:
    """Forward sweep from the initial law under the feedback drift.

    ``flow`` supplies the measure argument of the drift and volatility.
    """
    mu0 = model.initial
    x, dx = mu0.nodes, mu0.dx
    times = flow.times
    if feedback.values.shape != (times.size, mu0.n):
        raise ValueError("feedback must live on the solver grid")
    cs = model.coefficients
    out = np.empty((times.size, mu0.n))
    out[0] = mu0.density
    for k in range(times.size - 1):
        t, mu, dt = times[k], flow[k], times[k + 1] - times[k]
        drift = np.broadcast_to(cs.b(t, x, mu, feedback.values[k]), x.shape)
        m = fp_step(out[k], drift, _diffusion(model, t, x, mu), dx, dt)
        before, after = out[k].sum() * dx, m.sum() * dx
        if abs(after - before) > leak_tol:
            raise MassConservationError(f"mass changed by {after - before:.3g} at t={t:.6g}")
        m = np.maximum(m, 0.0)
        out[k + 1] = m / (m.sum() * dx)
    return MeasureFlow(times, [mu0.anchor] * times.size, dx, out)


# --------------------------------------------------------------------------
# Picard fixed point


def solve_ncn_fixed_point(
    model: MFGModel,
    dt: float,
    fp_tol: float = 1e-4,
    max_iter: int = 200,
    damping: float = 0.5,
    verbose: bool = False,
) -> NCNSolution:
    """Damped Picard iteration between best response and population law.

    The residual is the sup over time of W1 between successive flows.
    Running out of iterations returns ``converged=False``.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    times = time_grid(model.T, dt)
    flow = MeasureFlow.constant(times, model.initial)
    residuals = []
    converged = False
    for it in range(max_iter):
        _, feedback = solve_hjb(model, flow)
        response = solve_fp(model, feedback, flow)
        mixed = (1.0 - damping) * flow.densities + damping * response.densities
        mixed /= mixed.sum(axis=1, keepdims=True) * flow.dx
        res = float(np.max(w1_same_grid(mixed, flow.densities, flow.dx)))
        flow = MeasureFlow(times, flow.anchors, flow.dx, mixed)
        residuals.append(res)
        if verbose:
            print(f"picard {it + 1}: residual {res:.3e}")
        if res <= fp_tol:
            converged = True
            break
    value, feedback = solve_hjb(model, flow)
    return NCNSolution(model, flow, feedback, value, residuals, converged, fp_tol)


# --------------------------------------------------------------------------
# linear-quadratic benchmark


@dataclass(frozen=True)
class LQSpec:
    """Running weight ``c``, terminal weight ``c_T`` and volatility ``sigma``.

    Reward ``-a^2/2 - c/2 (x - mean)^2`` with terminal ``-c_T/2 (x - mean)^2``
    and dynamics ``dY = a dt + sigma dW``.
    """

    c: float = 1.0
    c_T: float = 0.0
    sigma: float = 0.3

    def __post_init__(self):
        if self.c < 0 or self.c_T < 0 or not self.sigma > 0:
            raise ValueError("need c >= 0, c_T >= 0, sigma > 0")


def _tracking(weight: float) -> FunctionalTerm:
    return FunctionalTerm(MeasureFunctional.convolution(Kernel("identity"), Outer("square", -0.5 * weight)))


def lq_coefficients(spec: LQSpec, b0: Coefficient | None = None, sigma0: Coefficient | None = None) -> CoefficientSet:
    return CoefficientSet(
        b=Coefficient.of(ControlTerm(1.0), name="b"),
        sigma=constant(spec.sigma),
        f=Coefficient.of(ControlCostTerm(1.0), _tracking(spec.c), name="f"),
        g=Coefficient.of(_tracking(spec.c_T), name="g"),
        b0=b0 if b0 is not None else constant(0.0),
        sigma0=sigma0 if sigma0 is not None else constant(0.0),
    )


def lq_model(
    spec: LQSpec,
    initial: GridMeasure,
    T: float = 1.0,
    a_min: float = -3.0,
    a_max: float = 3.0,
    b0: Coefficient | None = None,
    sigma0: Coefficient | None = None,
    initial_law: str | None = None,
) -> MFGModel:
    """Certified linear-quadratic model."""
    cs, _ = certify_set(lq_coefficients(spec, b0, sigma0), T=T, a_range=(max(a_min, -5.0), min(a_max, 5.0)))
    return MFGModel(cs, T, a_min, a_max, initial, p=1.0, p_prime=2.0, p_sigma=0.0, initial_law=initial_law)


def _rk4(fun, y0: float, t0: float, h: float, steps: int) -> np.ndarray:
    out = np.empty(steps + 1)
    out[0] = y = y0
    t = t0
    for i in range(steps):
        k1 = fun(t, y)
        k2 = fun(t + h / 2, y + h / 2 * k1)
        k3 = fun(t + h / 2, y + h / 2 * k2)
        k4 = fun(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
        out[i + 1] = y
    return out


def riccati_paths(spec: LQSpec, var0: float, T: float, dt: float):
    """RK4 solutions on the time grid: ``(times, eta, s, chi)``.

    ``eta' = eta^2 - c`` backward from ``c_T``; ``s' = -2 eta s + sigma^2``
    forward from ``var0``; ``chi' = sigma^2 eta / 2`` backward from 0.
    ``eta`` is integrated on the half-step grid so that the forward and
    backward RK4 stages can read it without interpolation.
    """
    times = time_grid(T, dt)
    K = times.size - 1
    c, cT, s2 = spec.c, spec.c_T, spec.sigma**2
    eta_half = _rk4(lambda t, y: y * y - c, cT, T, -dt / 2, 2 * K)[::-1]  # index i <-> t = i dt / 2

    def eta_at(t):
        return eta_half[int(round(2 * t / dt))]

    s = _rk4(lambda t, y: -2.0 * eta_at(t) * y + s2, var0, 0.0, dt, K)
    chi = _rk4(lambda t, y: 0.5 * s2 * eta_at(t), 0.0, T, -dt, K)[::-1]
    return times, eta_half[::2].copy(), s, chi


def solve_lq_riccati(
    spec: LQSpec,
    initial: GridMeasure,
    T: float,
    dt: float,
    a_min: float = -3.0,
    a_max: float = 3.0,
    model: MFGModel | None = None,
) -> NCNSolution:
    """Closed-form equilibrium of the linear-quadratic model on ``initial``'s grid.

    The flow is ``N(m0, s_t)`` sampled on the grid, the feedback
    ``-eta_t (x - m0)`` and the value ``-eta_t/2 (x - m0)^2 + chi_t``.
    """
    m0, var0 = initial.mean(), initial.variance()
    times, eta, s, chi = riccati_paths(spec, var0, T, dt)
    if model is None:
        model = lq_model(spec, initial, T, a_min, a_max)
    x = initial.nodes
    y = x - m0
    dens = np.stack([GridMeasure.normal(m0, sk, initial.x_min, initial.dx, initial.n).density for sk in s])
    dens[0] = initial.density
    flow = MeasureFlow(times, [initial.anchor] * times.size, initial.dx, dens)
    alpha = np.clip(-eta[:, None] * y[None, :], model.a_min, model.a_max)
    value = -0.5 * eta[:, None] * y[None, :] ** 2 + chi[:, None]
    return NCNSolution(
        model,
        flow,
        FeedbackControl(times, initial.x_min, initial.dx, alpha),
        ValueFunction(times, initial.x_min, initial.dx, value),
        [],
        True,
        0.0,
        method="riccati",
    )
