"""Probability measures on the real line and time-indexed measure flows.

Grid measures carry a density sampled at uniformly spaced nodes. Each node
owns the cell ``[x_j - dx/2, x_j + dx/2]`` and the density is read as
constant on that cell, so the CDF is piecewise linear and the quantile
function is piecewise linear in the probability level. Moments use midpoint
quadrature at the nodes.

Translations never resample: the grid is re-anchored. The anchor is kept as
an exact rational so that composing shifts is exact.
"""

from __future__ import annotations

import csv
import math
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

MASS_TOL = 1e-10

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


class DomainTooSmallError(ValueError):
    """Raised when too much particle mass falls outside a target grid."""

    def __init__(self, escaped_mass: float):
        self.escaped_mass = escaped_mass
        super().__init__(f"domain too small: escaped mass {escaped_mass:.6g} exceeds 1e-3")


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"non-finite grid anchor {value!r}")
    return Fraction(value)


class GridMeasure:
    """Probability density on the uniform grid ``x_min + j * dx``.

    Parameters
    ----------
    x_min : float or Fraction
        Location of the first node.
    dx : float
        Grid spacing, strictly positive.
    density : array-like
        Nonnegative density values at the nodes; ``dx * sum(density)`` must
        equal one within ``MASS_TOL``.
    """

    __slots__ = ("_anchor", "dx", "density")

    def __init__(self, x_min, dx: float, density, *, check: bool = True):
        density = np.array(density, dtype=float)
        density.setflags(write=False)
        self._anchor = _as_fraction(x_min)
        self.dx = float(dx)
        self.density = density
        if check:
            self._validate()

    def _validate(self) -> None:
        if not self.dx > 0 or not math.isfinite(self.dx):
            raise ValueError(f"grid spacing must be positive, got {self.dx}")
        if self.density.ndim != 1 or self.density.size < 2:
            raise ValueError("a grid measure needs at least 2 nodes")
        if not np.all(np.isfinite(self.density)) or np.any(self.density < 0):
            raise ValueError("density values must be finite and nonnegative")
        mass = self.dx * math.fsum(self.density)
        if abs(mass - 1.0) > MASS_TOL:
            raise ValueError(f"total mass {mass!r} differs from 1 by more than {MASS_TOL}")

    @classmethod
    def from_values(cls, x_min, dx: float, values) -> "GridMeasure":
        """Normalise nonnegative ``values`` into a probability density."""
        values = np.clip(np.asarray(values, dtype=float), 0.0, None)
        total = float(dx) * math.fsum(values)
        if not total > 0:
            raise ValueError("cannot normalise a grid function with zero mass")
        return cls(x_min, dx, values / total)

    @classmethod
    def normal(cls, mean: float, var: float, x_min: float, dx: float, n: int) -> "GridMeasure":
        """Gaussian ``N(mean, var)`` sampled at the nodes and renormalised."""
        if var <= 0:
            raise ValueError("variance must be positive")
        x = x_min + dx * np.arange(n)
        return cls.from_values(x_min, dx, np.exp(-0.5 * (x - mean) ** 2 / var))

    @property
    def anchor(self) -> Fraction:
        return self._anchor

    @property
    def x_min(self) -> float:
        return float(self._anchor)

    @property
    def n(self) -> int:
        return self.density.size

    @property
    def x_max(self) -> float:
        return self.x_min + (self.n - 1) * self.dx

    @property
    def nodes(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    @property
    def weights(self) -> np.ndarray:
        """Probability mass carried by each node, summing to one."""
        w = self.density * self.dx
        return w / w.sum()

    def mean(self) -> float:
        w = self.weights
        return self.x_min + self.dx * float(np.dot(np.arange(self.n), w))

    def variance(self) -> float:
        w = self.weights
        j = np.arange(self.n)
        c = float(np.dot(j, w))
        return self.dx**2 * float(np.dot((j - c) ** 2, w))

    def pdf(self, x) -> np.ndarray:
        """Linearly interpolated density; zero outside the node range."""
        return np.interp(np.asarray(x, dtype=float), self.nodes, self.density, left=0.0, right=0.0)

    def cdf_edges(self) -> np.ndarray:
        """CDF at the ``n + 1`` cell edges (first 0, last exactly 1)."""
        c = np.concatenate(([0.0], np.cumsum(self.weights)))
        c[-1] = 1.0
        return c

    def quantile(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        edges = self.x_min + self.dx * (np.arange(self.n + 1) - 0.5)
        c = self.cdf_edges()
        # strictly increasing knots for interp: drop empty cells
        keep = np.concatenate(([True], np.diff(c) > 0))
        return np.interp(u, c[keep], edges[keep])

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Inverse-CDF sampling."""
        return self.quantile(rng.random(size))

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridMeasure):
            return NotImplemented
        return (
            self._anchor == other._anchor
            and self.dx == other.dx
            and np.array_equal(self.density, other.density)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"GridMeasure(x_min={self.x_min:.6g}, dx={self.dx:.6g}, n={self.n})"


class EmpiricalMeasure:
    """Weighted point masses."""

    __slots__ = ("particles", "weights")

    def __init__(self, particles, weights=None):
        particles = np.array(particles, dtype=float).ravel()
        if particles.size < 1:
            raise ValueError("an empirical measure needs at least one particle")
        if not np.all(np.isfinite(particles)):
            raise ValueError("particle positions must be finite")
        if weights is None:
            weights = np.full(particles.size, 1.0 / particles.size)
        else:
            weights = np.array(weights, dtype=float).ravel()
            if weights.shape != particles.shape:
                raise ValueError("weights and particles differ in length")
            if np.any(weights < 0) or abs(math.fsum(weights) - 1.0) > 1e-12:
                raise ValueError("weights must be nonnegative and sum to 1")
        particles.setflags(write=False)
        weights.setflags(write=False)
        self.particles = particles
        self.weights = weights

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def mean(self) -> float:
        return float(np.dot(self.particles, self.weights))

    def variance(self) -> float:
        m = self.mean()
        return float(np.dot((self.particles - m) ** 2, self.weights))

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(n={self.particles.size})"


Measure = Union[GridMeasure, EmpiricalMeasure]


def shift_measure(mu: GridMeasure, q: float) -> GridMeasure:
    """Return ``mu(. - q)``, the translate of ``mu`` by ``+q``.

    The density array is shared, only the anchor moves.
    """
    if q == 0:
        return mu
    out = GridMeasure.__new__(GridMeasure)
    out._anchor = mu.anchor + _as_fraction(q)
    out.dx = mu.dx
    out.density = mu.density
    return out


def moment(mu: Measure, k: int) -> float:
    """k-th raw moment (midpoint quadrature for grid measures)."""
    if k < 1:
        raise ValueError("moment order must be >= 1")
    if isinstance(mu, GridMeasure):
        if k == 1:
            return mu.mean()
        return float(np.dot(mu.nodes**k, mu.weights))
    return float(np.dot(mu.particles**k, mu.weights))


def abs_moment(mu: Measure, p: float) -> float:
    """``integral |z|^p mu(dz)``."""
    if isinstance(mu, GridMeasure):
        return float(np.dot(np.abs(mu.nodes) ** p, mu.weights))
    return float(np.dot(np.abs(mu.particles) ** p, mu.weights))


def particles_to_grid(mu: EmpiricalMeasure, x_min: float, dx: float, n: int) -> GridMeasure:
    """Histogram particles into the cells centred at ``x_min + j * dx``.

    Mass outside the cells is dropped and the rest renormalised; more than
    1e-3 of escaped mass is an error.
    """
    if n < 2:
        raise ValueError("need at least 2 grid nodes")
    idx = np.floor((mu.particles - (x_min - 0.5 * dx)) / dx).astype(np.int64)
    inside = (idx >= 0) & (idx < n)
    inside_mass = float(mu.weights[inside].sum())
    if inside_mass < 0.999:
        raise DomainTooSmallError(1.0 - inside_mass)
    hist = np.bincount(idx[inside], weights=mu.weights[inside], minlength=n)
    return GridMeasure(x_min, dx, hist / (dx * inside_mass))


# --------------------------------------------------------------------------
# Wasserstein distances via quantile functions


def _quantile_segments(mu: Measure, ref: Fraction):
    """Quantile function as linear pieces ``(u_lo, u_hi, v_lo, v_hi)``.

    Values are relative to ``ref`` to keep translations exact.
    """
    if isinstance(mu, GridMeasure):
        c = mu.cdf_edges()
        off = float(mu.anchor - ref)
        left = off + mu.dx * (np.arange(mu.n) - 0.5)
        return c[:-1], c[1:], left, left + mu.dx
    order = np.argsort(mu.particles, kind="stable")
    xs = mu.particles[order] - float(ref)
    c = np.concatenate(([0.0], np.cumsum(mu.weights[order])))
    c[-1] = 1.0
    return c[:-1], c[1:], xs, xs


def _linear_power_integral(h0: np.ndarray, h1: np.ndarray, length: np.ndarray, p: float) -> float:
    """Sum over pieces of ``integral |h|^p`` with ``h`` linear from h0 to h1."""
    total = 0.0
    cross = (h0 * h1) < 0
    if np.any(cross):
        a, b, ell = np.abs(h0[cross]), np.abs(h1[cross]), length[cross]
        # split at the root; each side integrates |h|^p from 0 to its end value
        total += float(np.sum(ell * (a ** (p + 1) + b ** (p + 1)) / ((a + b) * (p + 1))))
    same = ~cross
    if np.any(same):
        a, b, ell = h0[same], h1[same], length[same]
        vals = np.abs(a[:, None] + (b - a)[:, None] * _GL_NODES[None, :]) ** p
        total += float(np.sum(ell * (vals @ _GL_WEIGHTS)))
    return total


def _same_translate(mu: GridMeasure, nu: GridMeasure) -> bool:
    return mu.dx == nu.dx and (mu.density is nu.density or np.array_equal(mu.density, nu.density))


def wasserstein(mu: Measure, nu: Measure, p: float = 1.0) -> float:
    """Exact 1D p-Wasserstein distance by the quantile coupling."""
    if not p >= 1:
        raise ValueError(f"Wasserstein order must be >= 1, got {p}")
    if isinstance(mu, GridMeasure) and isinstance(nu, GridMeasure) and _same_translate(mu, nu):
        return abs(float(nu.anchor - mu.anchor))
    if (
        isinstance(mu, EmpiricalMeasure)
        and isinstance(nu, EmpiricalMeasure)
        and mu.particles.size == nu.particles.size
        and mu.uniform
        and nu.uniform
    ):
        d = np.abs(np.sort(mu.particles) - np.sort(nu.particles))
        return float(np.mean(d**p) ** (1.0 / p))

    ref = mu.anchor if isinstance(mu, GridMeasure) else Fraction(0)
    a_lo, a_hi, av_lo, av_hi = _quantile_segments(mu, ref)
    b_lo, b_hi, bv_lo, bv_hi = _quantile_segments(nu, ref)
    u = np.union1d(np.concatenate((a_lo, a_hi[-1:])), np.concatenate((b_lo, b_hi[-1:])))
    u0, u1 = u[:-1], u[1:]
    keep = u1 > u0
    u0, u1 = u0[keep], u1[keep]
    mid = 0.5 * (u0 + u1)

    def evaluate(lo, hi, v_lo, v_hi):
        i = np.clip(np.searchsorted(lo, mid, side="right") - 1, 0, lo.size - 1)
        # fractions of the piece rather than slopes: cells of tiny mass would overflow
        span = hi[i] - lo[i]
        safe = np.where(span > 0, span, 1.0)
        w0 = np.where(span > 0, np.clip((u0 - lo[i]) / safe, 0.0, 1.0), 0.0)
        w1 = np.where(span > 0, np.clip((u1 - lo[i]) / safe, 0.0, 1.0), 0.0)
        dv = v_hi[i] - v_lo[i]
        return v_lo[i] + w0 * dv, v_lo[i] + w1 * dv

    fa0, fa1 = evaluate(a_lo, a_hi, av_lo, av_hi)
    fb0, fb1 = evaluate(b_lo, b_hi, bv_lo, bv_hi)
    total = _linear_power_integral(fa0 - fb0, fa1 - fb1, u1 - u0, p)
    return total ** (1.0 / p)


def w1_same_grid(dens_a: np.ndarray, dens_b: np.ndarray, dx: float) -> np.ndarray:
    """W1 between density rows living on one common grid.

    Uses ``W1 = integral |F - G|`` with both CDFs piecewise linear on the
    cells. Accepts 1D or 2D (row per measure) arrays.
    """
    dens_a = np.atleast_2d(dens_a)
    dens_b = np.atleast_2d(dens_b)
    wa = dens_a / dens_a.sum(axis=1, keepdims=True)
    wb = dens_b / dens_b.sum(axis=1, keepdims=True)
    d = np.cumsum(wa - wb, axis=1)
    d = np.concatenate((np.zeros((d.shape[0], 1)), d), axis=1)
    d[:, -1] = 0.0
    h0, h1 = d[:, :-1], d[:, 1:]
    same = h0 * h1 >= 0
    a, b = np.abs(h0), np.abs(h1)
    with np.errstate(invalid="ignore", divide="ignore"):
        crossing = (a * a + b * b) / (2.0 * (a + b))
    piece = np.where(same, 0.5 * np.abs(h0 + h1), crossing)
    return dx * piece.sum(axis=1)


# --------------------------------------------------------------------------
# measure flows


class MeasureFlow:
    """Grid measures indexed by a strictly increasing time grid from 0 to T.

    All measures share ``dx`` and node count; anchors may differ per time.
    """

    __slots__ = ("times", "anchors", "dx", "densities")

    def __init__(self, times, anchors: Sequence, dx: float, densities, *, check: bool = True):
        times = np.array(times, dtype=float)
        densities = np.array(densities, dtype=float)
        times.setflags(write=False)
        densities.setflags(write=False)
        self.times = times
        self.anchors = tuple(_as_fraction(a) for a in anchors)
        self.dx = float(dx)
        self.densities = densities
        if check:
            self._validate()

    def _validate(self) -> None:
        t = self.times
        if t.ndim != 1 or t.size < 2 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("flow times must be strictly increasing and start at 0")
        if self.densities.shape[0] != t.size or len(self.anchors) != t.size:
            raise ValueError("need exactly one measure per time node")
        if np.any(self.densities < 0):
            raise ValueError("flow densities must be nonnegative")
        mass = self.dx * self.densities.sum(axis=1)
        if np.any(np.abs(mass - 1.0) > MASS_TOL):
            raise ValueError("every flow slice must have unit mass")

    @classmethod
    def from_measures(cls, times, measures: Iterable[GridMeasure]) -> "MeasureFlow":
        measures = list(measures)
        dx = measures[0].dx
        if any(m.dx != dx or m.n != measures[0].n for m in measures):
            raise ValueError("flow slices must share grid spacing and node count")
        return cls(times, [m.anchor for m in measures], dx, np.stack([m.density for m in measures]))

    @classmethod
    def constant(cls, times, mu: GridMeasure) -> "MeasureFlow":
        times = np.asarray(times, dtype=float)
        return cls(times, [mu.anchor] * times.size, mu.dx, np.tile(mu.density, (times.size, 1)))

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n(self) -> int:
        return self.densities.shape[1]

    def __len__(self) -> int:
        return self.times.size

    def __getitem__(self, k: int) -> GridMeasure:
        out = GridMeasure.__new__(GridMeasure)
        out._anchor = self.anchors[k]
        out.dx = self.dx
        out.density = self.densities[k]
        return out

    @property
    def measures(self) -> tuple:
        return tuple(self[k] for k in range(len(self)))

    def x_min(self, k: int) -> float:
        return float(self.anchors[k])

    def nodes(self, k: int) -> np.ndarray:
        return float(self.anchors[k]) + self.dx * np.arange(self.n)

    def means(self) -> np.ndarray:
        return np.array([self[k].mean() for k in range(len(self))])

    def shifted(self, q) -> "MeasureFlow":
        """Translate slice ``k`` by ``q[k]``."""
        q = np.broadcast_to(np.asarray(q, dtype=float), self.times.shape)
        anchors = [a + _as_fraction(v) if v != 0 else a for a, v in zip(self.anchors, q)]
        return MeasureFlow(self.times, anchors, self.dx, self.densities, check=False)

    def to_csv(self, path) -> None:
        write_flow_csv(self, path)


def sup_w1(a: MeasureFlow, b: MeasureFlow) -> float:
    """Supremum over time nodes of W1 between matching slices."""
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times, rtol=0, atol=1e-12):
        raise ValueError("flows live on different time grids")
    if a.dx == b.dx and a.n == b.n and a.anchors == b.anchors:
        return float(np.max(w1_same_grid(a.densities, b.densities, a.dx)))
    return max(wasserstein(a[k], b[k], 1.0) for k in range(len(a)))


def write_flow_csv(flow: MeasureFlow, path, column: str = "density") -> None:
    path = Path(path)
    j = np.arange(flow.n)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", column])
        for k, t in enumerate(flow.times):
            x = flow.x_min(k) + flow.dx * j
            for xi, di in zip(x, flow.densities[k]):
                w.writerow([f"{t:.17g}", f"{xi:.17g}", f"{di:.17g}"])


def read_grid_csv(path, column: str | None = None):
    """Read a ``t,x,<value>`` CSV into ``(times, x_mins, dx, values)``.

    ``dx`` is estimated from the first time slice.
    """
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    times, start = np.unique(t, return_index=True)
    n = data.shape[0] // times.size
    if n * times.size != data.shape[0]:
        raise ValueError(f"{path}: ragged time slices")
    x = data[:, 1].reshape(times.size, n)
    values = data[:, 2].reshape(times.size, n)
    dx = (x[0, -1] - x[0, 0]) / (n - 1)
    return times, x[:, 0].copy(), dx, values


def read_flow_csv(path, dx: float | None = None) -> MeasureFlow:
    times, x_mins, est_dx, dens = read_grid_csv(path)
    dx = est_dx if dx is None else dx
    mass = dx * dens.sum(axis=1, keepdims=True)
    return MeasureFlow(times, x_mins, dx, dens / mass)
